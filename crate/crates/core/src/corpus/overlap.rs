use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, CorpusError> {
        if !(start.is_finite() && end.is_finite()) || start > end {
            return Err(CorpusError::Interval(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }
}

/// How overlap is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// intersection / union
    #[default]
    Iou,
    /// intersection / longer interval
    OverMax,
}

/// Relative time overlap in [0, 1]. Zero-length intervals score 1 when
/// they are the same point and 0 otherwise.
pub fn relative_overlap(a: Interval, b: Interval, mode: OverlapMode) -> Result<f64, CorpusError> {
    let a = Interval::new(a.start, a.end)?;
    let b = Interval::new(b.start, b.end)?;
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let denom = match mode {
        OverlapMode::Iou => a.len() + b.len() - inter,
        OverlapMode::OverMax => a.len().max(b.len()),
    };
    if denom == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((inter / denom).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval { start: a, end: b }
    }

    #[test]
    fn examples() {
        let m = OverlapMode::Iou;
        assert_eq!(relative_overlap(iv(1.0, 3.0), iv(1.0, 3.0), m).unwrap(), 1.0);
        assert_eq!(relative_overlap(iv(1.0, 3.0), iv(4.0, 5.0), m).unwrap(), 0.0);
        let r = relative_overlap(iv(10.0, 20.0), iv(11.0, 21.0), m).unwrap();
        assert!((r - 9.0 / 11.0).abs() < 1e-15);
        assert!(r < 0.9);
        let r = relative_overlap(iv(10.0, 20.0), iv(11.0, 21.0), OverlapMode::OverMax).unwrap();
        assert!((r - 0.9).abs() < 1e-15);
    }

    #[test]
    fn degenerate_points() {
        let m = OverlapMode::Iou;
        assert_eq!(relative_overlap(iv(2.0, 2.0), iv(2.0, 2.0), m).unwrap(), 1.0);
        assert_eq!(relative_overlap(iv(2.0, 2.0), iv(3.0, 3.0), m).unwrap(), 0.0);
        assert_eq!(relative_overlap(iv(2.0, 2.0), iv(1.0, 3.0), m).unwrap(), 0.0);
        assert!(relative_overlap(iv(3.0, 2.0), iv(1.0, 3.0), m).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(a in 0.0f64..50.0, la in 0.0f64..10.0, b in 0.0f64..50.0, lb in 0.0f64..10.0) {
            for m in [OverlapMode::Iou, OverlapMode::OverMax] {
                let x = relative_overlap(iv(a, a + la), iv(b, b + lb), m).unwrap();
                let y = relative_overlap(iv(b, b + lb), iv(a, a + la), m).unwrap();
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert_eq!(x, y);
            }
        }
    }
}
