use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::PipelineError;

/// Append-only JSON-lines log, flushed per record.
pub struct MetricsLog {
    file: File,
}

impl MetricsLog {
    /// Truncates any existing log.
    pub fn create(path: &Path) -> Result<Self, PipelineError> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    pub fn open_append(path: &Path) -> Result<Self, PipelineError> {
        Ok(Self {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(record).map_err(|e| PipelineError::Data(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}
