//! Repair-example shards.
//!
//! A directory holds `manifest.json` plus, per shard, `shard-NNNNN.input`
//! and `shard-NNNNN.target` with one example per line as space-separated
//! ids (line `i` of both files belongs to example `i`). Each shard holds
//! examples of a single provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pool::text_to_ids;
use super::{Provenance, RepairExample, SynthError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub input: String,
    pub target: String,
    pub provenance: Provenance,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub version: u32,
    pub shards: Vec<ShardInfo>,
}

fn line(ids: &[u32]) -> String {
    let mut s = ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

pub fn write_shards(dir: &Path, examples: &[RepairExample], shard_size: usize) -> Result<ShardManifest, SynthError> {
    if shard_size == 0 {
        return Err(SynthError::Argument("shard size must be positive".into()));
    }
    fs::create_dir_all(dir)?;
    let mut shards = Vec::new();
    let mut i = 0;
    while i < examples.len() {
        let prov = examples[i].provenance;
        let mut j = i;
        while j < examples.len() && j - i < shard_size && examples[j].provenance == prov {
            j += 1;
        }
        let n = shards.len();
        let info = ShardInfo {
            input: format!("shard-{n:05}.input"),
            target: format!("shard-{n:05}.target"),
            provenance: prov,
            examples: j - i,
        };
        fs::write(dir.join(&info.input), examples[i..j].iter().map(|e| line(&e.input)).collect::<String>())?;
        fs::write(dir.join(&info.target), examples[i..j].iter().map(|e| line(&e.target)).collect::<String>())?;
        shards.push(info);
        i = j;
    }
    let manifest = ShardManifest { version: 1, shards };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Argument(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn read_shards(dir: &Path) -> Result<Vec<RepairExample>, SynthError> {
    let bad = |what: &'static str, line: usize, reason: String| SynthError::Format { what, line, reason };
    let manifest: ShardManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| bad("shard manifest", e.line(), e.to_string()))?;
    let mut out = Vec::new();
    for s in &manifest.shards {
        let inputs = fs::read_to_string(dir.join(&s.input))?;
        let targets = fs::read_to_string(dir.join(&s.target))?;
        let a: Vec<&str> = inputs.lines().collect();
        let b: Vec<&str> = targets.lines().collect();
        if a.len() != s.examples || b.len() != s.examples {
            return Err(bad("shard", 0, format!("{} does not hold {} examples", s.input, s.examples)));
        }
        for (n, (x, y)) in a.iter().zip(&b).enumerate() {
            out.push(RepairExample {
                input: text_to_ids(x).map_err(|e| bad("shard", n + 1, e.to_string()))?,
                target: text_to_ids(y).map_err(|e| bad("shard", n + 1, e.to_string()))?,
                provenance: s.provenance,
            });
        }
    }
    Ok(out)
}
