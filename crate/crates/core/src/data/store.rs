use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, PreprocessConfig, Sample, SplitManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }

    fn ids(self, m: &SplitManifest) -> &[String] {
        match self {
            Split::Train => &m.train,
            Split::Val => &m.val,
            Split::Test => &m.test,
        }
    }
}

/// Store-level metadata written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub split: SplitManifest,
    pub counts: [usize; 3],
    pub sources: Vec<String>,
    pub preprocessing: PreprocessConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

/// Writes one JSON-lines file per split plus `manifest.json` into `dir`.
pub fn write_store(dir: &Path, samples: &[Sample], manifest: &StoreManifest) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for id in split.ids(&manifest.split) {
            let s = by_id.get(id.as_str()).ok_or_else(|| DataError::Format(format!("manifest names unknown sample {id}")))?;
            let line = serde_json::to_string(s).map_err(|e| DataError::Format(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<StoreManifest, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<Sample>, DataError> {
    let path = dir.join(split.file_name());
    let f = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i as u64 + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}
