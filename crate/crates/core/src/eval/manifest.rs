use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub landmark_path: PathBuf,
    pub label: u8,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    path: String,
    landmarks: String,
    label: u8,
    split: SplitTag,
}

impl Manifest {
    /// Reads a `path,landmarks,label,split` CSV. Relative paths resolve
    /// against the manifest's directory.
    pub fn read(path: &Path) -> Result<Manifest> {
        let base = path.parent().unwrap_or(Path::new("."));
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for (line, rec) in reader.deserialize::<Record>().enumerate() {
            let rec = rec.map_err(|e| Error::Schema(format!("{} row {}: {e}", path.display(), line + 2)))?;
            if rec.label > 1 {
                return Err(Error::Schema(format!(
                    "{} row {}: label must be 0 or 1",
                    path.display(),
                    line + 2
                )));
            }
            entries.push(ManifestEntry {
                image_path: base.join(rec.path),
                landmark_path: base.join(rec.landmarks),
                label: rec.label,
                split: rec.split,
            });
        }
        Ok(Manifest { entries })
    }

    /// Writes the CSV with paths relative to `path`'s directory when possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::decode(path.display(), e))?;
        for e in &self.entries {
            w.serialize(Record {
                path: rel(&e.image_path),
                landmarks: rel(&e.landmark_path),
                label: e.label,
                split: e.split,
            })
            .map_err(|e| Error::decode(path.display(), e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, tag: SplitTag) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == tag).collect()
    }

    pub fn labels(entries: &[&ManifestEntry]) -> Vec<u8> {
        entries.iter().map(|e| e.label).collect()
    }
}

/// Reassigns train/test per class: a seeded shuffle, with the first
/// `round(train_frac * class size)` entries going to training.
pub fn stratified_split(entries: &[ManifestEntry], train_frac: f64, seed_: u64) -> Result<Manifest> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let mut out = entries.to_vec();
    let mut rng = seed::rng(seed_);
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].label == class).collect();
        if idx.len() < 2 {
            return Err(Error::TooFewSamples(format!(
                "class {class} has {} entries; a split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = (train_frac * idx.len() as f64).round() as usize;
        for (pos, &i) in idx.iter().enumerate() {
            out[i].split = if pos < n_train { SplitTag::Train } else { SplitTag::Test };
        }
    }
    Ok(Manifest { entries: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(n_real: usize, n_fake: usize) -> Vec<ManifestEntry> {
        (0..n_real + n_fake)
            .map(|i| ManifestEntry {
                image_path: PathBuf::from(format!("{i}.png")),
                landmark_path: PathBuf::from(format!("{i}.landmarks.json")),
                label: u8::from(i >= n_real),
                split: SplitTag::Train,
            })
            .collect()
    }

    #[test]
    fn eighty_twenty() {
        let m = stratified_split(&entries(5000, 5000), 0.8, 1).unwrap();
        assert_eq!(m.split(SplitTag::Train).len(), 8000);
        assert_eq!(m.split(SplitTag::Test).len(), 2000);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let mut m = stratified_split(&entries(3, 4), 0.5, 2).unwrap();
        for e in &mut m.entries {
            e.image_path = dir.path().join(&e.image_path);
            e.landmark_path = dir.path().join(&e.landmark_path);
        }
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,landmarks,label,split\n"));
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
