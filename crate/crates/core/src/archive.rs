//! Versioned JSON model archives.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{DetectorModel, RunConfig};
use crate::error::{Error, Result};
use crate::features::{HIST_BINS, LANDMARKS, SPECTRUM_BINS};

pub const FORMAT_VERSION: &str = "ffm/1";

/// Parameters the features were extracted with; checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub hist_bins: usize,
    pub spectrum_bins: usize,
    pub landmarks: usize,
    pub scales: Vec<usize>,
}

impl FeatureParams {
    pub fn current(scales: &[usize]) -> Self {
        FeatureParams {
            hist_bins: HIST_BINS,
            spectrum_bins: SPECTRUM_BINS,
            landmarks: LANDMARKS,
            scales: scales.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format_version: String,
    pub config: RunConfig,
    pub features: FeatureParams,
    pub model: DetectorModel,
}

impl ModelArchive {
    pub fn new(config: RunConfig, model: DetectorModel) -> Self {
        ModelArchive {
            format_version: FORMAT_VERSION.to_string(),
            features: FeatureParams::current(&config.scales),
            config,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::decode("model archive", e))
    }

    /// Parses and validates an archive; nothing is returned unless the whole
    /// document is well formed and carries the expected version.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: String,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::decode("model archive", e))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let archive: ModelArchive =
            serde_json::from_str(text).map_err(|e| Error::decode("model archive", e))?;
        if archive.features != FeatureParams::current(&archive.config.scales) {
            return Err(Error::Schema("archive feature parameters differ from this build".into()));
        }
        archive.model.validate()?;
        Ok(archive)
    }
}

/// Writes the archive through a temporary file renamed into place.
pub fn save_model(path: &Path, archive: &ModelArchive) -> Result<()> {
    let json = archive.to_json()?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(json.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArchive> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_json(&text)
}
