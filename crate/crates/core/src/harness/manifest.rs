//! Clip manifests: one CSV row per clip with `path,scene,city,device`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Device whose recordings form the training set.
pub const REFERENCE_DEVICE: &str = "A";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Audio path, relative to the manifest's directory unless absolute.
    pub path: String,
    pub scene: String,
    pub city: String,
    pub device: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest { entries, root: root.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Input("manifest has no entries".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.path.is_empty() || e.scene.is_empty() || e.city.is_empty() || e.device.is_empty() {
                return Err(Error::Input(format!("manifest row {} is missing an annotation", i + 1)));
            }
        }
        if !self.entries.iter().any(|e| e.device == REFERENCE_DEVICE) {
            return Err(Error::Input(format!("manifest has no device {} entries", REFERENCE_DEVICE)));
        }
        Ok(())
    }

    /// Scene names in label order (sorted).
    pub fn classes(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.scene.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn devices(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.device.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = DatasetManifest { entries, root };
        m.validate()?;
        Ok(m)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for e in &self.entries {
            wtr.serialize(e)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}
