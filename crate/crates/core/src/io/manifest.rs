//! JSON manifest listing the files of a scene or run with their SHA-256 digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advect::SegmentationSettings;
use crate::error::{Error, Result};
use crate::synth::SceneSpec;

/// File paths are stored relative to the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub image: Vec<String>,
    pub flows: Option<String>,
    pub prob: Option<String>,
    pub semantic: Option<String>,
    pub labels: Option<String>,
    pub scene: Option<SceneSpec>,
    pub settings: Option<SegmentationSettings>,
    /// Hex SHA-256 per referenced path.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn paths(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.image.iter().map(String::as_str).collect();
        out.extend(
            [&self.flows, &self.prob, &self.semantic, &self.labels]
                .into_iter()
                .flatten()
                .map(String::as_str),
        );
        out
    }

    /// Recomputes the checksum of every referenced file under `dir`.
    pub fn seal(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut sums = BTreeMap::new();
        for rel in self.paths() {
            sums.insert(rel.to_string(), sha256_file(dir.join(rel))?);
        }
        self.checksums = sums;
        Ok(())
    }

    pub fn resolve(&self, manifest_path: impl AsRef<Path>, rel: &str) -> PathBuf {
        manifest_path
            .as_ref()
            .parent()
            .unwrap_or(Path::new(""))
            .join(rel)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Parses a manifest and checks that every referenced file exists and
    /// matches its recorded checksum.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        for rel in m.paths() {
            let file = m.resolve(path, rel);
            if !file.is_file() {
                return Err(Error::Manifest(format!(
                    "referenced file {} does not exist",
                    file.display()
                )));
            }
            let Some(expected) = m.checksums.get(rel) else {
                return Err(Error::Manifest(format!("no checksum recorded for {rel}")));
            };
            if sha256_file(&file)? != *expected {
                return Err(Error::Checksum { path: file });
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_write_load() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("labels.png"), b"abc").unwrap();
        let mut m = Manifest {
            labels: Some("labels.png".into()),
            scene: Some(SceneSpec::default()),
            ..Default::default()
        };
        m.seal(dir.path()).unwrap();
        assert_eq!(
            m.checksums["labels.png"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);

        fs::write(dir.path().join("labels.png"), b"abd").unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::Checksum { .. })));
        fs::remove_file(dir.path().join("labels.png")).unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::Manifest(_))));
    }
}
