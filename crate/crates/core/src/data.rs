//! Trajectory records and the JSON-lines episode format.
//!
//! Each line is `{"id", "features", "objects", "references"}` plus an
//! optional `"truth"` object written by the synthetic world. The feature
//! width lives in a sidecar `<file>.manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};

pub const MAX_REFERENCES: usize = 3;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One episode: per-step visual features, final-view object labels and
/// up to three reference instructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub references: Vec<String>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, d_img: usize) -> Result<()> {
        if self.features.is_empty() {
            return Err(CoreError::EmptyTrajectory);
        }
        for (step, f) in self.features.iter().enumerate() {
            if f.len() != d_img {
                return Err(CoreError::FeatureDim {
                    step,
                    expected: d_img,
                    got: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Invalid(format!(
                    "{}: non-finite feature at step {step}",
                    self.id
                )));
            }
        }
        if self.references.len() > MAX_REFERENCES {
            return Err(CoreError::Invalid(format!(
                "{}: {} references, at most {MAX_REFERENCES} allowed",
                self.id,
                self.references.len()
            )));
        }
        Ok(())
    }
}

/// Latent labels of a synthetic episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub room: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

impl From<Trajectory> for Episode {
    fn from(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d_img: usize,
    pub count: usize,
    pub tool_version: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mp = manifest_path(path);
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CoreError::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(&mp, text).map_err(io_err(&mp))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mp = manifest_path(path);
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        path: mp,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes one JSON object per line plus the sidecar manifest.
pub fn write_episodes(path: &Path, episodes: &[Episode], config: serde_json::Value) -> Result<()> {
    let d_img = episodes.first().map_or(0, |e| e.trajectory.feature_dim());
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for ep in episodes {
        ep.trajectory.validate(d_img)?;
        let line = serde_json::to_string(ep).map_err(|e| CoreError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    write_manifest(
        path,
        &Manifest {
            d_img,
            count: episodes.len(),
            tool_version: TOOL_VERSION.to_string(),
            config,
        },
    )
}

/// Reads an episode file, validating every line against the manifest's
/// feature width. Errors name the failing line.
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let manifest = read_manifest(path)?;
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ep: Episode = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        ep.trajectory
            .validate(manifest.d_img)
            .map_err(|e| parse_err(e.to_string()))?;
        out.push(ep);
    }
    if out.len() != manifest.count {
        return Err(CoreError::Parse {
            path: path.to_path_buf(),
            line: out.len() + 1,
            message: format!("manifest declares {} episodes, found {}", manifest.count, out.len()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, steps: usize, d: usize) -> Trajectory {
        Trajectory {
            id: id.into(),
            features: (0..steps).map(|s| vec![s as f64 * 0.5; d]).collect(),
            objects: vec!["sink".into()],
            references: vec!["go to the kitchen".into()],
        }
    }

    #[test]
    fn validation() {
        assert!(traj("a", 2, 4).validate(4).is_ok());
        assert!(matches!(traj("a", 0, 4).validate(4), Err(CoreError::EmptyTrajectory)));
        assert!(matches!(
            traj("a", 2, 3).validate(4),
            Err(CoreError::FeatureDim { step: 0, .. })
        ));
        let mut t = traj("a", 1, 2);
        t.references = vec!["x".into(); 4];
        assert!(t.validate(2).is_err());
    }

    #[test]
    fn round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        let eps: Vec<Episode> = vec![
            Episode {
                trajectory: traj("a", 2, 3),
                truth: Some(Truth {
                    room: "kitchen".into(),
                    object: "sink".into(),
                }),
            },
            traj("b", 3, 3).into(),
        ];
        write_episodes(&path, &eps, serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(read_episodes(&path).unwrap(), eps);
        let m = read_manifest(&path).unwrap();
        assert_eq!((m.d_img, m.count), (3, 2));
    }

    #[test]
    fn wrong_width_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        write_episodes(&path, &[traj("a", 2, 3).into(), traj("b", 1, 3).into()], serde_json::Value::Null)
            .unwrap();
        let mut m = read_manifest(&path).unwrap();
        m.d_img = 4;
        write_manifest(&path, &m).unwrap();
        match read_episodes(&path) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
