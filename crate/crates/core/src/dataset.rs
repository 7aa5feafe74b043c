//! On-disk formats and the dataset manifest.
//!
//! Trajectories are JSONL with one frame per line; annotations, priors and
//! manifests are JSON documents. Paths inside a manifest are relative to
//! the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::ProgressLabel;
use crate::trajectory::{AnnotationProtocol, Frame, Trajectory, TrajectoryAnnotation};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Expert,
    Suboptimal,
    #[serde(rename = "rollout-SE")]
    RolloutSe,
    #[serde(rename = "rollout-PSE")]
    RolloutPse,
    #[serde(rename = "rollout-FE")]
    RolloutFe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub task_id: String,
    pub trajectory_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_file: Option<PathBuf>,
    /// Ground-truth progress, one value per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub fps: u32,
    pub feature_dim: usize,
    pub protocol: AnnotationProtocol,
    pub seed: u64,
    pub trajectories: Vec<ManifestEntry>,
}

/// Everything a manifest points at, loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
    /// Annotations of entries that have one, in manifest order.
    pub annotations: Vec<TrajectoryAnnotation>,
    pub truth: HashMap<String, Vec<f64>>,
}

impl Dataset {
    /// Loads `dir/manifest.json` (or `dir` itself when it names a file).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let manifest: Manifest = read_json(&manifest_path)?;
        manifest.protocol.check()?;

        let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
        let mut annotations = Vec::new();
        let mut truth = HashMap::new();
        for e in &manifest.trajectories {
            let traj = read_trajectory(root.join(&e.trajectory_file), &e.id, &e.task_id, manifest.fps)?;
            if traj.feature_dim() != manifest.feature_dim {
                return Err(Error::validation(format!(
                    "`{}` has feature dimension {}, manifest declares {}",
                    e.id,
                    traj.feature_dim(),
                    manifest.feature_dim
                )));
            }
            if let Some(a) = &e.annotation_file {
                annotations.push(read_json(root.join(a))?);
            }
            if let Some(t) = &e.truth_file {
                truth.insert(e.id.clone(), read_truth(root.join(t))?);
            }
            trajectories.push(traj);
        }
        Ok(Dataset {
            root,
            manifest,
            trajectories,
            annotations,
            truth,
        })
    }

    pub fn quality(&self, id: &str) -> Option<Quality> {
        self.manifest
            .trajectories
            .iter()
            .find(|e| e.id == id)
            .and_then(|e| e.quality)
    }

    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON value per non-blank line; errors name the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_trajectory(path: impl AsRef<Path>, trajectory: &Trajectory) -> Result<()> {
    write_jsonl(path, &trajectory.frames)
}

pub fn read_trajectory(path: impl AsRef<Path>, id: &str, task_id: &str, fps: u32) -> Result<Trajectory> {
    let path = path.as_ref();
    let frames: Vec<Frame> = read_jsonl(path)?;
    Trajectory::new(id, task_id, fps, frames).map_err(|e| Error::format(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TruthRow {
    t: usize,
    y: f64,
}

pub fn write_truth(path: impl AsRef<Path>, progress: &[f64]) -> Result<()> {
    write_jsonl(path, progress.iter().enumerate().map(|(t, &y)| TruthRow { t, y }))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let rows: Vec<TruthRow> = read_jsonl(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.t == i {
                Ok(r.y)
            } else {
                Err(Error::format(path, format!("expected t = {i}, found {}", r.t)))
            }
        })
        .collect()
}

/// Label file: one [`ProgressLabel`] per line.
pub fn write_labels(path: impl AsRef<Path>, labels: &[ProgressLabel]) -> Result<()> {
    write_jsonl(path, labels)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<ProgressLabel>> {
    read_jsonl(path)
}

/// One line of a rollout trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub rollout_id: String,
    pub t: usize,
    pub p: f64,
}

/// Groups trace lines by rollout (first-appearance order) and checks each
/// rollout's frames are `0..T` in order.
pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let points: Vec<TracePoint> = read_jsonl(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for pt in points {
        let series = by_id.entry(pt.rollout_id.clone()).or_insert_with(|| {
            order.push(pt.rollout_id.clone());
            Vec::new()
        });
        if pt.t != series.len() {
            return Err(Error::format(
                path,
                format!("rollout `{}`: expected t = {}, found {}", pt.rollout_id, series.len(), pt.t),
            ));
        }
        series.push(pt.p);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let s = by_id.remove(&id).expect("recorded");
            (id, s)
        })
        .collect())
}

pub fn write_traces<'a>(path: impl AsRef<Path>, traces: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<()> {
    let points: Vec<TracePoint> = traces
        .into_iter()
        .flat_map(|(id, p)| {
            p.iter().enumerate().map(move |(t, &p)| TracePoint {
                rollout_id: id.to_string(),
                t,
                p,
            })
        })
        .collect();
    write_jsonl(path, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let a = [0.1, 0.2, 0.3];
        let b = [0.5];
        write_traces(&path, [("a", &a[..]), ("b", &b[..])]).unwrap();
        let got = read_traces(&path).unwrap();
        assert_eq!(got, vec![("a".to_string(), a.to_vec()), ("b".to_string(), b.to_vec())]);

        fs::write(&path, "{\"rollout_id\":\"a\",\"t\":1,\"p\":0.1}\n").unwrap();
        assert!(matches!(read_traces(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn malformed_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        fs::write(&path, "{\"t\":0,\"y\":0.0}\nnot json\n").unwrap();
        let err = read_truth(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let frames = (0..5)
            .map(|i| Frame::new(i, 30, vec![0.1 * i as f64, 1.0 / 3.0]))
            .collect();
        let t = Trajectory::new("x", "task", 30, frames).unwrap();
        let path = dir.path().join("x.jsonl");
        write_trajectory(&path, &t).unwrap();
        assert_eq!(read_trajectory(&path, "x", "task", 30).unwrap(), t);
    }
}
