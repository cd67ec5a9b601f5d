//! Datasets on disk: one directory per split, a feature file, an optional
//! label file and a JSON sidecar per clip, and a JSONL manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crst_core::postproc::{extract_intervals, EventInterval};
use crst_core::seqdata::{Clip, Dataset};
use crst_core::{StrongLabelGrid, WeakLabel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvio::{write_intervals, ClipEvents};
use crate::error::{LabError, Result};
use crate::gridio::{encode_grid, read_features, read_grid};

pub const MANIFEST: &str = "manifest.jsonl";
pub const SPLITS: [&str; 4] = ["strong", "weak", "unlabeled", "validation"];

/// File name of the reference events of a split.
pub fn reference_file(split: &str) -> String {
    format!("reference_{split}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub features: String,
    pub labels: Option<String>,
    pub sidecar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub split: String,
    pub frames: usize,
    pub channels: usize,
    pub fps: f64,
    /// Clip-level presence; absent for unlabeled clips.
    pub weak: Option<Vec<u8>>,
    /// Reference events in seconds; strong and validation clips only.
    pub events: Option<Vec<EventInterval>>,
}

struct ClipFiles<'a> {
    id: &'a str,
    split: &'a str,
    features: &'a crst_core::FeatureGrid,
    strong: Option<&'a StrongLabelGrid>,
    weak: Option<WeakLabel>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

fn write_clip(root: &Path, c: &ClipFiles<'_>, manifest: &mut Vec<u8>) -> Result<()> {
    let features = format!("{}/{}.feat", c.split, c.id);
    write_file(&root.join(&features), &encode_grid(&c.features.data, c.features.fps))?;
    let labels = match c.strong {
        Some(y) => {
            let rel = format!("{}/{}.labels", c.split, c.id);
            write_file(&root.join(&rel), &encode_grid(y.grid(), c.features.fps))?;
            Some(rel)
        }
        None => None,
    };
    let sidecar = Sidecar {
        id: c.id.to_string(),
        split: c.split.to_string(),
        frames: c.features.frames(),
        channels: c.features.channels(),
        fps: c.features.fps as f32 as f64,
        weak: c.weak.as_ref().map(|w| w.as_slice().iter().map(|&v| v as u8).collect()),
        events: c.strong.map(|y| extract_intervals(y.grid(), c.features.fps as f32 as f64)),
    };
    let rel = format!("{}/{}.json", c.split, c.id);
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_file(&root.join(&rel), &json)?;
    let entry = ManifestEntry { id: c.id.to_string(), split: c.split.to_string(), features, labels, sidecar: rel };
    serde_json::to_writer(&mut *manifest, &entry).expect("manifest entry serializes");
    manifest.push(b'\n');
    Ok(())
}

/// Writes every split plus reference CSVs; returns the dataset hash.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<String> {
    for s in SPLITS {
        let dir = root.join(s);
        fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    }
    let mut manifest = Vec::new();
    for c in &ds.strong {
        let weak = Some(crst_core::seqdata::weaken(&c.label));
        let files = ClipFiles { id: &c.id, split: "strong", features: &c.features, strong: Some(&c.label), weak };
        write_clip(root, &files, &mut manifest)?;
    }
    for c in &ds.weak {
        let files = ClipFiles { id: &c.id, split: "weak", features: &c.features, strong: None, weak: Some(c.label.clone()) };
        write_clip(root, &files, &mut manifest)?;
    }
    for c in &ds.unlabeled {
        let files = ClipFiles { id: &c.id, split: "unlabeled", features: &c.features, strong: None, weak: None };
        write_clip(root, &files, &mut manifest)?;
    }
    for c in &ds.validation {
        let weak = Some(crst_core::seqdata::weaken(&c.label));
        let files = ClipFiles { id: &c.id, split: "validation", features: &c.features, strong: Some(&c.label), weak };
        write_clip(root, &files, &mut manifest)?;
    }
    let path = root.join(MANIFEST);
    fs::File::create(&path).and_then(|mut f| f.write_all(&manifest)).map_err(|e| LabError::io(&path, e))?;
    for (split, clips) in [("strong", &ds.strong), ("validation", &ds.validation)] {
        let events: ClipEvents =
            clips.iter().map(|c| (c.id.clone(), extract_intervals(c.label.grid(), c.features.fps as f32 as f64))).collect();
        write_intervals(&root.join(reference_file(split)), &events)?;
    }
    dataset_hash(root)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| LabError::parse(&path, i + 1, e.to_string())))
        .collect()
}

/// SHA-256 over the manifest and every file it lists, in manifest order.
pub fn dataset_hash(root: &Path) -> Result<String> {
    let path = root.join(MANIFEST);
    let manifest = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
    let mut h = Sha256::new();
    h.update(&manifest);
    for entry in read_manifest(root)? {
        for rel in [Some(&entry.features), entry.labels.as_ref(), Some(&entry.sidecar)].into_iter().flatten() {
            let p = root.join(rel);
            let bytes = fs::read(&p).map_err(|e| LabError::io(&p, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn read_sidecar(root: &Path, rel: &str) -> Result<Sidecar> {
    let p = root.join(rel);
    let bytes = fs::read(&p).map_err(|e| LabError::io(&p, e))?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::parse(&p, e.line(), e.to_string()))
}

fn weak_label(sc: &Sidecar, path: &Path) -> Result<WeakLabel> {
    let v = sc.weak.as_ref().ok_or_else(|| LabError::Data(format!("{}: weak label missing", path.display())))?;
    WeakLabel::new(v.iter().map(|&b| b as f64).collect()).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}

/// Loads every split listed in the manifest.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for e in read_manifest(root)? {
        let features = read_features(&root.join(&e.features))?;
        let sc_path = root.join(&e.sidecar);
        let sc = read_sidecar(root, &e.sidecar)?;
        if sc.frames != features.frames() || sc.channels != features.channels() {
            return Err(LabError::Data(format!("{}: shape disagrees with {}", sc_path.display(), e.features)));
        }
        let entry_id = e.id.clone();
        let strong_label = || -> Result<StrongLabelGrid> {
            let rel = e.labels.as_ref().ok_or_else(|| LabError::Data(format!("clip {} has no label file", entry_id)))?;
            let p = root.join(rel);
            let (g, _) = read_grid(&p)?;
            StrongLabelGrid::new(g).map_err(|err| LabError::Data(format!("{}: {err}", p.display())))
        };
        match e.split.as_str() {
            "strong" => ds.strong.push(Clip { id: e.id, features, label: strong_label()? }),
            "validation" => ds.validation.push(Clip { id: e.id, features, label: strong_label()? }),
            "weak" => ds.weak.push(Clip { id: e.id, label: weak_label(&sc, &sc_path)?, features }),
            "unlabeled" => ds.unlabeled.push(Clip { id: e.id, features, label: () }),
            other => return Err(LabError::Data(format!("unknown split '{other}' for clip {}", e.id))),
        }
    }
    ds.validate().map_err(|e| LabError::Data(e.to_string()))?;
    Ok(ds)
}

/// Reference events of a strongly labeled split, keyed by clip id.
pub fn reference_events(clips: &[Clip<StrongLabelGrid>]) -> ClipEvents {
    clips.iter().map(|c| (c.id.clone(), extract_intervals(c.label.grid(), c.features.fps))).collect()
}

/// Absolute path of a manifest-relative file.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

/// Clip ids per split, in manifest order.
pub fn split_ids(entries: &[ManifestEntry]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in entries {
        out.entry(e.split.clone()).or_default().push(e.id.clone());
    }
    out
}

/// Class count of a dataset on disk, read from the first labeled clip's sidecar.
pub fn dataset_classes(root: &Path) -> Result<usize> {
    for e in read_manifest(root)? {
        if let Some(w) = read_sidecar(root, &e.sidecar)?.weak {
            return Ok(w.len());
        }
    }
    Err(LabError::Data(format!("{}: no labeled clips", root.display())))
}
