//! Directory layouts and manifests for scene sets, refined datasets and
//! reports.
//!
//! Seeds are stored as 16-digit hex strings because TOML integers are
//! signed 64-bit.

use crate::error::{CliError, Result};
use crate::formats::{read_png, read_scene, write_png, write_scene};
use mvboost_core::camera::{make_canonical_rig, ViewLabel};
use mvboost_core::pipeline::{RefinedPair, SeedRecord};
use mvboost_core::{GaussianScene, MultiViewSet, Stage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCENES_FORMAT: &str = "mvboost-scenes v1";
pub const DATASET_FORMAT: &str = "mvboost-dataset v1";
pub const MANIFEST: &str = "manifest.toml";

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

pub fn unhex(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| CliError::Data(format!("bad hex seed `{s}`")))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::data_at(path, e))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::data_at(path, e.message()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Provenance written next to every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: String,
    pub inputs: Vec<String>,
}

/// `report.csv` gets `report.csv.meta.toml`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    path.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenesManifest {
    pub format: String,
    pub config_hash: String,
    pub resolution: usize,
    pub ortho_half_extent: f64,
    pub scene_ids: Vec<u64>,
}

pub fn scene_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("scene_{id:06}.mvbgs"))
}

pub fn scene_view_file(dir: &Path, id: u64, label: ViewLabel) -> PathBuf {
    dir.join(format!("scene_{id:06}_{}.png", label.as_str()))
}

/// Writes one scene and its ground-truth renders into a scene set.
pub fn write_scene_entry(dir: &Path, id: u64, scene: &GaussianScene, gt: &MultiViewSet) -> Result<()> {
    write_scene(&scene_file(dir, id), scene)?;
    for (pose, img) in gt.views() {
        write_png(&scene_view_file(dir, id, pose.label), img)?;
    }
    Ok(())
}

/// Scene ids and ground truths of a scene set, in manifest order.
pub fn read_scene_set(dir: &Path) -> Result<(ScenesManifest, Vec<(u64, GaussianScene)>)> {
    let m: ScenesManifest = read_toml(&dir.join(MANIFEST))?;
    if m.format != SCENES_FORMAT {
        return Err(CliError::data_at(dir, format!("not a scene set (format `{}`)", m.format)));
    }
    let scenes = m.scene_ids.iter().map(|&id| Ok((id, read_scene(&scene_file(dir, id))?))).collect::<Result<_>>()?;
    Ok((m, scenes))
}

/// Scene id from a `scene_<id>.mvbgs` file name, if it follows that pattern.
pub fn scene_id_from_path(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.strip_prefix("scene_")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub config_hash: String,
    pub resolution: usize,
    pub strength: f64,
    pub base_fingerprint: String,
    /// Completed scenes, in build order.
    pub scene_ids: Vec<u64>,
}

/// Per-scene record; written after the images, so its presence marks the
/// entry complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryManifest {
    pub scene_id: u64,
    pub scene_seed: String,
    pub generator_seed: String,
    pub refine_seed: String,
    pub config_hash: String,
    pub base_fingerprint: String,
    pub strength: f64,
    pub resolution: usize,
}

pub fn entry_dir(root: &Path, id: u64) -> PathBuf {
    root.join(format!("scene_{id:06}"))
}

fn entry_view(dir: &Path, kind: &str, label: ViewLabel) -> PathBuf {
    dir.join(format!("{kind}_{}.png", label.as_str()))
}

pub fn write_entry(root: &Path, pair: &RefinedPair, template: &EntryManifest) -> Result<()> {
    let dir = entry_dir(root, pair.scene_id);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (kind, set) in [("input", &pair.inputs), ("target", &pair.targets)] {
        for (pose, img) in set.views() {
            write_png(&entry_view(&dir, kind, pose.label), img)?;
        }
    }
    let m = EntryManifest {
        scene_id: pair.scene_id,
        scene_seed: hex(pair.seeds.scene),
        generator_seed: hex(pair.seeds.generator),
        refine_seed: hex(pair.seeds.refine),
        ..template.clone()
    };
    write_toml(&dir.join(MANIFEST), &m)
}

/// The entry manifest if the entry is complete and was built under
/// `template`'s settings.
pub fn completed_entry(root: &Path, id: u64, template: &EntryManifest) -> Option<EntryManifest> {
    let m: EntryManifest = read_toml(&entry_dir(root, id).join(MANIFEST)).ok()?;
    let same = m.scene_id == id
        && m.config_hash == template.config_hash
        && m.base_fingerprint == template.base_fingerprint
        && m.strength == template.strength
        && m.resolution == template.resolution;
    same.then_some(m)
}

/// Loads a refined dataset; images are read back at 8-bit precision.
pub fn read_dataset(root: &Path, ortho_half_extent: f64) -> Result<(DatasetManifest, Vec<RefinedPair>)> {
    let m: DatasetManifest = read_toml(&root.join(MANIFEST))?;
    if m.format != DATASET_FORMAT {
        return Err(CliError::data_at(root, format!("not a refined dataset (format `{}`)", m.format)));
    }
    let rig = make_canonical_rig(ortho_half_extent)?;
    let mut pairs = Vec::with_capacity(m.scene_ids.len());
    for &id in &m.scene_ids {
        let dir = entry_dir(root, id);
        let e: EntryManifest = read_toml(&dir.join(MANIFEST))?;
        if e.config_hash != m.config_hash || e.scene_id != id {
            return Err(CliError::data_at(&dir, "entry does not belong to this dataset"));
        }
        let load = |kind: &str| -> Result<Vec<_>> {
            rig.poses().iter().map(|p| Ok((*p, read_png(&entry_view(&dir, kind, p.label))?))).collect()
        };
        let inputs = load("input")?;
        let front = inputs.iter().find(|(p, _)| p.label == ViewLabel::Front).map(|(_, im)| im.clone());
        let seeds = SeedRecord { scene: unhex(&e.scene_seed)?, generator: unhex(&e.generator_seed)?, refine: unhex(&e.refine_seed)? };
        pairs.push(RefinedPair {
            scene_id: id,
            seeds,
            inputs: MultiViewSet::new(inputs, front, Stage::Generated)?,
            targets: MultiViewSet::new(load("target")?, None, Stage::Refined)?,
        });
    }
    Ok((m, pairs))
}

/// Refuses to clobber `path` unless `force` is set.
pub fn check_output_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Data(format!("{} exists; pass --force to overwrite", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

/// Prepares an output directory that must be empty unless `force` is set.
/// With `force`, files this tool writes there (`scene_*`, manifests and
/// reports) are removed first; anything else is left alone.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<_> = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.collect::<std::io::Result<_>>().map_err(|e| CliError::io(dir, e))?;
        if !entries.is_empty() {
            if !force {
                return Err(CliError::Data(format!("{} is not empty; pass --force to overwrite", dir.display())));
            }
            for e in entries {
                let name = e.file_name().to_string_lossy().into_owned();
                let ours = name.starts_with("scene_") || name == MANIFEST || name.ends_with(".csv") || name.ends_with(".meta.toml");
                if !ours {
                    continue;
                }
                let p = e.path();
                let r = if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) };
                r.map_err(|err| CliError::io(&p, err))?;
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
