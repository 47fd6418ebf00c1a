//! File formats.
//!
//! Every artifact is a JSON document carrying a `format_version` field;
//! loaders reject versions they do not know. Floats serialize as the
//! shortest decimal string that round-trips the exact `f64`, so identical
//! in-memory artifacts produce byte-identical files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::NormStats;
use crate::error::{Error, Result};
use crate::fingerprint::{DiscardCounts, Fingerprint, FingerprintSet, GenConfig};
use crate::modelops::{ModelPool, PoolRole};
use crate::nn::Model;
use crate::verify::BenchmarkResult;

pub const FORMAT_VERSION: u32 = 1;

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: Model,
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    model.validate()?;
    write_json(
        &ModelFile {
            format_version: FORMAT_VERSION,
            model: model.clone(),
        },
        path,
    )
}

pub fn load_model(path: &Path) -> Result<Model> {
    let file: ModelFile = read_json(path)?;
    check_version(file.format_version)?;
    file.model.validate()?;
    Ok(file.model)
}

#[derive(Serialize, Deserialize)]
struct FingerprintSetFile {
    format_version: u32,
    gen_config: GenConfig,
    protected_model_ref: String,
    fingerprints: Vec<Fingerprint>,
    discarded_anchor_count: usize,
    discards: DiscardCounts,
}

pub fn save_fingerprints(fps: &FingerprintSet, path: &Path) -> Result<()> {
    write_json(
        &FingerprintSetFile {
            format_version: FORMAT_VERSION,
            gen_config: fps.gen_config.clone(),
            protected_model_ref: fps.protected_model_ref.clone(),
            fingerprints: fps.fingerprints.clone(),
            discarded_anchor_count: fps.discarded_anchor_count,
            discards: fps.discards.clone(),
        },
        path,
    )
}

pub fn load_fingerprints(path: &Path) -> Result<FingerprintSet> {
    let file: FingerprintSetFile = read_json(path)?;
    check_version(file.format_version)?;
    Ok(FingerprintSet {
        fingerprints: file.fingerprints,
        gen_config: file.gen_config,
        protected_model_ref: file.protected_model_ref,
        discarded_anchor_count: file.discarded_anchor_count,
        discards: file.discards,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolMember {
    pub file: String,
    pub lineage: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolManifest {
    pub format_version: u32,
    pub role: PoolRole,
    pub seed_range: (u64, u64),
    pub members: Vec<PoolMember>,
}

/// Write each member model under `dir` plus a manifest listing them.
/// Returns the manifest path.
pub fn save_pool(pool: &ModelPool, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::with_capacity(pool.len());
    for (i, model) in pool.models.iter().enumerate() {
        let file = format!("m{i:03}.json");
        save_model(model, &dir.join(&file))?;
        members.push(PoolMember {
            file,
            lineage: model.lineage.clone(),
            seed: pool.member_seeds[i],
        });
    }
    let manifest = PoolManifest {
        format_version: FORMAT_VERSION,
        role: pool.role,
        seed_range: pool.seed_range,
        members,
    };
    let path = dir.join("manifest.json");
    write_json(&manifest, &path)?;
    Ok(path)
}

pub fn load_pool(manifest_path: &Path) -> Result<ModelPool> {
    let manifest: PoolManifest = read_json(manifest_path)?;
    check_version(manifest.format_version)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut models = Vec::with_capacity(manifest.members.len());
    let mut member_seeds = Vec::with_capacity(manifest.members.len());
    for member in &manifest.members {
        models.push(load_model(&dir.join(&member.file))?);
        member_seeds.push(member.seed);
    }
    ModelPool::new(models, manifest.role, member_seeds, manifest.seed_range)
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    format_version: u32,
    #[serde(flatten)]
    result: BenchmarkResult,
}

pub fn save_report(result: &BenchmarkResult, path: &Path) -> Result<()> {
    write_json(
        &ReportFile {
            format_version: FORMAT_VERSION,
            result: result.clone(),
        },
        path,
    )
}

pub fn load_report(path: &Path) -> Result<BenchmarkResult> {
    let file: ReportFile = read_json(path)?;
    check_version(file.format_version)?;
    Ok(file.result)
}

/// Dataset sidecar: name, dimensions, class count, and normalization
/// statistics. The sample matrix itself travels as CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub name: String,
    pub dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormStats>,
}

pub fn save_dataset_meta(meta: &DatasetMeta, path: &Path) -> Result<()> {
    write_json(meta, path)
}

pub fn load_dataset_meta(path: &Path) -> Result<DatasetMeta> {
    let meta: DatasetMeta = read_json(path)?;
    check_version(meta.format_version)?;
    Ok(meta)
}
