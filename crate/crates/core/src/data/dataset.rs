//! Datasets on disk: paired PLY files plus a tab-separated manifest.
//!
//! Manifest schema (`manifest.tsv`): a `#` comment line, a header line,
//! then one record per shape with the columns
//!
//! | column | content |
//! |---|---|
//! | `id` | `<family>-<index, 5 digits>` |
//! | `split` | `train`, `val` or `test` (from a hash of the id, 8:1:1) |
//! | `family` | shape family name |
//! | `shape_seed` | seed of the surface sampler |
//! | `occlusion_seed` | seed of the occluder |
//! | `occlusion` | occlusion mode |
//! | `severity` | removed fraction requested |
//! | `direction` | `x,y,z` of the cut/camera direction, `-` when drawn from the seed |
//! | `params` | comma-separated family parameters |
//! | `complete`, `partial` | PLY paths relative to the manifest |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{occlude, sample_surface, Family, OcclusionMode, OcclusionSpec, ShapeSpec};
use crate::error::{Error, Result};
use crate::geometry::io::{read_cloud, write_ply};
use crate::geometry::{PointCloud, Source};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str =
    "id\tsplit\tfamily\tshape_seed\tocclusion_seed\tocclusion\tseverity\tdirection\tparams\tcomplete\tpartial";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// 8:1:1 split from the first eight bytes of SHA-256(id).
pub fn split_of(id: &str) -> Split {
    let digest = Sha256::digest(id.as_bytes());
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    match u64::from_le_bytes(first) % 10 {
        0..=7 => Split::Train,
        8 => Split::Val,
        _ => Split::Test,
    }
}

fn default_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

fn default_n_points() -> usize {
    4096
}

fn default_min_partial() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_shapes: usize,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    pub occlusion: OcclusionSpec,
    #[serde(default)]
    pub seed: u64,
    /// Partial clouds must keep at least this many points.
    #[serde(default = "default_min_partial")]
    pub min_partial_points: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shapes == 0 {
            return Err(Error::config("a dataset needs at least one shape"));
        }
        if self.families.is_empty() {
            return Err(Error::config("no shape families selected"));
        }
        self.occlusion.validate()?;
        let kept = self.n_points - (self.occlusion.severity * self.n_points as f64).round() as usize;
        if kept < self.min_partial_points {
            return Err(Error::config(format!(
                "severity {} leaves {kept} of {} points, fewer than the required {}",
                self.occlusion.severity, self.n_points, self.min_partial_points
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub family: Family,
    pub shape_seed: u64,
    pub occlusion_seed: u64,
    pub occlusion: OcclusionSpec,
    pub params: Vec<f64>,
    pub complete: PathBuf,
    pub partial: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# symfield dataset manifest v1\n{HEADER}\n");
        for e in &self.entries {
            let dir = e.occlusion.direction.map_or_else(|| "-".to_string(), |d| join(&d));
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.split.name(),
                e.family,
                e.shape_seed,
                e.occlusion_seed,
                e.occlusion.mode,
                e.occlusion.severity,
                dir,
                join(&e.params),
                e.complete.display(),
                e.partial.display()
            );
        }
        s
    }

    /// Hex SHA-256 of the manifest text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != HEADER {
                    return Err(err(ln, "unexpected manifest header".into()));
                }
                saw_header = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 11 {
                return Err(err(ln, format!("expected 11 columns, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(ln, format!("bad number {s:?}")));
            let list = |s: &str| -> Result<Vec<f64>> {
                if s.is_empty() {
                    Ok(Vec::new())
                } else {
                    s.split(',').map(num).collect()
                }
            };
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(ln, format!("bad seed {s:?}")));
            let direction = match f[7] {
                "-" => None,
                d => {
                    let v = list(d)?;
                    if v.len() != 3 {
                        return Err(err(ln, "direction needs 3 components".into()));
                    }
                    Some([v[0], v[1], v[2]])
                }
            };
            let wrap = |e: Error| err(ln, e.to_string());
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                split: f[1].parse().map_err(wrap)?,
                family: f[2].parse().map_err(wrap)?,
                shape_seed: int(f[3])?,
                occlusion_seed: int(f[4])?,
                occlusion: OcclusionSpec {
                    mode: f[5].parse::<OcclusionMode>().map_err(wrap)?,
                    severity: num(f[6])?,
                    direction,
                },
                params: list(f[8])?,
                complete: PathBuf::from(f[9]),
                partial: PathBuf::from(f[10]),
            });
        }
        if !saw_header {
            return Err(err(0, "manifest header missing".into()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Pair {
    pub id: String,
    pub family: Family,
    pub split: Split,
    pub complete: PointCloud,
    pub partial: PointCloud,
}

/// Builds one pair in memory.
pub fn generate_pair(
    id: &str,
    family: Family,
    n_points: usize,
    occlusion: &OcclusionSpec,
    shape_seed: u64,
    occlusion_seed: u64,
) -> Result<(Pair, Vec<f64>)> {
    let spec = ShapeSpec::random(family, n_points, shape_seed);
    let sample = sample_surface(&spec)?;
    let partial = occlude(&sample.cloud, Some(&sample.normals), occlusion, occlusion_seed)?;
    let pair = Pair {
        id: id.to_string(),
        family,
        split: split_of(id),
        complete: sample.cloud,
        partial,
    };
    Ok((pair, spec.params))
}

/// Entries and pairs for a config, without touching the disk.
pub fn generate_dataset(config: &DatasetConfig) -> Result<(Manifest, Vec<Pair>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut manifest = Manifest::default();
    let mut pairs = Vec::with_capacity(config.n_shapes);
    for i in 0..config.n_shapes {
        let family = config.families[i % config.families.len()];
        let (shape_seed, occlusion_seed) = (rng.next_u64(), rng.next_u64());
        let id = format!("{family}-{i:05}");
        let (pair, params) = generate_pair(&id, family, config.n_points, &config.occlusion, shape_seed, occlusion_seed)?;
        if pair.partial.len() < config.min_partial_points {
            return Err(Error::config(format!(
                "{id}: occlusion left {} points, fewer than {}",
                pair.partial.len(),
                config.min_partial_points
            )));
        }
        manifest.entries.push(ManifestEntry {
            complete: PathBuf::from(format!("{id}_complete.ply")),
            partial: PathBuf::from(format!("{id}_partial.ply")),
            id,
            split: pair.split,
            family,
            shape_seed,
            occlusion_seed,
            occlusion: config.occlusion,
            params,
        });
        pairs.push(pair);
    }
    Ok((manifest, pairs))
}

/// Writes the pairs and `manifest.tsv` into `dir`. An existing manifest is
/// only replaced when `force` is set.
pub fn build_dataset(dir: &Path, config: &DatasetConfig, force: bool) -> Result<Manifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::io(
            &manifest_path,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "dataset exists; pass --force to overwrite"),
        ));
    }
    let (manifest, pairs) = generate_dataset(config)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (e, pair) in manifest.entries.iter().zip(&pairs) {
        write_ply(&dir.join(&e.complete), &pair.complete, &[])?;
        write_ply(&dir.join(&e.partial), &pair.partial, &[])?;
    }
    std::fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Reads every pair listed in a manifest (paths relative to its directory).
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Pair>> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            let complete = read_cloud(&dir.join(&e.complete), Source::GroundTruth)?.with_label(e.family.name());
            let partial = read_cloud(&dir.join(&e.partial), Source::PartialInput)?.with_label(e.family.name());
            Ok(Pair {
                id: e.id.clone(),
                family: e.family,
                split: e.split,
                complete,
                partial,
            })
        })
        .collect()
}
