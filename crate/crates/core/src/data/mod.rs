//! Procedural (partial, complete) training pairs.
//!
//! Shapes are sampled uniformly by surface area. Each family has a short
//! parameter list with documented ranges (see [`Family::param_ranges`]);
//! composite layouts are drawn from the shape seed.

mod dataset;
mod occlusion;
mod surface;

pub use dataset::{
    build_dataset, generate_dataset, generate_pair, load_dataset, split_of, DatasetConfig, Manifest, ManifestEntry, Pair, Split,
    MANIFEST_FILE,
};
pub use occlusion::{occlude, occlude_indices, OcclusionMode, OcclusionSpec};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_sq, Point, PointCloud, Source};
use surface::{Patch, Surface};

pub const MIN_SHAPE_POINTS: usize = 512;
/// Required mean distance from an asymmetric shape to its own mirror image.
pub const ASYMMETRY_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Box,
    Cylinder,
    MirroredComposite,
    WingProfile,
    AsymmetricComposite,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Box,
        Family::Cylinder,
        Family::MirroredComposite,
        Family::WingProfile,
        Family::AsymmetricComposite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Box => "box",
            Family::Cylinder => "cylinder",
            Family::MirroredComposite => "mirrored-composite",
            Family::WingProfile => "wing-profile",
            Family::AsymmetricComposite => "asymmetric-composite",
        }
    }

    /// `(name, min, max)` for every parameter, in order.
    ///
    /// | family | parameters |
    /// |---|---|
    /// | box | side lengths `sx sy sz` in [0.2, 1] |
    /// | cylinder | `radius` in [0.1, 0.5], `height` in [0.2, 1] |
    /// | mirrored-composite | `parts` in [1, 3] (mirrored pairs) |
    /// | wing-profile | `thickness` in [0.06, 0.24] (fraction of chord), `chord` in [0.5, 1], `span` in [0.5, 1.5] |
    /// | asymmetric-composite | `parts` in [1, 3] (one-sided attachments) |
    pub fn param_ranges(self) -> &'static [(&'static str, f64, f64)] {
        match self {
            Family::Box => &[("sx", 0.2, 1.0), ("sy", 0.2, 1.0), ("sz", 0.2, 1.0)],
            Family::Cylinder => &[("radius", 0.1, 0.5), ("height", 0.2, 1.0)],
            Family::MirroredComposite | Family::AsymmetricComposite => &[("parts", 1.0, 3.0)],
            Family::WingProfile => &[("thickness", 0.06, 0.24), ("chord", 0.5, 1.0), ("span", 0.5, 1.5)],
        }
    }

    fn integer_params(self) -> bool {
        matches!(self, Family::MirroredComposite | Family::AsymmetricComposite)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown shape family {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub family: Family,
    pub params: Vec<f64>,
    pub n_points: usize,
    pub seed: u64,
}

impl ShapeSpec {
    /// Spec with parameters drawn uniformly from the family's ranges.
    pub fn random(family: Family, n_points: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = family
            .param_ranges()
            .iter()
            .map(|&(_, lo, hi)| {
                if family.integer_params() {
                    rng.random_range(lo as u32..=hi as u32) as f64
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect();
        Self {
            family,
            params,
            n_points,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < MIN_SHAPE_POINTS {
            return Err(Error::config(format!(
                "shapes need at least {MIN_SHAPE_POINTS} points, got {}",
                self.n_points
            )));
        }
        let ranges = self.family.param_ranges();
        if self.params.len() != ranges.len() {
            return Err(Error::config(format!(
                "{} takes {} parameters, got {}",
                self.family,
                ranges.len(),
                self.params.len()
            )));
        }
        for (&v, &(name, lo, hi)) in self.params.iter().zip(ranges) {
            if !(lo..=hi).contains(&v) || (self.family.integer_params() && v.fract() != 0.0) {
                return Err(Error::config(format!(
                    "{} parameter {name} = {v} outside [{lo}, {hi}]",
                    self.family
                )));
            }
        }
        Ok(())
    }
}

/// Surface samples with the outward normal of the patch each came from.
#[derive(Clone, Debug)]
pub struct SurfaceSample {
    pub cloud: PointCloud,
    pub normals: Vec<Point>,
}

pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    Ok(sample_surface(spec)?.cloud)
}

pub fn sample_surface(spec: &ShapeSpec) -> Result<SurfaceSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5a3e);
    let p = &spec.params;
    let (points, normals) = match spec.family {
        Family::Box => {
            let s = Surface::cuboid([0.0; 3], [p[0] / 2.0, p[1] / 2.0, p[2] / 2.0]);
            s.sample(spec.n_points, &mut rng)
        }
        Family::Cylinder => Surface::cylinder([0.0; 3], p[0], p[1] / 2.0).sample(spec.n_points, &mut rng),
        Family::WingProfile => Surface::wing(p[0], p[1], p[2]).sample(spec.n_points, &mut rng),
        Family::MirroredComposite => mirrored_composite(p[0] as usize, spec.n_points, &mut rng),
        Family::AsymmetricComposite => asymmetric_composite(p[0] as usize, spec.n_points, &mut rng)?,
    };
    let cloud = PointCloud::new(points, Source::GroundTruth)?.with_label(spec.family.name());
    Ok(SurfaceSample { cloud, normals })
}

/// A central body with `parts` attachments, every attachment lying wholly
/// at `x > 0`.
fn right_side_layout(parts: usize, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    // Bodies are widest across the mirror plane, like a fuselage with
    // wings or a bench with armrests.
    let body = [
        rng.random_range(0.25..0.45),
        rng.random_range(0.08..0.2),
        rng.random_range(0.08..0.2),
    ];
    let mut patches = Surface::cuboid([0.0; 3], body).patches;
    for _ in 0..parts {
        let cy = rng.random_range(-body[1]..body[1]);
        let cz = rng.random_range(-body[2]..body[2]);
        if rng.random_bool(0.5) {
            let half = [
                rng.random_range(0.05..0.15),
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.2),
            ];
            let cx = body[0] + half[0] * rng.random_range(0.5..1.2);
            patches.extend(Surface::cuboid([cx, cy, cz], half).patches);
        } else {
            let r = rng.random_range(0.04..0.1);
            let half_h = rng.random_range(0.08..0.25);
            let cx = body[0] + r * rng.random_range(0.8..1.5);
            patches.extend(Surface::cylinder([cx, cy, cz], r, half_h).patches);
        }
    }
    patches
}

/// Samples the `x ≥ 0` half and reflects it, so the cloud is an exact
/// mirror image of itself about `x = 0`.
fn mirrored_composite(parts: usize, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<Point>) {
    let patches = right_side_layout(parts, rng);
    let surface = Surface { patches };
    let half = n.div_ceil(2);
    let (mut pts, mut normals) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while pts.len() < half {
        let (p, nrm) = surface.sample_one(rng);
        if p[0] >= 0.0 {
            pts.push(p);
            normals.push(nrm);
        }
    }
    let mirrored: Vec<(Point, Point)> = pts
        .iter()
        .zip(&normals)
        .map(|(p, q)| ([-p[0], p[1], p[2]], [-q[0], q[1], q[2]]))
        .take(n - half)
        .collect();
    for (p, q) in mirrored {
        pts.push(p);
        normals.push(q);
    }
    (pts, normals)
}

/// Mean distance from each point to the nearest point of the cloud's
/// reflection through the plane `x = centroid.x`.
pub fn mirror_gap(points: &[Point]) -> f64 {
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / points.len() as f64;
    let mirror: Vec<Point> = points.iter().map(|p| [2.0 * cx - p[0], p[1], p[2]]).collect();
    nearest_sq(points, &mirror).iter().map(|(d, _)| d.sqrt()).sum::<f64>() / points.len() as f64
}

fn asymmetric_composite(parts: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Point>, Vec<Point>)> {
    for _ in 0..64 {
        let patches = right_side_layout(parts, rng);
        let (pts, normals) = Surface { patches }.sample(n, rng);
        if mirror_gap(&pts) >= ASYMMETRY_MARGIN {
            return Ok((pts, normals));
        }
    }
    Err(Error::contract("could not draw an asymmetric layout above the margin"))
}
