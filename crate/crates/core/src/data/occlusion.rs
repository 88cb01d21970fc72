use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knn_indices, Point, PointCloud, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionMode {
    /// Drops the points farthest along a direction (a planar cut).
    HalfSpace,
    /// Keeps what a distant camera sees: back-facing points go first, then
    /// the points farthest from the camera.
    Viewpoint,
    /// Drops the nearest neighbors of a random point.
    PatchDrop,
}

impl OcclusionMode {
    pub fn name(self) -> &'static str {
        match self {
            OcclusionMode::HalfSpace => "half-space",
            OcclusionMode::Viewpoint => "viewpoint",
            OcclusionMode::PatchDrop => "patch-drop",
        }
    }
}

impl fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [OcclusionMode::HalfSpace, OcclusionMode::Viewpoint, OcclusionMode::PatchDrop]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown occlusion mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSpec {
    pub mode: OcclusionMode,
    /// Fraction of points removed: 0, or within [0.25, 0.75].
    pub severity: f64,
    /// Cut normal or camera direction; drawn from the seed when absent.
    #[serde(default)]
    pub direction: Option<Point>,
}

impl OcclusionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.severity == 0.0 || (0.25..=0.75).contains(&self.severity)) {
            return Err(Error::config(format!(
                "occlusion severity {} must be 0 or within [0.25, 0.75]",
                self.severity
            )));
        }
        if let Some(d) = self.direction {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::config("occlusion direction must be a nonzero vector"));
            }
        }
        Ok(())
    }

    pub(crate) fn unit_direction(&self, rng: &mut ChaCha8Rng) -> Point {
        let d = self
            .direction
            .unwrap_or_else(|| [0; 3].map(|_| StandardNormal.sample(rng)));
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        d.map(|c| c / n)
    }
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Indices (ascending) of the points kept by the occlusion.
///
/// `normals` are needed by [`OcclusionMode::Viewpoint`]; without them,
/// normals are taken as pointing away from the centroid.
pub fn occlude_indices(
    cloud: &PointCloud,
    normals: Option<&[Point]>,
    spec: &OcclusionSpec,
    seed: u64,
) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = cloud.len();
    let pts = cloud.points();
    if let Some(nr) = normals {
        if nr.len() != n {
            return Err(Error::Cardinality {
                what: "normals",
                expected: n,
                got: nr.len(),
            });
        }
    }
    let remove = (spec.severity * n as f64).round() as usize;
    if remove == 0 {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = spec.unit_direction(&mut rng);
    let mut dropped = vec![false; n];
    match spec.mode {
        OcclusionMode::HalfSpace => {
            // The cut plane sits between the last kept and first dropped
            // point along `dir`; ranking by (distance, index) makes the
            // removed count exact.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| dot(pts[j], dir).total_cmp(&dot(pts[i], dir)).then(i.cmp(&j)));
            for &i in &order[..remove] {
                dropped[i] = true;
            }
        }
        OcclusionMode::Viewpoint => {
            let c = cloud.centroid();
            let facing = |i: usize| {
                let nrm = match normals {
                    Some(nr) => nr[i],
                    None => [0, 1, 2].map(|k| pts[i][k] - c[k]),
                };
                dot(nrm, dir) >= 0.0
            };
            let mut count = 0;
            for (i, d) in dropped.iter_mut().enumerate() {
                if !facing(i) {
                    *d = true;
                    count += 1;
                }
            }
            let mut visible: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
            visible.sort_by(|&i, &j| dot(pts[i], dir).total_cmp(&dot(pts[j], dir)).then(i.cmp(&j)));
            for &i in visible.iter().take(remove.saturating_sub(count)) {
                dropped[i] = true;
            }
        }
        OcclusionMode::PatchDrop => {
            let center = rng.random_range(0..n);
            for i in knn_indices(&[pts[center]], pts, remove)? {
                dropped[i] = true;
            }
        }
    }
    Ok((0..n).filter(|&i| !dropped[i]).collect())
}

/// The partial cloud left after occlusion, in the original point order.
pub fn occlude(cloud: &PointCloud, normals: Option<&[Point]>, spec: &OcclusionSpec, seed: u64) -> Result<PointCloud> {
    let keep = occlude_indices(cloud, normals, spec, seed)?;
    if keep.is_empty() {
        return Err(Error::config("occlusion removed every point"));
    }
    cloud.select(&keep, Source::PartialInput)
}
