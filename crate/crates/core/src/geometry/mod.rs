//! Point clouds, per-keypoint affine fields, sampling, metrics and file I/O.

mod field;
pub mod io;
mod metrics;
mod sampling;

pub use field::TransformField;
pub use metrics::{
    chamfer_l1, chamfer_l2, chamfer_loss, f_score, mmd, nearest_sq, ChamferKind,
};
pub use sampling::{farthest_point_sample, farthest_point_indices, knn_indices};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Point = [f64; 3];

/// Slack allowed on the unit-cube bound of normalized clouds, absorbing
/// rounding in normalization.
pub const NORMALIZED_SLACK: f64 = 1e-9;

/// Role a cloud plays in the completion pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    PartialInput,
    GroundTruth,
    Keypoints,
    Symmetric,
    Coarse,
    /// Output of refinement block `l` (1-based).
    Refined(u8),
    Other,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::PartialInput => f.write_str("partial_input"),
            Source::GroundTruth => f.write_str("ground_truth"),
            Source::Keypoints => f.write_str("keypoints"),
            Source::Symmetric => f.write_str("symmetric"),
            Source::Coarse => f.write_str("coarse"),
            Source::Refined(l) => write!(f, "refined_{l}"),
            Source::Other => f.write_str("other"),
        }
    }
}

/// Non-empty ordered list of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    source: Source,
    label: Option<String>,
    normalized: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, source: Source) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("point cloud must not be empty"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                op: "point cloud",
                index: i,
                value: points[i].into_iter().find(|v| !v.is_finite()).unwrap(),
            });
        }
        Ok(Self {
            points,
            source,
            label: None,
            normalized: false,
        })
    }

    /// Cloud flagged as normalized; every coordinate must lie in
    /// `[-0.5, 0.5]` (up to [`NORMALIZED_SLACK`]).
    pub fn new_normalized(points: Vec<Point>, source: Source) -> Result<Self> {
        let mut c = Self::new(points, source)?;
        c.mark_normalized()?;
        Ok(c)
    }

    pub fn mark_normalized(&mut self) -> Result<()> {
        let limit = 0.5 + NORMALIZED_SLACK;
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|v| v.abs() > limit))
        {
            return Err(Error::contract(format!(
                "point {i} {:?} lies outside the unit cube of a normalized cloud",
                self.points[i]
            )));
        }
        self.normalized = true;
        Ok(())
    }

    pub fn from_tensor(t: &Tensor, source: Source) -> Result<Self> {
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(Error::Shape {
                op: "point cloud",
                left: t.shape().to_vec(),
                right: vec![3],
            });
        }
        Self::new(t.to_points(), source)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_points(&self.points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, indices: &[usize], source: Source) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut c = Self::new(points, source)?;
        c.normalized = self.normalized;
        c.label.clone_from(&self.label);
        Ok(c)
    }

    /// Concatenation of two clouds (multiset union).
    pub fn union(&self, other: &PointCloud, source: Source) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud {
            points,
            source,
            label: self.label.clone(),
            normalized: self.normalized && other.normalized,
        }
    }

    /// Reflection through the `x = 0` plane.
    pub fn mirror_x(&self) -> PointCloud {
        let mut c = self.clone();
        for p in &mut c.points {
            p[0] = -p[0];
        }
        c
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Recenters at the centroid and scales so the largest absolute
    /// coordinate is 0.5. Returns the parameters needed to undo it.
    pub fn normalize(&self) -> (PointCloud, Normalization) {
        let norm = Normalization::fit(self);
        (norm.apply(self), norm)
    }
}

/// Similarity transform `p ↦ (p − centroid) · scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub centroid: Point,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        centroid: [0.0; 3],
        scale: 1.0,
    };

    /// Parameters that normalize `cloud`. A cloud with no extent (a single
    /// point, or repeated copies of one) gets scale 1.
    pub fn fit(cloud: &PointCloud) -> Self {
        let centroid = cloud.centroid();
        let max_abs = cloud
            .points
            .iter()
            .flat_map(|p| (0..3).map(move |k| (p[k] - centroid[k]).abs()))
            .fold(0.0, f64::max);
        let scale = if max_abs > 0.0 { 0.5 / max_abs } else { 1.0 };
        Self { centroid, scale }
    }

    pub fn forward(&self, p: Point) -> Point {
        [0, 1, 2].map(|k| (p[k] - self.centroid[k]) * self.scale)
    }

    pub fn inverse(&self, p: Point) -> Point {
        [0, 1, 2].map(|k| p[k] / self.scale + self.centroid[k])
    }

    /// Maps a cloud into the normalized frame. The result is flagged as
    /// normalized only when it actually fits the unit cube.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        for p in &mut out.points {
            *p = self.forward(*p);
        }
        out.normalized = false;
        let _ = out.mark_normalized();
        out
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        for p in &mut out.points {
            *p = self.inverse(*p);
        }
        out.normalized = false;
        out
    }
}
