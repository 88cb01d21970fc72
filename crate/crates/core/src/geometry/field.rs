use super::{Point, PointCloud, Source};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-keypoint affine maps `p ↦ A·p + t`, stored as 12 numbers each: the
/// 3×3 matrix row-major, then the translation.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformField {
    entries: Vec<[f64; 12]>,
}

impl TransformField {
    pub fn new(entries: Vec<[f64; 12]>) -> Self {
        Self { entries }
    }

    pub fn identity(n: usize) -> Self {
        let mut e = [0.0; 12];
        e[0] = 1.0;
        e[4] = 1.0;
        e[8] = 1.0;
        Self {
            entries: vec![e; n],
        }
    }

    pub fn from_parts(affine: &[[[f64; 3]; 3]], translation: &[[f64; 3]]) -> Result<Self> {
        if affine.len() != translation.len() {
            return Err(Error::Cardinality {
                what: "field translations",
                expected: affine.len(),
                got: translation.len(),
            });
        }
        let entries = affine
            .iter()
            .zip(translation)
            .map(|(a, t)| {
                let mut e = [0.0; 12];
                for r in 0..3 {
                    e[3 * r..3 * r + 3].copy_from_slice(&a[r]);
                }
                e[9..].copy_from_slice(t);
                e
            })
            .collect();
        Ok(Self { entries })
    }

    /// Rebuilds a field from its flat layout (`n · 12` values).
    pub fn unflatten(data: &[f64]) -> Result<Self> {
        if data.is_empty() || data.len() % 12 != 0 {
            return Err(Error::Shape {
                op: "transform field",
                left: vec![data.len()],
                right: vec![12],
            });
        }
        Ok(Self {
            entries: data
                .chunks_exact(12)
                .map(|c| c.try_into().unwrap())
                .collect(),
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flatten().copied().collect()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.cols() != 12 {
            return Err(Error::Shape {
                op: "transform field",
                left: t.shape().to_vec(),
                right: vec![12],
            });
        }
        Self::unflatten(t.data())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.entries.len(), 12], self.flatten())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[[f64; 12]] {
        &self.entries
    }

    pub fn affine(&self, i: usize) -> [[f64; 3]; 3] {
        let e = &self.entries[i];
        [[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]]
    }

    pub fn translation(&self, i: usize) -> [f64; 3] {
        let e = &self.entries[i];
        [e[9], e[10], e[11]]
    }

    pub fn apply_point(&self, i: usize, p: Point) -> Point {
        let e = &self.entries[i];
        [0, 1, 2].map(|r| e[3 * r] * p[0] + e[3 * r + 1] * p[1] + e[3 * r + 2] * p[2] + e[9 + r])
    }

    /// Maps keypoint `i` by entry `i`. The result is tagged symmetric and is
    /// not flagged normalized, since an affine map may leave the unit cube.
    pub fn apply(&self, keypoints: &PointCloud) -> Result<PointCloud> {
        if keypoints.len() != self.len() {
            return Err(Error::Cardinality {
                what: "transform field entries",
                expected: keypoints.len(),
                got: self.len(),
            });
        }
        let points = keypoints
            .points()
            .iter()
            .enumerate()
            .map(|(i, &p)| self.apply_point(i, p))
            .collect();
        PointCloud::new(points, Source::Symmetric)
    }
}
