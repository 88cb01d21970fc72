use serde::{Deserialize, Serialize};

use super::sampling::dist_sq;
use super::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// For each point of `from`, the squared distance to its nearest point in
/// `to` and that point's index (lowest index on ties). Exact brute force.
pub fn nearest_sq(from: &[Point], to: &[Point]) -> Vec<(f64, usize)> {
    from.iter()
        .map(|p| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, q) in to.iter().enumerate() {
                let d = dist_sq(p, q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best
        })
        .collect()
}

fn non_empty(p: &[Point], q: &[Point]) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::contract("distance between empty point sets"));
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Which per-pair distance a Chamfer term averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferKind {
    /// Euclidean distance.
    L1,
    /// Squared Euclidean distance.
    L2,
}

fn chamfer(p: &[Point], q: &[Point], kind: ChamferKind) -> Result<f64> {
    non_empty(p, q)?;
    let f = |d: f64| match kind {
        ChamferKind::L1 => d.sqrt(),
        ChamferKind::L2 => d,
    };
    let pq = mean(nearest_sq(p, q).into_iter().map(|(d, _)| f(d)), p.len());
    let qp = mean(nearest_sq(q, p).into_iter().map(|(d, _)| f(d)), q.len());
    Ok(0.5 * (pq + qp))
}

/// `½·(mean_p min_q ‖p − q‖ + mean_q min_p ‖q − p‖)`.
pub fn chamfer_l1(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    chamfer(p.points(), q.points(), ChamferKind::L1)
}

/// As [`chamfer_l1`] with squared distances.
pub fn chamfer_l2(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    chamfer(p.points(), q.points(), ChamferKind::L2)
}

/// Harmonic mean of precision (share of `pred` strictly closer than `tau`
/// to `gt`) and recall (share of `gt` strictly closer than `tau` to `pred`).
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    non_empty(pred.points(), gt.points())?;
    if !(tau > 0.0) {
        return Err(Error::contract(format!("f-score threshold must be positive, got {tau}")));
    }
    let within = |from: &[Point], to: &[Point]| {
        let hits = nearest_sq(from, to)
            .into_iter()
            .filter(|(d, _)| d.sqrt() < tau)
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = within(pred.points(), gt.points());
    let recall = within(gt.points(), pred.points());
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Minimum matching distance: for each reference, the smallest
/// [`chamfer_l2`] to any prediction, averaged over references.
pub fn mmd(preds: &[PointCloud], refs: &[PointCloud]) -> Result<f64> {
    if preds.is_empty() || refs.is_empty() {
        return Err(Error::contract("minimum matching distance needs non-empty lists"));
    }
    let mut total = 0.0;
    for r in refs {
        let mut best = f64::INFINITY;
        for p in preds {
            best = best.min(chamfer_l2(r, p)?);
        }
        total += best;
    }
    Ok(total / refs.len() as f64)
}

/// Chamfer distance between an `n × 3` tape variable and a fixed target,
/// differentiable with respect to the variable. Nearest neighbours are
/// treated as constants (the usual subgradient); coincident pairs
/// contribute zero gradient under the Euclidean variant.
pub fn chamfer_loss<'t>(pred: Var<'t>, target: &[Point], kind: ChamferKind) -> Result<Var<'t>> {
    let value = pred.value();
    if value.shape().len() != 2 || value.cols() != 3 {
        return Err(Error::Shape {
            op: "chamfer_loss",
            left: value.shape().to_vec(),
            right: vec![3],
        });
    }
    let p = value.to_points();
    non_empty(&p, target)?;
    let (n, m) = (p.len() as f64, target.len() as f64);
    let mut grad = vec![0.0; p.len() * 3];
    let mut total = 0.0;

    let mut term = |a: &Point, b: &Point, d2: f64, weight: f64, slot: usize, grad: &mut [f64]| {
        // Gradient of the per-pair distance with respect to `a` (a point of `pred`).
        let coeff = match kind {
            ChamferKind::L1 => {
                let d = d2.sqrt();
                total += weight * d;
                if d > 0.0 {
                    weight / d
                } else {
                    0.0
                }
            }
            ChamferKind::L2 => {
                total += weight * d2;
                2.0 * weight
            }
        };
        for k in 0..3 {
            grad[slot * 3 + k] += coeff * (a[k] - b[k]);
        }
    };
    for (i, (d2, j)) in nearest_sq(&p, target).into_iter().enumerate() {
        term(&p[i], &target[j], d2, 0.5 / n, i, &mut grad);
    }
    for (j, (d2, i)) in nearest_sq(target, &p).into_iter().enumerate() {
        term(&p[i], &target[j], d2, 0.5 / m, i, &mut grad);
    }
    pred.eager_scalar(total, grad)
}

impl PointCloud {
    /// Tape constant holding this cloud as an `n × 3` matrix.
    pub fn var<'t>(&self, tape: &'t crate::tensor::Tape) -> Var<'t> {
        tape.constant(Tensor::from_points(self.points()))
    }
}
