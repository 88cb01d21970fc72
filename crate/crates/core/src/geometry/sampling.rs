use super::{Point, PointCloud, Source};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn dist_sq(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min selection of `n` indices starting at `seed_index`.
///
/// Each step picks the point farthest from everything selected so far, the
/// lowest index winning ties. Already-selected points are never picked
/// again, so duplicated coordinates still yield distinct indices.
pub fn farthest_point_indices(points: &[Point], n: usize, seed_index: usize) -> Result<Vec<usize>> {
    if n > points.len() {
        return Err(Error::Cardinality {
            what: "farthest point sample size",
            expected: points.len(),
            got: n,
        });
    }
    if seed_index >= points.len() {
        return Err(Error::contract(format!(
            "seed index {seed_index} out of range for {} points",
            points.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut selected = vec![false; points.len()];
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut order = Vec::with_capacity(n);
    let mut current = seed_index;
    loop {
        order.push(current);
        selected[current] = true;
        if order.len() == n {
            break;
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = dist_sq(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(order)
}

/// [`farthest_point_indices`] returning the selected points, tagged as keypoints.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, seed_index: usize) -> Result<PointCloud> {
    let idx = farthest_point_indices(cloud.points(), n, seed_index)?;
    cloud.select(&idx, Source::Keypoints)
}

/// For every query point, the indices of its `k` nearest reference points,
/// ordered by `(squared distance, index)`. Returned flat, `k` per query.
pub fn knn_indices(queries: &[Point], refs: &[Point], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > refs.len() {
        return Err(Error::Cardinality {
            what: "nearest neighbours",
            expected: refs.len(),
            got: k,
        });
    }
    let mut out = Vec::with_capacity(queries.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(refs.len());
    for q in queries {
        cand.clear();
        cand.extend(refs.iter().enumerate().map(|(i, r)| (dist_sq(q, r), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        out.extend(cand.iter().map(|c| c.1));
    }
    Ok(out)
}
