//! Orders unordered point sets into token sequences for the state-space
//! blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Normalization, Point, PointCloud, Source};

pub const MORTON_BITS: u32 = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerializationOrder {
    /// Z-order curve over a 1024³ grid on the unit cube.
    #[default]
    Morton,
    /// Lexicographic on (x, y, z).
    Axis,
}

fn quantize(c: f64) -> u32 {
    let q = ((c + 0.5) * f64::from(1u32 << MORTON_BITS)).floor();
    q.clamp(0.0, f64::from((1u32 << MORTON_BITS) - 1)) as u32
}

/// 30-bit Morton code of a point in `[-0.5, 0.5]³`. Within every bit level
/// the x bit is the most significant, then y, then z.
pub fn morton_code(p: Point) -> u32 {
    let (x, y, z) = (quantize(p[0]), quantize(p[1]), quantize(p[2]));
    let mut code = 0u32;
    for bit in (0..MORTON_BITS).rev() {
        code = (code << 3)
            | (((x >> bit) & 1) << 2)
            | (((y >> bit) & 1) << 1)
            | ((z >> bit) & 1);
    }
    code
}

fn order_of(points: &[Point], order: SerializationOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    match order {
        SerializationOrder::Morton => {
            let codes: Vec<u32> = points.iter().map(|&p| morton_code(p)).collect();
            idx.sort_by_key(|&i| (codes[i], i));
        }
        SerializationOrder::Axis => idx.sort_by(|&i, &j| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        }),
    }
    idx
}

/// Permutation listing point indices in sequence order. Ties keep input
/// order. The cloud must already be normalized to the unit cube.
pub fn serialize_points(cloud: &PointCloud, order: SerializationOrder) -> Result<Vec<usize>> {
    if !cloud.is_normalized() {
        return Err(Error::contract(
            "serialization needs a cloud normalized to the unit cube",
        ));
    }
    Ok(order_of(cloud.points(), order))
}

/// Like [`serialize_points`] for arbitrary coordinates: the points are first
/// fitted into the unit cube (the fit only affects the ordering).
pub fn serialization_order(points: &[Point], order: SerializationOrder) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let cloud = PointCloud::new(points.to_vec(), Source::Other)?;
    let norm = Normalization::fit(&cloud);
    let fitted: Vec<Point> = points.iter().map(|&p| norm.forward(p)).collect();
    Ok(order_of(&fitted, order))
}
