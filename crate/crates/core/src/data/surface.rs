//! Area-weighted surface sampling over unions of simple patches.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point;

/// Segments per wing surface (upper or lower) when the profile is
/// approximated by a polyline.
const WING_SEGMENTS: usize = 200;

#[derive(Clone, Debug)]
pub(crate) enum Patch {
    /// `origin + a·u + b·v` for `a, b ∈ [0, 1]`.
    Rect { origin: Point, u: Point, v: Point, normal: Point },
    /// Lateral surface of a cylinder with its axis along y.
    Tube { center: Point, radius: f64, half_height: f64 },
    /// Disk perpendicular to y; `up` is the sign of its normal.
    Disk { center: Point, radius: f64, up: f64 },
    /// Profile segment from `a` to `b` in the xy-plane, extruded along z.
    Strip { a: [f64; 2], b: [f64; 2], normal: [f64; 2], z: [f64; 2] },
    /// Flat end of a symmetric airfoil extrusion at height `z`.
    WingCap { thickness: f64, chord: f64, z: f64, up: f64, area: f64 },
}

fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Half thickness of a symmetric four-digit airfoil at chord fraction `xi`
/// (closed trailing edge).
pub(crate) fn airfoil_half_thickness(thickness: f64, chord: f64, xi: f64) -> f64 {
    let xi = xi.clamp(0.0, 1.0);
    5.0 * thickness
        * chord
        * (0.2969 * xi.sqrt() - 0.1260 * xi - 0.3516 * xi.powi(2) + 0.2843 * xi.powi(3) - 0.1036 * xi.powi(4))
}

impl Patch {
    pub(crate) fn area(&self) -> f64 {
        match *self {
            Patch::Rect { u, v, .. } => norm(cross(u, v)),
            Patch::Tube { radius, half_height, .. } => 2.0 * PI * radius * 2.0 * half_height,
            Patch::Disk { radius, .. } => PI * radius * radius,
            Patch::Strip { a, b, z, .. } => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt() * (z[1] - z[0]),
            Patch::WingCap { area, .. } => area,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (Point, Point) {
        match *self {
            Patch::Rect { origin, u, v, normal } => {
                let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
                ([0, 1, 2].map(|k| origin[k] + a * u[k] + b * v[k]), normal)
            }
            Patch::Tube {
                center,
                radius,
                half_height,
            } => {
                let theta = rng.random_range(0.0..2.0 * PI);
                let y = rng.random_range(-half_height..=half_height);
                let (s, c) = theta.sin_cos();
                (
                    [center[0] + radius * c, center[1] + y, center[2] + radius * s],
                    [c, 0.0, s],
                )
            }
            Patch::Disk { center, radius, up } => {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..2.0 * PI);
                let (s, c) = theta.sin_cos();
                ([center[0] + r * c, center[1], center[2] + r * s], [0.0, up, 0.0])
            }
            Patch::Strip { a, b, normal, z } => {
                let t = rng.random::<f64>();
                let zz = rng.random_range(z[0]..=z[1]);
                (
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), zz],
                    [normal[0], normal[1], 0.0],
                )
            }
            Patch::WingCap {
                thickness,
                chord,
                z,
                up,
                ..
            } => {
                let max_half = airfoil_half_thickness(thickness, chord, 0.3) * 1.05;
                loop {
                    let x = rng.random_range(-chord / 2.0..chord / 2.0);
                    let y = rng.random_range(-max_half..max_half);
                    if y.abs() <= airfoil_half_thickness(thickness, chord, x / chord + 0.5) {
                        return ([x, y, z], [0.0, 0.0, up]);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Surface {
    pub(crate) patches: Vec<Patch>,
}

impl Surface {
    /// Axis-aligned box with the given half extents.
    pub(crate) fn cuboid(center: Point, half: Point) -> Self {
        let mut patches = Vec::with_capacity(6);
        for axis in 0..3 {
            let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [-1.0, 1.0] {
                let mut origin = center;
                origin[axis] += sign * half[axis];
                origin[i] -= half[i];
                origin[j] -= half[j];
                let mut u = [0.0; 3];
                u[i] = 2.0 * half[i];
                let mut v = [0.0; 3];
                v[j] = 2.0 * half[j];
                let mut normal = [0.0; 3];
                normal[axis] = sign;
                patches.push(Patch::Rect { origin, u, v, normal });
            }
        }
        Self { patches }
    }

    /// Closed cylinder with its axis along y.
    pub(crate) fn cylinder(center: Point, radius: f64, half_height: f64) -> Self {
        let cap = |up: f64| Patch::Disk {
            center: [center[0], center[1] + up * half_height, center[2]],
            radius,
            up,
        };
        Self {
            patches: vec![
                Patch::Tube {
                    center,
                    radius,
                    half_height,
                },
                cap(1.0),
                cap(-1.0),
            ],
        }
    }

    /// Symmetric airfoil (chord along x, centred on the origin) extruded
    /// along z over `span`, with flat end caps.
    pub(crate) fn wing(thickness: f64, chord: f64, span: f64) -> Self {
        let z = [-span / 2.0, span / 2.0];
        // Cosine spacing resolves the rounded leading edge.
        let xs: Vec<f64> = (0..=WING_SEGMENTS)
            .map(|i| 0.5 * (1.0 - (PI * i as f64 / WING_SEGMENTS as f64).cos()))
            .collect();
        let mut patches = Vec::with_capacity(2 * WING_SEGMENTS + 2);
        for side in [1.0, -1.0] {
            for w in xs.windows(2) {
                let a = [(w[0] - 0.5) * chord, side * airfoil_half_thickness(thickness, chord, w[0])];
                let b = [(w[1] - 0.5) * chord, side * airfoil_half_thickness(thickness, chord, w[1])];
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len = (dx * dx + dy * dy).sqrt();
                // Outward: rotate the tangent towards +y on top, -y below.
                let normal = [-side * dy / len, side * dx / len];
                patches.push(Patch::Strip { a, b, normal, z });
            }
        }
        let area: f64 = xs
            .windows(2)
            .map(|w| {
                let h0 = airfoil_half_thickness(thickness, chord, w[0]);
                let h1 = airfoil_half_thickness(thickness, chord, w[1]);
                (h0 + h1) * (w[1] - w[0]) * chord
            })
            .sum();
        for (zz, up) in [(z[1], 1.0), (z[0], -1.0)] {
            patches.push(Patch::WingCap {
                thickness,
                chord,
                z: zz,
                up,
                area,
            });
        }
        Self { patches }
    }

    pub(crate) fn sample_one(&self, rng: &mut ChaCha8Rng) -> (Point, Point) {
        let total: f64 = self.patches.iter().map(Patch::area).sum();
        let mut pick = rng.random::<f64>() * total;
        for p in &self.patches {
            let a = p.area();
            if pick < a {
                return p.sample(rng);
            }
            pick -= a;
        }
        self.patches[self.patches.len() - 1].sample(rng)
    }

    pub(crate) fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<Point>) {
        let cumulative: Vec<f64> = self
            .patches
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.area();
                Some(*acc)
            })
            .collect();
        let total = cumulative[cumulative.len() - 1];
        (0..n)
            .map(|_| {
                let pick = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= pick).min(self.patches.len() - 1);
                self.patches[i].sample(rng)
            })
            .unzip()
    }
}
