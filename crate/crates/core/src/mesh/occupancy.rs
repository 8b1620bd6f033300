//! Exact point-in-shape queries on watertight meshes.
//!
//! The primary test is parity ray casting along the six axis directions,
//! accelerated by a 2D bin grid per axis. A ray that passes within
//! [`EDGE_EPSILON`] of an edge or vertex is discarded and the next direction
//! is tried; after the axis rays, up to [`RANDOM_RETRIES`] randomized rays
//! are cast against every triangle. Points within [`BOUNDARY_TOLERANCE`] of
//! the surface are outside (occupancy is an open set).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TriMesh, Vec3};
use crate::error::Result;

pub const BOUNDARY_TOLERANCE: f64 = 1e-6;
const EDGE_EPSILON: f64 = 1e-9;
const RANDOM_RETRIES: usize = 8;

#[derive(Debug, Clone)]
pub struct OccupancyIndex {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    lo: Vec3,
    hi: Vec3,
    grids: [AxisGrid; 3],
}

#[derive(Debug, Clone)]
struct AxisGrid {
    axis: usize,
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    offsets: Vec<u32>,
    items: Vec<u32>,
}

enum Cast {
    Boundary,
    Degenerate,
    Hits(usize),
}

#[inline]
fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn segment_distance2(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub2(b, a);
    let aq = sub2(q, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((aq[0] * ab[0] + aq[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [aq[0] - t * ab[0], aq[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

impl AxisGrid {
    fn build(axis: usize, vertices: &[Vec3], triangles: &[[u32; 3]], lo: &Vec3, hi: &Vec3) -> Self {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        let g = ((triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let pad = 2.0 * BOUNDARY_TOLERANCE;
        let origin = [lo[b] - pad, lo[c] - pad];
        let cell = [
            ((hi[b] - lo[b] + 2.0 * pad) / g as f64).max(1e-12),
            ((hi[c] - lo[c] + 2.0 * pad) / g as f64).max(1e-12),
        ];
        let dims = [g, g];
        let mut grid = Self {
            axis,
            origin,
            cell,
            dims,
            offsets: vec![0; g * g + 1],
            items: Vec::new(),
        };
        let ranges: Vec<[usize; 4]> = triangles
            .iter()
            .map(|tri| {
                let mut min = [f64::INFINITY; 2];
                let mut max = [f64::NEG_INFINITY; 2];
                for &i in tri {
                    let v = vertices[i as usize];
                    for (k, axis) in [b, c].into_iter().enumerate() {
                        min[k] = min[k].min(v[axis]);
                        max[k] = max[k].max(v[axis]);
                    }
                }
                let tol = BOUNDARY_TOLERANCE;
                let (i0, j0) = grid.clamped_cell([min[0] - tol, min[1] - tol]);
                let (i1, j1) = grid.clamped_cell([max[0] + tol, max[1] + tol]);
                [i0, i1, j0, j1]
            })
            .collect();
        for r in &ranges {
            for j in r[2]..=r[3] {
                for i in r[0]..=r[1] {
                    grid.offsets[j * g + i + 1] += 1;
                }
            }
        }
        for k in 0..g * g {
            grid.offsets[k + 1] += grid.offsets[k];
        }
        let mut cursor = grid.offsets.clone();
        grid.items = vec![0; grid.offsets[g * g] as usize];
        for (t, r) in ranges.iter().enumerate() {
            for j in r[2]..=r[3] {
                for i in r[0]..=r[1] {
                    let slot = &mut cursor[j * g + i];
                    grid.items[*slot as usize] = t as u32;
                    *slot += 1;
                }
            }
        }
        grid
    }

    fn clamped_cell(&self, q: [f64; 2]) -> (usize, usize) {
        let f = |k: usize| {
            let x = ((q[k] - self.origin[k]) / self.cell[k]).floor();
            (x.max(0.0) as usize).min(self.dims[k] - 1)
        };
        (f(0), f(1))
    }

    fn bin(&self, q: [f64; 2]) -> Option<&[u32]> {
        let mut idx = [0usize; 2];
        for k in 0..2 {
            let x = ((q[k] - self.origin[k]) / self.cell[k]).floor();
            if x < 0.0 || x >= self.dims[k] as f64 {
                return None;
            }
            idx[k] = x as usize;
        }
        let cell = idx[1] * self.dims[0] + idx[0];
        let (s, e) = (self.offsets[cell] as usize, self.offsets[cell + 1] as usize);
        Some(&self.items[s..e])
    }
}

impl OccupancyIndex {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        mesh.require_watertight()?;
        let (lo, hi) = mesh.bounds().expect("watertight meshes are nonempty");
        let vertices = mesh.vertices().to_vec();
        let triangles = mesh.triangles().to_vec();
        let grids = [0, 1, 2].map(|axis| AxisGrid::build(axis, &vertices, &triangles, &lo, &hi));
        Ok(Self {
            vertices,
            triangles,
            lo,
            hi,
            grids,
        })
    }

    fn tri(&self, t: u32) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t as usize];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Occupancy bit: true iff `p` is strictly inside the closed surface.
    pub fn contains(&self, p: &Vec3) -> bool {
        let tol = BOUNDARY_TOLERANCE;
        if (0..3).any(|i| p[i] < self.lo[i] - tol || p[i] > self.hi[i] + tol) {
            return false;
        }
        let mut check_boundary = true;
        for (axis, positive) in [(0, true), (1, true), (2, true), (0, false), (1, false), (2, false)] {
            match self.cast_axis(p, axis, positive, check_boundary) {
                Cast::Boundary => return false,
                Cast::Hits(k) => return k % 2 == 1,
                Cast::Degenerate => {}
            }
            check_boundary = false;
        }
        let mut seed = 0x9e37_79b9_7f4a_7c15u64;
        for c in p.iter() {
            seed = seed.rotate_left(17) ^ c.to_bits().wrapping_mul(0xff51_afd7_ed55_8ccd);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..RANDOM_RETRIES {
            let dir = loop {
                let d = Vec3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                let n = d.norm();
                if n > 0.1 && n <= 1.0 {
                    break d / n;
                }
            };
            if let Some(k) = self.cast_any(p, &dir) {
                return k % 2 == 1;
            }
        }
        log::warn!("all rays degenerate at {p:?}; using winding number");
        self.winding_number(p) > 0.5
    }

    fn cast_axis(&self, p: &Vec3, axis: usize, positive: bool, check_boundary: bool) -> Cast {
        let grid = &self.grids[axis];
        debug_assert_eq!(grid.axis, axis);
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        let q = [p[b], p[c]];
        let Some(bin) = grid.bin(q) else {
            return Cast::Hits(0);
        };
        let tol = BOUNDARY_TOLERANCE;
        let mut hits = 0;
        let mut degenerate = false;
        for &t in bin {
            let v = self.tri(t);
            if check_boundary {
                let near = (0..3).all(|k| {
                    let lo = v[0][k].min(v[1][k]).min(v[2][k]);
                    let hi = v[0][k].max(v[1][k]).max(v[2][k]);
                    p[k] >= lo - tol && p[k] <= hi + tol
                });
                if near && point_triangle_distance(p, &v[0], &v[1], &v[2]) <= tol {
                    return Cast::Boundary;
                }
            }
            if degenerate {
                continue;
            }
            let a = v.map(|x| [x[b], x[c]]);
            let lo = [a[0][0].min(a[1][0]).min(a[2][0]), a[0][1].min(a[1][1]).min(a[2][1])];
            let hi = [a[0][0].max(a[1][0]).max(a[2][0]), a[0][1].max(a[1][1]).max(a[2][1])];
            if q[0] < lo[0] - EDGE_EPSILON
                || q[0] > hi[0] + EDGE_EPSILON
                || q[1] < lo[1] - EDGE_EPSILON
                || q[1] > hi[1] + EDGE_EPSILON
            {
                continue;
            }
            let near_edge = || {
                (0..3).any(|i| segment_distance2(q, a[i], a[(i + 1) % 3]) < EDGE_EPSILON)
            };
            let e0 = cross2(sub2(a[1], a[0]), sub2(q, a[0]));
            let e1 = cross2(sub2(a[2], a[1]), sub2(q, a[1]));
            let e2 = cross2(sub2(a[0], a[2]), sub2(q, a[2]));
            let area2 = e0 + e1 + e2;
            let inside = (e0 > 0.0 && e1 > 0.0 && e2 > 0.0) || (e0 < 0.0 && e1 < 0.0 && e2 < 0.0);
            if !inside || area2 == 0.0 {
                if near_edge() {
                    degenerate = true;
                }
                continue;
            }
            if near_edge() {
                degenerate = true;
                continue;
            }
            let along = (e1 * v[0][axis] + e2 * v[1][axis] + e0 * v[2][axis]) / area2;
            if (positive && along > p[axis]) || (!positive && along < p[axis]) {
                hits += 1;
            }
        }
        if degenerate {
            Cast::Degenerate
        } else {
            Cast::Hits(hits)
        }
    }

    /// Brute-force cast along an arbitrary direction; `None` if degenerate.
    fn cast_any(&self, p: &Vec3, dir: &Vec3) -> Option<usize> {
        let mut hits = 0;
        for t in 0..self.triangles.len() as u32 {
            let [v0, v1, v2] = self.tri(t);
            let e1 = v1 - v0;
            let e2 = v2 - v0;
            let h = dir.cross(&e2);
            let det = e1.dot(&h);
            let scale = e1.norm() * e2.norm();
            if det.abs() <= 1e-14 * scale {
                continue;
            }
            let s = p - v0;
            let u = s.dot(&h) / det;
            let qv = s.cross(&e1);
            let w = dir.dot(&qv) / det;
            let dist = e2.dot(&qv) / det;
            if dist <= 0.0 {
                continue;
            }
            let eps = EDGE_EPSILON;
            if u < -eps || w < -eps || u + w > 1.0 + eps {
                continue;
            }
            if u < eps || w < eps || u + w > 1.0 - eps {
                return None;
            }
            hits += 1;
        }
        Some(hits)
    }

    pub fn winding_number(&self, p: &Vec3) -> f64 {
        winding_sum(&self.vertices, &self.triangles, p)
    }
}

/// Generalized winding number; ≈1 inside an outward-wound closed surface.
pub fn winding_number(mesh: &TriMesh, p: &Vec3) -> f64 {
    winding_sum(mesh.vertices(), mesh.triangles(), p)
}

fn winding_sum(vertices: &[Vec3], triangles: &[[u32; 3]], p: &Vec3) -> f64 {
    let total: f64 = triangles
        .iter()
        .map(|&[i, j, k]| {
            solid_angle(&vertices[i as usize], &vertices[j as usize], &vertices[k as usize], p)
        })
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Signed solid angle of triangle `abc` seen from `p`.
pub(super) fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3, p: &Vec3) -> f64 {
    let (a, b, c) = (a - p, b - p, c - p);
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    2.0 * num.atan2(den)
}

/// Euclidean distance from `p` to the closed triangle `abc`.
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}
