//! Synthetic complete shapes built from unions of simple solids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{normalize_unit_cube, SamplingCube, TriMesh, Vec3};
use crate::reconstruct::{evaluate_grid, marching_cubes, FnField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyShape {
    Peanut,
    Snowman,
    Dumbbell,
    Hammer,
    Pill,
    LBlock,
}

impl ToyShape {
    pub const ALL: [ToyShape; 6] = [
        ToyShape::Peanut,
        ToyShape::Snowman,
        ToyShape::Dumbbell,
        ToyShape::Hammer,
        ToyShape::Pill,
        ToyShape::LBlock,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ToyShape::Peanut => "peanut",
            ToyShape::Snowman => "snowman",
            ToyShape::Dumbbell => "dumbbell",
            ToyShape::Hammer => "hammer",
            ToyShape::Pill => "pill",
            ToyShape::LBlock => "lblock",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown toy shape {name:?}")))
    }

    /// Signed distance (negative inside), before normalization.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let k = 0.06;
        match self {
            ToyShape::Peanut => smin(
                sphere(p, Vec3::new(-0.18, 0.0, 0.0), 0.24),
                sphere(p, Vec3::new(0.18, 0.0, 0.0), 0.22),
                k,
            ),
            ToyShape::Snowman => smin(
                sphere(p, Vec3::new(0.0, -0.12, 0.0), 0.28),
                sphere(p, Vec3::new(0.0, 0.25, 0.0), 0.18),
                k,
            ),
            ToyShape::Dumbbell => smin(
                smin(
                    sphere(p, Vec3::new(-0.3, 0.0, 0.0), 0.17),
                    sphere(p, Vec3::new(0.3, 0.0, 0.0), 0.17),
                    k,
                ),
                capsule(p, Vec3::new(-0.3, 0.0, 0.0), Vec3::new(0.3, 0.0, 0.0), 0.08),
                k,
            ),
            ToyShape::Hammer => smin(
                rounded_box(p, Vec3::new(0.0, 0.22, 0.0), Vec3::new(0.3, 0.1, 0.12), 0.03),
                rounded_box(p, Vec3::new(0.0, -0.1, 0.0), Vec3::new(0.07, 0.25, 0.07), 0.03),
                k,
            ),
            ToyShape::Pill => capsule(p, Vec3::new(-0.25, -0.05, 0.0), Vec3::new(0.25, 0.05, 0.0), 0.2),
            ToyShape::LBlock => smin(
                rounded_box(p, Vec3::new(-0.1, -0.15, 0.0), Vec3::new(0.3, 0.12, 0.16), 0.03),
                rounded_box(p, Vec3::new(-0.28, 0.1, 0.0), Vec3::new(0.12, 0.25, 0.16), 0.03),
                k,
            ),
        }
    }

    /// Watertight mesh normalized to the unit cube, contoured at
    /// `resolution³`.
    pub fn mesh(&self, resolution: usize) -> Result<TriMesh> {
        let shape = *self;
        let field = FnField(move |p: &Vec3| -shape.sdf(p));
        let grid = evaluate_grid(&field, &SamplingCube::unit(), resolution)?;
        let mesh = marching_cubes(&grid, 0.0);
        mesh.require_watertight()?;
        Ok(normalize_unit_cube(&mesh)?.0)
    }
}

fn sphere(p: &Vec3, c: Vec3, r: f64) -> f64 {
    (p - c).norm() - r
}

fn capsule(p: &Vec3, a: Vec3, b: Vec3, r: f64) -> f64 {
    let (pa, ba) = (p - a, b - a);
    let t = (pa.dot(&ba) / ba.norm_squared()).clamp(0.0, 1.0);
    (pa - ba * t).norm() - r
}

fn rounded_box(p: &Vec3, c: Vec3, half: Vec3, round: f64) -> f64 {
    let q = (p - c).abs() - half + Vec3::repeat(round);
    q.sup(&Vec3::zeros()).norm() + q.max().min(0.0) - round
}

/// Polynomial smooth minimum.
fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shape_is_closed_and_normalized() {
        for shape in ToyShape::ALL {
            let m = shape.mesh(32).unwrap();
            assert!(m.is_watertight(), "{}", shape.name());
            assert_eq!(m.connected_components(), 1, "{}", shape.name());
            assert!(m.signed_volume() > 0.0);
            let (lo, hi) = m.bounds().unwrap();
            assert!(((hi - lo).max() - 1.0).abs() < 1e-9);
            assert_eq!(ToyShape::parse(shape.name()).unwrap(), shape);
        }
    }
}
