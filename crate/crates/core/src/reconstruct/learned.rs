use ndarray::{Array1, Array2, ArrayView1};

use super::{evaluate_grid, marching_cubes, marching_cubes_closed, FieldGrid, OccupancyField, OCCUPANCY_ISO};
use crate::error::{Error, Result};
use crate::mesh::{SamplingCube, TriMesh, Vec3};
use crate::neural::{AutodecoderModel, Mlp};

fn net_eval(net: &Mlp, code: &Array1<f64>, points: &[Vec3]) -> Array1<f64> {
    let latent = code.len();
    let input = Array2::from_shape_fn((points.len(), latent + 3), |(r, c)| {
        if c < latent {
            code[c]
        } else {
            points[r][c - latent]
        }
    });
    net.forward_batch(input.view())
}

fn check_code(expected: usize, code: ArrayView1<f64>, what: &'static str) -> Result<Array1<f64>> {
    if code.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: code.len(),
        });
    }
    Ok(code.to_owned())
}

/// Which learned occupancy to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnedSet {
    /// `f(z_C, x)`.
    Complete,
    /// `g(z_B, x)`.
    Break,
    /// `f(z_C, x)·g(z_B, x)`.
    Fractured,
    /// `f(z_C, x)·(1 − g(z_B, x))`.
    Restoration,
}

/// A learned occupancy bound to one pair of codes.
pub struct LearnedField<'a> {
    model: &'a AutodecoderModel,
    z_c: Array1<f64>,
    z_b: Array1<f64>,
    set: LearnedSet,
}

impl<'a> LearnedField<'a> {
    pub fn new(
        model: &'a AutodecoderModel,
        z_c: ArrayView1<f64>,
        z_b: ArrayView1<f64>,
        set: LearnedSet,
    ) -> Result<Self> {
        Ok(Self {
            model,
            z_c: check_code(model.p(), z_c, "complete code")?,
            z_b: check_code(model.q(), z_b, "break code")?,
            set,
        })
    }
}

impl OccupancyField for LearnedField<'_> {
    fn eval_batch(&self, points: &[Vec3], out: &mut [f64]) {
        let f = || net_eval(&self.model.f, &self.z_c, points);
        let g = || net_eval(&self.model.g, &self.z_b, points);
        let values = match self.set {
            LearnedSet::Complete => f(),
            LearnedSet::Break => g(),
            LearnedSet::Fractured => f() * g(),
            LearnedSet::Restoration => f() * g().mapv(|g| 1.0 - g),
        };
        out.copy_from_slice(values.as_slice().expect("contiguous"));
    }
}

pub fn learned_grid(
    model: &AutodecoderModel,
    z_c: ArrayView1<f64>,
    z_b: ArrayView1<f64>,
    set: LearnedSet,
    cube: &SamplingCube,
    resolution: usize,
) -> Result<FieldGrid> {
    evaluate_grid(&LearnedField::new(model, z_c, z_b, set)?, cube, resolution)
}

/// Closed isosurface of the restoration occupancy at 0.5.
pub fn reconstruct_restoration(
    model: &AutodecoderModel,
    z_c: ArrayView1<f64>,
    z_b: ArrayView1<f64>,
    cube: &SamplingCube,
    resolution: usize,
) -> Result<TriMesh> {
    let grid = learned_grid(model, z_c, z_b, LearnedSet::Restoration, cube, resolution)?;
    Ok(marching_cubes_closed(&grid, OCCUPANCY_ISO))
}

/// Closed isosurface of the complete-shape occupancy at 0.5.
pub fn reconstruct_complete(
    model: &AutodecoderModel,
    z_c: ArrayView1<f64>,
    cube: &SamplingCube,
    resolution: usize,
) -> Result<TriMesh> {
    let z_b = Array1::zeros(model.q());
    let grid = learned_grid(model, z_c, z_b.view(), LearnedSet::Complete, cube, resolution)?;
    Ok(marching_cubes_closed(&grid, OCCUPANCY_ISO))
}

/// Break-set boundary at 0.5, clipped to the cube and left open there.
pub fn reconstruct_break(
    model: &AutodecoderModel,
    z_b: ArrayView1<f64>,
    cube: &SamplingCube,
    resolution: usize,
) -> Result<TriMesh> {
    let z_c = Array1::zeros(model.p());
    let grid = learned_grid(model, z_c.view(), z_b, LearnedSet::Break, cube, resolution)?;
    Ok(marching_cubes(&grid, OCCUPANCY_ISO))
}

/// Intersection over union of two voxel masks; two empty masks give 1.
pub fn voxel_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "voxel mask",
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
