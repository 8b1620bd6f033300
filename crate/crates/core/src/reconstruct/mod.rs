//! Dense field evaluation and isosurface extraction.

mod learned;
mod marching;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{SamplingCube, Vec3};

pub use learned::{
    learned_grid, reconstruct_break, reconstruct_complete, reconstruct_restoration, voxel_iou,
    LearnedField, LearnedSet,
};
pub use marching::{marching_cubes, marching_cubes_closed};

/// Iso level used for every occupancy field.
pub const OCCUPANCY_ISO: f64 = 0.5;

/// A scalar field that can be evaluated on batches of points.
pub trait OccupancyField: Sync {
    fn eval_batch(&self, points: &[Vec3], out: &mut [f64]);
}

/// Adapts a per-point closure into an [`OccupancyField`].
pub struct FnField<F>(pub F);

impl<F: Fn(&Vec3) -> f64 + Sync> OccupancyField for FnField<F> {
    fn eval_batch(&self, points: &[Vec3], out: &mut [f64]) {
        for (p, o) in points.iter().zip(out.iter_mut()) {
            *o = (self.0)(p);
        }
    }
}

/// Field values on the `resolution³` corner lattice of a cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub resolution: usize,
    pub cube: SamplingCube,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.cube.half_extent / (self.resolution - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.cube.min() + Vec3::new(i as f64, j as f64, k as f64) * self.spacing()
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Lattice points with value at or above `iso`.
    pub fn count_at_least(&self, iso: f64) -> usize {
        self.values.iter().filter(|&&v| v >= iso).count()
    }

    pub fn bits(&self, iso: f64) -> Vec<bool> {
        self.values.iter().map(|&v| v >= iso).collect()
    }
}

/// All lattice points of one z-slab, x fastest.
pub fn slab_points(cube: &SamplingCube, resolution: usize, k: usize) -> Vec<Vec3> {
    let h = 2.0 * cube.half_extent / (resolution - 1) as f64;
    let lo = cube.min();
    let mut pts = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            pts.push(lo + Vec3::new(i as f64, j as f64, k as f64) * h);
        }
    }
    pts
}

/// Evaluates `field` on the cube's corner lattice, one z-slab per task.
pub fn evaluate_grid(
    field: &dyn OccupancyField,
    cube: &SamplingCube,
    resolution: usize,
) -> Result<FieldGrid> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be at least 8, got {resolution}"
        )));
    }
    let slabs: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|k| {
            let pts = slab_points(cube, resolution, k);
            let mut out = vec![0.0; pts.len()];
            field.eval_batch(&pts, &mut out);
            out
        })
        .collect();
    let values: Vec<f64> = slabs.into_iter().flatten().collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("field value at lattice index {i}")));
    }
    Ok(FieldGrid {
        resolution,
        cube: *cube,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use std::f64::consts::PI;

    fn sphere_grid(r: f64, res: usize) -> FieldGrid {
        let field = FnField(move |p: &Vec3| if p.norm() < r { 1.0 } else { 0.0 });
        evaluate_grid(&field, &SamplingCube::unit(), res).unwrap()
    }

    fn smooth_sphere(r: f64, res: usize) -> FieldGrid {
        let field = FnField(move |p: &Vec3| 1.0 / (1.0 + ((p.norm() - r) * 40.0).exp()));
        evaluate_grid(&field, &SamplingCube::unit(), res).unwrap()
    }

    #[test]
    fn constant_zero_field() {
        let grid = evaluate_grid(&FnField(|_: &Vec3| 0.0), &SamplingCube::unit(), 8).unwrap();
        assert!(grid.values.iter().all(|&v| v == 0.0));
        assert!(marching_cubes(&grid, OCCUPANCY_ISO).is_empty());
    }

    #[test]
    fn small_resolution_rejected() {
        assert!(evaluate_grid(&FnField(|_: &Vec3| 0.0), &SamplingCube::unit(), 7).is_err());
    }

    #[test]
    fn non_finite_field_rejected() {
        let r = evaluate_grid(&FnField(|_: &Vec3| f64::NAN), &SamplingCube::unit(), 8);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn sphere_lattice_volume() {
        let grid = sphere_grid(0.3, 64);
        let h = grid.spacing();
        let expected = 4.0 / 3.0 * PI * 0.3f64.powi(3) / h.powi(3);
        let count = grid.count_at_least(0.5) as f64;
        assert!((count - expected).abs() / expected < 0.03, "{count} vs {expected}");
    }

    #[test]
    fn evaluation_is_pure() {
        assert_eq!(smooth_sphere(0.3, 16), smooth_sphere(0.3, 16));
    }

    #[test]
    fn sphere_surface_is_closed_and_outward() {
        let mesh = marching_cubes(&smooth_sphere(0.3, 48), OCCUPANCY_ISO);
        assert!(mesh.is_watertight());
        let v = mesh.signed_volume();
        let expected = 4.0 / 3.0 * PI * 0.027;
        assert!((v - expected).abs() / expected < 0.02, "{v}");
        let (lo, hi) = mesh.bounds().unwrap();
        assert!(lo.min() > -0.55 && hi.max() < 0.55);
    }

    #[test]
    fn random_fields_are_watertight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let values: Vec<f64> = (0..12usize.pow(3)).map(|_| rng.random()).collect();
            let grid = FieldGrid {
                resolution: 12,
                cube: SamplingCube::unit(),
                values,
            };
            let mesh = marching_cubes_closed(&grid, 0.5);
            assert!(mesh.is_watertight());
            assert!(mesh.signed_volume() > 0.0);
        }
    }

    #[test]
    fn complement_flips_orientation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let values: Vec<f64> = (0..10usize.pow(3)).map(|_| rng.random()).collect();
        let grid = FieldGrid {
            resolution: 10,
            cube: SamplingCube::unit(),
            values,
        };
        let mut complement = grid.clone();
        complement.values.iter_mut().for_each(|v| *v = 1.0 - *v);
        let a = marching_cubes(&grid, 0.5);
        let b = marching_cubes(&complement, 0.5);
        assert_eq!(a.triangles().len(), b.triangles().len());
        let key = |m: &TriMesh, flip: bool| {
            let mut tris: Vec<[i64; 9]> = (0..m.triangles().len())
                .map(|t| {
                    let [p, q, r] = m.triangle(t);
                    let [p, q, r] = if flip { [p, r, q] } else { [p, q, r] };
                    let mut k = [0i64; 9];
                    for (n, v) in [p, q, r].iter().enumerate() {
                        for d in 0..3 {
                            k[n * 3 + d] = (v[d] * 1e9).round() as i64;
                        }
                    }
                    // Rotate so the smallest vertex leads, preserving winding.
                    let vs = [[k[0], k[1], k[2]], [k[3], k[4], k[5]], [k[6], k[7], k[8]]];
                    let m = (0..3).min_by_key(|&i| vs[i]).unwrap();
                    let r = [vs[m], vs[(m + 1) % 3], vs[(m + 2) % 3]];
                    [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]
                })
                .collect();
            tris.sort();
            tris
        };
        assert_eq!(key(&a, false), key(&b, true));
    }

    #[test]
    fn full_field_closes_to_cube_boundary() {
        let grid = evaluate_grid(&FnField(|_: &Vec3| 1.0), &SamplingCube::unit(), 16).unwrap();
        assert!(marching_cubes(&grid, 0.5).is_empty());
        let closed = marching_cubes_closed(&grid, 0.5);
        assert!(closed.is_watertight());
        let (lo, hi) = closed.bounds().unwrap();
        let h = grid.spacing();
        assert!((lo - Vec3::repeat(-0.55 + 0.5 * h)).norm() < 1e-9);
        assert!((hi - Vec3::repeat(0.55 - 0.5 * h)).norm() < 1e-9);
    }
}
