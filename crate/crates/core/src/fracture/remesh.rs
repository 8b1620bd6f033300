use crate::error::{Error, Result};
use crate::mesh::{SamplingCube, TriMesh, Vec3, WindingTree};
use crate::reconstruct::{evaluate_grid, marching_cubes_closed, FnField};

/// Rebuilds a closed surface from any triangle soup: the winding number
/// is thresholded at 0.5 on a `resolution³` lattice around the mesh and
/// the result is contoured.
pub fn voxel_remesh(mesh: &TriMesh, resolution: usize) -> Result<TriMesh> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "remesh resolution must be at least 8, got {resolution}"
        )));
    }
    let (lo, hi) = mesh.bounds().ok_or(Error::EmptyMesh)?;
    let center = 0.5 * (lo + hi);
    let extent = (hi - lo).max().max(1e-9);
    // Leave two empty cells on each side.
    let half = 0.5 * extent / (1.0 - 4.0 / (resolution - 1) as f64);
    let cube = SamplingCube::new([center.x, center.y, center.z], half)?;
    let tree = WindingTree::new(mesh);
    let field = FnField(|p: &Vec3| (tree.winding_number(p) > 0.5) as u8 as f64);
    let grid = evaluate_grid(&field, &cube, resolution)?;
    if grid.count_at_least(0.5) == 0 {
        return Err(Error::NoClosedRegion);
    }
    let out = marching_cubes_closed(&grid, 0.5);
    if out.is_empty() {
        return Err(Error::NoClosedRegion);
    }
    Ok(out)
}
