//! Indexed triangle meshes: cleaning, normalization, sampling and
//! point-in-shape occupancy.

mod io;
mod occupancy;
mod winding;

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_mesh, load_mesh_or_empty, read_obj, read_ply, save_mesh, write_obj, write_ply};
pub use occupancy::{point_triangle_distance, winding_number, OccupancyIndex, BOUNDARY_TOLERANCE};
pub use winding::WindingTree;

pub type Vec3 = Vector3<f64>;

/// An indexed triangle surface.
///
/// Construction always goes through [`TriMesh::new`], which validates
/// indices, drops zero-area triangles, prunes unreferenced vertices and
/// computes the watertight flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    watertight: bool,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= count {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: i as usize,
                        count,
                    });
                }
            }
        }
        if let Some(bad) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {bad}")));
        }

        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|&[a, b, c]| {
                if a == b || b == c || a == c {
                    return false;
                }
                let (pa, pb, pc) = (vertices[a as usize], vertices[b as usize], vertices[c as usize]);
                (pb - pa).cross(&(pc - pa)).norm_squared() > 0.0
            })
            .collect();

        // Prune vertices no triangle references, keeping the original order.
        let mut remap = vec![u32::MAX; count];
        for tri in &triangles {
            for &i in tri {
                remap[i as usize] = 0;
            }
        }
        let mut kept = Vec::with_capacity(count);
        for (i, slot) in remap.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = kept.len() as u32;
                kept.push(vertices[i]);
            }
        }
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .map(|[a, b, c]| [remap[a as usize], remap[b as usize], remap[c as usize]])
            .collect();

        let watertight = is_closed_manifold(&triangles);
        Ok(Self {
            vertices: kept,
            triangles,
            watertight,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            watertight: false,
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the right-hand rule on the stored winding.
    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounding box, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Number of components under shared-vertex triangle adjacency.
    pub fn connected_components(&self) -> usize {
        if self.triangles.is_empty() {
            return 0;
        }
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c)] {
                let (ru, rv) = (find(&mut parent, u as usize), find(&mut parent, v as usize));
                if ru != rv {
                    parent[ru.max(rv)] = ru.min(rv);
                }
            }
        }
        (0..self.vertices.len())
            .filter(|&v| find(&mut parent, v) == v)
            .count()
    }

    /// Area-weighted uniform samples, each tagged with its source triangle.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_surface_with(n, &mut rng)
    }

    pub fn sample_surface_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<SurfaceSample>> {
        if self.triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        let samples = (0..n)
            .map(|_| {
                let pick = rng.random::<f64>() * total;
                let t = cumulative
                    .partition_point(|&c| c <= pick)
                    .min(self.triangles.len() - 1);
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                let [a, b, c] = self.triangle(t);
                let r = u.sqrt();
                let point = a * (1.0 - r) + b * (r * (1.0 - v)) + c * (r * v);
                SurfaceSample {
                    point,
                    triangle: t as u32,
                }
            })
            .collect();
        Ok(samples)
    }

    pub fn transformed(&self, transform: &Similarity) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| transform.apply(v)).collect(),
            triangles: self.triangles.clone(),
            watertight: self.watertight,
        }
    }

    /// Same surface with every triangle's winding reversed.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            watertight: self.watertight,
        }
    }

    /// Requires a closed manifold; the remediation is voxel remeshing.
    pub fn require_watertight(&self) -> Result<()> {
        if self.watertight {
            Ok(())
        } else {
            Err(Error::NotWatertight)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub triangle: u32,
}

/// Every undirected edge used by exactly two triangles, traversed once in
/// each direction.
fn is_closed_manifold(triangles: &[[u32; 3]]) -> bool {
    if triangles.is_empty() {
        return false;
    }
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3);
    for &[a, b, c] in triangles {
        for e in [(a, b), (b, c), (c, a)] {
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
}

/// Axis-aligned cube that bounds the region where occupancy is probed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingCube {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl SamplingCube {
    pub fn new(center: [f64; 3], half_extent: f64) -> Result<Self> {
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cube half extent must be positive, got {half_extent}"
            )));
        }
        Ok(Self {
            center,
            half_extent,
        })
    }

    /// The default probe cube around a unit-normalized shape.
    pub fn unit() -> Self {
        Self {
            center: [0.0; 3],
            half_extent: 0.55,
        }
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.center) - Vec3::repeat(self.half_extent)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.center) + Vec3::repeat(self.half_extent)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extent)
    }

    /// True when the mesh lies strictly inside the cube.
    pub fn strictly_contains(&self, mesh: &TriMesh) -> bool {
        mesh.vertices()
            .iter()
            .all(|p| (0..3).all(|i| (p[i] - self.center[i]).abs() < self.half_extent))
    }
}

/// Uniform scale followed by translation: `x ↦ scale·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.translation)) / self.scale
    }

    /// The four scalars recorded in run reports.
    pub fn to_scalars(&self) -> [f64; 4] {
        [
            self.scale,
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }
}

/// Centers the bounding box at the origin and scales its longest side to 1.
pub fn normalize_unit_cube(mesh: &TriMesh) -> Result<(TriMesh, Similarity)> {
    let (lo, hi) = mesh.bounds().ok_or(Error::EmptyMesh)?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::ZeroExtent);
    }
    let center = (lo + hi) * 0.5;
    let scale = 1.0 / extent;
    let transform = if scale == 1.0 && center == Vec3::zeros() {
        Similarity::identity()
    } else {
        let t = -center * scale;
        Similarity {
            scale,
            translation: [t.x, t.y, t.z],
        }
    };
    Ok((mesh.transformed(&transform), transform))
}

/// Unit-cube mesh `[0,1]³` with outward winding.
pub fn unit_cube_mesh() -> TriMesh {
    box_mesh(Vec3::zeros(), Vec3::repeat(1.0))
}

/// Axis-aligned box with 8 vertices and 12 outward-wound triangles.
pub fn box_mesh(lo: Vec3, hi: Vec3) -> TriMesh {
    let v = |x: bool, y: bool, z: bool| {
        Vec3::new(
            if x { hi.x } else { lo.x },
            if y { hi.y } else { lo.y },
            if z { hi.z } else { lo.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriMesh::new(vertices, triangles).expect("box mesh is valid")
}

/// Icosphere with outward winding after `subdivisions` rounds of 1:4 splits.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a as usize] + vertices[b as usize]) * 0.5).normalize());
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| center + v * radius).collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Concatenates meshes into one vertex/triangle list.
pub fn merge_meshes(meshes: &[&TriMesh]) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in meshes {
        let base = vertices.len() as u32;
        vertices.extend_from_slice(m.vertices());
        triangles.extend(m.triangles().iter().map(|t| t.map(|i| i + base)));
    }
    TriMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_is_watertight() {
        let cube = unit_cube_mesh();
        assert_eq!(cube.vertices().len(), 8);
        assert_eq!(cube.triangles().len(), 12);
        assert!(cube.is_watertight());
        assert!((cube.surface_area() - 6.0).abs() < 1e-12);
        assert!((cube.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreferenced_vertex_is_pruned() {
        let cube = unit_cube_mesh();
        let mut vertices = cube.vertices().to_vec();
        vertices.insert(0, Vec3::new(5.0, 5.0, 5.0));
        let triangles = cube.triangles().iter().map(|t| t.map(|i| i + 1)).collect();
        let mesh = TriMesh::new(vertices, triangles).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.triangles().len(), 12);
        assert!(mesh.is_watertight());
    }

    #[test]
    fn single_triangle_is_open() {
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(!mesh.is_watertight());
        assert!((mesh.surface_area() - 0.5).abs() < 1e-15);
        assert!(mesh.require_watertight().is_err());
    }

    #[test]
    fn degenerate_triangles_dropped() {
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()],
            vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]],
        )
        .unwrap();
        assert_eq!(mesh.triangles().len(), 1);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let err = TriMesh::new(vec![Vec3::zeros()], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
    }

    #[test]
    fn flipped_cube_is_still_watertight() {
        let cube = unit_cube_mesh().flipped();
        assert!(cube.is_watertight());
        assert!((cube.signed_volume() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_box() {
        let mesh = box_mesh(Vec3::zeros(), Vec3::repeat(2.0));
        let (n, _) = normalize_unit_cube(&mesh).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert!((lo - Vec3::repeat(-0.5)).norm() < 1e-12);
        assert!((hi - Vec3::repeat(0.5)).norm() < 1e-12);
    }

    #[test]
    fn normalize_preserves_aspect() {
        let mesh = box_mesh(Vec3::zeros(), Vec3::new(4.0, 2.0, 1.0));
        let (n, t) = normalize_unit_cube(&mesh).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        let side = hi - lo;
        assert!((side - Vec3::new(1.0, 0.5, 0.25)).norm() < 1e-12);
        assert!(((lo + hi) * 0.5).norm() < 1e-12);
        assert!((t.scale - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent_with_identity() {
        let mesh = box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5));
        let (n, t) = normalize_unit_cube(&mesh).unwrap();
        assert_eq!(t, Similarity::identity());
        assert_eq!(n, mesh);
    }

    #[test]
    fn normalize_zero_extent_fails() {
        let mesh = TriMesh {
            vertices: vec![Vec3::zeros(); 3],
            triangles: vec![[0, 1, 2]],
            watertight: false,
        };
        assert!(matches!(normalize_unit_cube(&mesh), Err(Error::ZeroExtent)));
        assert!(matches!(
            normalize_unit_cube(&TriMesh::empty()),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn components() {
        let a = unit_cube_mesh();
        let b = box_mesh(Vec3::repeat(3.0), Vec3::repeat(4.0));
        assert_eq!(a.connected_components(), 1);
        assert_eq!(merge_meshes(&[&a, &b]).unwrap().connected_components(), 2);
        assert_eq!(TriMesh::empty().connected_components(), 0);
    }

    #[test]
    fn samples_on_single_triangle() {
        let mesh = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = mesh.sample_surface(3, 7).unwrap();
        assert_eq!(s.len(), 3);
        for p in s {
            assert_eq!(p.triangle, 0);
            assert!(p.point.x >= 0.0 && p.point.y >= 0.0 && p.point.x + p.point.y <= 1.0 + 1e-15);
            assert_eq!(p.point.z, 0.0);
        }
    }

    #[test]
    fn sampling_errors() {
        assert!(matches!(
            TriMesh::empty().sample_surface(3, 0),
            Err(Error::EmptyMesh)
        ));
        assert!(unit_cube_mesh().sample_surface(0, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cube = unit_cube_mesh();
        assert_eq!(
            cube.sample_surface(500, 11).unwrap(),
            cube.sample_surface(500, 11).unwrap()
        );
    }

    #[test]
    fn icosphere_area_approaches_sphere() {
        let target = 4.0 * std::f64::consts::PI;
        let mut previous = 0.0;
        for level in 0..5 {
            let area = icosphere(Vec3::zeros(), 1.0, level).surface_area();
            assert!(area > previous && area < target);
            previous = area;
        }
        assert!((target - previous) / target < 0.01);
    }
}
