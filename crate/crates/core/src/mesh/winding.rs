//! Tree-accelerated generalized winding numbers.
//!
//! Triangles are grouped into a bounding-sphere hierarchy. Clusters far
//! from the query point are replaced by their area-weighted normal
//! (dipole) term; nearby clusters are summed exactly.

use std::f64::consts::PI;

use super::occupancy::solid_angle;
use super::{TriMesh, Vec3};

const LEAF_SIZE: usize = 8;
/// Far-field test: distance to cluster center over cluster radius.
const ACCURACY: f64 = 4.0;

#[derive(Debug, Clone)]
struct Node {
    center: Vec3,
    radius: f64,
    /// Sum of `area * unit normal` over the cluster.
    dipole: Vec3,
    children: Option<(usize, usize)>,
    range: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct WindingTree {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    nodes: Vec<Node>,
}

impl WindingTree {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut tree = Self {
            vertices: mesh.vertices().to_vec(),
            triangles: mesh.triangles().to_vec(),
            nodes: Vec::new(),
        };
        if !tree.triangles.is_empty() {
            let n = tree.triangles.len();
            tree.build(0, n);
        }
        tree
    }

    fn centroid(&self, t: &[u32; 3]) -> Vec3 {
        t.iter().map(|&i| self.vertices[i as usize]).sum::<Vec3>() / 3.0
    }

    fn build(&mut self, lo: usize, hi: usize) -> usize {
        let (mut bmin, mut bmax) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        let mut dipole = Vec3::zeros();
        let mut weighted = Vec3::zeros();
        let mut area_sum = 0.0;
        for t in &self.triangles[lo..hi] {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            dipole += 0.5 * cross;
            weighted += area * (a + b + c) / 3.0;
            area_sum += area;
            for v in [a, b, c] {
                bmin = bmin.inf(&v);
                bmax = bmax.sup(&v);
            }
        }
        let center = if area_sum > 0.0 {
            weighted / area_sum
        } else {
            0.5 * (bmin + bmax)
        };
        let radius = self.triangles[lo..hi]
            .iter()
            .flat_map(|t| t.iter())
            .map(|&i| (self.vertices[i as usize] - center).norm())
            .fold(0.0, f64::max);
        let id = self.nodes.len();
        self.nodes.push(Node {
            center,
            radius,
            dipole,
            children: None,
            range: (lo, hi),
        });
        if hi - lo > LEAF_SIZE {
            let extent = bmax - bmin;
            let axis = extent.imax();
            let mut slice = self.triangles[lo..hi].to_vec();
            slice.sort_by(|a, b| self.centroid(a)[axis].total_cmp(&self.centroid(b)[axis]));
            self.triangles[lo..hi].copy_from_slice(&slice);
            let mid = lo + (hi - lo) / 2;
            let left = self.build(lo, mid);
            let right = self.build(mid, hi);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    /// Approximately 1 inside an outward-wound closed surface, 0 outside,
    /// and fractional near holes of open surfaces.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let d = node.center - p;
            let dist = d.norm();
            if dist > ACCURACY * node.radius && dist > 0.0 {
                total += node.dipole.dot(&d) / (dist * dist * dist);
                continue;
            }
            match node.children {
                Some((l, r)) => stack.extend([l, r]),
                None => {
                    for t in &self.triangles[node.range.0..node.range.1] {
                        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                        total += solid_angle(&a, &b, &c, p);
                    }
                }
            }
        }
        total / (4.0 * PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, winding_number};

    #[test]
    fn matches_exact_sum_away_from_surface() {
        let mesh = icosphere(Vec3::zeros(), 0.4, 3);
        let tree = WindingTree::new(&mesh);
        for p in [
            Vec3::zeros(),
            Vec3::new(0.1, 0.2, -0.1),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(0.3, 0.3, 0.3),
            Vec3::new(2.0, -1.0, 0.5),
        ] {
            let exact = winding_number(&mesh, &p);
            let fast = tree.winding_number(&p);
            assert!((exact - fast).abs() < 0.01, "{p:?}: {exact} vs {fast}");
            assert_eq!(exact > 0.5, fast > 0.5);
        }
    }

    #[test]
    fn empty_mesh_is_zero() {
        let tree = WindingTree::new(&TriMesh::empty());
        assert_eq!(tree.winding_number(&Vec3::zeros()), 0.0);
    }
}
