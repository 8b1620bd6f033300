//! Marching Cubes over a [`FieldGrid`].
//!
//! The case table is built once from the cube's face topology instead of
//! being transcribed: on every face, the crossing points are joined into
//! oriented segments (the low side of the field on the segment's left when
//! the face is seen from outside the cell), and the segments of a cell
//! chain into closed loops that are fan-triangulated. Faces with two
//! diagonal high corners are resolved with the asymptotic decider, so
//! the table is indexed by the 8-bit corner mask plus one join bit per
//! face. Neighbouring cells always agree on a shared face, which makes the
//! output watertight away from the grid border with outward normals
//! pointing toward lower field values.

use std::collections::HashMap;
use std::sync::LazyLock;

use super::FieldGrid;
use crate::mesh::{TriMesh, Vec3};

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Face corners, counter-clockwise seen from outside the cell.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

/// One closed loop of crossed edges and how to triangulate it.
#[derive(Debug, Clone, PartialEq)]
struct Loop {
    edges: Vec<u8>,
    /// Fan apex position within `edges`, or `None` to fan around the
    /// loop centroid. A fan may not draw a diagonal between two vertices on
    /// the same cell face, since the neighbouring cell could draw it too.
    apex: Option<usize>,
}

/// Edge loops per (corner mask, face join bits).
static CASES: LazyLock<Vec<Vec<Loop>>> = LazyLock::new(|| {
    let mut table = Vec::with_capacity(256 * 64);
    for mask in 0..256usize {
        for joins in 0..64usize {
            table.push(case_loops(mask, joins));
        }
    }
    table
});

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners")
}

fn is_ambiguous(mask: usize, face: &[usize; 4]) -> bool {
    let inside = face.map(|c| mask >> c & 1 == 1);
    inside[0] == inside[2] && inside[1] == inside[3] && inside[0] != inside[1]
}

fn share_face(a: usize, b: usize) -> bool {
    FACES.iter().any(|f| {
        [EDGES[a], EDGES[b]]
            .iter()
            .all(|e| f.contains(&e[0]) && f.contains(&e[1]))
    })
}

fn fan_apex(lp: &[u8]) -> Option<usize> {
    let n = lp.len();
    // Lowest edge id among valid apexes, so reversed loops agree.
    (0..n)
        .filter(|&s| (2..n - 1).all(|d| !share_face(lp[s] as usize, lp[(s + d) % n] as usize)))
        .min_by_key(|&s| lp[s])
}

fn case_loops(mask: usize, joins: usize) -> Vec<Loop> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next = [u8::MAX; 12];
    for (f, face) in FACES.iter().enumerate() {
        // Crossings in counter-clockwise order, tagged low→high or high→low.
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|k| {
                let (a, b) = (face[k], face[(k + 1) % 4]);
                (inside(a) != inside(b)).then(|| (edge_between(a, b), inside(b)))
            })
            .collect();
        let n = crossings.len();
        let joined = joins >> f & 1 == 1;
        for (i, &(edge, entering)) in crossings.iter().enumerate() {
            if !entering {
                continue;
            }
            // Separated high corners pair each entering crossing with the
            // following exit; joined ones with the preceding exit.
            let partner = if n == 4 && joined {
                crossings[(i + n - 1) % n].0
            } else {
                crossings[(i + 1) % n].0
            };
            next[edge] = partner as u8;
        }
    }
    let mut visited = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if next[start] == u8::MAX || visited[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            lp.push(e as u8);
            e = next[e] as usize;
        }
        let min = lp.iter().enumerate().min_by_key(|(_, &e)| e).map(|(i, _)| i).unwrap();
        lp.rotate_left(min);
        let apex = fan_apex(&lp);
        loops.push(Loop { edges: lp, apex });
    }
    loops
}

/// Extracts the `iso` level set; cells on the grid border stay open.
pub fn marching_cubes(grid: &FieldGrid, iso: f64) -> TriMesh {
    extract(grid.resolution, &grid.values, grid, iso)
}

/// Like [`marching_cubes`] but treats the outermost lattice shell as
/// empty, so every region above `iso` yields a closed surface.
pub fn marching_cubes_closed(grid: &FieldGrid, iso: f64) -> TriMesh {
    let n = grid.resolution;
    let mut values = grid.values.clone();
    let low = if iso > 0.0 { 0.0 } else { iso - 1.0 };
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1 {
                    values[(k * n + j) * n + i] = low;
                }
            }
        }
    }
    extract(n, &values, grid, iso)
}

fn extract(n: usize, values: &[f64], grid: &FieldGrid, iso: f64) -> TriMesh {
    let cases = &*CASES;
    let at = |i: usize, j: usize, k: usize| values[(k * n + j) * n + i];
    let mut vertex_of: HashMap<(usize, u8), u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let origin = grid.cube.min();
    let h = grid.spacing();

    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut v = [0.0; 8];
                let mut mask = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    v[c] = at(i + off[0], j + off[1], k + off[2]);
                    if v[c] >= iso {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let mut joins = 0;
                for (f, face) in FACES.iter().enumerate() {
                    if is_ambiguous(mask, face) {
                        let [a, b, c, d] = face.map(|c| v[c]);
                        // Bilinear saddle value >= iso, written as a product
                        // comparison that both cells sharing the face evaluate
                        // bit-identically.
                        let (pac, pbd) = ((a - iso) * (c - iso), (b - iso) * (d - iso));
                        let (high, low) = if a >= iso { (pac, pbd) } else { (pbd, pac) };
                        if high >= low {
                            joins |= 1 << f;
                        }
                    }
                }
                for lp in &cases[mask * 64 + joins] {
                    let ids: Vec<u32> = lp
                        .edges
                        .iter()
                        .map(|&e| {
                            let [ca, cb] = EDGES[e as usize];
                            let (oa, ob) = (CORNERS[ca], CORNERS[cb]);
                            let axis = (0..3).find(|&d| oa[d] != ob[d]).unwrap();
                            let base = (i + oa[0], j + oa[1], k + oa[2]);
                            let key = ((base.2 * n + base.1) * n + base.0, axis as u8);
                            *vertex_of.entry(key).or_insert_with(|| {
                                let (va, vb) = (v[ca], v[cb]);
                                let t = ((iso - va) / (vb - va)).clamp(1e-4, 1.0 - 1e-4);
                                let mut p = Vec3::new(base.0 as f64, base.1 as f64, base.2 as f64);
                                p[axis] += t;
                                vertices.push(origin + p * h);
                                (vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    let n = ids.len();
                    match lp.apex {
                        Some(s) => {
                            for w in 1..n - 1 {
                                triangles.push([ids[s], ids[(s + w) % n], ids[(s + w + 1) % n]]);
                            }
                        }
                        None => {
                            let c = ids.iter().map(|&v| vertices[v as usize]).sum::<Vec3>() / n as f64;
                            vertices.push(c);
                            let apex = (vertices.len() - 1) as u32;
                            for w in 0..n {
                                triangles.push([apex, ids[w], ids[(w + 1) % n]]);
                            }
                        }
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, triangles).expect("marching cubes indices are in range")
}
