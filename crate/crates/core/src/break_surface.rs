//! Thin-plate-spline break surfaces and the break-set occupancy they
//! induce.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Projected control points closer than this are merged.
pub const MERGE_DISTANCE: f64 = 1e-7;
pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const MAX_CONTROLS: usize = 512;

/// An orthonormal frame on a least-squares plane; `n` is the normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
}

impl PlaneFrame {
    /// `(u, v, height)` coordinates of `p`.
    pub fn local(&self, p: &Vec3) -> (f64, f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.u), d.dot(&self.v), d.dot(&self.n))
    }
}

/// Flips `x` so its largest-magnitude component is positive.
fn canonical(x: Vec3) -> Vec3 {
    if x[x.iamax()] < 0.0 {
        -x
    } else {
        x
    }
}

pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFrame> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs 3 points, got {}",
            points.len()
        )));
    }
    let origin = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - origin;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid, large) = (order[0], order[1], order[2]);
    let scale = eig.eigenvalues[large].max(0.0);
    if scale == 0.0 || eig.eigenvalues[mid] <= 1e-12 * scale {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let n = canonical(eig.eigenvectors.column(small).into_owned().normalize());
    let u = canonical(eig.eigenvectors.column(large).into_owned().normalize());
    // Re-orthogonalize against rounding in the eigensolver.
    let u = (u - n * n.dot(&u)).normalize();
    let v = n.cross(&u);
    Ok(PlaneFrame { origin, u, v, n })
}

/// Indices of up to `k` points chosen farthest-point-first, starting
/// from index 0.
pub fn farthest_point_subsample(points: &[Vec3], k: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    if k >= points.len() {
        return (0..points.len()).collect();
    }
    let mut chosen = vec![0usize];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    while chosen.len() < k {
        let (next, _) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("nonempty");
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    chosen
}

/// `r² log r`, continuous at 0.
fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// A height field over a plane, `h(u, v) = a0 + a1 u + a2 v + Σ wᵢ U(|(u, v) − cᵢ|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsSurface {
    pub frame: PlaneFrame,
    pub controls: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub affine: [f64; 3],
    /// `+1` or `-1`; positive `side_of` marks the break-set side.
    pub sign: f64,
    pub ridge: f64,
}

/// Merges controls closer than [`MERGE_DISTANCE`], averaging heights.
fn merge_duplicates(raw: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
    for (u, v, h) in raw {
        let hit = groups.iter_mut().find(|g| {
            let (du, dv) = (g.0 - u, g.1 - v);
            du * du + dv * dv <= MERGE_DISTANCE * MERGE_DISTANCE
        });
        match hit {
            Some(g) => {
                g.2 += h;
                g.3 += 1;
            }
            None => groups.push((u, v, h, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(u, v, h, c)| (u, v, h / c as f64))
        .collect()
}

pub fn fit_tps(points: &[Vec3], frame: &PlaneFrame, ridge: f64) -> Result<TpsSurface> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let controls = merge_duplicates(points.iter().map(|p| frame.local(p)).collect());
    let m = controls.len();
    if m < 3 {
        return Err(Error::Singular(format!("{m} distinct control points")));
    }
    let mut a = DMatrix::<f64>::zeros(m + 3, m + 3);
    let mut rhs = DVector::<f64>::zeros(m + 3);
    for (i, &(ui, vi, hi)) in controls.iter().enumerate() {
        for (j, &(uj, vj, _)) in controls.iter().enumerate() {
            let (du, dv) = (ui - uj, vi - vj);
            a[(i, j)] = kernel(du * du + dv * dv);
        }
        a[(i, i)] += ridge;
        for (k, basis) in [1.0, ui, vi].into_iter().enumerate() {
            a[(i, m + k)] = basis;
            a[(m + k, i)] = basis;
        }
        rhs[i] = hi;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular(format!("spline system with {m} controls")))?;
    Ok(TpsSurface {
        frame: *frame,
        controls: controls.iter().map(|&(u, v, _)| [u, v]).collect(),
        weights: sol.rows(0, m).iter().copied().collect(),
        affine: [sol[m], sol[m + 1], sol[m + 2]],
        sign: 1.0,
        ridge,
    })
}

/// Plane fit, farthest-point control selection, and spline fit.
pub fn fit_break_surface(points: &[Vec3], ridge: f64, max_controls: usize) -> Result<TpsSurface> {
    let frame = fit_plane(points)?;
    let picked: Vec<Vec3> = farthest_point_subsample(points, max_controls)
        .into_iter()
        .map(|i| points[i])
        .collect();
    fit_tps(&picked, &frame, ridge)
}

impl TpsSurface {
    /// Spline height at plane coordinates `(u, v)`.
    pub fn height(&self, u: f64, v: f64) -> f64 {
        let [a0, a1, a2] = self.affine;
        let bend: f64 = self
            .controls
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let (du, dv) = (u - c[0], v - c[1]);
                w * kernel(du * du + dv * dv)
            })
            .sum();
        a0 + a1 * u + a2 * v + bend
    }

    /// Signed height of `p` above the spline; positive on the break-set
    /// side.
    pub fn side_of(&self, p: &Vec3) -> f64 {
        let (u, v, h) = self.frame.local(p);
        self.sign * (h - self.height(u, v))
    }

    /// Break-set occupancy; points on the surface are outside.
    pub fn break_occupancy(&self, p: &Vec3) -> bool {
        self.side_of(p) > 0.0
    }

    /// `(Σw, Σw·u, Σw·v)`, all zero for a valid spline.
    pub fn side_conditions(&self) -> [f64; 3] {
        self.controls
            .iter()
            .zip(&self.weights)
            .fold([0.0; 3], |acc, (c, w)| [acc[0] + w, acc[1] + w * c[0], acc[2] + w * c[1]])
    }

    /// Chooses the sign so that most fractured-interior samples lie on
    /// the positive side. A tie keeps `+1`.
    pub fn orient(&self, fractured_interior: &[Vec3]) -> Result<TpsSurface> {
        if fractured_interior.is_empty() {
            return Err(Error::InvalidArgument("orientation needs at least one sample".into()));
        }
        let mut raw = self.clone();
        raw.sign = 1.0;
        let (mut above, mut below) = (0usize, 0usize);
        for p in fractured_interior {
            let s = raw.side_of(p);
            if s > 0.0 {
                above += 1;
            } else if s < 0.0 {
                below += 1;
            }
        }
        if above == below {
            log::warn!("break surface orientation tie ({above} each side); keeping sign +1");
        } else if below > above {
            raw.sign = -1.0;
        }
        Ok(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(sign: f64) -> TpsSurface {
        let pts: Vec<Vec3> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| Vec3::new(x, y, 0.0))
            .collect();
        let mut s = fit_tps(&pts, &fit_plane(&pts).unwrap(), 0.0).unwrap();
        s.sign *= sign * s.frame.n.z.signum();
        s
    }

    #[test]
    fn plane_through_exact_points() {
        let pts = [Vec3::new(0.0, 0.0, 0.3), Vec3::new(1.0, 0.2, 0.3), Vec3::new(-0.4, 0.9, 0.3)];
        let f = fit_plane(&pts).unwrap();
        assert!((f.n.z.abs() - 1.0).abs() < 1e-12);
        assert!((f.origin.z - 0.3).abs() < 1e-12);
        for p in &pts {
            assert!(f.local(p).2.abs() < 1e-12);
        }
        assert!((f.u.cross(&f.v) - f.n).norm() < 1e-12);
    }

    #[test]
    fn collinear_points_rejected() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_plane(&pts), Err(Error::Degenerate(_))));
        assert!(fit_plane(&pts[..2]).is_err());
    }

    #[test]
    fn flat_surface_side_of() {
        assert!((flat(1.0).side_of(&Vec3::new(0.0, 0.0, 0.5)) - 0.5).abs() < 1e-12);
        assert!((flat(-1.0).side_of(&Vec3::new(0.0, 0.0, 0.5)) + 0.5).abs() < 1e-12);
        let s = flat(1.0);
        assert!(s.weights.iter().all(|w| w.abs() < 1e-12));
        assert!(!s.break_occupancy(&Vec3::new(0.3, 0.3, 0.0)));
    }

    #[test]
    fn duplicates_merge_by_average() {
        let mut pts: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new((i % 3) as f64, (i / 3) as f64, 0.1 * i as f64))
            .collect();
        pts.push(Vec3::new(0.0, 0.0, 1.0));
        let frame = PlaneFrame {
            origin: Vec3::zeros(),
            u: Vec3::x(),
            v: Vec3::y(),
            n: Vec3::z(),
        };
        let s = fit_tps(&pts, &frame, 0.0).unwrap();
        assert_eq!(s.controls.len(), 6);
        assert!((s.height(0.0, 0.0) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn orientation_majority() {
        let s = flat(1.0);
        let up: Vec<Vec3> = (0..7).map(|i| Vec3::new(0.1 * i as f64, 0.2, 0.3)).collect();
        let down: Vec<Vec3> = (0..3).map(|i| Vec3::new(0.1 * i as f64, 0.2, -0.3)).collect();
        let mixed: Vec<Vec3> = up.iter().chain(&down).copied().collect();
        let o = s.orient(&mixed).unwrap();
        assert_eq!(o.side_of(&up[0]) > 0.0, true);
        assert_eq!(mixed.iter().filter(|p| o.side_of(p) > 0.0).count(), 7);
        let o = s.orient(&down).unwrap();
        assert!(down.iter().all(|p| o.side_of(p) > 0.0));
        assert!(s.orient(&[]).is_err());
    }

    #[test]
    fn farthest_point_order() {
        let pts = vec![
            Vec3::zeros(),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        assert_eq!(farthest_point_subsample(&pts, 3), vec![0, 2, 3]);
        assert_eq!(farthest_point_subsample(&pts, 9).len(), 4);
    }

    #[test]
    fn random_controls_interpolate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| {
                let (x, y) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                Vec3::new(x, y, 0.1 * (3.0 * x).sin() + rng.random_range(-0.02..0.02))
            })
            .collect();
        let frame = fit_plane(&pts).unwrap();
        let exact = fit_tps(&pts, &frame, 0.0).unwrap();
        let worst = pts.iter().map(|p| exact.side_of(p).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
        assert!(exact.side_conditions().iter().all(|c| c.abs() < 1e-8));
        let smooth = fit_tps(&pts, &frame, 1e-3).unwrap();
        let worst_smooth = pts.iter().map(|p| smooth.side_of(p).abs()).fold(0.0, f64::max);
        assert!(worst_smooth > worst);
    }
}
