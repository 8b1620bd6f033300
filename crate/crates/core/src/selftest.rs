//! Invariant suites shared by the `selftest` command and the test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::break_surface::{fit_tps, PlaneFrame};
use crate::error::Result;
use crate::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::mesh::{icosphere, TriMesh, Vec3};
use crate::metrics::{chamfer_points, nfre_points, KdTree};
use crate::neural::{compose_fracture, compose_restoration};
use crate::reconstruct::{evaluate_grid, marching_cubes_closed, FnField, OCCUPANCY_ISO};
use crate::mesh::SamplingCube;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub note: String,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            checks: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            note: String::new(),
        }
    }

    /// Records one check with error `err`; it fails at or above the
    /// tolerance.
    fn check(&mut self, err: f64) {
        self.checks += 1;
        if !(err < self.tolerance) {
            self.failures += 1;
        }
        if err.is_nan() || err > self.max_error {
            self.max_error = err;
        }
    }

    fn require(&mut self, ok: bool) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.checks > 0 && self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{:<10} {} checks={} failures={} max_error={:.3e} tol={:.0e}{}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checks,
            self.failures,
            self.max_error,
            self.tolerance,
            if self.note.is_empty() { String::new() } else { format!(" ({})", self.note) }
        )
    }
}

/// Restoration composition under test; swapped out by fault injection.
pub type RestorationFn = fn(f64, f64) -> Result<f64>;

/// `oc · (1 + ob)`: the restoration product with the break term's sign
/// flipped.
pub fn faulty_restoration(oc: f64, ob: f64) -> Result<f64> {
    Ok(oc * (1.0 + ob))
}

/// Fractured plus restoration equals complete, and the boolean corners
/// reduce to AND / AND-NOT.
pub fn partition_suite(n: usize, seed: u64, restoration: RestorationFn) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("partition", 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let (oc, ob) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        r.check((compose_fracture(oc, ob)? + restoration(oc, ob)? - oc).abs());
    }
    for c in [false, true] {
        for b in [false, true] {
            let (oc, ob) = (c as u8 as f64, b as u8 as f64);
            r.require(compose_fracture(oc, ob)? == (c && b) as u8 as f64);
            r.require(restoration(oc, ob)? == (c && !b) as u8 as f64);
        }
    }
    Ok(r)
}

pub fn gradient_suite(cfg: &GradcheckConfig) -> Result<SuiteReport> {
    let g = run_gradcheck(cfg)?;
    let mut r = SuiteReport::new("gradients", cfg.tolerance);
    r.checks = g.checked;
    r.failures = usize::from(!g.passed());
    r.max_error = g.max_rel_error;
    r.note = format!("{} models, {} kink probes skipped, worst {}", g.models, g.skipped, g.worst);
    Ok(r)
}

/// Exact interpolation and side conditions of an unregularized spline
/// through random controls.
pub fn tps_suite(controls: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("tps", 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = PlaneFrame {
        origin: Vec3::zeros(),
        u: Vec3::x(),
        v: Vec3::y(),
        n: Vec3::z(),
    };
    for _ in 0..trials {
        let pts: Vec<Vec3> = (0..controls)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let tps = fit_tps(&pts, &frame, 0.0)?;
        for p in &pts {
            r.check((tps.height(p.x, p.y) - p.z).abs());
            r.check(tps.side_of(p).abs());
        }
        for s in tps.side_conditions() {
            r.check(s.abs());
        }
    }
    Ok(r)
}

/// Chamfer distance from the extracted isosurface of an analytic sphere
/// to exact samples of that sphere.
pub fn sphere_chamfer(radius: f64, resolution: usize, samples: usize, seed: u64) -> Result<f64> {
    let field = FnField(move |p: &Vec3| if p.norm() < radius { 1.0 } else { 0.0 });
    let grid = evaluate_grid(&field, &SamplingCube::unit(), resolution)?;
    let mesh = marching_cubes_closed(&grid, OCCUPANCY_ISO);
    let pred: Vec<Vec3> = mesh.sample_surface(samples, seed)?.into_iter().map(|s| s.point).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let exact: Vec<Vec3> = (0..samples)
        .map(|_| {
            let d = Vec3::from_fn(|_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
            d.normalize() * radius
        })
        .collect();
    chamfer_points(&pred, &exact)
}

/// Sphere extraction at two resolutions: each must be within `2 / res`
/// and the finer grid must be strictly closer.
pub fn marching_suite(coarse: usize, fine: usize, samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("marching", 2.0 / fine as f64);
    let c = sphere_chamfer(0.3, coarse, samples, seed)?;
    let f = sphere_chamfer(0.3, fine, samples, seed)?;
    r.check(f);
    r.require(c < 2.0 / coarse as f64);
    r.require(f < c);
    r.note = format!("cd@{coarse}={c:.3e} cd@{fine}={f:.3e}");
    Ok(r)
}

pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

pub fn brute_nfre(pred: &[Vec3], nonfracture: &[Vec3], gt: &[Vec3], eta: f64) -> f64 {
    let nn = |p: &Vec3, s: &[Vec3]| s.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
    let hits = pred
        .iter()
        .filter(|p| nn(p, nonfracture) < eta * eta && nn(p, gt) > eta * eta)
        .count();
    hits as f64 / pred.len() as f64
}

fn jittered_sphere(rng: &mut ChaCha8Rng) -> TriMesh {
    let c = Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    icosphere(c, rng.random_range(0.1..0.4), 2)
}

/// Indexed chamfer and NFRE against brute-force recomputation on the same
/// samples, plus `NFRE(gt, gt) = 0`.
pub fn metrics_suite(cases: usize, samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("metrics", f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        let (a, b, nf) = (jittered_sphere(&mut rng), jittered_sphere(&mut rng), jittered_sphere(&mut rng));
        let pts = |m: &TriMesh, s: u64| -> Result<Vec<Vec3>> {
            Ok(m.sample_surface(samples, s)?.into_iter().map(|x| x.point).collect())
        };
        let s = seed.wrapping_add(i as u64);
        let (pa, pb, pn) = (pts(&a, s)?, pts(&b, s + 1)?, pts(&nf, s + 2)?);
        r.check((chamfer_points(&pa, &pb)? - brute_chamfer(&pa, &pb)).abs());
        let eta = rng.random_range(0.01..0.2);
        let (tn, tb) = (KdTree::new(&pn), KdTree::new(&pb));
        r.check((nfre_points(&pa, &tn, &tb, eta)? - brute_nfre(&pa, &pn, &pb, eta)).abs());
        r.check(nfre_points(&pb, &tn, &tb, eta)?);
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    pub partition_samples: usize,
    pub gradcheck: GradcheckConfig,
    /// Replace the restoration composition with [`faulty_restoration`].
    pub inject_fault: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            partition_samples: 1_000_000,
            gradcheck: GradcheckConfig::default(),
            inject_fault: false,
        }
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> Result<Vec<SuiteReport>> {
    let restoration: RestorationFn = if opts.inject_fault { faulty_restoration } else { compose_restoration };
    Ok(vec![
        partition_suite(opts.partition_samples, opts.seed, restoration)?,
        gradient_suite(&GradcheckConfig {
            seed: opts.seed,
            ..opts.gradcheck.clone()
        })?,
        tps_suite(50, 5, opts.seed)?,
        marching_suite(64, 128, 20_000, opts.seed)?,
        metrics_suite(10, 400, opts.seed)?,
    ])
}
