//! The two-network autodecoder and the occupancy composition rules.

use std::rc::Rc;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{BoundMlp, Mlp, MlpConfig};
use super::tape::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Clamp applied inside every cross-entropy and logarithm.
pub const BCE_EPS: f64 = 1e-7;

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {x} outside [0, 1]")))
    }
}

/// Fractured-shape occupancy from complete and break occupancies.
pub fn compose_fracture(oc: f64, ob: f64) -> Result<f64> {
    check_unit("complete occupancy", oc)?;
    check_unit("break occupancy", ob)?;
    Ok(oc * ob)
}

/// Restoration occupancy: inside the complete shape, outside the break set.
pub fn compose_restoration(oc: f64, ob: f64) -> Result<f64> {
    check_unit("complete occupancy", oc)?;
    check_unit("break occupancy", ob)?;
    Ok(oc * (1.0 - ob))
}

/// Binary cross-entropy with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub profile: Profile,
    /// Complete-shape code size.
    pub p: usize,
    /// Break-surface code size.
    pub q: usize,
    pub code_init_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            p: 128,
            q: 32,
            code_init_sigma: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn f_config(&self) -> MlpConfig {
        match self.profile {
            Profile::Desk => MlpConfig::desk(self.p),
            Profile::Full => MlpConfig::full(self.p),
        }
    }

    pub fn g_config(&self) -> MlpConfig {
        match self.profile {
            Profile::Desk => MlpConfig::desk(self.q),
            Profile::Full => MlpConfig::full(self.q),
        }
    }
}

/// Complete-shape network `f`, break network `g`, and one latent code
/// per training shape for each.
#[derive(Debug, Clone, PartialEq)]
pub struct AutodecoderModel {
    pub f: Mlp,
    pub g: Mlp,
    pub z_c: Array2<f64>,
    pub z_b: Array2<f64>,
}

/// Normally distributed code table.
pub fn random_codes(rows: usize, dim: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    Array2::from_shape_simple_fn((rows, dim), || normal.sample(rng))
}

impl AutodecoderModel {
    pub fn new(cfg: &ModelConfig, shapes: usize, seed: u64) -> Result<Self> {
        if cfg.p == 0 || cfg.q == 0 || !(cfg.code_init_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "latent sizes must be positive and sigma non-negative: {cfg:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Mlp::init(cfg.f_config(), &mut rng)?;
        let g = Mlp::init(cfg.g_config(), &mut rng)?;
        let z_c = random_codes(shapes, cfg.p, cfg.code_init_sigma, &mut rng);
        let z_b = random_codes(shapes, cfg.q, cfg.code_init_sigma, &mut rng);
        Ok(Self { f, g, z_c, z_b })
    }

    pub fn p(&self) -> usize {
        self.f.config().latent_dim()
    }

    pub fn q(&self) -> usize {
        self.g.config().latent_dim()
    }

    pub fn shapes(&self) -> usize {
        self.z_c.nrows()
    }

    /// Checks table shapes against the networks and that every value is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("complete code width", self.p(), self.z_c.ncols()),
            ("break code width", self.q(), self.z_b.ncols()),
            ("break code rows", self.z_c.nrows(), self.z_b.nrows()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        let tables_finite = self.z_c.iter().chain(self.z_b.iter()).all(|x| x.is_finite());
        if !(tables_finite && self.f.is_finite() && self.g.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    /// `f(z_c, x)` for each point.
    pub fn complete_batch(&self, z_c: ArrayView1<f64>, points: &[Vec3]) -> Result<Vec<f64>> {
        eval(&self.f, z_c, points, "complete code")
    }

    /// `g(z_b, x)` for each point.
    pub fn break_batch(&self, z_b: ArrayView1<f64>, points: &[Vec3]) -> Result<Vec<f64>> {
        eval(&self.g, z_b, points, "break code")
    }

    pub fn forward_complete(&self, z_c: ArrayView1<f64>, x: &Vec3) -> Result<f64> {
        Ok(self.complete_batch(z_c, std::slice::from_ref(x))?[0])
    }

    pub fn forward_break(&self, z_b: ArrayView1<f64>, x: &Vec3) -> Result<f64> {
        Ok(self.break_batch(z_b, std::slice::from_ref(x))?[0])
    }
}

fn eval(net: &Mlp, code: ArrayView1<f64>, points: &[Vec3], what: &'static str) -> Result<Vec<f64>> {
    let latent = net.config().latent_dim();
    if code.len() != latent {
        return Err(Error::DimensionMismatch {
            what,
            expected: latent,
            found: code.len(),
        });
    }
    let input = Array2::from_shape_fn((points.len(), latent + 3), |(r, c)| {
        if c < latent {
            code[c]
        } else {
            points[r][c - latent]
        }
    });
    let out = net.forward_batch(input.view()).to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(out)
}

/// Both networks' outputs recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Occupancies {
    /// `f`, complete shape.
    pub c: Var,
    /// `g`, break set.
    pub b: Var,
}

/// Records `f(z_C[row], x)` and `g(z_B[row], x)` for every point row,
/// where `rows[i]` picks the code-table row used by point `i`.
pub fn record_occupancies<T: Real>(
    tape: &mut Tape<T>,
    f: &BoundMlp,
    g: &BoundMlp,
    z_c: Var,
    z_b: Var,
    rows: Rc<Vec<usize>>,
    x: Var,
) -> Occupancies {
    let zc = tape.gather(z_c, rows.clone());
    let zb = tape.gather(z_b, rows);
    let in_f = tape.concat(zc, x);
    let in_g = tape.concat(zb, x);
    Occupancies {
        c: f.forward(tape, in_f),
        b: g.forward(tape, in_g),
    }
}
