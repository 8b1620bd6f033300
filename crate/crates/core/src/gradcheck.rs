//! Finite-difference audit of the reverse-mode gradients of the full loss
//! graph: the four training terms, the code regularizer and all four
//! inference penalties, on random models.

use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::record_penalties;
use crate::mesh::Vec3;
use crate::neural::{record_occupancies, AutodecoderModel, ModelConfig, Tape};
use crate::training::{column, points_matrix, record_terms, TapeTargets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub models: usize,
    pub points: usize,
    /// Coordinates probed in each parameter tensor.
    pub probes_per_tensor: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients near
    /// zero are judged on an absolute scale.
    pub abs_floor: f64,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            models: 20,
            points: 100,
            probes_per_tensor: 4,
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-5,
            model: ModelConfig {
                code_init_sigma: 0.1,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub models: usize,
    pub checked: usize,
    /// Probes whose `±step` perturbation flips a rectifier.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// Labeled points for one probe model: rows alternate between two shapes.
pub struct ProbeData {
    pub points: Vec<Vec3>,
    pub owner: Rc<Vec<usize>>,
    pub bits: [Vec<bool>; 4],
}

impl ProbeData {
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut bits: [Vec<bool>; 4] = Default::default();
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push(Vec3::from_fn(|_, _| rng.random_range(-0.55..0.55)));
            let (c, b) = (rng.random::<bool>(), rng.random::<bool>());
            bits[0].push(c);
            bits[1].push(b);
            bits[2].push(c && b);
            bits[3].push(c && !b);
        }
        Self {
            points,
            owner: Rc::new((0..n).map(|i| i % 2).collect()),
            bits,
        }
    }
}

/// The summed loss and, optionally, its gradient in [`flatten`] order.
pub fn full_loss(model: &AutodecoderModel, data: &ProbeData, with_grad: bool) -> (f64, Option<Vec<f64>>) {
    let n = data.points.len();
    let mut tape = Tape::<f64>::new();
    let bf = model.f.bind(&mut tape, with_grad);
    let bg = model.g.bind(&mut tape, with_grad);
    let (zc, zb) = if with_grad {
        (tape.param(model.z_c.clone()), tape.param(model.z_b.clone()))
    } else {
        (tape.constant(model.z_c.clone()), tape.constant(model.z_b.clone()))
    };
    let x = tape.constant(points_matrix(&data.points));
    let occ = record_occupancies(&mut tape, &bf, &bg, zc, zb, data.owner.clone(), x);
    let targets = TapeTargets {
        c: column(data.bits[0].iter().copied()),
        b: column(data.bits[1].iter().copied()),
        f: column(data.bits[2].iter().copied()),
        r: column(data.bits[3].iter().copied()),
        weight: Rc::new(Array2::from_elem((n, 1), 1.0 / n as f64)),
    };
    let t = record_terms(&mut tape, occ, &targets);
    let p = record_penalties(&mut tape, occ, targets.f.clone());
    let (rc, rb) = (tape.sum_abs(zc), tape.sum_abs(zb));
    let reg = tape.add(rc, rb);
    let reg = tape.scale(reg, 1e-2);
    let mut total = reg;
    for v in [t.f, t.c, t.b, t.r, p.ner, p.nerp, p.prox, p.proxp] {
        total = tape.add(total, v);
    }
    let value = tape.scalar(total);
    if !with_grad {
        return (value, None);
    }
    let grads = tape.backward(total);
    let mut flat = bf.flat_grad(&grads);
    flat.extend(bg.flat_grad(&grads));
    for v in [zc, zb] {
        flat.extend(grads.get(v).expect("codes reach the loss").iter());
    }
    (value, Some(flat))
}

/// All parameters in the order theta, phi, z_C, z_B.
pub fn flatten(model: &AutodecoderModel) -> Vec<f64> {
    let mut v = model.f.to_flat();
    v.extend(model.g.to_flat());
    v.extend(model.z_c.iter());
    v.extend(model.z_b.iter());
    v
}

pub fn unflatten(model: &mut AutodecoderModel, flat: &[f64]) -> Result<()> {
    let (nf, ng) = (model.f.param_count(), model.g.param_count());
    model.f.set_flat(&flat[..nf])?;
    model.g.set_flat(&flat[nf..nf + ng])?;
    let nc = model.z_c.len();
    let zc_shape = model.z_c.dim();
    model.z_c = Array2::from_shape_vec(zc_shape, flat[nf + ng..nf + ng + nc].to_vec()).expect("shape");
    let zb_shape = model.z_b.dim();
    model.z_b = Array2::from_shape_vec(zb_shape, flat[nf + ng + nc..].to_vec()).expect("shape");
    Ok(())
}

fn patterns(model: &AutodecoderModel, data: &ProbeData) -> Vec<bool> {
    let x = points_matrix::<f64>(&data.points);
    let codes = |t: &Array2<f64>| t.select(Axis(0), &data.owner);
    let in_f = concatenate(Axis(1), &[codes(&model.z_c).view(), x.view()]).expect("rows");
    let in_g = concatenate(Axis(1), &[codes(&model.z_b).view(), x.view()]).expect("rows");
    let mut p = model.f.relu_pattern(in_f.view());
    p.extend(model.g.relu_pattern(in_g.view()));
    p
}

/// Named contiguous ranges of the flat parameter vector.
fn tensors(model: &AutodecoderModel) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut at = 0;
    for (name, net) in [("f", &model.f), ("g", &model.g)] {
        let cfg = net.config();
        for l in 0..cfg.depth {
            let (i, o) = cfg.layer_shape(l);
            out.push((format!("{name}.w{l}"), at, i * o));
            at += i * o;
            out.push((format!("{name}.b{l}"), at, o));
            at += o;
        }
    }
    out.push(("z_c".into(), at, model.z_c.len()));
    at += model.z_c.len();
    out.push(("z_b".into(), at, model.z_b.len()));
    out
}

/// Compares reverse-mode gradients with central differences on random
/// coordinates of every parameter tensor.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradcheckReport {
        models: cfg.models,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        tolerance: cfg.tolerance,
    };
    for m in 0..cfg.models {
        let mut model = AutodecoderModel::new(&cfg.model, 2, rng.random())?;
        let data = ProbeData::random(cfg.points, &mut rng);
        let (_, grad) = full_loss(&model, &data, true);
        let grad = grad.expect("gradient requested");
        let base = flatten(&model);
        let base_pattern = patterns(&model, &data);
        for (name, start, len) in tensors(&model) {
            for _ in 0..cfg.probes_per_tensor {
                let i = start + rng.random_range(0..len);
                let mut values = [0.0; 2];
                let mut flipped = false;
                for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut p = base.clone();
                    p[i] += sign * cfg.step;
                    unflatten(&mut model, &p)?;
                    flipped |= patterns(&model, &data) != base_pattern;
                    values[k] = full_loss(&model, &data, false).0;
                }
                unflatten(&mut model, &base)?;
                if flipped {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (values[0] - values[1]) / (2.0 * cfg.step);
                let analytic = grad[i];
                let scale = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
                let rel = (analytic - numeric).abs() / scale;
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = format!(
                        "model {m} {name}[{}]: analytic {analytic:e} numeric {numeric:e}",
                        i - start
                    );
                }
            }
        }
    }
    Ok(report)
}
