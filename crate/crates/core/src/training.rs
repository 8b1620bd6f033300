//! Joint optimization of both networks and the per-shape code tables.

use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::tape::cast;
use crate::neural::{
    record_occupancies, Adam, AutodecoderModel, Checkpoint, ModelConfig, Occupancies,
    OptimizerState, Real, RowAdam, Tape, Var, BCE_EPS,
};
use crate::sampling::{subsample, LabeledBatch, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub shapes_per_step: usize,
    pub points_per_shape: usize,
    pub lr_weights: f64,
    pub lr_codes: f64,
    pub lambda_reg: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            shapes_per_step: 16,
            points_per_shape: 4096,
            lr_weights: 5e-4,
            lr_codes: 1e-3,
            lambda_reg: 1e-4,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidArgument("lambda_reg must be >= 0".into()));
        }
        if !(self.lr_weights > 0.0 && self.lr_codes > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        if self.shapes_per_step == 0 || self.points_per_shape == 0 {
            return Err(Error::InvalidArgument("empty training step".into()));
        }
        Ok(())
    }
}

/// The four cross-entropy terms and the code regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_f: f64,
    pub l_c: f64,
    pub l_b: f64,
    pub l_r: f64,
    pub l_reg: f64,
}

impl LossTerms {
    pub fn total(&self, lambda_reg: f64) -> f64 {
        self.l_f + self.l_c + self.l_b + self.l_r + lambda_reg * self.l_reg
    }

    fn add(&mut self, o: &LossTerms) {
        self.l_f += o.l_f;
        self.l_c += o.l_c;
        self.l_b += o.l_b;
        self.l_r += o.l_r;
        self.l_reg += o.l_reg;
    }

    fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            l_f: self.l_f * s,
            l_c: self.l_c * s,
            l_b: self.l_b * s,
            l_r: self.l_r * s,
            l_reg: self.l_reg * s,
        }
    }

    fn is_finite(&self) -> bool {
        [self.l_f, self.l_c, self.l_b, self.l_r, self.l_reg]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// Per-row targets and averaging weights on a tape.
pub(crate) struct TapeTargets<T> {
    pub c: Rc<Array2<T>>,
    pub b: Rc<Array2<T>>,
    pub f: Rc<Array2<T>>,
    pub r: Rc<Array2<T>>,
    /// `1 / rows of the owning shape`, so weighted sums are per-shape means.
    pub weight: Rc<Array2<T>>,
}

pub(crate) fn column<T: Real>(bits: impl Iterator<Item = bool>) -> Rc<Array2<T>> {
    let v: Vec<T> = bits.map(|b| if b { T::one() } else { T::zero() }).collect();
    let n = v.len();
    Rc::new(Array2::from_shape_vec((n, 1), v).expect("column"))
}

pub(crate) struct TermVars {
    pub f: Var,
    pub c: Var,
    pub b: Var,
    pub r: Var,
}

/// Fractured-shape term: BCE of `f·g` against the fractured bits.
pub(crate) fn fracture_term<T: Real>(
    tape: &mut Tape<T>,
    occ: Occupancies,
    target: Rc<Array2<T>>,
    weight: Rc<Array2<T>>,
) -> Var {
    let eps = T::of(BCE_EPS);
    let prod = tape.mul(occ.c, occ.b);
    let e = tape.bce(prod, target, eps);
    tape.weighted_sum(e, weight)
}

pub(crate) fn record_terms<T: Real>(tape: &mut Tape<T>, occ: Occupancies, t: &TapeTargets<T>) -> TermVars {
    let eps = T::of(BCE_EPS);
    let f = fracture_term(tape, occ, t.f.clone(), t.weight.clone());
    let ec = tape.bce(occ.c, t.c.clone(), eps);
    let c = tape.weighted_sum(ec, t.weight.clone());
    let eb = tape.bce(occ.b, t.b.clone(), eps);
    let b = tape.weighted_sum(eb, t.weight.clone());
    let not_b = tape.one_minus(occ.b);
    let rest = tape.mul(occ.c, not_b);
    let er = tape.bce(rest, t.r.clone(), eps);
    let r = tape.weighted_sum(er, t.weight.clone());
    TermVars { f, c, b, r }
}

/// Loss terms of one shape's rows under the given codes.
pub fn loss_terms(
    model: &AutodecoderModel,
    z_c: ArrayView1<f64>,
    z_b: ArrayView1<f64>,
    batch: &LabeledBatch,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for (what, expected, found) in [
        ("complete code", model.p(), z_c.len()),
        ("break code", model.q(), z_b.len()),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            });
        }
    }
    let n = batch.len();
    let mut tape = Tape::<f64>::new();
    let bf = model.f.bind(&mut tape, false);
    let bg = model.g.bind(&mut tape, false);
    let zc = tape.constant(z_c.to_owned().insert_axis(ndarray::Axis(0)));
    let zb = tape.constant(z_b.to_owned().insert_axis(ndarray::Axis(0)));
    let x = tape.constant(points_matrix(&batch.points));
    let occ = record_occupancies(&mut tape, &bf, &bg, zc, zb, Rc::new(vec![0; n]), x);
    let targets = TapeTargets {
        c: column(batch.occ_c.iter().copied()),
        b: column(batch.occ_b.iter().copied()),
        f: column(batch.occ_f.iter().copied()),
        r: column(batch.occ_r.iter().copied()),
        weight: Rc::new(Array2::from_elem((n, 1), 1.0 / n as f64)),
    };
    let v = record_terms(&mut tape, occ, &targets);
    let terms = LossTerms {
        l_f: tape.scalar(v.f),
        l_c: tape.scalar(v.c),
        l_b: tape.scalar(v.b),
        l_r: tape.scalar(v.r),
        l_reg: z_c.iter().chain(z_b.iter()).map(|x| x.abs()).sum(),
    };
    if !terms.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {terms:?}")));
    }
    Ok(terms)
}

pub(crate) fn points_matrix<T: Real>(points: &[crate::mesh::Vec3]) -> Array2<T> {
    Array2::from_shape_fn((points.len(), 3), |(i, d)| T::of(points[i][d]))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean per-step objective.
    pub loss: f64,
    /// Mean per-shape terms.
    pub terms: LossTerms,
    pub lr_weights: f64,
    pub lr_codes: f64,
    pub seconds: f64,
}

pub struct Trainer<'a> {
    corpus: &'a [SampleSet],
    cfg: TrainConfig,
    model: AutodecoderModel,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
    initial: Option<f64>,
    strikes: usize,
    log: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a [SampleSet], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        for set in corpus {
            if set.is_empty() {
                return Err(Error::InvalidArgument(format!("sample set {} is empty", set.shape_id)));
            }
            let bad = set.inconsistent_rows();
            if !bad.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "sample set {} has {} inconsistent rows",
                    set.shape_id,
                    bad.len()
                )));
            }
        }
        let model = AutodecoderModel::new(model_cfg, corpus.len(), cfg.seed)?;
        let opt = OptimizerState {
            theta: Adam::new(model.f.param_count(), cfg.lr_weights),
            phi: Adam::new(model.g.param_count(), cfg.lr_weights),
            z_c: RowAdam::new(corpus.len(), model.p(), cfg.lr_codes),
            z_b: RowAdam::new(corpus.len(), model.q(), cfg.lr_codes),
        };
        Ok(Self {
            corpus,
            cfg: cfg.clone(),
            model,
            opt,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e),
            epoch: 0,
            initial: None,
            strikes: 0,
            log: Vec::new(),
        })
    }

    pub fn model(&self) -> &AutodecoderModel {
        &self.model
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self, config_hash: [u8; 32]) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.opt.clone()),
            config_hash,
        }
    }

    /// One optimizer step on the given shapes; returns the summed terms.
    pub fn step(&mut self, shapes: &[usize]) -> Result<LossTerms> {
        match self.cfg.precision {
            Precision::F64 => self.step_in::<f64>(shapes),
            Precision::F32 => self.step_in::<f32>(shapes),
        }
    }

    fn step_in<T: Real>(&mut self, shapes: &[usize]) -> Result<LossTerms> {
        let mut points = Vec::new();
        let mut owner = Vec::new();
        let mut weight = Vec::new();
        let mut bits: [Vec<bool>; 4] = Default::default();
        for &s in shapes {
            let set = &self.corpus[s];
            let k = self.cfg.points_per_shape.min(set.len());
            let rows = set.rows(&subsample(set.len(), k, &mut self.rng)?);
            points.extend(rows.points);
            owner.extend(std::iter::repeat_n(s, k));
            weight.extend(std::iter::repeat_n(T::of(1.0 / k as f64), k));
            bits[0].extend(rows.occ_c);
            bits[1].extend(rows.occ_b);
            bits[2].extend(rows.occ_f);
            bits[3].extend(rows.occ_r);
        }
        let n = points.len();
        let [c, b, f, r] = bits;
        let targets = TapeTargets {
            c: column(c.into_iter()),
            b: column(b.into_iter()),
            f: column(f.into_iter()),
            r: column(r.into_iter()),
            weight: Rc::new(Array2::from_shape_vec((n, 1), weight).expect("column")),
        };

        let mut tape = Tape::<T>::new();
        let bf = self.model.f.bind(&mut tape, true);
        let bg = self.model.g.bind(&mut tape, true);
        let zc = tape.param(cast(self.model.z_c.view()));
        let zb = tape.param(cast(self.model.z_b.view()));
        let x = tape.constant(points_matrix(&points));
        let occ = record_occupancies(&mut tape, &bf, &bg, zc, zb, Rc::new(owner), x);
        let v = record_terms(&mut tape, occ, &targets);
        let rows = Rc::new(shapes.to_vec());
        let (gc, gb) = (tape.gather(zc, rows.clone()), tape.gather(zb, rows));
        let (rc, rb) = (tape.sum_abs(gc), tape.sum_abs(gb));
        let reg = tape.add(rc, rb);
        let sum_fc = tape.add(v.f, v.c);
        let sum_br = tape.add(v.b, v.r);
        let data = tape.add(sum_fc, sum_br);
        let scaled_reg = tape.scale(reg, T::of(self.cfg.lambda_reg));
        let total = tape.add(data, scaled_reg);

        let terms = LossTerms {
            l_f: tape.scalar(v.f).as_f64(),
            l_c: tape.scalar(v.c).as_f64(),
            l_b: tape.scalar(v.b).as_f64(),
            l_r: tape.scalar(v.r).as_f64(),
            l_reg: tape.scalar(reg).as_f64(),
        };
        if !terms.is_finite() || !tape.scalar(total).as_f64().is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {}: {terms:?}",
                self.epoch
            )));
        }

        let grads = tape.backward(total);
        let mut theta = self.model.f.to_flat();
        self.opt.theta.update(&mut theta, &bf.flat_grad(&grads));
        self.model.f.set_flat(&theta)?;
        let mut phi = self.model.g.to_flat();
        self.opt.phi.update(&mut phi, &bg.flat_grad(&grads));
        self.model.g.set_flat(&phi)?;
        let zero_c = Array2::zeros(self.model.z_c.dim());
        let zero_b = Array2::zeros(self.model.z_b.dim());
        let g_c = grads.get(zc).map_or(zero_c, |g| cast(g.view()));
        let g_b = grads.get(zb).map_or(zero_b, |g| cast(g.view()));
        self.opt.z_c.update_rows(&mut self.model.z_c, &g_c, shapes);
        self.opt.z_b.update_rows(&mut self.model.z_b, &g_b, shapes);
        Ok(terms)
    }

    /// Visits every shape once in shuffled groups of `shapes_per_step`.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossTerms::default();
        let mut loss = 0.0;
        let mut steps = 0;
        for group in order.chunks(self.cfg.shapes_per_step) {
            let t = self.step(group)?;
            loss += t.total(self.cfg.lambda_reg);
            sum.add(&t);
            steps += 1;
        }
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            steps,
            loss: loss / steps as f64,
            terms: sum.scaled(1.0 / self.corpus.len() as f64),
            lr_weights: self.cfg.lr_weights,
            lr_codes: self.cfg.lr_codes,
            seconds: start.elapsed().as_secs_f64(),
        };
        let initial = *self.initial.get_or_insert(record.loss);
        if record.loss > 10.0 * initial {
            self.strikes += 1;
            if self.strikes >= 3 {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    loss: record.loss,
                    initial,
                });
            }
        } else {
            self.strikes = 0;
        }
        log::debug!("epoch {} loss {:.6}", record.epoch, record.loss);
        self.log.push(record.clone());
        Ok(record)
    }

    pub fn into_parts(self) -> (AutodecoderModel, OptimizerState, Vec<EpochRecord>) {
        (self.model, self.opt, self.log)
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AutodecoderModel,
    pub optimizer: OptimizerState,
    pub log: Vec<EpochRecord>,
}

pub fn train(corpus: &[SampleSet], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(corpus, model_cfg, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    let (model, optimizer, log) = trainer.into_parts();
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
    })
}

/// Sliding-window means of `values`.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut acc: f64 = values[..window].iter().sum();
    let mut out = vec![acc / window as f64];
    for i in window..values.len() {
        acc += values[i] - values[i - window];
        out.push(acc / window as f64);
    }
    out
}

/// Code row as an owned vector.
pub fn code_row(table: &Array2<f64>, row: usize) -> Array1<f64> {
    table.row(row).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use crate::neural::{bce, Mlp};
    use rand::Rng;

    fn random_batch(n: usize, seed: u64) -> LabeledBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = LabeledBatch::default();
        for _ in 0..n {
            let c = rng.random::<bool>();
            let br = rng.random::<bool>();
            b.points.push(Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)));
            b.occ_c.push(c);
            b.occ_b.push(br);
            b.occ_f.push(c && br);
            b.occ_r.push(c && !br);
        }
        b
    }

    fn small_model() -> AutodecoderModel {
        let cfg = ModelConfig {
            p: 6,
            q: 4,
            code_init_sigma: 0.3,
            ..Default::default()
        };
        AutodecoderModel::new(&cfg, 2, 3).unwrap()
    }

    #[test]
    fn half_model_gives_ln2() {
        let mut m = small_model();
        m.f = Mlp::zeros(*m.f.config()).unwrap();
        m.g = Mlp::zeros(*m.g.config()).unwrap();
        let b = random_batch(64, 1);
        let t = loss_terms(&m, m.z_c.row(0), m.z_b.row(0), &b).unwrap();
        let ln2 = 2f64.ln();
        assert!((t.l_c - ln2).abs() < 1e-12);
        assert!((t.l_b - ln2).abs() < 1e-12);
        // f·g = 0.25 and f·(1-g) = 0.25 are not 0.5, so only C and B are ln 2.
        assert!(t.l_f > 0.0 && t.l_r > 0.0);
    }

    #[test]
    fn terms_match_per_point_recomputation() {
        let m = small_model();
        let b = random_batch(256, 2);
        let (zc, zb) = (m.z_c.row(1), m.z_b.row(1));
        let t = loss_terms(&m, zc, zb, &b).unwrap();
        let fs = m.complete_batch(zc, &b.points).unwrap();
        let gs = m.break_batch(zb, &b.points).unwrap();
        let n = b.len() as f64;
        let mut e = [0.0; 4];
        for i in 0..b.len() {
            e[0] += bce(fs[i] * gs[i], b.occ_f[i]);
            e[1] += bce(fs[i], b.occ_c[i]);
            e[2] += bce(gs[i], b.occ_b[i]);
            e[3] += bce(fs[i] * (1.0 - gs[i]), b.occ_r[i]);
        }
        for (got, want) in [t.l_f, t.l_c, t.l_b, t.l_r].iter().zip(e) {
            assert!((got - want / n).abs() < 1e-10);
        }
        let l1: f64 = zc.iter().chain(zb.iter()).map(|x| x.abs()).sum();
        assert!((t.l_reg - l1).abs() < 1e-15);
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smooth(&[1.0], 2).is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            lambda_reg: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr_codes: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
