//! Adaptive-moment optimizers for dense parameter vectors and for
//! row-sparse latent-code tables.

use ndarray::Array2;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

fn step(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, t: u64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let mh = *m / (1.0 - BETA1.powi(t as i32));
    let vh = *v / (1.0 - BETA2.powi(t as i32));
    *p -= lr * mh / (vh.sqrt() + EPSILON);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        for i in 0..params.len() {
            step(&mut params[i], grad[i], &mut self.m[i], &mut self.v[i], self.lr, self.t);
        }
    }
}

/// Adam over the rows of a table where each row keeps its own step
/// count and only the rows named in an update move.
#[derive(Debug, Clone, PartialEq)]
pub struct RowAdam {
    pub lr: f64,
    pub t: Vec<u64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl RowAdam {
    pub fn new(rows: usize, cols: usize, lr: f64) -> Self {
        Self {
            lr,
            t: vec![0; rows],
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }

    /// Applies `grad` (same shape as `table`) to the listed rows only.
    pub fn update_rows(&mut self, table: &mut Array2<f64>, grad: &Array2<f64>, rows: &[usize]) {
        assert_eq!(table.dim(), self.m.dim());
        assert_eq!(grad.dim(), self.m.dim());
        for &r in rows {
            self.t[r] += 1;
            let t = self.t[r];
            for c in 0..table.ncols() {
                step(
                    &mut table[[r, c]],
                    grad[[r, c]],
                    &mut self.m[[r, c]],
                    &mut self.v[[r, c]],
                    self.lr,
                    t,
                );
            }
        }
    }
}

/// Full optimizer state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub theta: Adam,
    pub phi: Adam,
    pub z_c: RowAdam,
    pub z_b: RowAdam,
}
