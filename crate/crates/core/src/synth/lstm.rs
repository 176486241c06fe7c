use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Weights of one LSTM layer. Gate blocks are stacked in the order
/// input, forget, candidate, output (each `n` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_in: DMatrix<f64>,
    pub w_rec: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl LstmState {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: DVector::zeros(n),
            c: DVector::zeros(n),
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub input: DVector<f64>,
    pub h_prev: DVector<f64>,
    pub c_prev: DVector<f64>,
    pub i: DVector<f64>,
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub o: DVector<f64>,
    pub c: DVector<f64>,
    pub tanh_c: DVector<f64>,
    pub h: DVector<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        Self {
            w_in: DMatrix::zeros(4 * units, input_dim),
            w_rec: DMatrix::zeros(4 * units, units),
            bias: DVector::zeros(4 * units),
        }
    }

    /// Uniform(±1/sqrt(fan_in)) weights, forget-gate bias 1.
    pub fn random<R: Rng>(input_dim: usize, units: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input_dim + units) as f64).sqrt();
        let mut p = Self::zeros(input_dim, units);
        p.w_in.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        p.w_rec.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        p.bias.rows_mut(units, units).fill(1.0);
        p
    }

    pub fn units(&self) -> usize {
        self.w_rec.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub(crate) fn forward(&self, input: DVector<f64>, state: &LstmState) -> LstmStepCache {
        let n = self.units();
        let mut pre = self.bias.clone();
        pre.gemv(1.0, &self.w_in, &input, 1.0);
        pre.gemv(1.0, &self.w_rec, &state.h, 1.0);
        let i = pre.rows(0, n).map(sigmoid);
        let f = pre.rows(n, n).map(sigmoid);
        let g = pre.rows(2 * n, n).map(f64::tanh);
        let o = pre.rows(3 * n, n).map(sigmoid);
        let c = f.component_mul(&state.c) + i.component_mul(&g);
        let tanh_c = c.map(f64::tanh);
        let h = o.component_mul(&tanh_c);
        LstmStepCache {
            input,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// (d input, d h_prev, d c_prev).
    pub(crate) fn backward(
        &self,
        cache: &LstmStepCache,
        dh: &DVector<f64>,
        dc_next: &DVector<f64>,
        grads: &mut LstmParams,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.units();
        let mut dpre = DVector::zeros(4 * n);
        let mut dc_prev = DVector::zeros(n);
        for k in 0..n {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            dpre[k] = dc * g * i * (1.0 - i);
            dpre[n + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dpre[2 * n + k] = dc * i * (1.0 - g * g);
            dpre[3 * n + k] = d_o * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        grads.w_in.ger(1.0, &dpre, &cache.input, 1.0);
        grads.w_rec.ger(1.0, &dpre, &cache.h_prev, 1.0);
        grads.bias += &dpre;
        let d_input = self.w_in.tr_mul(&dpre);
        let dh_prev = self.w_rec.tr_mul(&dpre);
        (d_input, dh_prev, dc_prev)
    }
}

/// One LSTM step: logistic gates, tanh candidate and output squashing.
/// Returns the new hidden vector and the full new state.
pub fn lstm_step(
    params: &LstmParams,
    input: &DVector<f64>,
    state: &LstmState,
) -> Result<(DVector<f64>, LstmState)> {
    let n = params.units();
    if params.w_in.nrows() != 4 * n || params.bias.len() != 4 * n || params.w_rec.nrows() != 4 * n {
        return Err(Error::Shape(format!(
            "lstm parameters inconsistent with {n} units"
        )));
    }
    if input.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "lstm input has length {}, expected {}",
            input.len(),
            params.input_dim()
        )));
    }
    if state.h.len() != n || state.c.len() != n {
        return Err(Error::Shape(format!("lstm state must have {n} units")));
    }
    let cache = params.forward(input.clone(), state);
    let h = cache.h.clone();
    Ok((
        h.clone(),
        LstmState {
            h,
            c: cache.c,
        },
    ))
}
