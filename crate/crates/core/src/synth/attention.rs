use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Largest exponent argument admitted by the window and mixture transforms.
pub(crate) const EXP_CLAMP: f64 = 50.0;

/// `exp(min(x, 50))` together with the derivative factor (0 when clamped).
pub(crate) fn clamped_exp(x: f64) -> (f64, f64) {
    if x > EXP_CLAMP {
        (EXP_CLAMP.exp(), 0.0)
    } else {
        let v = x.exp();
        (v, v)
    }
}

/// Affine map from the first layer's hidden vector to 3K window parameters,
/// laid out as [alpha_hat(K), beta_hat(K), kappa_hat(K)].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub kappa: DVector<f64>,
    pub phi: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub h1: DVector<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub kappa: DVector<f64>,
    /// Derivative factors of the three clamped exponentials.
    pub d_alpha: DVector<f64>,
    pub d_beta: DVector<f64>,
    pub d_kappa_inc: DVector<f64>,
    /// exp(-beta_k (kappa_k - u)^2), K×U.
    pub kernel: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub window: DVector<f64>,
}

impl AttentionParams {
    pub fn zeros(units: usize, components: usize) -> Self {
        Self {
            weight: DMatrix::zeros(3 * components, units),
            bias: DVector::zeros(3 * components),
        }
    }

    /// Small random weights; biases start the window at unit weight and width
    /// and advance it by `initial_advance` positions per step.
    pub fn random<R: Rng>(units: usize, components: usize, initial_advance: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(units, components);
        let bound = 0.1 / (units as f64).sqrt();
        p.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        p.bias
            .rows_mut(2 * components, components)
            .fill(initial_advance.ln());
        p
    }

    pub fn components(&self) -> usize {
        self.bias.len() / 3
    }

    pub(crate) fn forward(
        &self,
        h1: &DVector<f64>,
        kappa_prev: &DVector<f64>,
        charseq: &DMatrix<f64>,
    ) -> AttentionCache {
        let k = self.components();
        let mut raw = self.bias.clone();
        raw.gemv(1.0, &self.weight, h1, 1.0);
        let mut alpha = DVector::zeros(k);
        let mut beta = DVector::zeros(k);
        let mut kappa = DVector::zeros(k);
        let mut d_alpha = DVector::zeros(k);
        let mut d_beta = DVector::zeros(k);
        let mut d_kappa_inc = DVector::zeros(k);
        for j in 0..k {
            (alpha[j], d_alpha[j]) = clamped_exp(raw[j]);
            (beta[j], d_beta[j]) = clamped_exp(raw[k + j]);
            let (inc, d_inc) = clamped_exp(raw[2 * k + j]);
            kappa[j] = kappa_prev[j] + inc;
            d_kappa_inc[j] = d_inc;
        }
        let kernel = window_kernel(&beta, &kappa, charseq.nrows());
        let phi = kernel.tr_mul(&alpha);
        let window = charseq.tr_mul(&phi);
        AttentionCache {
            h1: h1.clone(),
            alpha,
            beta,
            kappa,
            d_alpha,
            d_beta,
            d_kappa_inc,
            kernel,
            phi,
            window,
        }
    }

    /// Backpropagates a window gradient. `dkappa_next` is the gradient reaching
    /// this step's kappa from later steps; on return it holds the gradient for
    /// the previous step's kappa. Returns d h1.
    pub(crate) fn backward(
        &self,
        cache: &AttentionCache,
        d_window: &DVector<f64>,
        charseq: &DMatrix<f64>,
        dkappa_next: &mut DVector<f64>,
        grads: &mut AttentionParams,
    ) -> DVector<f64> {
        let k = self.components();
        let u_len = charseq.nrows();
        let dphi = charseq * d_window;
        let mut draw = DVector::zeros(3 * k);
        for j in 0..k {
            let (a, b, kap) = (cache.alpha[j], cache.beta[j], cache.kappa[j]);
            let mut da = 0.0;
            let mut db = 0.0;
            let mut dk = 0.0;
            for u in 0..u_len {
                let e = cache.kernel[(j, u)];
                let diff = kap - u as f64;
                da += dphi[u] * e;
                db -= dphi[u] * a * e * diff * diff;
                dk -= dphi[u] * a * e * 2.0 * b * diff;
            }
            let dkappa = dk + dkappa_next[j];
            draw[j] = da * cache.d_alpha[j];
            draw[k + j] = db * cache.d_beta[j];
            draw[2 * k + j] = dkappa * cache.d_kappa_inc[j];
            dkappa_next[j] = dkappa;
        }
        grads.weight.ger(1.0, &draw, &cache.h1, 1.0);
        grads.bias += &draw;
        self.weight.tr_mul(&draw)
    }
}

fn window_kernel(beta: &DVector<f64>, kappa: &DVector<f64>, u_len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(beta.len(), u_len, |j, u| {
        let diff = kappa[j] - u as f64;
        (-beta[j] * diff * diff).exp()
    })
}

/// phi(u) = sum_k alpha_k exp(-beta_k (kappa_k - u)^2) for u in 0..U.
pub fn window_weights(
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    kappa: &DVector<f64>,
    u_len: usize,
) -> DVector<f64> {
    window_kernel(beta, kappa, u_len).tr_mul(alpha)
}

/// One attention update from the first layer's output. `charseq` is the U×A
/// one-hot character matrix. Returns the window vector (length A).
pub fn attention_step(
    params: &AttentionParams,
    h1: &DVector<f64>,
    kappa_prev: &DVector<f64>,
    charseq: &DMatrix<f64>,
) -> (DVector<f64>, AttentionState) {
    let cache = params.forward(h1, kappa_prev, charseq);
    (
        cache.window,
        AttentionState {
            kappa: cache.kappa,
            phi: cache.phi,
        },
    )
}
