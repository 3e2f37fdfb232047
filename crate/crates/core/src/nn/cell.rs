use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(pre),
            Activation::Relu => pre.max(0.0),
        }
    }

    /// dφ/dpre expressed through the pre-activation and the output.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnLayerParams {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_h: Matrix,
    pub activation: Activation,
}

impl RnnLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize, activation: Activation) -> Self {
        assert!(hidden >= 1, "a layer needs at least one hidden unit");
        RnnLayerParams {
            w_xh: Matrix::zeros(input_dim, hidden),
            w_hh: Matrix::zeros(hidden, hidden),
            b_h: Matrix::zeros(1, hidden),
            activation,
        }
    }

    /// Weights uniform in `[-scale, scale)`, zero bias.
    pub fn random(input_dim: usize, hidden: usize, activation: Activation, scale: f64, rng: &mut Rng) -> Self {
        assert!(hidden >= 1, "a layer needs at least one hidden unit");
        RnnLayerParams {
            w_xh: Matrix::uniform(input_dim, hidden, scale, rng),
            w_hh: Matrix::uniform(hidden, hidden, scale, rng),
            b_h: Matrix::zeros(1, hidden),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xh.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.rows()
    }

    /// Writes the pre-activation and the new hidden state.
    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], h_prev: &[f64], pre: &mut [f64], h: &mut [f64]) {
        pre.copy_from_slice(self.b_h.data());
        self.w_xh.vecmat_acc(x, pre);
        self.w_hh.vecmat_acc(h_prev, pre);
        for (o, p) in h.iter_mut().zip(pre.iter()) {
            *o = self.activation.apply(*p);
        }
    }
}

/// One recurrent step. Panics when dimensions disagree.
pub fn cell_forward(params: &RnnLayerParams, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), params.input_dim(), "input dimension mismatch");
    assert_eq!(h_prev.len(), params.hidden_dim(), "hidden dimension mismatch");
    let n = params.hidden_dim();
    let mut pre = vec![0.0; n];
    let mut h = vec![0.0; n];
    params.forward_into(x, h_prev, &mut pre, &mut h);
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    pub w_ho: Matrix,
    pub b_o: Matrix,
}

impl OutputHead {
    pub fn zeros(hidden: usize, outputs: usize) -> Self {
        OutputHead {
            w_ho: Matrix::zeros(hidden, outputs),
            b_o: Matrix::zeros(1, outputs),
        }
    }

    pub fn random(hidden: usize, outputs: usize, scale: f64, rng: &mut Rng) -> Self {
        OutputHead {
            w_ho: Matrix::uniform(hidden, outputs, scale, rng),
            b_o: Matrix::zeros(1, outputs),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_ho.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w_ho.cols()
    }

    #[inline]
    pub(crate) fn forward_into(&self, h: &[f64], logits: &mut [f64]) {
        logits.copy_from_slice(self.b_o.data());
        self.w_ho.vecmat_acc(h, logits);
    }
}

/// Linear read-out `h · W_ho + b_o`.
pub fn head_forward(head: &OutputHead, h: &[f64]) -> Vec<f64> {
    assert_eq!(h.len(), head.hidden_dim(), "hidden dimension mismatch");
    let mut logits = vec![0.0; head.outputs()];
    head.forward_into(h, &mut logits);
    logits
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = libm::exp(z - max);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// `softmax(logits) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; logits.len()];
    let loss = softmax_xent_into(logits, target, &mut grad);
    (loss, grad)
}

pub(crate) fn softmax_xent_into(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    assert!(target < logits.len(), "target index out of range");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    for (g, z) in grad.iter_mut().zip(logits) {
        *g = libm::exp(z - max - log_total);
    }
    grad[target] -= 1.0;
    log_total - (logits[target] - max)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, with gradient
/// `sigmoid(logit) − label`.
pub fn sigmoid_bce(logit: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    // log(1 + e^z) computed without overflow.
    let softplus = logit.max(0.0) + libm::log1p(libm::exp(-logit.abs()));
    (softplus - y * logit, sigmoid(logit) - y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_is_zero() {
        let p = RnnLayerParams::zeros(7, 5, Activation::Tanh);
        let h = cell_forward(&p, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.3; 5]);
        assert_eq!(h, vec![0.0; 5]);
    }

    #[test]
    fn scalar_tanh_cell() {
        let mut p = RnnLayerParams::zeros(1, 1, Activation::Tanh);
        p.w_xh.set(0, 0, 1.0);
        let h = cell_forward(&p, &[0.5], &[0.0]);
        assert!((h[0] - 0.46211715726000974).abs() < 1e-11);
    }

    #[test]
    fn relu_clamps_negative() {
        let mut p = RnnLayerParams::zeros(1, 2, Activation::Relu);
        p.w_xh.set(0, 0, -1.0);
        p.w_xh.set(0, 1, 2.0);
        assert_eq!(cell_forward(&p, &[1.0], &[0.0, 0.0]), vec![0.0, 2.0]);
    }

    #[test]
    #[should_panic]
    fn cell_rejects_bad_dims() {
        let p = RnnLayerParams::zeros(3, 2, Activation::Tanh);
        cell_forward(&p, &[1.0, 0.0], &[0.0, 0.0]);
    }

    #[test]
    fn zero_head_gives_uniform() {
        let head = OutputHead::zeros(5, 7);
        let logits = head_forward(&head, &[0.1, -0.2, 0.3, 0.0, 0.9]);
        assert_eq!(logits, vec![0.0; 7]);
        for p in softmax(&logits) {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn head_on_one_hot_picks_row() {
        let mut head = OutputHead::zeros(3, 3);
        head.w_ho = Matrix::identity(3);
        head.b_o = Matrix::from_vec(1, 3, vec![0.5, 0.0, -0.5]);
        assert_eq!(head_forward(&head, &[0.0, 1.0, 0.0]), vec![0.5, 1.0, -0.5]);
    }

    #[test]
    fn xent_cases() {
        let (loss, g) = softmax_xent(&[0.0; 7], 3);
        assert!((loss - 1.945910149055313).abs() < 1e-9);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let mut logits = [0.0; 7];
        logits[2] = 30.0;
        assert!(softmax_xent(&logits, 2).0 < 1e-9);
    }

    #[test]
    fn bce_cases() {
        let (l, g) = sigmoid_bce(0.0, true);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((g + 0.5).abs() < 1e-15);
        assert!(sigmoid_bce(800.0, true).0 < 1e-300);
        assert!(sigmoid_bce(-800.0, true).0.is_finite());
    }
}
