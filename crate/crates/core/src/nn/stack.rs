use alloc::vec;
use alloc::vec::Vec;

use super::cell::{sigmoid, sigmoid_bce, softmax_into, softmax_xent_into};
use super::{Activation, Matrix, OutputHead, RnnLayerParams};
use crate::rng::Rng;
use crate::{Error, Result};

/// How the head's logits become a prediction and a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputKind {
    /// K-way softmax with cross-entropy; targets are class indices.
    #[default]
    Softmax,
    /// Single logit with sigmoid and binary cross-entropy; targets are 0 or 1.
    Sigmoid,
}

/// Which detached hidden state a sliding BPTT window starts from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HiddenCarry {
    /// The final hidden state of the previous window, `h_{t−1}`. The window
    /// inputs are then replayed on top of it.
    Previous,
    /// The hidden state just before the window's first input, `h_{t−w}`, so
    /// the unrolled states coincide with the online ones.
    #[default]
    Aligned,
}

impl HiddenCarry {
    pub fn name(self) -> &'static str {
        match self {
            HiddenCarry::Previous => "previous",
            HiddenCarry::Aligned => "aligned",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "previous" => Some(HiddenCarry::Previous),
            "aligned" => Some(HiddenCarry::Aligned),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Truncated BPTT window `w`.
    pub bptt_window: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Global-norm clipping threshold.
    pub gradient_clip: Option<f64>,
    pub carry: HiddenCarry,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            bptt_window: 1,
            init_scale: 0.2,
            seed: 0,
            gradient_clip: Some(5.0),
            carry: HiddenCarry::Aligned,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("{what} must be positive")));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate");
        }
        if self.bptt_window == 0 {
            return bad("bptt_window");
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale");
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return bad("gradient_clip");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SideInput {
    layer: usize,
    dim: usize,
}

/// Stacked recurrent layers with a linear head.
///
/// Every layer reads the hidden state of the layer below (the external input
/// for layer 0). Optionally one layer additionally receives a side input,
/// appended after its regular input.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnStack {
    pub layers: Vec<RnnLayerParams>,
    pub head: OutputHead,
    pub output: OutputKind,
    input_dim: usize,
    side: Option<SideInput>,
}

impl RnnStack {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        output: OutputKind,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        Self::build(input_dim, None, hidden, outputs, activation, output, init_scale, rng)
    }

    /// Like [`RnnStack::new`], with `side_dim` extra inputs on `side_layer`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_side_input(
        input_dim: usize,
        side_layer: usize,
        side_dim: usize,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        output: OutputKind,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(side_layer < hidden.len(), "side input layer out of range");
        let side = SideInput {
            layer: side_layer,
            dim: side_dim,
        };
        Self::build(
            input_dim,
            Some(side),
            hidden,
            outputs,
            activation,
            output,
            init_scale,
            rng,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        input_dim: usize,
        side: Option<SideInput>,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        output: OutputKind,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(!hidden.is_empty(), "at least one layer is required");
        let mut layers = Vec::with_capacity(hidden.len());
        let mut below = input_dim;
        for (l, &h) in hidden.iter().enumerate() {
            let extra = side.filter(|s| s.layer == l).map_or(0, |s| s.dim);
            layers.push(RnnLayerParams::random(below + extra, h, activation, init_scale, rng));
            below = h;
        }
        let head = OutputHead::random(below, outputs, init_scale, rng);
        RnnStack {
            layers,
            head,
            output,
            input_dim,
            side,
        }
    }

    /// Assemble a stack from explicit parameters (used by checkpoint loading).
    pub fn from_parts(
        layers: Vec<RnnLayerParams>,
        head: OutputHead,
        output: OutputKind,
        side: Option<(usize, usize)>,
    ) -> Result<Self> {
        let side = side.map(|(layer, dim)| SideInput { layer, dim });
        if layers.is_empty() {
            return Err(Error::InvalidConfig("stack has no layers".into()));
        }
        let extra = |l: usize| side.filter(|s| s.layer == l).map_or(0, |s| s.dim);
        let input_dim = layers[0]
            .input_dim()
            .checked_sub(extra(0))
            .ok_or(Error::DimensionMismatch {
                expected: extra(0),
                found: layers[0].input_dim(),
            })?;
        for l in 1..layers.len() {
            let expected = layers[l - 1].hidden_dim() + extra(l);
            if layers[l].input_dim() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: layers[l].input_dim(),
                });
            }
        }
        let top = layers[layers.len() - 1].hidden_dim();
        if head.hidden_dim() != top {
            return Err(Error::DimensionMismatch {
                expected: top,
                found: head.hidden_dim(),
            });
        }
        Ok(RnnStack {
            layers,
            head,
            output,
            input_dim,
            side,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `(layer, dim)` of the side input, if any.
    pub fn side_input(&self) -> Option<(usize, usize)> {
        self.side.map(|s| (s.layer, s.dim))
    }

    pub fn side_dim(&self) -> usize {
        self.side.map_or(0, |s| s.dim)
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_dim()).collect()
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn zero_state(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.hidden_dim()]).collect()
    }

    /// Prediction distribution from logits: softmax probabilities, or the
    /// single sigmoid probability.
    pub fn output_probs(&self, logits: &[f64], out: &mut [f64]) {
        match self.output {
            OutputKind::Softmax => softmax_into(logits, out),
            OutputKind::Sigmoid => out[0] = sigmoid(logits[0]),
        }
    }

    /// Appends one forward step to `tape`, continuing from its last hidden
    /// state (or the entering state for the first step).
    pub fn push_step(&self, tape: &mut UnrolledTape, main: &[f64], side: &[f64]) {
        assert_eq!(main.len(), self.input_dim, "input dimension mismatch");
        assert_eq!(side.len(), self.side_dim(), "side input dimension mismatch");
        let step = tape.len;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.hidden_dim();
            let input_start = tape.inputs[l].len();
            if l == 0 {
                tape.inputs[0].extend_from_slice(main);
            } else {
                let b = &tape.hidden[l - 1];
                tape.inputs[l].extend_from_slice(&b[b.len() - self.layers[l - 1].hidden_dim()..]);
            }
            if self.side.is_some_and(|s| s.layer == l) {
                tape.inputs[l].extend_from_slice(side);
            }
            let start = tape.hidden[l].len();
            tape.hidden[l].resize(start + h, 0.0);
            tape.pre[l].resize(start + h, 0.0);
            let (prev, cur) = tape.hidden[l].split_at_mut(start);
            let h_prev: &[f64] = if step == 0 {
                &tape.entering[l]
            } else {
                &prev[start - h..]
            };
            layer.forward_into(&tape.inputs[l][input_start..], h_prev, &mut tape.pre[l][start..], cur);
        }
        let top = self.layers.len() - 1;
        let h = self.layers[top].hidden_dim();
        let k = self.head.outputs();
        let start = tape.logits.len();
        tape.logits.resize(start + k, 0.0);
        let hidden = &tape.hidden[top];
        self.head
            .forward_into(&hidden[hidden.len() - h..], &mut tape.logits[start..]);
        tape.len += 1;
    }

    /// Exact gradients of the summed window loss, accumulated into `grads`.
    /// `targets[s]` is the label for step `s`; `None` contributes no loss.
    pub fn backward(&self, tape: &UnrolledTape, targets: &[Option<usize>], grads: &mut StackGrads) -> f64 {
        assert_eq!(targets.len(), tape.len, "one target slot per tape step");
        let n_layers = self.layers.len();
        let k = self.head.outputs();
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; k];
        let mut carry: Vec<Vec<f64>> = self.zero_state();
        let mut dh: Vec<Vec<f64>> = self.zero_state();
        let mut dpre: Vec<Vec<f64>> = self.zero_state();

        for s in (0..tape.len).rev() {
            for v in dh.iter_mut() {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            let top = n_layers - 1;
            if let Some(target) = targets[s] {
                let logits = tape.logits(s);
                loss += match self.output {
                    OutputKind::Softmax => softmax_xent_into(logits, target, &mut dlogits),
                    OutputKind::Sigmoid => {
                        let (l, g) = sigmoid_bce(logits[0], target != 0);
                        dlogits[0] = g;
                        l
                    }
                };
                let h_top = tape.hidden(top, s);
                grads.head.w_ho.outer_acc(h_top, &dlogits);
                for (b, g) in grads.head.b_o.data_mut().iter_mut().zip(&dlogits) {
                    *b += g;
                }
                self.head.w_ho.matvec_acc(&dlogits, &mut dh[top]);
            }
            for l in (0..n_layers).rev() {
                let layer = &self.layers[l];
                let h_out = tape.hidden(l, s);
                let pre = tape.pre(l, s);
                for j in 0..layer.hidden_dim() {
                    let g = dh[l][j] + carry[l][j];
                    dpre[l][j] = g * layer.activation.derivative(pre[j], h_out[j]);
                }
                let g = &mut grads.layers[l];
                g.w_xh.outer_acc(tape.input(l, s), &dpre[l]);
                let h_prev = if s == 0 {
                    tape.entering(l)
                } else {
                    tape.hidden(l, s - 1)
                };
                g.w_hh.outer_acc(h_prev, &dpre[l]);
                for (b, d) in g.b_h.data_mut().iter_mut().zip(&dpre[l]) {
                    *b += d;
                }
                carry[l].iter_mut().for_each(|x| *x = 0.0);
                layer.w_hh.matvec_acc(&dpre[l], &mut carry[l]);
                if l > 0 {
                    let (below, _) = dh.split_at_mut(l);
                    layer.w_xh.matvec_acc(&dpre[l], &mut below[l - 1]);
                }
            }
        }
        loss
    }

    /// Allocating convenience around [`RnnStack::backward`].
    pub fn bptt_gradients(&self, tape: &UnrolledTape, targets: &[Option<usize>]) -> (f64, StackGrads) {
        let mut grads = StackGrads::zeros_like(self);
        let loss = self.backward(tape, targets, &mut grads);
        (loss, grads)
    }

    /// Summed loss of a window without gradients.
    pub fn window_loss(&self, tape: &UnrolledTape, targets: &[Option<usize>]) -> f64 {
        let mut scratch = vec![0.0; self.outputs()];
        let mut loss = 0.0;
        for (s, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let logits = tape.logits(s);
                loss += match self.output {
                    OutputKind::Softmax => softmax_xent_into(logits, t, &mut scratch),
                    OutputKind::Sigmoid => sigmoid_bce(logits[0], t != 0).0,
                };
            }
        }
        loss
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(|m| m.data().len()).sum()
    }

    fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_xh, &l.w_hh, &l.b_h])
            .chain([&self.head.w_ho, &self.head.b_o])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_xh, &mut l.w_hh, &mut l.b_h])
            .chain([&mut self.head.w_ho, &mut self.head.b_o])
    }

    /// All parameters, layer by layer (`W_xh`, `W_hh`, `b_h`), then the head.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count(), "parameter count mismatch");
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|m| m.is_finite())
    }
}

/// Per-step forward record over a truncated window.
#[derive(Clone, Debug)]
pub struct UnrolledTape {
    entering: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
    input_dims: Vec<usize>,
    hidden_dims: Vec<usize>,
    outputs: usize,
    len: usize,
}

impl UnrolledTape {
    pub fn new(stack: &RnnStack) -> Self {
        let n = stack.layers.len();
        UnrolledTape {
            entering: stack.zero_state(),
            inputs: vec![Vec::new(); n],
            pre: vec![Vec::new(); n],
            hidden: vec![Vec::new(); n],
            logits: Vec::new(),
            input_dims: stack.layers.iter().map(|l| l.input_dim()).collect(),
            hidden_dims: stack.hidden_dims(),
            outputs: stack.outputs(),
            len: 0,
        }
    }

    /// Clears all records and sets the (constant) entering hidden state.
    pub fn reset<S: AsRef<[f64]>>(&mut self, entering: &[S]) {
        for (dst, src) in self.entering.iter_mut().zip(entering) {
            dst.copy_from_slice(src.as_ref());
        }
        for v in self
            .inputs
            .iter_mut()
            .chain(self.pre.iter_mut())
            .chain(self.hidden.iter_mut())
        {
            v.clear();
        }
        self.logits.clear();
        self.len = 0;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entering(&self, layer: usize) -> &[f64] {
        &self.entering[layer]
    }

    pub fn input(&self, layer: usize, step: usize) -> &[f64] {
        let d = self.input_dims[layer];
        &self.inputs[layer][step * d..(step + 1) * d]
    }

    pub fn pre(&self, layer: usize, step: usize) -> &[f64] {
        let h = self.hidden_dims[layer];
        &self.pre[layer][step * h..(step + 1) * h]
    }

    pub fn hidden(&self, layer: usize, step: usize) -> &[f64] {
        let h = self.hidden_dims[layer];
        &self.hidden[layer][step * h..(step + 1) * h]
    }

    pub fn logits(&self, step: usize) -> &[f64] {
        &self.logits[step * self.outputs..(step + 1) * self.outputs]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_h: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackGrads {
    pub layers: Vec<LayerGrads>,
    pub head: OutputHead,
}

impl StackGrads {
    pub fn zeros_like(stack: &RnnStack) -> Self {
        StackGrads {
            layers: stack
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w_xh: Matrix::zeros(l.w_xh.rows(), l.w_xh.cols()),
                    w_hh: Matrix::zeros(l.w_hh.rows(), l.w_hh.cols()),
                    b_h: Matrix::zeros(1, l.hidden_dim()),
                })
                .collect(),
            head: OutputHead::zeros(stack.head.hidden_dim(), stack.head.outputs()),
        }
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_xh, &mut l.w_hh, &mut l.b_h])
            .chain([&mut self.head.w_ho, &mut self.head.b_o])
    }

    fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_xh, &l.w_hh, &l.b_h])
            .chain([&self.head.w_ho, &self.head.b_o])
    }

    pub fn zero(&mut self) {
        self.tensors_mut().for_each(|m| m.fill(0.0));
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.tensors().map(Matrix::norm_sq).sum())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors_mut().for_each(|m| m.scale(alpha));
    }

    /// Same ordering as [`RnnStack::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn apply_freeze(&mut self, freeze: &FreezeMask) {
        for (g, frozen) in self.layers.iter_mut().zip(&freeze.layers) {
            if *frozen {
                g.w_xh.fill(0.0);
                g.w_hh.fill(0.0);
                g.b_h.fill(0.0);
            }
        }
        if freeze.head {
            self.head.w_ho.fill(0.0);
            self.head.b_o.fill(0.0);
        }
    }
}

/// Which tensors keep their values during an update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeMask {
    pub layers: Vec<bool>,
    pub head: bool,
}

impl FreezeMask {
    pub fn none(layers: usize) -> Self {
        FreezeMask {
            layers: vec![false; layers],
            head: false,
        }
    }

    /// Freezes layer `from` and everything above it, including the head.
    pub fn from_layer(layers: usize, from: usize) -> Self {
        FreezeMask {
            layers: (0..layers).map(|l| l >= from).collect(),
            head: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.head && !self.layers.iter().any(|f| *f)
    }
}

/// In-place SGD: frozen gradients are zeroed, the remainder clipped to
/// `clip` in global norm, then `θ ← θ − lr·g`.
pub fn apply_sgd(
    stack: &mut RnnStack,
    grads: &mut StackGrads,
    learning_rate: f64,
    clip: Option<f64>,
    freeze: &FreezeMask,
) {
    if !freeze.is_empty() {
        grads.apply_freeze(freeze);
    }
    if let Some(c) = clip {
        let n = grads.norm();
        if n > c {
            grads.scale(c / n);
        }
    }
    for (p, g) in stack.tensors_mut().zip(grads.tensors()) {
        p.axpy(-learning_rate, g);
    }
}

/// Pure SGD step.
pub fn sgd_step(stack: &RnnStack, grads: &StackGrads, config: &TrainConfig) -> RnnStack {
    let mut out = stack.clone();
    let mut g = grads.clone();
    apply_sgd(
        &mut out,
        &mut g,
        config.learning_rate,
        config.gradient_clip,
        &FreezeMask::none(stack.layers.len()),
    );
    out
}
