use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::{apply_sgd, FreezeMask, HiddenCarry, RnnStack, StackGrads, TrainConfig, UnrolledTape};

/// Online learner with sliding-window truncated BPTT.
///
/// Each call to [`observe`](Self::observe) unrolls the stack over the last
/// `w` inputs, starting from the detached hidden state recorded when the
/// oldest of them was the newest step minus one, and returns the prediction
/// for the newest step. [`learn`](Self::learn) then supplies that step's
/// label and performs one SGD update on the summed window loss.
#[derive(Clone, Debug)]
pub struct TbpttLearner {
    stack: RnnStack,
    window: usize,
    learning_rate: f64,
    clip: Option<f64>,
    carry: HiddenCarry,
    freeze: FreezeMask,
    mains: VecDeque<Vec<f64>>,
    sides: VecDeque<Vec<f64>>,
    targets: VecDeque<Option<usize>>,
    hiddens: VecDeque<Vec<Vec<f64>>>,
    entering: Vec<Vec<f64>>,
    tape: UnrolledTape,
    grads: StackGrads,
    probs: Vec<f64>,
}

impl TbpttLearner {
    pub fn new(stack: RnnStack, config: &TrainConfig) -> Self {
        assert!(config.bptt_window >= 1, "BPTT window must be at least 1");
        let tape = UnrolledTape::new(&stack);
        let grads = StackGrads::zeros_like(&stack);
        let n_layers = stack.layers.len();
        TbpttLearner {
            window: config.bptt_window,
            learning_rate: config.learning_rate,
            clip: config.gradient_clip,
            carry: config.carry,
            freeze: FreezeMask::none(n_layers),
            mains: VecDeque::new(),
            sides: VecDeque::new(),
            targets: VecDeque::new(),
            hiddens: VecDeque::new(),
            entering: stack.zero_state(),
            probs: vec![0.0; stack.outputs()],
            tape,
            grads,
            stack,
        }
    }

    pub fn stack(&self) -> &RnnStack {
        &self.stack
    }

    pub fn into_stack(self) -> RnnStack {
        self.stack
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn set_freeze(&mut self, freeze: FreezeMask) {
        assert_eq!(freeze.layers.len(), self.stack.layers.len());
        self.freeze = freeze;
    }

    pub fn freeze(&self) -> &FreezeMask {
        &self.freeze
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn set_window(&mut self, window: usize) {
        assert!(window >= 1);
        while self.mains.len() > window {
            self.evict();
        }
        self.window = window;
    }

    /// Hidden state of every layer after the newest observed step.
    pub fn hidden(&self) -> Vec<Vec<f64>> {
        match self.hiddens.back() {
            Some(h) => h.clone(),
            None => self.entering.clone(),
        }
    }

    /// Hidden state of `layer` after the newest observed step.
    pub fn layer_hidden(&self, layer: usize) -> &[f64] {
        match self.hiddens.back() {
            Some(h) => &h[layer],
            None => &self.entering[layer],
        }
    }

    /// Forgets the window and restarts from a zero hidden state.
    pub fn reset_state(&mut self) {
        self.mains.clear();
        self.sides.clear();
        self.targets.clear();
        self.hiddens.clear();
        for h in self.entering.iter_mut() {
            h.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn evict(&mut self) {
        self.mains.pop_front();
        self.sides.pop_front();
        self.targets.pop_front();
        if let Some(h) = self.hiddens.pop_front() {
            if self.carry == HiddenCarry::Aligned {
                self.entering = h;
            }
        }
    }

    /// Feeds one input and returns the output distribution for it (softmax
    /// probabilities, or the sigmoid probability).
    pub fn observe(&mut self, main: &[f64], side: &[f64]) -> &[f64] {
        if self.carry == HiddenCarry::Previous {
            if let Some(last) = self.hiddens.back() {
                for (dst, src) in self.entering.iter_mut().zip(last) {
                    dst.copy_from_slice(src);
                }
            }
        }
        let mut recycled = None;
        if self.mains.len() == self.window {
            let m = self.mains.pop_front();
            let s = self.sides.pop_front();
            self.targets.pop_front();
            if let Some(h) = self.hiddens.pop_front() {
                let spare = match self.carry {
                    HiddenCarry::Aligned => core::mem::replace(&mut self.entering, h),
                    HiddenCarry::Previous => h,
                };
                recycled = Some((m, s, spare));
            }
        }
        let (mut m, mut s, mut h) = match recycled {
            Some((Some(m), Some(s), h)) => (m, s, h),
            _ => (Vec::new(), Vec::new(), self.stack.zero_state()),
        };
        m.clear();
        m.extend_from_slice(main);
        s.clear();
        s.extend_from_slice(side);
        self.mains.push_back(m);
        self.sides.push_back(s);
        self.targets.push_back(None);

        self.tape.reset(&self.entering);
        for (m, s) in self.mains.iter().zip(&self.sides) {
            self.stack.push_step(&mut self.tape, m, s);
        }
        let last = self.tape.len() - 1;
        for (l, dst) in h.iter_mut().enumerate() {
            dst.copy_from_slice(self.tape.hidden(l, last));
        }
        self.hiddens.push_back(h);
        let logits = self.tape.logits(last);
        self.stack.output_probs(logits, &mut self.probs);
        &self.probs
    }

    /// Labels the newest step and updates the parameters. Returns the summed
    /// window loss before the update.
    pub fn learn(&mut self, target: Option<usize>) -> f64 {
        if let Some(t) = self.targets.back_mut() {
            *t = target;
        }
        self.grads.zero();
        let targets = self.targets.make_contiguous();
        let loss = self.stack.backward(&self.tape, targets, &mut self.grads);
        apply_sgd(
            &mut self.stack,
            &mut self.grads,
            self.learning_rate,
            self.clip,
            &self.freeze,
        );
        loss
    }
}
