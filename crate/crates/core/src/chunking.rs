//! Offline chunk discovery: replay, boundary detection and the context
//! tagger.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::environment::{Emission, Token};
use crate::nn::{Activation, OutputKind, RnnLayerParams, RnnStack, TbpttLearner, TrainConfig};
use crate::rng;
use crate::{Error, Result};

/// Norm below which a hidden state is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;
pub const DEFAULT_BUFFER_CAPACITY: usize = 20_000;
pub const TAGGER_UNITS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineDistance {
    pub value: f64,
    /// Set when either vector was (numerically) zero; `value` is then 1.
    pub degenerate: bool,
}

/// `1 − u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> CosineDistance {
    assert_eq!(u.len(), v.len(), "vectors differ in length");
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (libm::sqrt(uu), libm::sqrt(vv));
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return CosineDistance {
            value: 1.0,
            degenerate: true,
        };
    }
    let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    CosineDistance {
        value: 1.0 - cos,
        degenerate: false,
    }
}

/// Binary sequence aligned with a token sequence; `true` marks a detected
/// community entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mask {
    pub bits: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Mask {
    pub fn zeros(len: usize) -> Self {
        Mask { bits: vec![false; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when every bit has the same value.
    pub fn is_degenerate(&self) -> bool {
        let ones = self.ones();
        ones == 0 || ones == self.len()
    }

    /// Scores `self` as a prediction of `truth`. Empty denominators give 0.
    pub fn score(&self, truth: &[bool]) -> MaskScore {
        assert_eq!(self.len(), truth.len(), "mask and reference differ in length");
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (p, t) in self.bits.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let n = self.len();
        MaskScore {
            precision,
            recall,
            f1,
            accuracy: ratio(n - fp - fn_, n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakDetection {
    pub mask: Mask,
    /// Backward distance `d(h_t, h_{t−1})` for `t ≥ 1`; index 0 is 0.
    pub distances: Vec<f64>,
    /// Steps excluded because a neighbouring hidden state was degenerate.
    pub degenerate_steps: usize,
}

/// Marks step `t` when `d(h_t, h_{t−1}) > d(h_t, h_{t+1})`. The first and
/// last steps are never marked.
pub fn detect_peaks<H: AsRef<[f64]>>(hidden: &[H]) -> Result<PeakDetection> {
    let n = hidden.len();
    if n < 3 {
        return Err(Error::TooFewStates { given: n });
    }
    let mut back = Vec::with_capacity(n);
    back.push(CosineDistance {
        value: 0.0,
        degenerate: false,
    });
    for t in 1..n {
        back.push(cosine_distance(hidden[t].as_ref(), hidden[t - 1].as_ref()));
    }
    let mut mask = Mask::zeros(n);
    let mut degenerate_steps = 0;
    for t in 1..n - 1 {
        let (b, f) = (back[t], back[t + 1]);
        if b.degenerate || f.degenerate {
            degenerate_steps += 1;
            continue;
        }
        mask.bits[t] = b.value > f.value;
    }
    Ok(PeakDetection {
        mask,
        distances: back.iter().map(|d| d.value).collect(),
        degenerate_steps,
    })
}

/// FIFO store of wake-phase experience.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Emission>,
    capacity: usize,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, dropping the oldest entry when full.
    pub fn push(&mut self, e: Emission) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn tokens(&self) -> Vec<Token> {
        self.items.iter().map(|e| e.token).collect()
    }

    /// Ground-truth entry flags, for scoring only.
    pub fn entry_mask(&self) -> Vec<bool> {
        self.items.iter().map(|e| e.entry).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Emission> {
        self.items.iter()
    }
}

/// Hidden states of one layer driven by `tokens` from a zero state. Inputs
/// wider than seven (e.g. a token ⊕ tag layer) get zeros beyond the one-hot.
pub fn replay_layer(layer: &RnnLayerParams, tokens: &[Token]) -> Vec<Vec<f64>> {
    let n = layer.hidden_dim();
    let mut x = vec![0.0; layer.input_dim()];
    let mut h = vec![0.0; n];
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        x.iter_mut().for_each(|v| *v = 0.0);
        x[t.index()] = 1.0;
        h = crate::nn::cell_forward(layer, &x, &h);
        out.push(h.clone());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaggerConfig {
    pub train: TrainConfig,
    pub threshold: f64,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub holdout_fraction: f64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            train: TrainConfig {
                learning_rate: 0.1,
                bptt_window: 2,
                ..TrainConfig::default()
            },
            threshold: 0.5,
            max_epochs: 50,
            patience: 3,
            holdout_fraction: 0.2,
        }
    }
}

impl TaggerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        TaggerConfig {
            train: TrainConfig { seed, ..self.train },
            ..self
        }
    }
}

/// Small recurrent boundary classifier `g`: one-hot token in, firing
/// probability out.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTagger {
    pub net: RnnStack,
    pub threshold: f64,
}

impl ContextTagger {
    pub fn new(config: &TaggerConfig) -> Self {
        let mut init = rng::stream(config.train.seed, rng::STREAM_TAGGER);
        let net = RnnStack::new(
            Token::COUNT,
            &[TAGGER_UNITS],
            1,
            Activation::Tanh,
            OutputKind::Sigmoid,
            config.train.init_scale,
            &mut init,
        );
        ContextTagger {
            net,
            threshold: config.threshold,
        }
    }

    pub fn from_net(net: RnnStack, threshold: f64) -> Result<Self> {
        if net.output != OutputKind::Sigmoid || net.outputs() != 1 {
            return Err(Error::InvalidConfig("tagger needs a single sigmoid output".into()));
        }
        if net.input_dim() != Token::COUNT || net.side_dim() != 0 {
            return Err(Error::DimensionMismatch {
                expected: Token::COUNT,
                found: net.input_dim(),
            });
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig("tagger threshold must lie in (0, 1)".into()));
        }
        Ok(ContextTagger { net, threshold })
    }

    pub fn initial_state(&self) -> TaggerState {
        TaggerState {
            hidden: self.net.zero_state(),
        }
    }

    /// Firing probability for `token`, advancing `state`.
    pub fn probability(&self, state: &mut TaggerState, token: Token) -> f64 {
        let x = token.one_hot();
        let mut input: &[f64] = &x;
        let mut next = Vec::with_capacity(state.hidden.len());
        for (layer, h) in self.net.layers.iter().zip(&state.hidden) {
            next.push(crate::nn::cell_forward(layer, input, h));
            input = next.last().expect("just pushed");
        }
        let logit = crate::nn::head_forward(&self.net.head, input)[0];
        state.hidden = next;
        crate::nn::sigmoid(logit)
    }

    pub fn fires(&self, state: &mut TaggerState, token: Token) -> bool {
        self.probability(state, token) > self.threshold
    }

    /// Bits for a whole sequence, starting from a zero state.
    pub fn predict_mask(&self, tokens: &[Token]) -> Mask {
        let mut state = self.initial_state();
        Mask {
            bits: tokens.iter().map(|t| self.fires(&mut state, *t)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerState {
    hidden: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerReport {
    pub epochs: usize,
    pub heldout_accuracy: f64,
    /// The training mask had a single value throughout.
    pub degenerate_mask: bool,
}

/// Supervised training of a fresh tagger on `(tokens, mask)`.
///
/// The tail `holdout_fraction` of the sequence is held out. Training passes
/// over the head part repeat until held-out bit accuracy has not improved
/// for `patience` passes; the best-scoring parameters are returned.
pub fn train_tagger(tokens: &[Token], mask: &Mask, config: &TaggerConfig) -> Result<(ContextTagger, TaggerReport)> {
    if tokens.len() != mask.len() {
        return Err(Error::LengthMismatch {
            expected: tokens.len(),
            found: mask.len(),
        });
    }
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    config.train.validate()?;
    let split = ((tokens.len() as f64) * (1.0 - config.holdout_fraction)) as usize;
    let split = split.clamp(1, tokens.len());
    let (train_tokens, held_tokens) = tokens.split_at(split);
    let (train_bits, held_bits) = mask.bits.split_at(split);

    let mut tagger = ContextTagger::new(config);
    let mut best = tagger.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut epochs = 0;
    let mut learner = TbpttLearner::new(tagger.net.clone(), &config.train);
    while epochs < config.max_epochs.max(1) {
        learner.reset_state();
        for (t, b) in train_tokens.iter().zip(train_bits) {
            learner.observe(&t.one_hot(), &[]);
            learner.learn(Some(*b as usize));
        }
        epochs += 1;
        tagger.net = learner.stack().clone();
        let acc = if held_tokens.is_empty() {
            tagger.predict_mask(train_tokens).score(train_bits).accuracy
        } else {
            tagger.predict_mask(held_tokens).score(held_bits).accuracy
        };
        if acc > best_acc {
            best_acc = acc;
            best = tagger.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TaggerReport {
            epochs,
            heldout_accuracy: best_acc,
            degenerate_mask: mask.is_degenerate(),
        },
    ))
}

/// The running context tag `c_t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagStream {
    current: Token,
    fires: usize,
    history: Vec<Token>,
}

impl TagStream {
    /// Starts with `c_0`, the first observed token.
    pub fn new(first: Token) -> Self {
        TagStream {
            current: first,
            fires: 0,
            history: Vec::new(),
        }
    }

    pub fn current(&self) -> Token {
        self.current
    }

    pub fn fires(&self) -> usize {
        self.fires
    }

    /// Tags emitted so far, one per step.
    pub fn history(&self) -> &[Token] {
        &self.history
    }

    /// Carries the previous tag, or switches to `token` when `fired`.
    pub fn step(&mut self, token: Token, fired: bool) -> Token {
        if fired {
            self.current = token;
            self.fires += 1;
        }
        self.history.push(self.current);
        self.current
    }
}

/// One online tagging step: runs the tagger on `token` and updates the tag.
pub fn tag_stream_step(tagger: &ContextTagger, state: &mut TaggerState, stream: &mut TagStream, token: Token) -> Token {
    let fired = tagger.fires(state, token);
    stream.step(token, fired)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate, EnvConfig};

    #[test]
    fn cosine_cases() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).value.abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 2.0], &[-1.0, -2.0]).value - 2.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).value - 1.0).abs() < 1e-15);
        let d = cosine_distance(&[0.0, 0.0], &[0.0, 1.0]);
        assert!(d.degenerate);
        assert_eq!(d.value, 1.0);
    }

    #[test]
    fn constant_states_have_no_peaks() {
        let h = vec![vec![0.3, -0.2]; 10];
        let p = detect_peaks(&h).unwrap();
        assert_eq!(p.mask.ones(), 0);
    }

    #[test]
    fn too_few_states() {
        let h = vec![vec![1.0]; 2];
        assert_eq!(detect_peaks(&h), Err(Error::TooFewStates { given: 2 }));
    }

    #[test]
    fn degenerate_steps_are_excluded() {
        let h = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let p = detect_peaks(&h).unwrap();
        assert_eq!(p.degenerate_steps, 2);
        assert!(!p.mask.bits[1] && !p.mask.bits[2]);
    }

    #[test]
    fn mask_scores() {
        let m = Mask {
            bits: vec![true, false, true, false],
        };
        let s = m.score(&[true, true, false, false]);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.f1, 0.5);
        assert_eq!(s.accuracy, 0.5);
        assert!(Mask::zeros(3).is_degenerate());
    }

    #[test]
    fn buffer_is_fifo() {
        let t = generate(&EnvConfig::full(0), 10).unwrap();
        let mut b = ReplayBuffer::new(4);
        for i in 0..10 {
            b.push(crate::environment::Emission {
                token: t.tokens[i],
                position: t.positions[i],
                entry: t.entry_mask[i],
            });
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.tokens(), t.tokens[6..].to_vec());
    }

    #[test]
    fn tag_sequence_from_perfect_tagger() {
        let seq = "ABCGDEFGCABG";
        let mut stream = TagStream::new(Token::A);
        let mut prev = None;
        let mut tags = alloc::string::String::new();
        for c in seq.chars() {
            let tok = Token::from_symbol(c).unwrap();
            let fired = prev == Some(Token::G);
            tags.push(stream.step(tok, fired).symbol());
            prev = Some(tok);
        }
        assert_eq!(tags, "AAAADDDDCCCC");
        assert_eq!(stream.fires(), 2);
    }

    #[test]
    fn silent_and_always_firing_streams() {
        let mut s = TagStream::new(Token::E);
        for t in [Token::A, Token::G, Token::B] {
            assert_eq!(s.step(t, false), Token::E);
        }
        let mut s = TagStream::new(Token::E);
        for t in [Token::A, Token::G, Token::B] {
            assert_eq!(s.step(t, true), t);
        }
    }

    #[test]
    fn all_zero_mask_gives_silent_tagger() {
        let t = generate(&EnvConfig::full(5), 2000).unwrap();
        let mask = Mask::zeros(t.len());
        let (tagger, report) = train_tagger(&t.tokens, &mask, &TaggerConfig::default()).unwrap();
        assert!(report.degenerate_mask);
        assert_eq!(tagger.predict_mask(&t.tokens).ones(), 0);
    }

    #[test]
    fn tagger_rejects_misaligned_mask() {
        let t = generate(&EnvConfig::full(5), 20).unwrap();
        let r = train_tagger(&t.tokens, &Mask::zeros(19), &TaggerConfig::default());
        assert!(matches!(r, Err(Error::LengthMismatch { .. })));
    }
}
