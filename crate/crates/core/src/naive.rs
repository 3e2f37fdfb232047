//! The plain recurrent baseline trained online with truncated BPTT.
//!
//! Every step predicts the next token before seeing it, scores the
//! prediction into a sliding window of the last `win` outcomes, and only then
//! trains on it.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::analysis::{per_position_accuracy, PositionAccuracy};
use crate::environment::{
    argmax, oracle_distribution, Emission, EnvConfig, Environment, PositionLabel, Token, Trajectory,
};
use crate::nn::{cell_forward, head_forward, softmax, Activation, OutputKind, RnnStack, TbpttLearner, TrainConfig};
use crate::rng::{self, derive_seed};
use crate::stats::quantile;

/// Sliding evaluation window length.
pub const DEFAULT_WIN: usize = 1000;
/// Trailing predictions used for per-position accuracy.
pub const POSITION_TAIL: usize = 10_000;
/// Default run length in environment steps.
pub const DEFAULT_STEPS: usize = 200_000;
/// Trailing predictions averaged into a run's plateau error.
pub const PLATEAU_TAIL: usize = 10_000;
/// SGD step size used by the plain-model experiments.
pub const NAIVE_LEARNING_RATE: f64 = 0.005;

/// Ring buffer of correctness bits; the windowed error is
/// `1 − (correct in window) / win` once `win` predictions exist.
#[derive(Clone, Debug)]
pub struct OnlineEvalState {
    win: usize,
    ring: VecDeque<bool>,
    correct: usize,
}

impl OnlineEvalState {
    pub fn new(win: usize) -> Self {
        assert!(win >= 1, "evaluation window must be positive");
        OnlineEvalState {
            win,
            ring: VecDeque::with_capacity(win),
            correct: 0,
        }
    }

    pub fn win(&self) -> usize {
        self.win
    }

    /// Records one outcome; returns the windowed error once warmed up.
    pub fn push(&mut self, correct: bool) -> Option<f64> {
        if self.ring.len() == self.win && self.ring.pop_front() == Some(true) {
            self.correct -= 1;
        }
        self.ring.push_back(correct);
        if correct {
            self.correct += 1;
        }
        self.windowed_error()
    }

    pub fn windowed_error(&self) -> Option<f64> {
        (self.ring.len() == self.win).then(|| 1.0 - self.correct as f64 / self.win as f64)
    }
}

/// Per-step record of one online run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    /// Windowed error after each prediction, starting at `first_error_step`.
    pub windowed_error: Vec<f64>,
    /// Index into `predictions` of the first windowed error value.
    pub first_error_step: usize,
    pub predictions: Vec<Token>,
    pub targets: Vec<Token>,
    pub target_positions: Vec<PositionLabel>,
}

impl RunMetrics {
    pub fn steps(&self) -> usize {
        self.predictions.len()
    }

    pub fn record(&mut self, predicted: Token, target: Emission, error: Option<f64>) {
        if let Some(e) = error {
            if self.windowed_error.is_empty() {
                self.first_error_step = self.predictions.len();
            }
            self.windowed_error.push(e);
        }
        self.predictions.push(predicted);
        self.targets.push(target.token);
        self.target_positions.push(target.position);
    }

    /// Appends a later run that continued the same evaluation window.
    pub fn extend(&mut self, other: &RunMetrics) {
        if self.windowed_error.is_empty() {
            self.first_error_step = self.predictions.len() + other.first_error_step;
        }
        self.windowed_error.extend_from_slice(&other.windowed_error);
        self.predictions.extend_from_slice(&other.predictions);
        self.targets.extend_from_slice(&other.targets);
        self.target_positions.extend_from_slice(&other.target_positions);
    }

    pub fn final_error(&self) -> Option<f64> {
        self.windowed_error.last().copied()
    }

    /// Mean of the last `tail` windowed errors.
    pub fn plateau_error(&self, tail: usize) -> Option<f64> {
        let n = self.windowed_error.len();
        if n == 0 {
            return None;
        }
        Some(crate::stats::mean(
            &self.windowed_error[n.saturating_sub(tail.max(1))..],
        ))
    }

    /// Windowed error after prediction `step`, if warmed up by then.
    pub fn error_at(&self, step: usize) -> Option<f64> {
        step.checked_sub(self.first_error_step)
            .and_then(|i| self.windowed_error.get(i).copied())
    }

    /// `(step, windowed_error)` pairs.
    pub fn error_series(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.windowed_error
            .iter()
            .enumerate()
            .map(|(i, e)| (self.first_error_step + i, *e))
    }

    /// Mean windowed error over predictions `[0, steps)` that have a value.
    pub fn auc(&self, steps: usize) -> f64 {
        let vals: Vec<f64> = self
            .error_series()
            .take_while(|(s, _)| *s < steps)
            .map(|(_, e)| e)
            .collect();
        crate::stats::mean(&vals)
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self
            .predictions
            .iter()
            .zip(&self.targets)
            .filter(|(p, t)| p == t)
            .count();
        hits as f64 / self.predictions.len().max(1) as f64
    }

    /// Per-position accuracy over the trailing `tail` predictions.
    pub fn per_position(&self, tail: usize) -> Vec<PositionAccuracy> {
        let start = self.predictions.len().saturating_sub(tail);
        per_position_accuracy(
            &self.predictions[start..],
            &self.targets[start..],
            &self.target_positions[start..],
        )
    }
}

/// An emission source with one pending (already observed) token.
///
/// Construction draws the first token; afterwards every
/// [`advance`](Self::advance) consumes exactly one more.
#[derive(Clone, Debug)]
pub struct TokenStream<I> {
    source: I,
    current: Option<Emission>,
    consumed: usize,
}

impl<I: Iterator<Item = Emission>> TokenStream<I> {
    pub fn new(mut source: I) -> Self {
        let current = source.next();
        TokenStream {
            source,
            current,
            consumed: 0,
        }
    }

    pub fn current(&self) -> Option<Emission> {
        self.current
    }

    pub fn advance(&mut self) -> Option<Emission> {
        let next = self.source.next()?;
        self.consumed += 1;
        self.current = Some(next);
        Some(next)
    }

    /// Tokens drawn since construction, not counting the first.
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn source(&self) -> &I {
        &self.source
    }
}

impl TokenStream<Environment> {
    pub fn from_config(config: &EnvConfig) -> Self {
        Self::new(Environment::new(config.clone()))
    }
}

impl Trajectory {
    pub fn emissions(&self) -> impl Iterator<Item = Emission> + '_ {
        self.tokens
            .iter()
            .zip(&self.positions)
            .zip(&self.entry_mask)
            .map(|((t, p), e)| Emission {
                token: *t,
                position: *p,
                entry: *e,
            })
    }
}

/// Predict-then-train loop shared by every online model.
///
/// `encode` writes the model input for the pending emission into the main
/// and side buffers; it is called exactly once per step.
pub fn run_online<I, F>(
    learner: &mut TbpttLearner,
    stream: &mut TokenStream<I>,
    steps: usize,
    eval: &mut OnlineEvalState,
    mut encode: F,
) -> RunMetrics
where
    I: Iterator<Item = Emission>,
    F: FnMut(Emission, &mut [f64], &mut [f64]),
{
    let mut metrics = RunMetrics::default();
    let mut main = vec![0.0; learner.stack().input_dim()];
    let mut side = vec![0.0; learner.stack().side_dim()];
    for _ in 0..steps {
        let Some(x) = stream.current() else { break };
        main.iter_mut().for_each(|v| *v = 0.0);
        side.iter_mut().for_each(|v| *v = 0.0);
        encode(x, &mut main, &mut side);
        let predicted = argmax(learner.observe(&main, &side));
        let Some(next) = stream.advance() else { break };
        let predicted = Token::from_index(predicted).expect("vocabulary has seven tokens");
        metrics.record(predicted, next, eval.push(predicted == next.token));
        learner.learn(Some(next.token.index()));
    }
    metrics
}

/// Scores an arbitrary predictor with the same windowed protocol, without
/// any training.
pub fn evaluate_predictor<I, P>(
    stream: &mut TokenStream<I>,
    steps: usize,
    eval: &mut OnlineEvalState,
    mut predict: P,
) -> RunMetrics
where
    I: Iterator<Item = Emission>,
    P: FnMut(Emission) -> Token,
{
    let mut metrics = RunMetrics::default();
    for _ in 0..steps {
        let Some(x) = stream.current() else { break };
        let predicted = predict(x);
        let Some(next) = stream.advance() else { break };
        metrics.record(predicted, next, eval.push(predicted == next.token));
    }
    metrics
}

/// Predictor that decodes the generator state from the last seven tokens and
/// picks the most likely next token. Before seven tokens are seen it predicts
/// the hub.
pub fn oracle_predictor(config: &EnvConfig) -> impl FnMut(Emission) -> Token + '_ {
    let mut history: VecDeque<Token> = VecDeque::with_capacity(8);
    move |e: Emission| {
        if history.len() == 7 {
            history.pop_front();
        }
        history.push_back(e.token);
        let window: Vec<Token> = history.iter().copied().collect();
        match oracle_distribution(&window, config) {
            Ok(p) => Token::from_index(argmax(&p)).expect("valid index"),
            Err(_) => Token::G,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub token: Token,
    pub probs: [f64; 7],
}

/// One-hot-input recurrent predictor with 1 or 2 stacked layers.
#[derive(Clone, Debug)]
pub struct NaiveModel {
    learner: TbpttLearner,
}

impl NaiveModel {
    pub fn new(neurons: usize, layers: usize, activation: Activation, train: &TrainConfig) -> Self {
        let mut init = rng::stream(train.seed, rng::STREAM_INIT);
        let hidden = vec![neurons; layers];
        let stack = RnnStack::new(
            Token::COUNT,
            &hidden,
            Token::COUNT,
            activation,
            OutputKind::Softmax,
            train.init_scale,
            &mut init,
        );
        Self::from_stack(stack, train)
    }

    pub fn from_stack(stack: RnnStack, train: &TrainConfig) -> Self {
        assert_eq!(stack.input_dim(), Token::COUNT, "naive models take one-hot tokens");
        NaiveModel {
            learner: TbpttLearner::new(stack, train),
        }
    }

    pub fn stack(&self) -> &RnnStack {
        self.learner.stack()
    }

    pub fn learner_mut(&mut self) -> &mut TbpttLearner {
        &mut self.learner
    }

    /// Carried hidden states, one per layer.
    pub fn hidden(&self) -> Vec<Vec<f64>> {
        self.learner.hidden()
    }

    /// Next-token prediction from the carried hidden state; returns the
    /// prediction and the hidden state it would move to. The model itself is
    /// not modified.
    pub fn predict_next(&self, token: Token) -> (Prediction, Vec<Vec<f64>>) {
        let stack = self.stack();
        let prev = self.hidden();
        let mut next = Vec::with_capacity(prev.len());
        let mut input: Vec<f64> = token.one_hot().to_vec();
        for (layer, h) in stack.layers.iter().zip(&prev) {
            let out = cell_forward(layer, &input, h);
            input = out.clone();
            next.push(out);
        }
        let p = softmax(&head_forward(&stack.head, &input));
        let probs: [f64; 7] = core::array::from_fn(|i| p[i]);
        let token = Token::from_index(argmax(&probs)).expect("valid index");
        (Prediction { token, probs }, next)
    }
}

pub fn encode_token(e: Emission, main: &mut [f64], _side: &mut [f64]) {
    main[e.token.index()] = 1.0;
}

/// Online training of a naive model for up to `steps` predictions.
pub fn train_online<I: Iterator<Item = Emission>>(
    model: &mut NaiveModel,
    stream: &mut TokenStream<I>,
    steps: usize,
    eval: &mut OnlineEvalState,
) -> RunMetrics {
    run_online(&mut model.learner, stream, steps, eval, encode_token)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub token: Token,
    pub position: PositionLabel,
    pub hidden: Vec<f64>,
}

/// Layer-1 hidden states over the next `n` tokens, without training.
pub fn hidden_snapshot<I: Iterator<Item = Emission>>(
    model: &mut NaiveModel,
    stream: &mut TokenStream<I>,
    n: usize,
) -> Vec<SnapshotRow> {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let Some(x) = stream.current() else { break };
        model.learner.observe(&x.token.one_hot(), &[]);
        rows.push(SnapshotRow {
            token: x.token,
            position: x.position,
            hidden: model.learner.layer_hidden(0).to_vec(),
        });
        if stream.advance().is_none() {
            break;
        }
    }
    rows
}

/// Everything needed to reproduce one naive run besides its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveRunSpec {
    pub env: EnvConfig,
    pub neurons: usize,
    pub layers: usize,
    pub activation: Activation,
    pub train: TrainConfig,
    pub steps: usize,
    pub win: usize,
}

impl NaiveRunSpec {
    pub fn new(env: EnvConfig, neurons: usize, layers: usize, train: TrainConfig) -> Self {
        NaiveRunSpec {
            env,
            neurons,
            layers,
            activation: Activation::Tanh,
            train,
            steps: DEFAULT_STEPS,
            win: DEFAULT_WIN,
        }
    }

    /// The same run with environment and initialisation reseeded.
    pub fn seeded(&self, seed: u64) -> Self {
        NaiveRunSpec {
            env: self.env.with_seed(seed),
            train: TrainConfig { seed, ..self.train },
            ..self.clone()
        }
    }
}

/// Trains a fresh model on a fresh environment.
pub fn naive_run(spec: &NaiveRunSpec) -> (NaiveModel, RunMetrics) {
    let mut model = NaiveModel::new(spec.neurons, spec.layers, spec.activation, &spec.train);
    let mut stream = TokenStream::from_config(&spec.env);
    let mut eval = OnlineEvalState::new(spec.win);
    let metrics = train_online(&mut model, &mut stream, spec.steps, &mut eval);
    (model, metrics)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepGrid {
    pub neurons: Vec<usize>,
    pub layers: Vec<usize>,
    pub windows: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            neurons: vec![5, 10, 15, 20, 30],
            layers: vec![1, 2],
            windows: vec![1, 3, 5, 7],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SweepCell {
    pub neurons: usize,
    pub layers: usize,
    pub window: usize,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &neurons in &self.neurons {
            for &layers in &self.layers {
                for &window in &self.windows {
                    out.push(SweepCell {
                        neurons,
                        layers,
                        window,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepJob {
    pub cell: SweepCell,
    pub replicate: usize,
    pub seed: u64,
}

/// One job per (cell, replicate). Replicate `r` uses seed `root ⊕ r` in every
/// cell, so cells are compared on the same token streams.
pub fn sweep_jobs(grid: &SweepGrid, replicates: usize, root_seed: u64) -> Vec<SweepJob> {
    let mut jobs = Vec::new();
    for cell in grid.cells() {
        for replicate in 0..replicates {
            jobs.push(SweepJob {
                cell,
                replicate,
                seed: derive_seed(root_seed, replicate as u64),
            });
        }
    }
    jobs
}

pub fn run_job(job: &SweepJob, base: &NaiveRunSpec) -> RunMetrics {
    let mut spec = base.seeded(job.seed);
    spec.neurons = job.cell.neurons;
    spec.layers = job.cell.layers;
    spec.train.bptt_window = job.cell.window;
    naive_run(&spec).1
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: SweepCell,
    /// Prediction index of the first summarised step.
    pub first_step: usize,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// Plateau error of each replicate, in replicate order.
    pub finals: Vec<f64>,
}

impl CellSummary {
    pub fn median_final(&self) -> f64 {
        crate::stats::median(&self.finals)
    }
}

/// Per-step median and interquartile range across the replicates of each
/// cell. `results` may arrive in any order.
pub fn summarize(results: &[(SweepJob, RunMetrics)]) -> Vec<CellSummary> {
    let mut cells: Vec<SweepCell> = results.iter().map(|(j, _)| j.cell).collect();
    cells.sort();
    cells.dedup();
    cells
        .into_iter()
        .map(|cell| {
            let mut runs: Vec<&(SweepJob, RunMetrics)> = results.iter().filter(|(j, _)| j.cell == cell).collect();
            runs.sort_by_key(|(j, _)| j.replicate);
            let len = runs.iter().map(|(_, m)| m.windowed_error.len()).min().unwrap_or(0);
            let first_step = runs.first().map_or(0, |(_, m)| m.first_error_step);
            let mut median = Vec::with_capacity(len);
            let mut q25 = Vec::with_capacity(len);
            let mut q75 = Vec::with_capacity(len);
            let mut column = Vec::with_capacity(runs.len());
            for i in 0..len {
                column.clear();
                column.extend(runs.iter().map(|(_, m)| m.windowed_error[i]));
                median.push(quantile(&column, 0.5));
                q25.push(quantile(&column, 0.25));
                q75.push(quantile(&column, 0.75));
            }
            let finals = runs.iter().filter_map(|(_, m)| m.plateau_error(PLATEAU_TAIL)).collect();
            CellSummary {
                cell,
                first_step,
                median,
                q25,
                q75,
                finals,
            }
        })
        .collect()
}

/// Sequential sweep over every grid cell and replicate.
pub fn ablation_sweep(grid: &SweepGrid, replicates: usize, root_seed: u64, base: &NaiveRunSpec) -> Vec<CellSummary> {
    let results: Vec<(SweepJob, RunMetrics)> = sweep_jobs(grid, replicates, root_seed)
        .into_iter()
        .map(|job| {
            let m = run_job(&job, base);
            (job, m)
        })
        .collect();
    summarize(&results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::generate;

    #[test]
    fn eval_window_identity() {
        let mut eval = OnlineEvalState::new(4);
        let bits = [true, false, true, true, false, false, true];
        let mut out = Vec::new();
        for (i, b) in bits.iter().enumerate() {
            let e = eval.push(*b);
            if i < 3 {
                assert_eq!(e, None);
            } else {
                let window = &bits[i - 3..=i];
                let mean = window.iter().filter(|x| **x).count() as f64 / 4.0;
                assert_eq!(e, Some(1.0 - mean));
                out.push(e.unwrap());
            }
        }
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn zero_head_predicts_lowest_index() {
        let train = TrainConfig::default();
        let mut model = NaiveModel::new(5, 1, Activation::Tanh, &train);
        let mut stack = model.stack().clone();
        stack.head.w_ho.fill(0.0);
        stack.head.b_o.fill(0.0);
        model = NaiveModel::from_stack(stack, &train);
        let (p, hidden) = model.predict_next(Token::D);
        assert_eq!(p.token, Token::A);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for q in p.probs {
            assert!((q - 1.0 / 7.0).abs() < 1e-15);
        }
        assert_eq!(hidden.len(), 1);
        assert_eq!(model.hidden(), vec![vec![0.0; 5]]);
    }

    #[test]
    fn always_hub_strawman_scores_three_quarters() {
        let mut stream = TokenStream::from_config(&EnvConfig::full(3));
        let mut eval = OnlineEvalState::new(DEFAULT_WIN);
        let m = evaluate_predictor(&mut stream, 20_000, &mut eval, |_| Token::G);
        assert!((m.final_error().unwrap() - 0.75).abs() <= 0.01);
    }

    #[test]
    fn oracle_predictor_reaches_ceiling() {
        let config = EnvConfig::full(17);
        let mut stream = TokenStream::from_config(&config);
        let mut eval = OnlineEvalState::new(DEFAULT_WIN);
        let m = evaluate_predictor(&mut stream, 100_000, &mut eval, oracle_predictor(&config));
        let steady = crate::stats::mean(&m.windowed_error[10_000..]);
        assert!((steady - (1.0 - 19.0 / 24.0)).abs() <= 0.01, "{steady}");
    }

    #[test]
    fn stream_exhaustion_ends_cleanly() {
        let t = generate(&EnvConfig::full(1), 30).unwrap();
        let mut stream = TokenStream::new(t.emissions());
        let mut model = NaiveModel::new(5, 1, Activation::Tanh, &TrainConfig::default());
        let mut eval = OnlineEvalState::new(10);
        let m = train_online(&mut model, &mut stream, 1000, &mut eval);
        assert_eq!(m.steps(), 29);
        assert_eq!(m.windowed_error.len(), 20);
        assert_eq!(m.first_error_step, 9);
    }

    #[test]
    fn snapshot_lengths() {
        let mut model = NaiveModel::new(6, 1, Activation::Tanh, &TrainConfig::default());
        let mut stream = TokenStream::from_config(&EnvConfig::full(2));
        assert!(hidden_snapshot(&mut model, &mut stream, 0).is_empty());
        let rows = hidden_snapshot(&mut model, &mut stream, 25);
        assert_eq!(rows.len(), 25);
        assert!(rows.iter().all(|r| r.hidden.len() == 6));
    }

    #[test]
    fn single_replicate_has_zero_iqr() {
        let grid = SweepGrid {
            neurons: vec![4],
            layers: vec![1],
            windows: vec![2],
        };
        let mut base = NaiveRunSpec::new(EnvConfig::full(0), 4, 1, TrainConfig::default());
        base.steps = 1500;
        base.win = 100;
        let s = ablation_sweep(&grid, 1, 9, &base);
        assert_eq!(s.len(), 1);
        assert!(s[0].q25.iter().zip(&s[0].q75).all(|(a, b)| a == b));
        assert_eq!(s[0].median, s[0].q25);
    }

    #[test]
    fn sweep_is_deterministic() {
        let grid = SweepGrid {
            neurons: vec![4],
            layers: vec![1],
            windows: vec![1, 2],
        };
        let mut base = NaiveRunSpec::new(EnvConfig::full(0), 4, 1, TrainConfig::default());
        base.steps = 1200;
        base.win = 100;
        assert_eq!(ablation_sweep(&grid, 2, 5, &base), ablation_sweep(&grid, 2, 5, &base));
    }
}
