//! Two-layer recurrent model that reads a context tag alongside each token,
//! trained in three phases: wake with the upper layer frozen, offline sleep
//! to learn the tagger, then joint wake training with tags.

use alloc::vec::Vec;

use crate::chunking::{
    detect_peaks, replay_layer, tag_stream_step, train_tagger, ContextTagger, MaskScore, PeakDetection, ReplayBuffer,
    TagStream, TaggerConfig, TaggerReport, TaggerState, DEFAULT_BUFFER_CAPACITY,
};
use crate::environment::{Emission, EnvConfig, Token};
use crate::naive::{run_online, NaiveModel, OnlineEvalState, RunMetrics, TokenStream, DEFAULT_WIN};
use crate::nn::{Activation, FreezeMask, OutputKind, RnnLayerParams, RnnStack, TbpttLearner, TrainConfig};
use crate::rng;
use crate::{Error, Result};

/// Where the tag one-hot joins the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TagInjection {
    /// Appended to the token one-hot at the bottom layer.
    #[default]
    Layer1,
    /// Appended to the bottom layer's output, feeding the second layer.
    Layer2,
}

impl TagInjection {
    pub fn name(self) -> &'static str {
        match self {
            TagInjection::Layer1 => "layer1",
            TagInjection::Layer2 => "layer2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "layer1" => Some(TagInjection::Layer1),
            "layer2" => Some(TagInjection::Layer2),
            _ => None,
        }
    }

    /// Zero-based index of the layer receiving the tag.
    pub fn layer(self) -> usize {
        match self {
            TagInjection::Layer1 => 0,
            TagInjection::Layer2 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseSchedule {
    pub pre_sleep_steps: usize,
    pub sleep_buffer_len: usize,
    pub post_sleep_steps: usize,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        PhaseSchedule {
            pre_sleep_steps: 20_000,
            sleep_buffer_len: DEFAULT_BUFFER_CAPACITY,
            post_sleep_steps: 180_000,
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.pre_sleep_steps == 0 || self.sleep_buffer_len == 0 || self.post_sleep_steps == 0 {
            return Err(Error::InvalidConfig("phase lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn wake_steps(&self) -> usize {
        self.pre_sleep_steps + self.post_sleep_steps
    }
}

/// Provider of the tag slice for each step.
#[derive(Clone, Debug)]
pub enum TagSource {
    /// All-zero tag slice.
    Placeholder,
    Constant(Token),
    /// Fires exactly on true community entries.
    Oracle(TagStream),
    Learned {
        tagger: ContextTagger,
        state: TaggerState,
        stream: TagStream,
    },
}

impl TagSource {
    /// A learned-tag source whose `c_0` is `first`.
    pub fn learned(tagger: ContextTagger, first: Token) -> Self {
        TagSource::Learned {
            state: tagger.initial_state(),
            tagger,
            stream: TagStream::new(first),
        }
    }

    pub fn oracle(first: Token) -> Self {
        TagSource::Oracle(TagStream::new(first))
    }

    /// Tag for the step that observes `e`.
    pub fn next(&mut self, e: Emission) -> Option<Token> {
        match self {
            TagSource::Placeholder => None,
            TagSource::Constant(t) => Some(*t),
            TagSource::Oracle(stream) => Some(stream.step(e.token, e.entry)),
            TagSource::Learned { tagger, state, stream } => Some(tag_stream_step(tagger, state, stream, e.token)),
        }
    }

    /// Number of boundary detections so far.
    pub fn fires(&self) -> usize {
        match self {
            TagSource::Oracle(stream) | TagSource::Learned { stream, .. } => stream.fires(),
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkedConfig {
    pub neurons: usize,
    pub layers: usize,
    pub activation: Activation,
    pub injection: TagInjection,
    pub train: TrainConfig,
    pub tagger: TaggerConfig,
    pub schedule: PhaseSchedule,
    pub win: usize,
}

impl Default for ChunkedConfig {
    fn default() -> Self {
        ChunkedConfig {
            neurons: 10,
            layers: 2,
            activation: Activation::Tanh,
            injection: TagInjection::Layer1,
            train: TrainConfig {
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
            tagger: TaggerConfig::default(),
            schedule: PhaseSchedule::default(),
            win: DEFAULT_WIN,
        }
    }
}

impl ChunkedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::InvalidConfig("chunked model needs two layers".into()));
        }
        if self.neurons == 0 {
            return Err(Error::InvalidConfig("neurons must be positive".into()));
        }
        if self.win == 0 {
            return Err(Error::InvalidConfig("evaluation window must be positive".into()));
        }
        self.train.validate()?;
        self.tagger.train.validate()?;
        self.schedule.validate()
    }

    /// Same configuration with model and tagger initialisation reseeded.
    pub fn seeded(&self, seed: u64) -> Self {
        ChunkedConfig {
            train: TrainConfig { seed, ..self.train },
            tagger: self.tagger.with_seed(seed),
            ..*self
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChunkedModel {
    learner: TbpttLearner,
    injection: TagInjection,
    tagger: Option<ContextTagger>,
}

impl ChunkedModel {
    pub fn new(config: &ChunkedConfig) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(config.train.seed, rng::STREAM_INIT);
        let hidden: Vec<usize> = core::iter::repeat(config.neurons).take(config.layers).collect();
        let stack = RnnStack::with_side_input(
            Token::COUNT,
            config.injection.layer(),
            Token::COUNT,
            &hidden,
            Token::COUNT,
            config.activation,
            OutputKind::Softmax,
            config.train.init_scale,
            &mut init,
        );
        Ok(ChunkedModel {
            learner: TbpttLearner::new(stack, &config.train),
            injection: config.injection,
            tagger: None,
        })
    }

    pub fn stack(&self) -> &RnnStack {
        self.learner.stack()
    }

    pub fn layer1(&self) -> &RnnLayerParams {
        &self.stack().layers[0]
    }

    pub fn injection(&self) -> TagInjection {
        self.injection
    }

    pub fn tagger(&self) -> Option<&ContextTagger> {
        self.tagger.as_ref()
    }

    pub fn attach_tagger(&mut self, tagger: ContextTagger) {
        self.tagger = Some(tagger);
    }

    pub fn learner(&self) -> &TbpttLearner {
        &self.learner
    }

    fn set_upper_frozen(&mut self, frozen: bool) {
        let n = self.stack().layers.len();
        self.learner.set_freeze(if frozen {
            FreezeMask::from_layer(n, 1)
        } else {
            FreezeMask::none(n)
        });
    }

    /// Online training with the given tag source. Every observed emission is
    /// also offered to `buffer` when one is supplied.
    pub fn wake<I: Iterator<Item = Emission>>(
        &mut self,
        stream: &mut TokenStream<I>,
        steps: usize,
        eval: &mut OnlineEvalState,
        tags: &mut TagSource,
        mut buffer: Option<&mut ReplayBuffer>,
    ) -> RunMetrics {
        run_online(&mut self.learner, stream, steps, eval, |e, main, side| {
            main[e.token.index()] = 1.0;
            if let Some(tag) = tags.next(e) {
                side[tag.index()] = 1.0;
            }
            if let Some(b) = buffer.as_deref_mut() {
                b.push(e);
            }
        })
    }
}

/// Wake phase with the upper layer and head frozen and an all-zero tag.
pub fn phase1_pre_sleep<I: Iterator<Item = Emission>>(
    model: &mut ChunkedModel,
    stream: &mut TokenStream<I>,
    schedule: &PhaseSchedule,
    eval: &mut OnlineEvalState,
) -> (ReplayBuffer, RunMetrics) {
    let mut buffer = ReplayBuffer::new(schedule.sleep_buffer_len);
    model.set_upper_frozen(true);
    let metrics = model.wake(
        stream,
        schedule.pre_sleep_steps,
        eval,
        &mut TagSource::Placeholder,
        Some(&mut buffer),
    );
    model.set_upper_frozen(false);
    (buffer, metrics)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SleepReport {
    /// Replayed tokens, oldest first.
    pub tokens: Vec<Token>,
    pub detection: PeakDetection,
    pub tagger: TaggerReport,
    /// Detected mask scored against the buffer's true entries.
    pub mask_score: MaskScore,
    /// Trained tagger's bits on the buffer scored against the true entries.
    pub tagger_score: MaskScore,
}

/// Replays the buffer through layer 1, detects boundaries, trains and
/// attaches a tagger. Network weights are not touched.
pub fn phase2_sleep(model: &mut ChunkedModel, buffer: &ReplayBuffer, config: &TaggerConfig) -> Result<SleepReport> {
    if buffer.is_empty() {
        return Err(Error::EmptyReplayBuffer);
    }
    let tokens = buffer.tokens();
    let truth = buffer.entry_mask();
    let hidden = replay_layer(model.layer1(), &tokens);
    let detection = detect_peaks(&hidden)?;
    let (tagger, report) = train_tagger(&tokens, &detection.mask, config)?;
    let tagger_score = tagger.predict_mask(&tokens).score(&truth);
    let mask_score = detection.mask.score(&truth);
    model.attach_tagger(tagger);
    Ok(SleepReport {
        tokens,
        detection,
        tagger: report,
        mask_score,
        tagger_score,
    })
}

/// Joint wake training of every layer with tags from `tags`.
pub fn phase3_post_sleep<I: Iterator<Item = Emission>>(
    model: &mut ChunkedModel,
    stream: &mut TokenStream<I>,
    steps: usize,
    eval: &mut OnlineEvalState,
    tags: &mut TagSource,
) -> RunMetrics {
    model.set_upper_frozen(false);
    model.wake(stream, steps, eval, tags, None)
}

/// How post-sleep tags are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagMode {
    Learned,
    Oracle,
    Constant(Token),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    pub name: &'static str,
    /// Prediction index at which the phase began.
    pub start: usize,
    pub steps: usize,
    pub final_error: Option<f64>,
    pub tagger_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub model: ChunkedModel,
    pub metrics: RunMetrics,
    pub phases: Vec<PhaseRecord>,
    pub sleep: Option<SleepReport>,
}

fn record(name: &'static str, start: usize, m: &RunMetrics, acc: Option<f64>) -> PhaseRecord {
    PhaseRecord {
        name,
        start,
        steps: m.steps(),
        final_error: m.final_error(),
        tagger_accuracy: acc,
    }
}

/// The full three-phase protocol on a fresh model, continuing one
/// evaluation window across phases. With [`TagMode::Constant`] the sleep
/// phase is skipped and the tag is pinned.
pub fn run_protocol<I: Iterator<Item = Emission>>(
    config: &ChunkedConfig,
    stream: &mut TokenStream<I>,
    mode: TagMode,
) -> Result<ProtocolOutcome> {
    let mut model = ChunkedModel::new(config)?;
    let mut eval = OnlineEvalState::new(config.win);
    let (buffer, mut metrics) = phase1_pre_sleep(&mut model, stream, &config.schedule, &mut eval);
    let mut phases = alloc::vec![record("pre-sleep", 0, &metrics, None)];
    let first = stream.current().map_or(Token::G, |e| e.token);
    let (mut tags, sleep) = match mode {
        TagMode::Constant(t) => (TagSource::Constant(t), None),
        TagMode::Oracle => (TagSource::oracle(first), None),
        TagMode::Learned => {
            let report = phase2_sleep(&mut model, &buffer, &config.tagger)?;
            phases.push(PhaseRecord {
                name: "sleep",
                start: metrics.steps(),
                steps: 0,
                final_error: None,
                tagger_accuracy: Some(report.tagger.heldout_accuracy),
            });
            let tagger = model.tagger().cloned().expect("sleep attaches a tagger");
            (TagSource::learned(tagger, first), Some(report))
        }
    };
    let start = metrics.steps();
    let post = phase3_post_sleep(
        &mut model,
        stream,
        config.schedule.post_sleep_steps,
        &mut eval,
        &mut tags,
    );
    phases.push(record("post-sleep", start, &post, None));
    metrics.extend(&post);
    Ok(ProtocolOutcome {
        model,
        metrics,
        phases,
        sleep,
    })
}

/// Protocol on a fresh environment built from `env`.
pub fn chunked_run(config: &ChunkedConfig, env: &EnvConfig, mode: TagMode) -> Result<ProtocolOutcome> {
    let mut stream = TokenStream::from_config(env);
    run_protocol(config, &mut stream, mode)
}

/// Pre-sleep phase followed by post-sleep training with the tag pinned to A.
pub fn constant_tag_ablation(config: &ChunkedConfig, env: &EnvConfig) -> Result<RunMetrics> {
    chunked_run(config, env, TagMode::Constant(Token::A)).map(|o| o.metrics)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferConfig {
    pub model: ChunkedConfig,
    /// Target steps trained with the source tagger before re-sleeping.
    pub brief_steps: usize,
    pub target_steps: usize,
    /// Horizon of the area-under-curve comparison, in target steps.
    pub auc_steps: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            model: ChunkedConfig::default(),
            brief_steps: 20_000,
            target_steps: 100_000,
            auc_steps: 50_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    /// Target-phase metrics of the chunked model.
    pub chunked: RunMetrics,
    /// Target-phase metrics of the size-matched plain model.
    pub naive: RunMetrics,
    pub source_chunked: RunMetrics,
    pub source_naive: RunMetrics,
    pub phases: Vec<PhaseRecord>,
    pub target_sleep: SleepReport,
}

impl TransferOutcome {
    pub fn auc_chunked(&self, steps: usize) -> f64 {
        self.chunked.auc(steps)
    }

    pub fn auc_naive(&self, steps: usize) -> f64 {
        self.naive.auc(steps)
    }
}

/// Source protocol, then target training for both the chunked model and a
/// plain model with the same layers and widths trained on the same source
/// steps. Each model's evaluation window carries over from source to target.
pub fn transfer(config: &TransferConfig, source: &EnvConfig, target: &EnvConfig) -> Result<TransferOutcome> {
    let mc = &config.model;
    if config.brief_steps == 0 || config.brief_steps >= config.target_steps {
        return Err(Error::InvalidConfig(
            "brief_steps must be positive and shorter than target_steps".into(),
        ));
    }

    let mut src = TokenStream::from_config(source);
    let mut eval = OnlineEvalState::new(mc.win);
    let mut model = ChunkedModel::new(mc)?;
    let (buffer, mut source_chunked) = phase1_pre_sleep(&mut model, &mut src, &mc.schedule, &mut eval);
    let mut phases = alloc::vec![record("source-pre-sleep", 0, &source_chunked, None)];
    let report = phase2_sleep(&mut model, &buffer, &mc.tagger)?;
    phases.push(PhaseRecord {
        name: "source-sleep",
        start: source_chunked.steps(),
        steps: 0,
        final_error: None,
        tagger_accuracy: Some(report.tagger.heldout_accuracy),
    });
    let first = src.current().map_or(Token::G, |e| e.token);
    let tagger = model.tagger().cloned().expect("sleep attaches a tagger");
    let mut tags = TagSource::learned(tagger.clone(), first);
    let start = source_chunked.steps();
    let post = phase3_post_sleep(&mut model, &mut src, mc.schedule.post_sleep_steps, &mut eval, &mut tags);
    phases.push(record("source-post-sleep", start, &post, None));
    source_chunked.extend(&post);

    let mut tgt = TokenStream::from_config(target);
    let first = tgt.current().map_or(Token::G, |e| e.token);
    let mut tags = TagSource::learned(tagger, first);
    let mut buffer = ReplayBuffer::new(mc.schedule.sleep_buffer_len);
    let mut chunked = model.wake(&mut tgt, config.brief_steps, &mut eval, &mut tags, Some(&mut buffer));
    phases.push(record("target-brief", 0, &chunked, None));
    let target_sleep = phase2_sleep(&mut model, &buffer, &mc.tagger)?;
    phases.push(PhaseRecord {
        name: "target-sleep",
        start: chunked.steps(),
        steps: 0,
        final_error: None,
        tagger_accuracy: Some(target_sleep.tagger.heldout_accuracy),
    });
    let first = tgt.current().map_or(Token::G, |e| e.token);
    let tagger = model.tagger().cloned().expect("sleep attaches a tagger");
    let mut tags = TagSource::learned(tagger, first);
    let start = chunked.steps();
    let rest = phase3_post_sleep(
        &mut model,
        &mut tgt,
        config.target_steps - config.brief_steps,
        &mut eval,
        &mut tags,
    );
    phases.push(record("target-post-sleep", start, &rest, None));
    chunked.extend(&rest);

    let mut naive = NaiveModel::new(mc.neurons, mc.layers, mc.activation, &mc.train);
    let mut eval = OnlineEvalState::new(mc.win);
    let mut src = TokenStream::from_config(source);
    let source_naive = crate::naive::train_online(&mut naive, &mut src, mc.schedule.wake_steps(), &mut eval);
    let mut tgt = TokenStream::from_config(target);
    let naive_target = crate::naive::train_online(&mut naive, &mut tgt, config.target_steps, &mut eval);

    Ok(TransferOutcome {
        chunked,
        naive: naive_target,
        source_chunked,
        source_naive,
        phases,
        target_sleep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ChunkedConfig {
        ChunkedConfig {
            neurons: 6,
            schedule: PhaseSchedule {
                pre_sleep_steps: 600,
                sleep_buffer_len: 600,
                post_sleep_steps: 400,
            },
            win: 100,
            ..ChunkedConfig::default()
        }
    }

    #[test]
    fn phase1_freezes_upper_layer_and_fills_buffer() {
        let cfg = small();
        let mut model = ChunkedModel::new(&cfg).unwrap();
        let before = model.stack().clone();
        let mut stream = TokenStream::from_config(&EnvConfig::full(1));
        let mut eval = OnlineEvalState::new(cfg.win);
        let mut sched = cfg.schedule;
        sched.sleep_buffer_len = 250;
        let (buffer, m) = phase1_pre_sleep(&mut model, &mut stream, &sched, &mut eval);
        assert_eq!(buffer.len(), 250);
        assert_eq!(m.steps(), 600);
        assert_eq!(stream.consumed(), 600);
        let after = model.stack();
        assert_eq!(after.layers[1], before.layers[1]);
        assert_eq!(after.head, before.head);
        assert_ne!(after.layers[0], before.layers[0]);
    }

    #[test]
    fn sleep_is_offline_and_rejects_empty_buffer() {
        let cfg = small();
        let mut model = ChunkedModel::new(&cfg).unwrap();
        assert_eq!(
            phase2_sleep(&mut model, &ReplayBuffer::new(5), &cfg.tagger).unwrap_err(),
            Error::EmptyReplayBuffer
        );
        let mut stream = TokenStream::from_config(&EnvConfig::full(2));
        let mut eval = OnlineEvalState::new(cfg.win);
        let (buffer, _) = phase1_pre_sleep(&mut model, &mut stream, &cfg.schedule, &mut eval);
        let before = model.stack().clone();
        phase2_sleep(&mut model, &buffer, &cfg.tagger).unwrap();
        assert_eq!(model.stack(), &before);
        assert!(model.tagger().is_some());
        assert_eq!(stream.consumed(), cfg.schedule.pre_sleep_steps);
    }

    #[test]
    fn phase_step_counts_match_schedule() {
        let cfg = small();
        let out = chunked_run(&cfg, &EnvConfig::full(3), TagMode::Learned).unwrap();
        assert_eq!(out.metrics.steps(), 1000);
        assert_eq!(out.phases.len(), 3);
        assert_eq!(out.phases[2].start, 600);
        assert_eq!(out.phases[2].steps, 400);
    }

    #[test]
    fn constant_tag_is_deterministic() {
        let cfg = small();
        let env = EnvConfig::full(4);
        let a = constant_tag_ablation(&cfg, &env).unwrap();
        let b = constant_tag_ablation(&cfg, &env).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tag_sources() {
        let e = |t: Token, entry: bool| Emission {
            token: t,
            position: crate::environment::PositionLabel::HUB,
            entry,
        };
        let mut c = TagSource::Constant(Token::A);
        assert_eq!(c.next(e(Token::D, true)), Some(Token::A));
        assert_eq!(TagSource::Placeholder.next(e(Token::D, true)), None);
        let mut o = TagSource::oracle(Token::B);
        assert_eq!(o.next(e(Token::C, false)), Some(Token::B));
        assert_eq!(o.next(e(Token::E, true)), Some(Token::E));
        assert_eq!(o.fires(), 1);
    }

    #[test]
    fn one_layer_is_rejected() {
        let cfg = ChunkedConfig { layers: 1, ..small() };
        assert!(ChunkedModel::new(&cfg).is_err());
    }
}
