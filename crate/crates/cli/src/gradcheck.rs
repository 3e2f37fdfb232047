//! Gradient checks over every architecture the experiments train.

use chunkrnn_core::chunked::TagInjection;
use chunkrnn_core::chunking::TAGGER_UNITS;
use chunkrnn_core::environment::{generate, EnvConfig, Token};
use chunkrnn_core::nn::{check_stack, Activation, OutputKind, RnnStack, UnrolledTape, WindowStep};
use chunkrnn_core::rng;

pub const SUITE_NEURONS: [usize; 5] = [5, 10, 15, 20, 30];
pub const SUITE_WINDOWS: [usize; 4] = [1, 3, 5, 7];
const WARMUP: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub arch: &'static str,
    pub layers: usize,
    pub neurons: usize,
    pub window: usize,
    pub side_layer: Option<usize>,
    pub params: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn check(
    arch: &'static str,
    stack: &RnnStack,
    tokens: &[Token],
    window: usize,
    tags: bool,
    eps: f64,
    tolerance: f64,
) -> GradRow {
    let side = |i: usize| {
        if stack.side_dim() == 0 {
            Vec::new()
        } else {
            // Tag of the community visit the token belongs to.
            let t = tokens[..=i]
                .iter()
                .rev()
                .find(|t| !t.is_hub())
                .copied()
                .unwrap_or(Token::A);
            t.one_hot().to_vec()
        }
    };
    let target = |i: usize| match stack.output {
        OutputKind::Softmax => Some(tokens[i + 1].index()),
        OutputKind::Sigmoid => Some(tokens[i].is_hub() as usize),
    };
    let mut tape = UnrolledTape::new(stack);
    tape.reset(&stack.zero_state());
    for (i, t) in tokens.iter().enumerate().take(WARMUP) {
        stack.push_step(&mut tape, &t.one_hot(), &side(i));
    }
    let entering: Vec<Vec<f64>> = (0..stack.layers.len())
        .map(|l| tape.hidden(l, WARMUP - 1).to_vec())
        .collect();
    let steps: Vec<WindowStep> = (WARMUP..WARMUP + window)
        .map(|i| WindowStep {
            main: tokens[i].one_hot().to_vec(),
            side: side(i),
            target: target(i),
        })
        .collect();
    let report = check_stack(stack, &entering, &steps, eps, tolerance);
    GradRow {
        arch,
        layers: stack.layers.len(),
        neurons: stack.layers[0].hidden_dim(),
        window,
        side_layer: tags.then(|| stack.side_input().map(|s| s.0)).flatten(),
        params: stack.param_count(),
        max_relative_error: report.max_relative_error,
        passed: report.passed(),
    }
}

/// Plain stacks (1–2 layers, every suite width and window), two-layer
/// chunked stacks with tags on either layer, and the tagger.
pub fn suite(seed: u64, eps: f64, tolerance: f64) -> Vec<GradRow> {
    let tokens = generate(&EnvConfig::full(seed), WARMUP + 16)
        .expect("positive length")
        .tokens;
    let mut r = rng::stream(seed, rng::STREAM_VALIDATION);
    let mut rows = Vec::new();
    for layers in [1, 2] {
        for n in SUITE_NEURONS {
            let stack = RnnStack::new(
                7,
                &vec![n; layers],
                7,
                Activation::Tanh,
                OutputKind::Softmax,
                0.2,
                &mut r,
            );
            for w in SUITE_WINDOWS {
                rows.push(check("naive", &stack, &tokens, w, false, eps, tolerance));
            }
        }
    }
    for n in [10, 15, 20] {
        for injection in [TagInjection::Layer1, TagInjection::Layer2] {
            let stack = RnnStack::with_side_input(
                7,
                injection.layer(),
                7,
                &[n, n],
                7,
                Activation::Tanh,
                OutputKind::Softmax,
                0.2,
                &mut r,
            );
            for w in [1, 7] {
                rows.push(check("chunked", &stack, &tokens, w, true, eps, tolerance));
            }
        }
    }
    let tagger = RnnStack::new(
        7,
        &[TAGGER_UNITS],
        1,
        Activation::Tanh,
        OutputKind::Sigmoid,
        0.2,
        &mut r,
    );
    for w in [1, 2] {
        rows.push(check("tagger", &tagger, &tokens, w, false, eps, tolerance));
    }
    rows
}
