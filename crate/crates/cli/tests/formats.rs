use std::collections::BTreeMap;

use chunkrnn::checkpoint::{self, CheckpointError};
use chunkrnn::config::{ConfigError, ExperimentConfig, RawConfig};
use chunkrnn::output::OutputDir;
use chunkrnn_core::nn::{Activation, OutputKind, RnnStack};
use chunkrnn_core::rng;
use proptest::prelude::*;

fn bits(s: &RnnStack) -> Vec<u64> {
    s.flatten().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        seed in any::<u64>(),
        hidden in prop::collection::vec(1usize..12, 1..3),
        side in any::<bool>(),
        scale in 0.01f64..3.0,
    ) {
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        let mut stack = if side {
            RnnStack::with_side_input(7, hidden.len() - 1, 7, &hidden, 7, Activation::Tanh, OutputKind::Softmax, scale, &mut r)
        } else {
            RnnStack::new(7, &hidden, 1, Activation::Relu, OutputKind::Sigmoid, scale, &mut r)
        };
        // Biases are zero at init; give them awkward values too.
        let mut flat = stack.flatten();
        for (i, x) in flat.iter_mut().enumerate() {
            *x += (i as f64 * 0.1).sin() * 1e-7;
        }
        stack.load_flat(&flat);
        let meta = BTreeMap::from([("seed".to_string(), seed.to_string())]);
        let text = checkpoint::write(&stack, &meta);
        let back = checkpoint::read(&text).unwrap();
        prop_assert_eq!(bits(&back.stack), bits(&stack));
        prop_assert_eq!(&back.stack, &stack);
        prop_assert_eq!(checkpoint::write(&back.stack, &back.meta), text);
        prop_assert_eq!(back.meta, meta);
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let mut r = rng::seeded(1);
    let stack = RnnStack::new(7, &[3], 7, Activation::Tanh, OutputKind::Softmax, 0.2, &mut r);
    let text = checkpoint::write(&stack, &BTreeMap::new());
    assert!(matches!(
        checkpoint::read("garbage"),
        Err(CheckpointError::Malformed { line: 1, .. })
    ));
    let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        checkpoint::read(&truncated),
        Err(CheckpointError::Truncated(_))
    ));
    let bad = text.replacen("tensor\tlayer0.w_hh\t3\t3", "tensor\tlayer0.w_hh\t3\t4", 1);
    assert!(checkpoint::read(&bad).is_err());
}

#[test]
fn config_parser_reports_lines() {
    let ok = RawConfig::parse("# header\n\nseed = 4  # trailing\nneurons=7\n").unwrap();
    assert_eq!(ok.raw("seed"), Some("4"));
    assert_eq!(ok.raw("neurons"), Some("7"));
    assert_eq!(
        RawConfig::parse("seed = 1\nseed = 2\n"),
        Err(ConfigError::Line {
            line: 2,
            message: "duplicate key `seed` (first set on line 1)".into()
        })
    );
    assert!(matches!(
        RawConfig::parse("\n\nseed 3\n"),
        Err(ConfigError::Line { line: 3, .. })
    ));
    let raw = RawConfig::parse("entry_tokens = A,B\nentry_probs = 0.5,0.6\n").unwrap();
    assert!(matches!(
        ExperimentConfig::resolve("generate", &raw),
        Err(ConfigError::Line { line: 2, .. })
    ));
    let raw = RawConfig::parse("entry_tokens = A,G\n").unwrap();
    assert!(matches!(
        ExperimentConfig::resolve("generate", &raw),
        Err(ConfigError::Line { line: 1, .. })
    ));
    assert!(matches!(
        ExperimentConfig::resolve("nope", &RawConfig::default()),
        Err(ConfigError::Invalid(_))
    ));
}

#[test]
fn experiment_defaults() {
    let naive = ExperimentConfig::resolve("naive", &RawConfig::default()).unwrap();
    assert_eq!((naive.neurons, naive.layers, naive.train.bptt_window), (15, 1, 7));
    let analyze = ExperimentConfig::resolve("analyze", &RawConfig::default()).unwrap();
    assert_eq!(
        (analyze.neurons, analyze.train.bptt_window, analyze.steps),
        (10, 1, 20_000)
    );
    let constant = ExperimentConfig::resolve("constant-tag", &RawConfig::default()).unwrap();
    assert!(matches!(constant.tag, chunkrnn_core::chunked::TagMode::Constant(_)));
    let raw = RawConfig::parse("tag = learned\n").unwrap();
    assert!(ExperimentConfig::resolve("constant-tag", &raw).is_err());
}

#[test]
fn echo_reparses_to_the_same_config() {
    for exp in ["naive", "chunked", "transfer", "analyze", "ablate"] {
        let raw = RawConfig::parse("seed = 9\nlearning_rate = 0.02\nentry_probs = 0.1,0.2,0.3,0.1,0.2,0.1\n").unwrap();
        let cfg = ExperimentConfig::resolve(exp, &raw).unwrap();
        let text = chunkrnn::config::render(&cfg.echo());
        let again = ExperimentConfig::resolve(exp, &RawConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(again.echo(), cfg.echo(), "{exp}");
    }
}

#[test]
fn output_dir_stays_inside_and_rolls_back() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("a/b");
    let mut out = OutputDir::create(&root).unwrap();
    assert!(out.write("../escape.txt", b"x").is_err());
    assert!(out.write("/abs.txt", b"x").is_err());
    out.write("sub/file.txt", b"hello").unwrap();
    assert_eq!(std::fs::read(root.join("sub/file.txt")).unwrap(), b"hello");
    let leftovers: Vec<_> = std::fs::read_dir(root.join("sub")).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
    out.rollback();
    assert!(!tmp.path().join("a").exists());
}
