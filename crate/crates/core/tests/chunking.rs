use chunkrnn_core::chunking::*;
use chunkrnn_core::environment::{generate, EnvConfig};
use proptest::prelude::*;

#[test]
fn tagger_learns_the_entry_mask() {
    let t = generate(&EnvConfig::full(3), 6000).unwrap();
    let mask = Mask {
        bits: t.entry_mask.clone(),
    };
    let (tagger, report) = train_tagger(&t.tokens, &mask, &TaggerConfig::default().with_seed(3)).unwrap();
    assert!(report.heldout_accuracy >= 0.99, "{report:?}");
    let fresh = generate(&EnvConfig::full(99), 2000).unwrap();
    let score = tagger.predict_mask(&fresh.tokens).score(&fresh.entry_mask);
    assert!(score.accuracy >= 0.99 && score.f1 >= 0.99, "{score:?}");
}

#[test]
fn tagged_stream_switches_at_entries() {
    let t = generate(&EnvConfig::full(8), 400).unwrap();
    let mut stream = TagStream::new(t.tokens[0]);
    for (tok, entry) in t.tokens.iter().zip(&t.entry_mask) {
        stream.step(*tok, *entry);
    }
    for (i, tag) in stream.history().iter().enumerate() {
        if t.entry_mask[i] {
            assert_eq!(*tag, t.tokens[i]);
        }
        if i > 0 && !t.entry_mask[i] {
            assert_eq!(*tag, stream.history()[i - 1]);
        }
    }
}

#[test]
fn peaks_at_sharp_transitions() {
    let hidden: Vec<Vec<f64>> = [
        [1.0, 0.0],
        [1.0, 0.05],
        [1.0, 0.15],
        [0.0, 1.0],
        [0.05, 1.0],
        [0.15, 1.0],
        [1.0, 0.0],
        [1.0, 0.05],
    ]
    .iter()
    .map(|v| v.to_vec())
    .collect();
    let p = detect_peaks(&hidden).unwrap();
    let marked: Vec<usize> = (0..hidden.len()).filter(|&i| p.mask.bits[i]).collect();
    assert_eq!(marked, vec![3, 6]);
    assert!(detect_peaks(&hidden[..2]).is_err());
}

#[test]
fn replay_buffer_keeps_the_latest() {
    let t = generate(&EnvConfig::full(1), 50).unwrap();
    let mut env = chunkrnn_core::environment::Environment::new(EnvConfig::full(1));
    let mut buffer = ReplayBuffer::new(20);
    for _ in 0..50 {
        buffer.push(env.step());
    }
    assert_eq!(buffer.len(), 20);
    assert_eq!(buffer.tokens(), t.tokens[30..].to_vec());
    assert_eq!(buffer.entry_mask(), t.entry_mask[30..].to_vec());
}

proptest! {
    #[test]
    fn mask_scores_are_consistent(bits in prop::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let mask = Mask { bits: bits.iter().map(|b| b.0).collect() };
        let truth: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let s = mask.score(&truth);
        for v in [s.precision, s.recall, s.f1, s.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let perfect = Mask { bits: truth.clone() }.score(&truth);
        prop_assert_eq!(perfect.accuracy, 1.0);
    }

    #[test]
    fn cosine_distance_is_scale_invariant(
        u in prop::collection::vec(0.1f64..2.0, 4),
        v in prop::collection::vec(-2.0f64..2.0, 4),
        k in 0.1f64..10.0,
    ) {
        let a = cosine_distance(&u, &v);
        let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
        let b = cosine_distance(&scaled, &v);
        prop_assert!((a.value - b.value).abs() < 1e-9);
        prop_assert!(cosine_distance(&u, &u).value.abs() < 1e-12);
    }

    #[test]
    fn replayed_states_depend_only_on_the_prefix(seed in any::<u64>(), cut in 3usize..60) {
        let t = generate(&EnvConfig::full(seed), 60).unwrap();
        let mut r = chunkrnn_core::rng::stream(seed, chunkrnn_core::rng::STREAM_INIT);
        let layer = chunkrnn_core::nn::RnnLayerParams::random(7, 5, chunkrnn_core::nn::Activation::Tanh, 0.3, &mut r);
        let full = replay_layer(&layer, &t.tokens);
        let head = replay_layer(&layer, &t.tokens[..cut]);
        prop_assert_eq!(&full[..cut], &head[..]);
    }
}
