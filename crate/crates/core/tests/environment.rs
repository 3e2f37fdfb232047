use chunkrnn_core::environment::*;
use chunkrnn_core::naive::{evaluate_predictor, oracle_predictor, OnlineEvalState, TokenStream};
use proptest::prelude::*;

#[test]
fn oracle_accuracy_matches_ceiling() {
    let config = EnvConfig::full(11);
    let mut stream = TokenStream::from_config(&config);
    let mut eval = OnlineEvalState::new(1000);
    let metrics = evaluate_predictor(&mut stream, 100_000, &mut eval, oracle_predictor(&config));
    let ceiling = theoretical_ceiling(&config);
    assert!((ceiling - 19.0 / 24.0).abs() < 1e-12);
    assert!((metrics.accuracy() - ceiling).abs() < 0.005, "{}", metrics.accuracy());
}

#[test]
fn seven_tokens_decode_every_reachable_state() {
    for config in [EnvConfig::full(0), EnvConfig::source(0)] {
        let all = enumerate_histories(&config, SUFFICIENT_HISTORY, 16);
        assert!(!all.is_empty());
        for (history, key) in &all {
            let decoded = decode_state(history).expect("reachable history decodes");
            assert_eq!(
                decoded.next_distribution(&config),
                key.next_distribution(&config),
                "{history:?}"
            );
        }
        assert!(history_collision(&config, SUFFICIENT_HISTORY, 16).is_none());
    }
}

#[test]
fn six_tokens_are_ambiguous() {
    let config = EnvConfig::full(0);
    let (history, a, b) = history_collision(&config, 6, 16).expect("a colliding pair exists");
    assert_eq!(history.len(), 6);
    let pa = a.next_distribution(&config);
    let pb = b.next_distribution(&config);
    assert_ne!(pa, pb);
    // Both must follow a deterministic rule, so the ambiguity costs accuracy.
    assert_eq!(pa.iter().filter(|p| **p == 1.0).count(), 1);
    assert_eq!(pb.iter().filter(|p| **p == 1.0).count(), 1);
}

#[test]
fn decoder_rejects_short_or_impossible_histories() {
    use Token::*;
    assert!(decode_state(&[A, B, C, G, D, E]).is_err());
    assert!(decode_state(&[A, B, C, D, E, F, A]).is_err());
    assert!(decode_state(&[G, A, B, C, G, D, A]).is_err());
}

#[test]
fn generator_and_oracle_agree_with_enumeration() {
    let config = EnvConfig::full(5);
    let mut env = Environment::new(config.clone());
    let mut history = Vec::new();
    for _ in 0..5000 {
        let predicted = env.oracle();
        let e = env.step();
        assert!(predicted[e.token.index()] > 0.0);
        history.push(e.token);
        if history.len() >= SUFFICIENT_HISTORY + 8 {
            let key = decode_state(&history).unwrap();
            assert_eq!(key.next_distribution(&config), env.oracle());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_have_cycle_structure(seed in any::<u64>(), n in 8usize..400) {
        let t = generate(&EnvConfig::full(seed), n).unwrap();
        prop_assert_eq!(t.len(), n);
        for i in 0..n {
            let pos = t.positions[i].value() as usize;
            prop_assert_eq!(pos, (i + 1) % 4);
            prop_assert_eq!(t.tokens[i] == Token::G, pos == 0);
            prop_assert_eq!(t.entry_mask[i], pos == 1);
            if pos >= 2 {
                prop_assert_eq!(t.tokens[i].community(), t.tokens[i - 1].community());
                prop_assert_ne!(t.tokens[i], t.tokens[i - 1]);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>()) {
        let a = generate(&EnvConfig::full(seed), 200).unwrap();
        let b = generate(&EnvConfig::full(seed), 200).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn source_never_enters_c_or_f(seed in any::<u64>()) {
        let t = generate(&EnvConfig::source(seed), 400).unwrap();
        for (tok, entry) in t.tokens.iter().zip(&t.entry_mask) {
            if *entry {
                prop_assert!(matches!(tok, Token::A | Token::B | Token::D | Token::E));
            }
        }
    }

    #[test]
    fn oracle_distributions_sum_to_one(seed in any::<u64>(), steps in 0usize..64) {
        let mut env = Environment::new(EnvConfig::full(seed));
        for _ in 0..steps {
            env.step();
        }
        let p = env.oracle();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
