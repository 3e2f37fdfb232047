use chunkrnn_core::environment::Token;
use chunkrnn_core::nn::*;
use chunkrnn_core::rng;
use proptest::prelude::*;

fn one_hot(i: usize) -> Vec<f64> {
    Token::from_index(i).unwrap().one_hot().to_vec()
}

fn window(len: usize, side_dim: usize, seed: u64) -> Vec<WindowStep> {
    (0..len)
        .map(|s| {
            let k = (seed as usize + 3 * s) % 7;
            let mut side = vec![0.0; side_dim];
            if side_dim > 0 {
                side[(seed as usize + s) % side_dim] = 1.0;
            }
            WindowStep {
                main: one_hot(k),
                side,
                target: if s % 3 == 1 { None } else { Some((k + 1) % 7) },
            }
        })
        .collect()
}

fn stack_report(layers: usize, width: usize, len: usize, side: Option<usize>, seed: u64) -> GradCheckReport {
    let side = side.filter(|l| *l < layers);
    let hidden = vec![width; layers];
    let mut r = rng::stream(seed, rng::STREAM_INIT);
    let stack = match side {
        Some(l) => RnnStack::with_side_input(7, l, 7, &hidden, 7, Activation::Tanh, OutputKind::Softmax, 0.5, &mut r),
        None => RnnStack::new(7, &hidden, 7, Activation::Tanh, OutputKind::Softmax, 0.5, &mut r),
    };
    let entering: Vec<Vec<f64>> = hidden
        .iter()
        .enumerate()
        .map(|(l, &h)| (0..h).map(|j| 0.1 * (((j + l) as f64) * 0.7).sin()).collect())
        .collect();
    let steps = window(len, stack.side_dim(), seed);
    check_stack(&stack, &entering, &steps, 1e-3, 1e-5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0 && *x <= 1.0));
        let shifted: Vec<f64> = logits.iter().map(|x| x + 123.0).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bptt_matches_finite_differences(
        layers in 1usize..=2,
        width in prop::sample::select(vec![5usize, 10, 15, 20, 30]),
        len in 1usize..=7,
        side in prop::sample::select(vec![None, Some(0usize), Some(1)]),
        seed in 0u64..1000,
    ) {
        let report = stack_report(layers, width, len, side, seed);
        prop_assert!(report.passed(), "max rel {} at {:?}", report.max_relative_error, report.worst_index);
    }
}

// A parameter with gradient ~7e-6 and large curvature: a three-point
// stencil at eps 1e-4 misses it by 3e-5 relative.
#[test]
fn tiny_gradients_pass() {
    let report = stack_report(2, 20, 7, Some(1), 453);
    assert!(report.passed(), "{}", report.max_relative_error);
}

#[test]
fn sigmoid_head_gradients() {
    let mut r = rng::stream(3, rng::STREAM_INIT);
    let stack = RnnStack::new(7, &[5], 1, Activation::Tanh, OutputKind::Sigmoid, 0.5, &mut r);
    let steps: Vec<WindowStep> = (0..2)
        .map(|s| WindowStep {
            main: one_hot(s * 2),
            side: vec![],
            target: Some(s),
        })
        .collect();
    let report = check_stack(&stack, &stack.zero_state(), &steps, 1e-3, 1e-5);
    assert!(report.passed(), "{}", report.max_relative_error);
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut r = rng::stream(4, rng::STREAM_INIT);
    let stack = RnnStack::new(7, &[5], 7, Activation::Tanh, OutputKind::Softmax, 0.5, &mut r);
    let steps = window(3, 0, 4);
    let mut tape = UnrolledTape::new(&stack);
    tape.reset(&stack.zero_state());
    for s in &steps {
        stack.push_step(&mut tape, &s.main, &s.side);
    }
    let targets: Vec<_> = steps.iter().map(|s| s.target).collect();
    let (_, grads) = stack.bptt_gradients(&tape, &targets);
    let mut analytic = grads.flatten();
    let i = analytic.iter().position(|g| g.abs() > 1e-3).unwrap();
    analytic[i] *= 1.01;
    let mut probe = stack.clone();
    let report = grad_check(
        &stack.flatten(),
        &analytic,
        |theta| {
            probe.load_flat(theta);
            tape.reset(&stack.zero_state());
            for s in &steps {
                probe.push_step(&mut tape, &s.main, &s.side);
            }
            probe.window_loss(&tape, &targets)
        },
        1e-5,
        1e-5,
    );
    assert!(!report.passed());
    assert_eq!(report.worst_index, Some(i));
}

#[test]
fn frozen_layers_do_not_move() {
    let mut r = rng::stream(9, rng::STREAM_INIT);
    let stack = RnnStack::new(7, &[6, 6], 7, Activation::Tanh, OutputKind::Softmax, 0.2, &mut r);
    let config = TrainConfig {
        bptt_window: 3,
        ..Default::default()
    };
    let mut learner = TbpttLearner::new(stack.clone(), &config);
    learner.set_freeze(FreezeMask::from_layer(2, 1));
    for s in 0..50 {
        learner.observe(&one_hot(s % 7), &[]);
        learner.learn(Some((s + 1) % 7));
    }
    let after = learner.stack();
    assert_ne!(after.layers[0], stack.layers[0]);
    assert_eq!(after.layers[1], stack.layers[1]);
    assert_eq!(after.head, stack.head);
}

#[test]
fn online_learning_is_deterministic() {
    let run = || {
        let mut r = rng::stream(1, rng::STREAM_INIT);
        let stack = RnnStack::new(7, &[8], 7, Activation::Tanh, OutputKind::Softmax, 0.2, &mut r);
        let config = TrainConfig {
            bptt_window: 4,
            ..Default::default()
        };
        let mut learner = TbpttLearner::new(stack, &config);
        for s in 0..200 {
            learner.observe(&one_hot((s * 5) % 7), &[]);
            learner.learn(Some((s * 5 + 5) % 7));
        }
        learner.into_stack().flatten()
    };
    let a: Vec<u64> = run().iter().map(|x| x.to_bits()).collect();
    let b: Vec<u64> = run().iter().map(|x| x.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn learner_fits_a_deterministic_cycle() {
    let mut r = rng::stream(2, rng::STREAM_INIT);
    let stack = RnnStack::new(7, &[10], 7, Activation::Tanh, OutputKind::Softmax, 0.2, &mut r);
    let config = TrainConfig {
        bptt_window: 2,
        learning_rate: 0.1,
        ..Default::default()
    };
    let mut learner = TbpttLearner::new(stack, &config);
    let cycle = [0usize, 1, 2, 6, 3, 4, 5, 6];
    let mut loss = 0.0;
    for s in 0..4000 {
        learner.observe(&one_hot(cycle[s % 8]), &[]);
        loss = learner.learn(Some(cycle[(s + 1) % 8]));
    }
    assert!(loss < 0.05, "{loss}");
}
