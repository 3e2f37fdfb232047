use chunkrnn_core::chunked::*;
use chunkrnn_core::chunking::ReplayBuffer;
use chunkrnn_core::environment::{EnvConfig, Token};
use chunkrnn_core::Error;

fn small() -> ChunkedConfig {
    ChunkedConfig {
        neurons: 6,
        schedule: PhaseSchedule {
            pre_sleep_steps: 3_000,
            sleep_buffer_len: 2_000,
            post_sleep_steps: 3_000,
        },
        win: 200,
        ..Default::default()
    }
}

#[test]
fn protocol_records_every_phase() {
    let out = chunked_run(&small(), &EnvConfig::full(1), TagMode::Learned).unwrap();
    assert_eq!(out.metrics.steps(), 6_000);
    let names: Vec<&str> = out.phases.iter().map(|p| p.name).collect();
    assert!(names.len() >= 3, "{names:?}");
    let sleep = out.sleep.expect("learned mode sleeps");
    assert_eq!(sleep.detection.mask.len(), 2_000);
    assert!((0.0..=1.0).contains(&sleep.tagger.heldout_accuracy));
}

#[test]
fn protocol_is_reproducible() {
    let a = chunked_run(&small(), &EnvConfig::full(3), TagMode::Learned).unwrap();
    let b = chunked_run(&small(), &EnvConfig::full(3), TagMode::Learned).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model.stack().flatten(), b.model.stack().flatten());
}

#[test]
fn tag_modes_share_the_pre_sleep_phase() {
    let env = EnvConfig::full(2);
    let pre = small().schedule.pre_sleep_steps;
    let learned = chunked_run(&small(), &env, TagMode::Learned).unwrap();
    let oracle = chunked_run(&small(), &env, TagMode::Oracle).unwrap();
    let constant = chunked_run(&small(), &env, TagMode::Constant(Token::A)).unwrap();
    assert_eq!(learned.metrics.predictions[..pre], oracle.metrics.predictions[..pre]);
    assert_eq!(learned.metrics.predictions[..pre], constant.metrics.predictions[..pre]);
}

#[test]
fn constant_ablation_equals_constant_mode() {
    let env = EnvConfig::full(4);
    let a = constant_tag_ablation(&small(), &env).unwrap();
    assert_eq!(a.steps(), 6_000);
}

#[test]
fn sleeping_on_nothing_fails() {
    let mut model = ChunkedModel::new(&small()).unwrap();
    let err = phase2_sleep(&mut model, &ReplayBuffer::new(10), &small().tagger).unwrap_err();
    assert!(matches!(err, Error::EmptyReplayBuffer));
}

#[test]
fn invalid_schedules_are_rejected() {
    let mut c = small();
    c.schedule.sleep_buffer_len = 0;
    assert!(c.validate().is_err());
    let t = TransferConfig {
        model: small(),
        brief_steps: 0,
        ..Default::default()
    };
    assert!(transfer(&t, &EnvConfig::source(0), &EnvConfig::full(0)).is_err());
}

#[test]
fn transfer_reports_both_models() {
    let t = TransferConfig {
        model: small(),
        brief_steps: 1_000,
        target_steps: 3_000,
        auc_steps: 2_000,
    };
    let out = transfer(&t, &EnvConfig::source(0), &EnvConfig::full(1)).unwrap();
    assert_eq!(out.chunked.steps(), 3_000);
    assert_eq!(out.naive.steps(), 3_000);
    assert_eq!(out.source_naive.steps(), out.source_chunked.steps());
    assert!(out.auc_chunked(2_000).is_finite() && out.auc_naive(2_000).is_finite());
}
