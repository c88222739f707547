use proptest::prelude::*;
use std::sync::Arc;
use vrdrive::a3c::train::{act_greedy, train, A3CConfig};
use vrdrive::a3c::ObsMode;
use vrdrive::eval::report::predict_log;
use vrdrive::eval::{collapse_9_to_3, evaluate_on_log, generate_drive_log, DriveLogConfig, Method};
use vrdrive::gan::{generate_paired_data, train_stage, DrivePolicy, GanConfig, PairedSet, Split, Stage, TranslationPipeline};
use vrdrive::nets::{Checkpointable, DiscriminatorConfig, GeneratorConfig, PolicyConfig, PolicyNet};
use vrdrive::rng::seeded;
use vrdrive::sim::render::render_with;
use vrdrive::sim::{make_track, reset_at, step, Camera, RenderStyle, SimConfig, TrackSpec, NUM_ACTIONS};

fn small_gan(epochs: usize) -> GanConfig {
    GanConfig {
        epochs,
        batch: 8,
        generator: GeneratorConfig::reduced(),
        discriminator: DiscriminatorConfig::reduced(),
        ..GanConfig::default()
    }
}

#[test]
fn reduced_pipeline_end_to_end() {
    let a = make_track(TrackSpec::A);
    let b = make_track(TrackSpec::B);
    let (s1, s2) = generate_paired_data(&a, 96, DrivePolicy::RandomDrive, 5, Camera::square(16)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    s1.save(&dir.path().join("s1")).unwrap();
    let s1 = PairedSet::load(&dir.path().join("s1")).unwrap();
    assert_eq!(s1.split(Split::HeldOut).len(), 12);

    let cfg = small_gan(3);
    let r1 = train_stage(Stage::VirtualToParsing, &s1, &cfg, 1, |_| {}).unwrap();
    let r2 = train_stage(Stage::ParsingToReal, &s2, &cfg, 1, |_| {}).unwrap();
    assert_eq!(r1.curve.len(), 3);
    assert!(r2.curve.iter().all(|e| e.holdout_l1.is_finite()));

    let pipe = TranslationPipeline::new(r1.generator, r2.generator, false).unwrap();
    pipe.save(&dir.path().join("pipe")).unwrap();
    let pipe = Arc::new(TranslationPipeline::load(&dir.path().join("pipe"), false).unwrap());
    let frame = render_with(&reset_at(&b, 3.0), &b, RenderStyle::Virtual, Camera::square(16));
    let (parsing, real) = pipe.translate(&frame, &mut seeded(0)).unwrap();
    assert!(parsing.in_range() && real.in_range());

    let a3c = A3CConfig {
        workers: 2,
        obs_mode: ObsMode::Translated,
        policy: PolicyConfig::reduced(),
        ..A3CConfig::default()
    };
    let out = train(&a3c, &a, Some(Arc::clone(&pipe)), 200, 3).unwrap();
    assert!(out.global.step >= 200);
    assert!(out.global.net.store.all_finite());

    let log = generate_drive_log(
        &b,
        &DriveLogConfig {
            frames: 60,
            size: 16,
            ..DriveLogConfig::default()
        },
        2,
    )
    .unwrap();
    let rep = evaluate_on_log(Method::Ours, &out.global.net, &log).unwrap();
    assert_eq!(rep.confusion.unwrap().total(), 60);

    let p = dir.path().join("agent.ckpt");
    out.global.to_archive().save(&p).unwrap();
    let loaded = PolicyNet::<f32>::load(&p).unwrap();
    assert_eq!(
        predict_log(&loaded, &log).unwrap(),
        predict_log(&out.global.net, &log).unwrap()
    );
}

#[test]
fn translated_training_without_pipeline_is_refused() {
    let a3c = A3CConfig {
        workers: 1,
        obs_mode: ObsMode::Translated,
        policy: PolicyConfig::reduced(),
        ..A3CConfig::default()
    };
    assert!(train(&a3c, &make_track(TrackSpec::A), None, 50, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_actions_are_valid_and_collapse(seed in 0u64..500, arc in 0.0f64..300.0) {
        let t = make_track(TrackSpec::B);
        let net = PolicyNet::<f32>::new(PolicyConfig::reduced(), seed).unwrap();
        let mut stack = vrdrive::a3c::FrameStack::new(
            render_with(&reset_at(&t, arc), &t, RenderStyle::Real, Camera::square(16)),
        );
        stack.push(render_with(&reset_at(&t, arc + 1.0), &t, RenderStyle::Real, Camera::square(16)));
        let a = act_greedy(&net, &stack.obs().unwrap()).unwrap();
        prop_assert!(a < NUM_ACTIONS);
        collapse_9_to_3(a).unwrap();
    }

    #[test]
    fn simulator_steps_stay_finite(seed in 0u64..1000, actions in proptest::collection::vec(0usize..NUM_ACTIONS, 1..60)) {
        let t = make_track(TrackSpec::Seeded(seed));
        let cfg = SimConfig::default();
        let mut s = reset_at(&t, (seed % 97) as f64);
        for a in actions {
            let (next, r, done) = step(&t, &s, a, &cfg).unwrap();
            prop_assert!(r.is_finite());
            prop_assert!(next.speed >= 0.0 && next.speed <= 20.0);
            s = next;
            if done {
                break;
            }
        }
    }
}
