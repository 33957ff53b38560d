use groupcast::model::ModelConfig;
use groupcast::synth::{
    tsi_generate, CounterRng, Dataset, DatasetKind, Seasonal, Trend, TsiSpec,
};
use groupcast::train::{
    run_curriculum, sample_task, task_loss, train_step, RunPaths, Stage, TaskMix, TrainConfig,
    TrainState,
};

fn model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_blocks: 1,
        n_heads: 2,
        ffn_hidden: 32,
        patch_len: 4,
        max_context: 48,
        horizon_patches: 2,
        ..ModelConfig::default()
    }
}

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        stages: vec![Stage::new(48, steps)],
        batch_size: 8,
        min_context: 16,
        lr: 3e-3,
        mix: TaskMix {
            uv: 1.0,
            mv: 0.0,
            covariate: 0.0,
        },
        seed: 11,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

/// Nearly noiseless sinusoids: easy to learn, so the loss must fall.
fn corpus() -> Vec<Dataset> {
    (0..8)
        .map(|i| {
            let mut spec = TsiSpec::random(400, i);
            spec.trend = Trend::default();
            spec.seasonal = vec![Seasonal {
                period: [8.0, 12.0, 16.0, 24.0][i as usize % 4],
                amplitude: 1.0,
                phase: i as f64,
            }];
            spec.noise.scale = 0.02;
            Dataset {
                name: format!("tsi{i}"),
                kind: DatasetKind::Tsi,
                series: vec![tsi_generate(&spec).unwrap()],
            }
        })
        .collect()
}

#[test]
fn probe_loss_falls_in_every_fifty_step_window() {
    let (m, c, data) = (model(), cfg(200), corpus());
    let probe = sample_task(&data, &c, &m, 48, &mut CounterRng::new(999)).unwrap();
    let mut state = TrainState::init(&m, 1).unwrap();
    let root = CounterRng::new(c.seed);
    let mut probes = vec![task_loss(&state.params, &m, &probe, false).unwrap().0];
    for step in 0..200u64 {
        let task = sample_task(&data, &c, &m, 48, &mut root.fork(step)).unwrap();
        train_step(&mut state, &c, &m, &task, c.lr).unwrap();
        if (step + 1) % 50 == 0 {
            probes.push(task_loss(&state.params, &m, &probe, false).unwrap().0);
        }
    }
    for w in probes.windows(2) {
        assert!(w[1] < w[0], "probe losses {probes:?}");
    }
}

#[test]
fn same_seed_gives_bitwise_identical_weights() {
    let (m, c, data) = (model(), cfg(100), corpus());
    let run = || {
        let st = TrainState::init(&m, 5).unwrap();
        run_curriculum(&c, &m, &data, st, &RunPaths::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.step, 100);
    assert!(a.params.bitwise_eq(&b.params));
    assert!(a.m.bitwise_eq(&b.m) && a.v.bitwise_eq(&b.v));
}
