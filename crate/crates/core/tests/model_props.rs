use groupcast::model::network::{forward, forward_with, time_attention_logits, Bound};
use groupcast::model::{GroupBatch, Mode, Model, ModelConfig, Params, SeriesInput};
use groupcast::synth::CounterRng;
use groupcast::tensor::{Tape, Tensor};

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_blocks: 2,
        n_heads: 2,
        ffn_hidden: 24,
        patch_len: 4,
        max_context: 64,
        horizon_patches: 3,
        ..ModelConfig::default()
    }
}

struct Case {
    ctx: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    groups: Vec<u32>,
    horizon: usize,
}

impl Case {
    fn random(rng: &mut CounterRng) -> Self {
        let rows = 2 + rng.below(5);
        let len = 5 + rng.below(30);
        let ctx = (0..rows)
            .map(|_| {
                let level = rng.normal() * 10.0;
                (0..len).map(|_| level + rng.normal()).collect()
            })
            .collect();
        let mask = (0..rows)
            .map(|_| (0..len).map(|t| t == len - 1 || rng.uniform() > 0.1).collect())
            .collect();
        let groups = (0..rows).map(|_| rng.below(3) as u32).collect();
        Self {
            ctx,
            mask,
            groups,
            horizon: 1 + rng.below(3),
        }
    }

    fn run(&self, params: &Params<f64>, cfg: &ModelConfig) -> Vec<f64> {
        let inputs: Vec<_> = self
            .ctx
            .iter()
            .zip(&self.mask)
            .map(|(c, m)| SeriesInput::target(c, m))
            .collect();
        let batch = GroupBatch::build(&inputs, &self.groups, cfg, self.horizon).unwrap();
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, params, false);
        let y = forward(&mut tape, &p, cfg, &batch).unwrap();
        tape.value(y).data().to_vec()
    }
}

fn row(out: &[f64], r: usize, rows: usize) -> &[f64] {
    let w = out.len() / rows;
    &out[r * w..(r + 1) * w]
}

#[test]
fn other_groups_cannot_reach_a_group() {
    let cfg = small();
    let params = Params::<f64>::init(&cfg, 1).unwrap();
    let mut rng = CounterRng::new(10);
    for _ in 0..100 {
        let mut case = Case::random(&mut rng);
        let base = case.run(&params, &cfg);
        let victim = case.groups[0];
        for r in 0..case.ctx.len() {
            if case.groups[r] != victim {
                for v in &mut case.ctx[r] {
                    *v = rng.normal() * 1e3;
                }
                for m in &mut case.mask[r] {
                    *m = rng.bernoulli(0.5);
                }
                let last = case.mask[r].len() - 1;
                case.mask[r][last] = true;
            }
        }
        let after = case.run(&params, &cfg);
        let rows = case.ctx.len();
        for r in (0..rows).filter(|&r| case.groups[r] == victim) {
            for (a, b) in row(&base, r, rows).iter().zip(row(&after, r, rows)) {
                assert!((a - b).abs() <= 1e-6, "row {r}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn permuting_within_a_group_permutes_outputs() {
    let cfg = small();
    let params = Params::<f64>::init(&cfg, 2).unwrap();
    let mut rng = CounterRng::new(20);
    for _ in 0..100 {
        let mut case = Case::random(&mut rng);
        case.groups.iter_mut().for_each(|g| *g = 0);
        let rows = case.ctx.len();
        let base = case.run(&params, &cfg);
        let mut perm: Vec<usize> = (0..rows).collect();
        rng.shuffle(&mut perm);
        let permuted = Case {
            ctx: perm.iter().map(|&i| case.ctx[i].clone()).collect(),
            mask: perm.iter().map(|&i| case.mask[i].clone()).collect(),
            groups: perm.iter().map(|&i| case.groups[i]).collect(),
            horizon: case.horizon,
        };
        let out = permuted.run(&params, &cfg);
        for (new_r, &old_r) in perm.iter().enumerate() {
            for (a, b) in row(&out, new_r, rows).iter().zip(row(&base, old_r, rows)) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn distinct_groups_behave_like_separate_calls() {
    let cfg = small();
    let params = Params::<f64>::init(&cfg, 3).unwrap();
    let mut rng = CounterRng::new(30);
    let mut case = Case::random(&mut rng);
    let rows = case.ctx.len();
    case.groups = (0..rows as u32).collect();
    let joint = case.run(&params, &cfg);
    for r in 0..rows {
        let single = Case {
            ctx: vec![case.ctx[r].clone()],
            mask: vec![case.mask[r].clone()],
            groups: vec![0],
            horizon: case.horizon,
        };
        for (a, b) in single.run(&params, &cfg).iter().zip(row(&joint, r, rows)) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn uv_forecast_ignores_batch_mates_of_other_lengths() {
    let model = Model::<f32>::init(small(), 4).unwrap();
    let a: Vec<f64> = (0..37).map(|t| (t as f64 * 0.4).sin() + 3.0).collect();
    let b: Vec<f64> = (0..9).map(|t| t as f64).collect();
    let alone = model
        .predict(std::slice::from_ref(&a), &[vec![true; 37]], Mode::Uv, 9)
        .unwrap();
    let joint = model
        .predict(&[b, a], &[vec![true; 9], vec![true; 37]], Mode::Uv, 9)
        .unwrap();
    for (x, y) in alone.median(0).iter().zip(joint.median(1)) {
        assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
    }
}

#[test]
fn rotary_logits_depend_on_offsets_only() {
    let cfg = ModelConfig::default();
    let params = Params::<f32>::init(&cfg, 5).unwrap();
    let mut rng = CounterRng::new(40);
    for _ in 0..100 {
        let l = 2 + rng.below(10);
        let x = Tensor::from_fn(&[l, cfg.d_model], |_| rng.normal() as f32);
        let pos: Vec<f64> = (0..l).map(|_| rng.below(64) as f64).collect();
        let shift = rng.below(512) as f64;
        let moved: Vec<f64> = pos.iter().map(|p| p + shift).collect();
        let block = rng.below(cfg.n_blocks);
        let a = time_attention_logits(&params, &cfg, block, &x, &pos).unwrap();
        let b = time_attention_logits(&params, &cfg, block, &x, &moved).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-5, "shift {shift}: {u} vs {v}");
        }
    }
}

#[test]
fn zero_blocks_equals_hand_composed_embed_and_head() {
    let cfg = ModelConfig {
        n_blocks: 0,
        ..small()
    };
    let params = Params::<f64>::init(&cfg, 6).unwrap();
    let ctx: Vec<f64> = (0..10).map(|t| (t * t) as f64 * 0.1).collect();
    let mask = vec![true; 10];
    let batch = GroupBatch::build(&[SeriesInput::target(&ctx, &mask)], &[0], &cfg, 2).unwrap();
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, &params, false);
    let y = forward(&mut tape, &p, &cfg, &batch).unwrap();
    let got = tape.value(y).data().to_vec();

    // plain loops over the same weights
    let g = |n: &str| params.get(n).unwrap().data().to_vec();
    let (d, w) = (cfg.d_model, batch.patch_width());
    let matvec = |x: &[f64], m: &[f64], cols: usize| -> Vec<f64> {
        (0..cols)
            .map(|j| x.iter().enumerate().map(|(i, xi)| xi * m[i * cols + j]).sum())
            .collect()
    };
    let (w_in, b_in, w_out, b_out, w_skip) = (
        g("embed.w_in"),
        g("embed.b_in"),
        g("embed.w_out"),
        g("embed.b_out"),
        g("embed.w_skip"),
    );
    let (hw, hb) = (g("head.w"), g("head.b"));
    let out_w = cfg.patch_len * cfg.n_quantiles();
    let mut want = Vec::new();
    for h in 0..batch.horizon_patches {
        let slot = batch.ctx_patches + h;
        let x = &batch.features[slot * w..(slot + 1) * w];
        let hid: Vec<f64> = matvec(x, &w_in, d)
            .iter()
            .zip(&b_in)
            .map(|(v, b)| {
                let z = v + b;
                z / (1.0 + (-z).exp())
            })
            .collect();
        let skip = matvec(x, &w_skip, d);
        let e: Vec<f64> = matvec(&hid, &w_out, d)
            .iter()
            .zip(&b_out)
            .zip(&skip)
            .map(|((a, b), c)| a + b + c)
            .collect();
        want.extend(matvec(&e, &hw, out_w).iter().zip(&hb).map(|(a, b)| a + b));
    }
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn output_shape_and_determinism() {
    let cfg = small();
    let params = Params::<f32>::init(&cfg, 7).unwrap();
    let ctx: Vec<f64> = (0..20).map(|t| t as f64).collect();
    let mask = vec![true; 20];
    let inputs = [SeriesInput::target(&ctx, &mask); 3];
    let batch = GroupBatch::build(&inputs, &[0, 0, 1], &cfg, 3).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &params, false);
        let y = forward(&mut tape, &p, &cfg, &batch).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.shape(), &[3, 12, 21]);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn reg_token_shapes_the_forecast() {
    let cfg = small();
    let params = Params::<f64>::init(&cfg, 8).unwrap();
    let ctx: Vec<f64> = (0..20).map(|t| (t as f64).cos()).collect();
    let mask = vec![true; 20];
    let batch = GroupBatch::build(&[SeriesInput::target(&ctx, &mask)], &[0], &cfg, 2).unwrap();
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, &params, false);
    let with = forward_with(&mut tape, &p, &cfg, &batch, true).unwrap();
    let without = forward_with(&mut tape, &p, &cfg, &batch, false).unwrap();
    assert_eq!(tape.shape(with), tape.shape(without));
    let diff: f64 = tape
        .value(with)
        .data()
        .iter()
        .zip(tape.value(without).data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 0.0);
}
