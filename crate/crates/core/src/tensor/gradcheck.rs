//! Central finite-difference checks for the tape in `f64`.
//!
//! The error for one input tensor is norm-wise:
//! `|g_tape - g_fd|₂ / max(|g_tape|₂, |g_fd|₂, 1e-12)`.

use std::sync::Arc;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::model::network::{forward, Bound};
use crate::model::{GroupBatch, ModelConfig, Params, SeriesInput};
use crate::synth::CounterRng;

/// Step used by every check here.
pub const FD_STEP: f64 = 1e-4;

/// A scalar function of several tensors recorded on a tape.
pub type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn eval(build: &Build<'_>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Relative error per input tensor between tape and central-difference
/// gradients of `build` at `inputs`.
pub fn check(build: &Build<'_>, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut errs = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zeros(*v, t.shape());
        let mut num = 0.0;
        let mut den_a = 0.0;
        let mut den_n = 0.0;
        for j in 0..t.len() {
            let x = t.data()[j];
            probe[i].data_mut()[j] = x + h;
            let fp = eval(build, &probe)?;
            probe[i].data_mut()[j] = x - h;
            let fm = eval(build, &probe)?;
            probe[i].data_mut()[j] = x;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            num += (a - fd) * (a - fd);
            den_a += a * a;
            den_n += fd * fd;
        }
        errs.push(num.sqrt() / den_a.sqrt().max(den_n.sqrt()).max(1e-12));
    }
    Ok(errs)
}

pub fn random_tensor(shape: &[usize], rng: &mut CounterRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// `Σ f(x) ⊙ R` for a fixed random `R`, so every output element gets a
/// distinct weight in the loss.
fn weighted(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = CounterRng::new(seed);
    let r = random_tensor(tape.shape(y), &mut rng);
    let r = tape.leaf(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

/// Worst relative error of every differentiable tape operation, by name.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = CounterRng::new(seed);
    let mut r = |s: &[usize]| random_tensor(s, &mut rng);
    let worst = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let mut out = Vec::new();

    let ins = [r(&[3, 4]), r(&[4, 5])];
    out.push(("matmul", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.matmul(v[0], v[1])?;
        weighted(t, y, 1)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[3, 4]), r(&[3, 4])];
    out.push(("add", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.add(v[0], v[1])?;
        weighted(t, y, 2)
    }, &ins, FD_STEP)?)));
    out.push(("mul", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.mul(v[0], v[1])?;
        weighted(t, y, 3)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[3, 4]), r(&[4])];
    out.push(("add_bias", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.add_bias(v[0], v[1])?;
        weighted(t, y, 4)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[3, 4])];
    out.push(("scale", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.scale(v[0], -1.7);
        weighted(t, y, 5)
    }, &ins, FD_STEP)?)));
    out.push(("silu", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.silu(v[0]);
        weighted(t, y, 6)
    }, &ins, FD_STEP)?)));
    out.push(("softmax_rows", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.softmax_rows(v[0])?;
        weighted(t, y, 7)
    }, &ins, FD_STEP)?)));
    out.push(("reshape", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.reshape(v[0], &[2, 6])?;
        weighted(t, y, 8)
    }, &ins, FD_STEP)?)));
    out.push(("mean", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y))
    }, &ins, FD_STEP)?)));

    let ins = [r(&[3, 6]), r(&[6]), r(&[6])];
    out.push(("layer_norm", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        weighted(t, y, 9)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[5, 8])];
    out.push(("rope", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.rope(v[0], &[0.0, 1.0, 2.0, 7.0, 3.5], 2)?;
        weighted(t, y, 10)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[6, 8]), r(&[6, 8]), r(&[6, 8])];
    let seqs = Arc::new(vec![vec![0, 2, 4], vec![1, 5]]);
    out.push(("attention", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.attention(v[0], v[1], v[2], seqs.clone(), 2)?;
        weighted(t, y, 11)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[3, 4]), r(&[2, 4])];
    out.push(("gather_rows", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        let y = t.gather_rows(&[v[0], v[1]], vec![(1, 0), (0, 2), (0, 2), (1, 1)])?;
        weighted(t, y, 12)
    }, &ins, FD_STEP)?)));

    let ins = [r(&[4, 3])];
    let target: Arc<[f64]> = Arc::from(vec![0.3, -1.2, 2.5, 0.1]);
    let weight: Arc<[f64]> = Arc::from(vec![1.0, 0.0, 1.0, 1.0]);
    let levels: Arc<[f64]> = Arc::from(vec![0.1, 0.5, 0.9]);
    out.push(("pinball", worst(check(&|t: &mut Tape<f64>, v: &[Var]| {
        t.pinball(v[0], target.clone(), weight.clone(), levels.clone())
    }, &ins, FD_STEP)?)));

    Ok(out)
}

/// Tiny two-block configuration used for whole-model gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_blocks: 2,
        n_heads: 2,
        ffn_hidden: 8,
        patch_len: 2,
        max_context: 16,
        horizon_patches: 2,
        ..ModelConfig::default()
    }
}

/// Relative error per parameter tensor of the full model's pinball loss on
/// a three-series batch (two groups, one partly masked context).
pub fn model_check(seed: u64) -> Result<Vec<(String, f64)>> {
    let cfg = tiny_config();
    let params = Params::<f64>::init(&cfg, seed)?;
    let mut rng = CounterRng::new(seed ^ 0x5eed);
    let ctx: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..7 + k).map(|_| rng.normal() * 2.0 + 1.0).collect())
        .collect();
    let mut masks: Vec<Vec<bool>> = ctx.iter().map(|c| vec![true; c.len()]).collect();
    masks[2][1] = false;
    let inputs: Vec<_> = ctx
        .iter()
        .zip(&masks)
        .map(|(c, m)| SeriesInput::target(c, m))
        .collect();
    let batch = GroupBatch::build(&inputs, &[0, 0, 1], &cfg, 2)?;
    let hl = batch.horizon_len();
    let q = cfg.n_quantiles();
    let target: Arc<[f64]> = (0..3 * hl).map(|_| rng.normal()).collect();
    let weight: Arc<[f64]> = (0..3 * hl).map(|i| if i % 5 == 3 { 0.0 } else { 1.0 }).collect();
    let levels: Arc<[f64]> = cfg.quantile_levels.clone().into();
    let names = params.names().to_vec();
    let build = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let p = Params::from_parts(names.clone(), v.iter().map(|&x| t.value(x).clone()).collect());
        let bound = Bound::from_vars(&p, v.to_vec());
        let y = forward(t, &bound, &cfg, &batch)?;
        let y = t.reshape(y, &[3 * hl, q])?;
        t.pinball(y, target.clone(), weight.clone(), levels.clone())
    };
    let errs = check(&build, params.tensors(), FD_STEP)?;
    Ok(names.into_iter().zip(errs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        for (name, err) in op_suite(1).unwrap() {
            assert!(err <= 1e-5, "{name}: {err:e}");
        }
    }

    #[test]
    fn full_model_matches_finite_differences() {
        for (name, err) in model_check(2).unwrap() {
            eprintln!("{name}: {err:e}");
            assert!(err <= 1e-5, "{name}: {err:e}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // the leaf adds 3·x0 to the loss without a tape edge back to x
        let ins = [Tensor::from_f64(&[2], &[0.3, -0.4]).unwrap()];
        let errs = check(
            &|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.silu(v[0]);
                let s = t.sum(y);
                let c = t.leaf(Tensor::scalar(t.value(v[0]).data()[0] * 3.0));
                t.add(s, c)
            },
            &ins,
            FD_STEP,
        )
        .unwrap();
        assert!(errs[0] > 0.1);
    }
}
