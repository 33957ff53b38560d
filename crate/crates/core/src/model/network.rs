//! The encoder: residual patch embedding, REG separator, alternating time
//! and group attention, and the quantile head.

use std::sync::Arc;

use super::batch::GroupBatch;
use super::config::ModelConfig;
use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Parameters registered on a tape.
pub struct Bound<'a, T> {
    params: &'a Params<T>,
    vars: Vec<Var>,
}

impl<'a, T: Real> Bound<'a, T> {
    /// Records every parameter; `trainable` marks them for gradients.
    pub fn new(tape: &mut Tape<T>, params: &'a Params<T>, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.leaf(t.clone())
                }
            })
            .collect();
        Self { params, vars }
    }

    /// Binds already-recorded vars, one per parameter in order.
    pub fn from_vars(params: &'a Params<T>, vars: Vec<Var>) -> Self {
        assert_eq!(params.len(), vars.len(), "one var per parameter");
        Self { params, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    /// Vars in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Token indexing for a batch: row `r`, slot `s` lives at `r * slots + s`.
#[derive(Clone, Debug)]
pub struct TokenLayout {
    pub rows: usize,
    pub ctx_patches: usize,
    pub horizon_patches: usize,
    pub reg: Option<usize>,
    pub slots: usize,
    /// Rotary position of every token (its slot index).
    pub positions: Vec<f64>,
    pub time_seqs: Arc<Vec<Vec<usize>>>,
    pub group_seqs: Arc<Vec<Vec<usize>>>,
}

impl TokenLayout {
    /// `pad_patches[r]` leading slots of row `r` are padding and are left
    /// out of every attention set.
    pub fn new(
        rows: usize,
        ctx_patches: usize,
        horizon_patches: usize,
        group_ids: &[u32],
        pad_patches: &[usize],
        with_reg: bool,
    ) -> Self {
        let reg = with_reg.then_some(ctx_patches);
        let slots = ctx_patches + horizon_patches + usize::from(with_reg);
        let positions = (0..rows)
            .flat_map(|_| (0..slots).map(|s| s as f64))
            .collect();
        let time_seqs = (0..rows)
            .map(|r| (r * slots + pad_patches[r]..(r + 1) * slots).collect())
            .collect();
        let mut groups: Vec<u32> = Vec::new();
        for g in group_ids {
            if !groups.contains(g) {
                groups.push(*g);
            }
        }
        let mut group_seqs = Vec::with_capacity(slots * groups.len());
        for s in (0..slots).filter(|&s| Some(s) != reg) {
            for g in &groups {
                let seq: Vec<usize> = (0..rows)
                    .filter(|&r| group_ids[r] == *g && s >= pad_patches[r])
                    .map(|r| r * slots + s)
                    .collect();
                if !seq.is_empty() {
                    group_seqs.push(seq);
                }
            }
        }
        Self {
            rows,
            ctx_patches,
            horizon_patches,
            reg,
            slots,
            positions,
            time_seqs: Arc::new(time_seqs),
            group_seqs: Arc::new(group_seqs),
        }
    }

    pub fn for_batch(batch: &GroupBatch, with_reg: bool) -> Self {
        Self::new(
            batch.rows,
            batch.ctx_patches,
            batch.horizon_patches,
            &batch.group_ids,
            &batch.pad_patches,
            with_reg,
        )
    }

    pub fn n_tokens(&self) -> usize {
        self.rows * self.slots
    }

    /// Slot of future patch `h`.
    pub fn future_slot(&self, h: usize) -> usize {
        self.ctx_patches + usize::from(self.reg.is_some()) + h
    }
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// `silu(x·W_in + b_in)·W_out + b_out + x·W_skip` for every patch row of `x`.
pub fn embed_patches<T: Real>(tape: &mut Tape<T>, p: &Bound<'_, T>, x: Var) -> Result<Var> {
    let h = linear(tape, x, p.var("embed.w_in")?, Some(p.var("embed.b_in")?))?;
    let h = tape.silu(h);
    let h = linear(tape, h, p.var("embed.w_out")?, Some(p.var("embed.b_out")?))?;
    let skip = tape.matmul(x, p.var("embed.w_skip")?)?;
    tape.add(h, skip)
}

/// Places the shared REG embedding between each row's context and future
/// patches. `emb` holds `rows × (ctx + horizon)` patch embeddings.
pub fn insert_reg<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    emb: Var,
    layout: &TokenLayout,
) -> Result<Var> {
    let per_row = layout.ctx_patches + layout.horizon_patches;
    let mut index = Vec::with_capacity(layout.n_tokens());
    for r in 0..layout.rows {
        for s in 0..layout.slots {
            index.push(match layout.reg {
                Some(reg) if s == reg => (1, 0),
                Some(reg) if s > reg => (0, r * per_row + s - 1),
                _ => (0, r * per_row + s),
            });
        }
    }
    let reg = p.var("reg")?;
    tape.gather_rows(&[emb, reg], index)
}

fn attention_sublayer<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    prefix: &str,
    x: Var,
    seqs: Arc<Vec<Vec<usize>>>,
    positions: Option<&[f64]>,
    n_heads: usize,
) -> Result<Var> {
    let mut q = tape.matmul(x, p.var(&format!("{prefix}.wq"))?)?;
    let mut k = tape.matmul(x, p.var(&format!("{prefix}.wk"))?)?;
    let v = tape.matmul(x, p.var(&format!("{prefix}.wv"))?)?;
    if let Some(pos) = positions {
        q = tape.rope(q, pos, n_heads)?;
        k = tape.rope(k, pos, n_heads)?;
    }
    let a = tape.attention(q, k, v, seqs, n_heads)?;
    let o = linear(
        tape,
        a,
        p.var(&format!("{prefix}.wo"))?,
        Some(p.var(&format!("{prefix}.bo"))?),
    )?;
    let res = tape.add(x, o)?;
    tape.layer_norm(
        res,
        p.var(&format!("{prefix}.ln_g"))?,
        p.var(&format!("{prefix}.ln_b"))?,
    )
}

/// Bidirectional rotary attention along each row's patch axis, then
/// residual + layer norm.
pub fn time_attention<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    cfg: &ModelConfig,
    block: usize,
    x: Var,
    layout: &TokenLayout,
) -> Result<Var> {
    attention_sublayer(
        tape,
        p,
        &format!("blocks.{block}.time"),
        x,
        layout.time_seqs.clone(),
        Some(&layout.positions),
        cfg.n_heads,
    )
}

/// Attention across series at each patch index, restricted to rows sharing
/// a group id, then residual + layer norm. REG tokens take no part.
pub fn group_attention<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    cfg: &ModelConfig,
    block: usize,
    x: Var,
    layout: &TokenLayout,
) -> Result<Var> {
    attention_sublayer(
        tape,
        p,
        &format!("blocks.{block}.group"),
        x,
        layout.group_seqs.clone(),
        None,
        cfg.n_heads,
    )
}

pub fn feed_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    block: usize,
    x: Var,
) -> Result<Var> {
    let pre = format!("blocks.{block}.ffn");
    let h = linear(tape, x, p.var(&format!("{pre}.w1"))?, Some(p.var(&format!("{pre}.b1"))?))?;
    let h = tape.silu(h);
    let h = linear(tape, h, p.var(&format!("{pre}.w2"))?, Some(p.var(&format!("{pre}.b2"))?))?;
    let res = tape.add(x, h)?;
    tape.layer_norm(res, p.var(&format!("{pre}.ln_g"))?, p.var(&format!("{pre}.ln_b"))?)
}

/// Maps every future slot token to `patch_len × Q` values; returns
/// `[rows, horizon_patches·patch_len, Q]`.
pub fn quantile_head<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    cfg: &ModelConfig,
    x: Var,
    layout: &TokenLayout,
) -> Result<Var> {
    let index = (0..layout.rows)
        .flat_map(|r| (0..layout.horizon_patches).map(move |h| (r, h)))
        .map(|(r, h)| (0, r * layout.slots + layout.future_slot(h)))
        .collect();
    let fut = tape.gather_rows(&[x], index)?;
    let y = linear(tape, fut, p.var("head.w")?, Some(p.var("head.b")?))?;
    tape.reshape(
        y,
        &[
            layout.rows,
            layout.horizon_patches * cfg.patch_len,
            cfg.n_quantiles(),
        ],
    )
}

/// Patch features of `batch` as a `[rows·(ctx+horizon), patch_len·3]` tensor.
pub fn patch_input<T: Real>(batch: &GroupBatch) -> Result<Tensor<T>> {
    Tensor::from_f64(
        &[batch.rows * batch.patches_per_row(), batch.patch_width()],
        &batch.features,
    )
}

/// Full encoder pass: embed, insert REG, `n_blocks × (time, group, ffn)`,
/// head. Output is scaled-space quantiles `[rows, horizon·patch_len, Q]`.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    cfg: &ModelConfig,
    batch: &GroupBatch,
) -> Result<Var> {
    forward_with(tape, p, cfg, batch, true)
}

/// [`forward`] with the REG token optionally left out (ablation).
pub fn forward_with<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound<'_, T>,
    cfg: &ModelConfig,
    batch: &GroupBatch,
    with_reg: bool,
) -> Result<Var> {
    if batch.patch_len != cfg.patch_len {
        return Err(Error::Config(format!(
            "batch patch length {} differs from model {}",
            batch.patch_len, cfg.patch_len
        )));
    }
    let layout = TokenLayout::for_batch(batch, with_reg);
    let x = tape.leaf(patch_input(batch)?);
    let emb = embed_patches(tape, p, x)?;
    let mut h = insert_reg(tape, p, emb, &layout)?;
    for b in 0..cfg.n_blocks {
        h = time_attention(tape, p, cfg, b, h, &layout)?;
        h = group_attention(tape, p, cfg, b, h, &layout)?;
        h = feed_forward(tape, p, b, h)?;
    }
    quantile_head(tape, p, cfg, h, &layout)
}

/// Per-head time-attention logits of block `block` for tokens `x[L, d]` at
/// `positions`; returns `[heads, L, L]` row-major.
pub fn time_attention_logits<T: Real>(
    params: &Params<T>,
    cfg: &ModelConfig,
    block: usize,
    x: &Tensor<T>,
    positions: &[f64],
) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let p = Bound::new(&mut tape, params, false);
    let xv = tape.leaf(x.clone());
    let pre = format!("blocks.{block}.time");
    let q = tape.matmul(xv, p.var(&format!("{pre}.wq"))?)?;
    let k = tape.matmul(xv, p.var(&format!("{pre}.wk"))?)?;
    let q = tape.rope(q, positions, cfg.n_heads)?;
    let k = tape.rope(k, positions, cfg.n_heads)?;
    let (l, d) = (x.rows(), cfg.d_model);
    let hd = d / cfg.n_heads;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let (qd, kd) = (tape.value(q).data(), tape.value(k).data());
    let mut out = Vec::with_capacity(cfg.n_heads * l * l);
    for h in 0..cfg.n_heads {
        for i in 0..l {
            for j in 0..l {
                let mut acc = T::zero();
                for c in h * hd..(h + 1) * hd {
                    acc = acc + qd[i * d + c] * kd[j * d + c];
                }
                out.push(acc * scale);
            }
        }
    }
    Ok(out)
}
