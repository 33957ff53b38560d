use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::preprocess::{patchify, relative_time, MetaFeatures, ScalingState, PATCH_CHANNELS};

/// One row of a group batch before scaling.
#[derive(Clone, Copy, Debug)]
pub struct SeriesInput<'a> {
    pub context: &'a [f64],
    pub mask: &'a [bool],
    /// Known future values (original units) for covariate rows; `None` for targets.
    pub future_known: Option<&'a [f64]>,
}

impl<'a> SeriesInput<'a> {
    pub fn target(context: &'a [f64], mask: &'a [bool]) -> Self {
        Self {
            context,
            mask,
            future_known: None,
        }
    }
}

/// Patched model input for a set of series rows.
///
/// Every row holds `ctx_patches` context patches followed by
/// `horizon_patches` future slots; the REG token is inserted between them
/// at `reg_position` when the batch is embedded. Future slots carry the
/// future input matrix `W` (scaled known covariate values, zero elsewhere).
#[derive(Clone, Debug)]
pub struct GroupBatch {
    pub rows: usize,
    pub ctx_patches: usize,
    pub horizon_patches: usize,
    pub patch_len: usize,
    /// Row-major `rows × (ctx_patches + horizon_patches) × patch_len·3`.
    pub features: Vec<f64>,
    pub group_ids: Vec<u32>,
    /// Leading all-padding patches of each row; they take no part in attention.
    pub pad_patches: Vec<usize>,
    pub states: Vec<ScalingState>,
    /// `rows × horizon_patches·patch_len`, scaled.
    pub future_inputs: Vec<f64>,
    pub future_known_mask: Vec<bool>,
    /// Relative time of each patch's last position, `rows × (ctx+horizon)`.
    pub patch_time: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GroupBatch {
    pub fn reg_position(&self) -> usize {
        self.ctx_patches
    }

    pub fn patches_per_row(&self) -> usize {
        self.ctx_patches + self.horizon_patches
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon_patches * self.patch_len
    }

    pub fn patch_width(&self) -> usize {
        self.patch_len * PATCH_CHANNELS
    }

    /// Scales, patches and lays out `inputs`. Contexts longer than
    /// `cfg.max_context` keep their most recent points and add a warning;
    /// shorter contexts are left-padded with masked zero patches.
    pub fn build(
        inputs: &[SeriesInput<'_>],
        group_ids: &[u32],
        cfg: &ModelConfig,
        horizon_patches: usize,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Degenerate("group batch needs at least one series".into()));
        }
        if group_ids.len() != inputs.len() {
            return Err(Error::shape("group_ids", &[inputs.len()], &[group_ids.len()]));
        }
        if horizon_patches == 0 || horizon_patches > cfg.horizon_patches {
            return Err(Error::Config(format!(
                "horizon of {horizon_patches} patches outside 1..={}",
                cfg.horizon_patches
            )));
        }
        let p = cfg.patch_len;
        let hlen = horizon_patches * p;
        let mut warnings = Vec::new();
        let mut seqs = Vec::with_capacity(inputs.len());
        let mut states = Vec::with_capacity(inputs.len());
        for (row, inp) in inputs.iter().enumerate() {
            if inp.context.len() != inp.mask.len() {
                return Err(Error::shape("context", &[inp.context.len()], &[inp.mask.len()]));
            }
            let start = inp.context.len().saturating_sub(cfg.max_context);
            if start > 0 {
                warnings.push(format!(
                    "row {row}: context of {} truncated to {}",
                    inp.context.len(),
                    cfg.max_context
                ));
            }
            let (ctx, mask) = (&inp.context[start..], &inp.mask[start..]);
            let state = ScalingState::fit(ctx, mask, Default::default())
                .map_err(|e| Error::Degenerate(format!("row {row}: {e}")))?;
            let scaled = state.apply(ctx, mask);
            let meta = MetaFeatures::for_context(mask, hlen);
            seqs.push(patchify(&scaled, &meta, p)?);
            states.push(state);
        }
        let ctx_patches = seqs.iter().map(|s| s.n_patches).max().unwrap_or(0);
        let slots = ctx_patches + horizon_patches;
        let width = p * PATCH_CHANNELS;
        let rows = inputs.len();
        let mut features = vec![0.0; rows * slots * width];
        let mut patch_time = vec![0.0; rows * slots];
        let mut future_inputs = vec![0.0; rows * hlen];
        let mut future_known_mask = vec![false; rows * hlen];
        let pad_patches: Vec<usize> = seqs.iter().map(|s| ctx_patches - s.n_patches).collect();
        for (row, (seq, inp)) in seqs.iter().zip(inputs).enumerate() {
            let lead = ctx_patches - seq.n_patches;
            let base = row * slots * width;
            features[base + lead * width..base + ctx_patches * width].copy_from_slice(&seq.data);
            for i in 0..seq.n_patches {
                patch_time[row * slots + lead + i] = seq.patch(i)[width - 2];
            }
            let ctx_len = seq.n_patches * p - seq.pad_count;
            let times = relative_time(ctx_len, hlen, ctx_len + hlen);
            if let Some(known) = inp.future_known {
                if known.len() < hlen {
                    return Err(Error::shape("future_known", &[hlen], &[known.len()]));
                }
                for j in 0..hlen {
                    if known[j].is_finite() {
                        future_inputs[row * hlen + j] = states[row].forward(known[j]);
                        future_known_mask[row * hlen + j] = true;
                    }
                }
            }
            for j in 0..hlen {
                let off = base + ctx_patches * width + j * PATCH_CHANNELS;
                features[off] = future_inputs[row * hlen + j];
                features[off + 1] = times[j];
                features[off + 2] = if future_known_mask[row * hlen + j] { 1.0 } else { 0.0 };
            }
            for h in 0..horizon_patches {
                patch_time[row * slots + ctx_patches + h] = times[(h + 1) * p - 1];
            }
        }
        Ok(Self {
            rows,
            ctx_patches,
            horizon_patches,
            patch_len: p,
            features,
            group_ids: group_ids.to_vec(),
            pad_patches,
            states,
            future_inputs,
            future_known_mask,
            patch_time,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            max_context: 32,
            horizon_patches: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_and_padding() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = (0..8).map(f64::from).collect();
        let (ma, mb) = (vec![true; 20], vec![true; 8]);
        let batch = GroupBatch::build(
            &[SeriesInput::target(&a, &ma), SeriesInput::target(&b, &mb)],
            &[0, 0],
            &cfg(),
            2,
        )
        .unwrap();
        assert_eq!(batch.ctx_patches, 3);
        assert_eq!(batch.reg_position(), 3);
        assert_eq!(batch.pad_patches, vec![0, 2]);
        let w = batch.patch_width();
        let slots = batch.patches_per_row();
        // row 1 has one context patch; its first two patches are all zero
        let row1 = &batch.features[slots * w..2 * slots * w];
        assert!(row1[..2 * w].iter().all(|&v| v == 0.0));
        assert!(row1[2 * w + 2] == 1.0);
        assert!(batch.future_inputs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_context_is_truncated_with_warning() {
        let a: Vec<f64> = (0..40).map(f64::from).collect();
        let m = vec![true; 40];
        let batch = GroupBatch::build(&[SeriesInput::target(&a, &m)], &[0], &cfg(), 1).unwrap();
        assert_eq!(batch.ctx_patches, 4);
        assert_eq!(batch.warnings.len(), 1);
        // scaling statistics come from the retained window only
        assert!((batch.states[0].loc - 23.5).abs() < 1e-12);
    }

    #[test]
    fn covariate_future_goes_to_w_only_where_known() {
        let a: Vec<f64> = (0..16).map(f64::from).collect();
        let m = vec![true; 16];
        let mut fut = vec![f64::NAN; 8];
        fut[0] = 3.0;
        fut[5] = 4.0;
        let rows = [
            SeriesInput::target(&a, &m),
            SeriesInput {
                context: &a,
                mask: &m,
                future_known: Some(&fut),
            },
        ];
        let batch = GroupBatch::build(&rows, &[0, 0], &cfg(), 1).unwrap();
        for (v, k) in batch.future_inputs.iter().zip(&batch.future_known_mask) {
            if !k {
                assert_eq!(*v, 0.0);
            }
        }
        assert_eq!(batch.future_known_mask.iter().filter(|k| **k).count(), 2);
        assert!(batch.future_known_mask[8] && batch.future_known_mask[13]);
    }

    #[test]
    fn horizon_capacity_enforced() {
        let a = [1.0, 2.0];
        let m = [true, true];
        let r = GroupBatch::build(&[SeriesInput::target(&a, &m)], &[0], &cfg(), 5);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
