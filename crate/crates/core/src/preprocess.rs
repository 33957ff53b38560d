//! Robust scaling, categorical encoding, meta features and patching.
//!
//! A series is standardized with statistics taken from observed context
//! points only, passed through `asinh`, augmented with a relative time
//! index and an observation mask, and cut into non-overlapping patches.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every fitted scale, in original units.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Number of channels per position in a patch: value, relative time, mask.
pub const PATCH_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEstimator {
    /// Mean and population standard deviation.
    #[default]
    MeanStd,
    /// Median and interquartile range rescaled to match a normal's std.
    MedianIqr,
}

/// Invertible per-series normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub loc: f64,
    pub scale: f64,
}

impl ScalingState {
    pub fn fit(series: &[f64], mask: &[bool], estimator: ScaleEstimator) -> Result<Self> {
        if series.len() != mask.len() {
            return Err(Error::shape("robust_scale", &[series.len()], &[mask.len()]));
        }
        let mut obs: Vec<f64> = series
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        if obs.is_empty() {
            return Err(Error::Degenerate("series has no observed points".into()));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("observed value is not finite".into()));
        }
        let (loc, scale) = match estimator {
            ScaleEstimator::MeanStd => {
                let n = obs.len() as f64;
                let mean = obs.iter().sum::<f64>() / n;
                let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            ScaleEstimator::MedianIqr => {
                obs.sort_by(f64::total_cmp);
                let q = |p: f64| quantile_sorted(&obs, p);
                (q(0.5), (q(0.75) - q(0.25)) / 1.348_979_500_392_163_5)
            }
        };
        Ok(Self {
            loc,
            scale: scale.max(SCALE_FLOOR),
        })
    }

    pub fn forward(&self, x: f64) -> f64 {
        ((x - self.loc) / self.scale).asinh()
    }

    pub fn inverse(&self, s: f64) -> f64 {
        s.sinh() * self.scale + self.loc
    }

    /// Scales `values`, writing 0 wherever `mask` is false.
    pub fn apply(&self, values: &[f64], mask: &[bool]) -> Vec<f64> {
        values
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { self.forward(v) } else { 0.0 })
            .collect()
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Standardizes with mean/std and applies `asinh`; unobserved points become 0.
pub fn robust_scale(series: &[f64], mask: &[bool]) -> Result<(Vec<f64>, ScalingState)> {
    robust_scale_with(series, mask, ScaleEstimator::MeanStd)
}

pub fn robust_scale_with(
    series: &[f64],
    mask: &[bool],
    estimator: ScaleEstimator,
) -> Result<(Vec<f64>, ScalingState)> {
    let state = ScalingState::fit(series, mask, estimator)?;
    Ok((state.apply(series, mask), state))
}

pub fn inverse_scale(scaled: &[f64], state: &ScalingState) -> Vec<f64> {
    scaled.iter().map(|&s| state.inverse(s)).collect()
}

/// Relative time index for `len` positions out of a `total`-long
/// context+horizon span, normalized to `[0, 1]`.
pub fn relative_time(start: usize, len: usize, total: usize) -> Vec<f64> {
    let denom = total.saturating_sub(1).max(1) as f64;
    (start..start + len).map(|i| i as f64 / denom).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaFeatures {
    pub rel_time: Vec<f64>,
    pub observed_mask: Vec<bool>,
}

impl MetaFeatures {
    /// Meta features for a context of `mask.len()` points followed by a
    /// `horizon`-long forecast span.
    pub fn for_context(mask: &[bool], horizon: usize) -> Self {
        let n = mask.len();
        Self {
            rel_time: relative_time(0, n, n + horizon),
            observed_mask: mask.to_vec(),
        }
    }
}

/// Non-overlapping patches with `[value, rel_time, mask]` per position.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// Row-major `n_patches × patch_len × 3`.
    pub data: Vec<f64>,
    pub patch_len: usize,
    pub pad_count: usize,
    pub n_patches: usize,
}

impl PatchSequence {
    pub fn patch(&self, i: usize) -> &[f64] {
        let w = self.patch_len * PATCH_CHANNELS;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn value_at(&self, pos: usize) -> f64 {
        self.data[pos * PATCH_CHANNELS]
    }

    pub fn mask_at(&self, pos: usize) -> f64 {
        self.data[pos * PATCH_CHANNELS + 2]
    }

    /// Value channel with the left padding dropped.
    pub fn flatten_values(&self) -> Vec<f64> {
        let total = self.n_patches * self.patch_len;
        (self.pad_count..total).map(|p| self.value_at(p)).collect()
    }
}

/// Left-pads with masked zeros to a multiple of `patch_len` and splits.
pub fn patchify(scaled: &[f64], meta: &MetaFeatures, patch_len: usize) -> Result<PatchSequence> {
    if patch_len == 0 {
        return Err(Error::Config("patch length must be positive".into()));
    }
    let n = scaled.len();
    if meta.rel_time.len() != n || meta.observed_mask.len() != n {
        return Err(Error::shape(
            "patchify",
            &[n],
            &[meta.rel_time.len(), meta.observed_mask.len()],
        ));
    }
    let n_patches = n.div_ceil(patch_len);
    let pad_count = n_patches * patch_len - n;
    let mut data = vec![0.0; pad_count * PATCH_CHANNELS];
    data.reserve(n * PATCH_CHANNELS);
    for i in 0..n {
        let observed = meta.observed_mask[i];
        data.push(if observed { scaled[i] } else { 0.0 });
        data.push(meta.rel_time[i]);
        data.push(if observed { 1.0 } else { 0.0 });
    }
    Ok(PatchSequence {
        data,
        patch_len,
        pad_count,
        n_patches,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CategoricalEncoding {
    Target,
    Ordinal,
}

/// Maps categories to reals, fitted on a context window.
#[derive(Clone, Debug)]
pub struct CategoricalEncoder {
    encoding: CategoricalEncoding,
    table: HashMap<String, f64>,
    unseen: f64,
}

impl CategoricalEncoder {
    /// Per-category mean of `target`; unseen categories get the global mean.
    pub fn fit_target<S: AsRef<str>>(categories: &[S], target: &[f64]) -> Result<Self> {
        if categories.len() != target.len() {
            return Err(Error::shape(
                "encode_categorical",
                &[categories.len()],
                &[target.len()],
            ));
        }
        if categories.is_empty() {
            return Err(Error::Degenerate("no categories to encode".into()));
        }
        let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
        for (c, &y) in categories.iter().zip(target) {
            let e = sums.entry(c.as_ref().to_owned()).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
        let unseen = target.iter().sum::<f64>() / target.len() as f64;
        let table = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        Ok(Self {
            encoding: CategoricalEncoding::Target,
            table,
            unseen,
        })
    }

    /// Rank of first appearance; unseen categories get the next rank.
    pub fn fit_ordinal<S: AsRef<str>>(categories: &[S]) -> Self {
        let mut table = HashMap::new();
        for c in categories {
            let next = table.len() as f64;
            table.entry(c.as_ref().to_owned()).or_insert(next);
        }
        let unseen = table.len() as f64;
        Self {
            encoding: CategoricalEncoding::Ordinal,
            table,
            unseen,
        }
    }

    pub fn encoding(&self) -> CategoricalEncoding {
        self.encoding
    }

    pub fn transform<S: AsRef<str>>(&self, categories: &[S]) -> Vec<f64> {
        categories
            .iter()
            .map(|c| self.table.get(c.as_ref()).copied().unwrap_or(self.unseen))
            .collect()
    }
}

/// Target encoding when `target` is given, ordinal encoding otherwise.
pub fn encode_categorical<S: AsRef<str>>(values: &[S], target: Option<&[f64]>) -> Result<Vec<f64>> {
    let enc = match target {
        Some(t) => CategoricalEncoder::fit_target(values, t)?,
        None => CategoricalEncoder::fit_ordinal(values),
    };
    Ok(enc.transform(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_series_scales_to_zero() {
        let (s, st) = robust_scale(&[5.0; 4], &[true; 4]).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert_eq!(st.scale, SCALE_FLOOR);
        assert_eq!(st.loc, 5.0);
    }

    #[test]
    fn ramp_matches_scripted_oracle() {
        // numpy: mean=2, std=sqrt(2), asinh((x-2)/sqrt(2))
        let (s, st) = robust_scale(&[0., 1., 2., 3., 4.], &[true; 5]).unwrap();
        assert_eq!(st.loc, 2.0);
        assert!((st.scale - std::f64::consts::SQRT_2).abs() < 1e-15);
        let want = [
            -1.146_215_834_780_588_9,
            -0.658_478_948_462_408_3,
            0.0,
            0.658_478_948_462_408_3,
            1.146_215_834_780_588_9,
        ];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn all_missing_is_degenerate() {
        assert!(matches!(
            robust_scale(&[1.0, 2.0], &[false, false]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn missing_points_scale_to_zero_and_are_ignored() {
        let (s, st) = robust_scale(&[1.0, 1e9, 3.0], &[true, false, true]).unwrap();
        assert_eq!(s[1], 0.0);
        assert_eq!(st.loc, 2.0);
    }

    #[test]
    fn median_iqr_variant() {
        let (_, st) =
            robust_scale_with(&[1., 2., 3., 4., 100.], &[true; 5], ScaleEstimator::MedianIqr)
                .unwrap();
        assert_eq!(st.loc, 3.0);
        assert!((st.scale - 2.0 / 1.348_979_500_392_163_5).abs() < 1e-12);
    }

    #[test]
    fn inverse_of_zero_is_loc() {
        let st = ScalingState { loc: 3.5, scale: 2.0 };
        assert_eq!(inverse_scale(&[0.0], &st), vec![3.5]);
    }

    #[test]
    fn categorical_examples() {
        assert_eq!(encode_categorical(&["a", "a"], None).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            encode_categorical(&["a", "b", "a"], Some(&[1.0, 3.0, 2.0])).unwrap(),
            vec![1.5, 3.0, 1.5]
        );
        assert_eq!(
            encode_categorical(&["x", "z", "y", "z"], None).unwrap(),
            vec![0.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn unseen_categories() {
        let t = CategoricalEncoder::fit_target(&["a", "b"], &[1.0, 3.0]).unwrap();
        assert_eq!(t.transform(&["c"]), vec![2.0]);
        let o = CategoricalEncoder::fit_ordinal(&["a", "b", "a"]);
        assert_eq!(o.transform(&["q", "b"]), vec![2.0, 1.0]);
    }

    fn meta(n: usize) -> MetaFeatures {
        MetaFeatures::for_context(&vec![true; n], 0)
    }

    #[test]
    fn patch_counts() {
        let p = patchify(&[1.0; 16], &meta(16), 8).unwrap();
        assert_eq!((p.n_patches, p.pad_count), (2, 0));

        let p = patchify(&[1.0; 10], &meta(10), 8).unwrap();
        assert_eq!((p.n_patches, p.pad_count), (2, 6));
        for pos in 0..6 {
            assert_eq!(p.mask_at(pos), 0.0);
            assert_eq!(p.value_at(pos), 0.0);
        }
        for pos in 6..16 {
            assert_eq!(p.mask_at(pos), 1.0);
        }
    }

    #[test]
    fn unit_patches_are_positions() {
        let x = [0.5, -1.0, 2.0];
        let p = patchify(&x, &meta(3), 1).unwrap();
        assert_eq!(p.n_patches, 3);
        for (i, &v) in x.iter().enumerate() {
            assert_eq!(p.patch(i)[0], v);
        }
    }

    #[test]
    fn zero_patch_length_is_config_error() {
        assert!(matches!(patchify(&[1.0], &meta(1), 0), Err(Error::Config(_))));
    }

    #[test]
    fn rel_time_is_increasing_and_normalized() {
        let m = MetaFeatures::for_context(&[true; 6], 2);
        assert_eq!(m.rel_time[0], 0.0);
        assert!(m.rel_time.windows(2).all(|w| w[1] > w[0]));
        assert!((m.rel_time[5] - 5.0 / 7.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(
            xs in prop::collection::vec(-1e3f64..1e3, 1..64),
            miss in prop::collection::vec(any::<bool>(), 64),
        ) {
            let mut mask: Vec<bool> = miss[..xs.len()].to_vec();
            mask[0] = true;
            let (s, st) = robust_scale(&xs, &mask).unwrap();
            let back = inverse_scale(&s, &st);
            for i in 0..xs.len() {
                if mask[i] {
                    prop_assert!((back[i] - xs[i]).abs() <= 1e-9 * xs[i].abs().max(1.0));
                }
            }
        }

        #[test]
        fn future_values_do_not_touch_state(
            xs in prop::collection::vec(-50f64..50.0, 2..40),
            bump in -1e6f64..1e6,
        ) {
            let ctx = xs.len() / 2;
            let mask = vec![true; ctx];
            let a = ScalingState::fit(&xs[..ctx], &mask, ScaleEstimator::MeanStd).unwrap();
            let mut ys = xs.clone();
            for v in &mut ys[ctx..] { *v += bump; }
            let b = ScalingState::fit(&ys[..ctx], &mask, ScaleEstimator::MeanStd).unwrap();
            prop_assert_eq!(a.loc.to_bits(), b.loc.to_bits());
            prop_assert_eq!(a.scale.to_bits(), b.scale.to_bits());
        }

        #[test]
        fn asinh_is_odd_about_the_mean(half in prop::collection::vec(-20f64..20.0, 1..20)) {
            // symmetric sample: mean 0 exactly, so 2*loc - x == -x
            let mut xs = half.clone();
            xs.extend(half.iter().map(|v| -v));
            let mask = vec![true; xs.len()];
            let (s, st) = robust_scale(&xs, &mask).unwrap();
            let mirrored: Vec<f64> = xs.iter().map(|x| 2.0 * st.loc - x).collect();
            let (sm, _) = robust_scale(&mirrored, &mask).unwrap();
            for (a, b) in s.iter().zip(&sm) {
                prop_assert!((a + b).abs() < 1e-12);
            }
        }

        #[test]
        fn patch_flatten_roundtrip(xs in prop::collection::vec(-5f64..5.0, 1..50), p in 1usize..12) {
            let seq = patchify(&xs, &meta(xs.len()), p).unwrap();
            prop_assert_eq!(seq.flatten_values(), xs);
        }
    }
}
