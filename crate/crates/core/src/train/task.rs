use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{GroupBatch, ModelConfig, SeriesInput};
use crate::par;
use crate::synth::{CounterRng, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Uv,
    Mv,
    Covariate,
}

/// One training batch: several independent groups plus scaled targets.
#[derive(Clone, Debug)]
pub struct Task {
    pub batch: GroupBatch,
    /// Scaled future values, `rows × horizon_len`.
    pub targets: Vec<f64>,
    /// 1 for cells that enter the loss, 0 for covariate rows.
    pub weights: Vec<f64>,
    pub kinds: Vec<TaskKind>,
    /// Short description for diagnostics.
    pub summary: String,
}

struct Row {
    context: Vec<f64>,
    future: Vec<f64>,
    target: bool,
    known: bool,
}

fn pick_kind(cfg: &TrainConfig, rng: &mut CounterRng) -> TaskKind {
    let u = rng.uniform();
    if u < cfg.mix.uv {
        TaskKind::Uv
    } else if u < cfg.mix.uv + cfg.mix.mv || cfg.mix.covariate == 0.0 {
        TaskKind::Mv
    } else {
        TaskKind::Covariate
    }
}

/// Draws `count` distinct indices below `n` in increasing order.
fn subset(n: usize, count: usize, rng: &mut CounterRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

fn sample_group(
    corpus: &[Dataset],
    cfg: &TrainConfig,
    ctx_len: usize,
    hlen: usize,
    rng: &mut CounterRng,
) -> Result<(TaskKind, Vec<Row>)> {
    let mut kind = pick_kind(cfg, rng);
    let fits = |d: &&Dataset| d.series.first().is_some_and(|s| s.len() > hlen);
    let multi: Vec<&Dataset> = corpus.iter().filter(fits).filter(|d| d.series.len() > 1).collect();
    if multi.is_empty() {
        kind = TaskKind::Uv;
    }
    let pool: Vec<&Dataset> = match kind {
        TaskKind::Uv => corpus.iter().filter(fits).collect(),
        _ => multi,
    };
    if pool.is_empty() {
        return Err(Error::Degenerate(format!(
            "no dataset is longer than the {hlen}-point horizon"
        )));
    }
    let ds = pool[rng.below(pool.len())];
    let len = ds.series[0].len();
    let ctx = ctx_len.min(len - hlen);
    let start = rng.below(len - ctx - hlen + 1);
    let window = |k: usize| {
        let s = &ds.series[k];
        (s[start..start + ctx].to_vec(), s[start + ctx..start + ctx + hlen].to_vec())
    };
    let k = ds.series.len();
    let rows = match kind {
        TaskKind::Uv => {
            let (context, future) = window(rng.below(k));
            vec![Row {
                context,
                future,
                target: true,
                known: false,
            }]
        }
        TaskKind::Mv => subset(k, k.min(cfg.max_group), rng)
            .into_iter()
            .map(|i| {
                let (context, future) = window(i);
                Row {
                    context,
                    future,
                    target: true,
                    known: false,
                }
            })
            .collect(),
        TaskKind::Covariate => {
            let members = subset(k, k.min(cfg.max_group), rng);
            let target = members[rng.below(members.len())];
            members
                .into_iter()
                .map(|i| {
                    let (context, future) = window(i);
                    Row {
                        context,
                        future,
                        target: i == target,
                        known: i != target,
                    }
                })
                .collect()
        }
    };
    Ok((kind, rows))
}

/// Samples one batch of `cfg.batch_size` groups. Context length (at most
/// `stage_context`) and horizon are shared by the batch; every group draws
/// its own dataset, window and task kind from a fork of `rng`.
pub fn sample_task(
    corpus: &[Dataset],
    cfg: &TrainConfig,
    model: &ModelConfig,
    stage_context: usize,
    rng: &mut CounterRng,
) -> Result<Task> {
    if corpus.is_empty() {
        return Err(Error::Degenerate("training corpus is empty".into()));
    }
    let hi = stage_context.min(model.max_context).max(1);
    let lo = cfg.min_context.min(hi);
    let ctx_len = lo + rng.below(hi - lo + 1);
    let hp = 1 + rng.below(model.horizon_patches);
    let hlen = hp * model.patch_len;
    let base = rng.fork(0x6772_6f75_7073);
    let groups = par::map_range(cfg.batch_size, |g| {
        sample_group(corpus, cfg, ctx_len, hlen, &mut base.fork(g as u64))
    });
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut kinds = Vec::with_capacity(groups.len());
    for (g, res) in groups.into_iter().enumerate() {
        let (kind, rs) = res?;
        kinds.push(kind);
        ids.extend(std::iter::repeat_n(g as u32, rs.len()));
        rows.extend(rs);
    }
    let masks: Vec<Vec<bool>> = rows.iter().map(|r| vec![true; r.context.len()]).collect();
    let inputs: Vec<SeriesInput<'_>> = rows
        .iter()
        .zip(&masks)
        .map(|(r, m)| SeriesInput {
            context: &r.context,
            mask: m,
            future_known: r.known.then_some(r.future.as_slice()),
        })
        .collect();
    let batch = GroupBatch::build(&inputs, &ids, model, hp)?;
    let mut targets = Vec::with_capacity(rows.len() * hlen);
    let mut weights = Vec::with_capacity(rows.len() * hlen);
    for (r, state) in rows.iter().zip(&batch.states) {
        targets.extend(r.future.iter().map(|&y| state.forward(y)));
        weights.extend(std::iter::repeat_n(if r.target { 1.0 } else { 0.0 }, hlen));
    }
    let summary = format!(
        "{} groups, {} rows, context {ctx_len}, horizon {hlen}",
        kinds.len(),
        rows.len()
    );
    Ok(Task {
        batch,
        targets,
        weights,
        kinds,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{DatasetKind, TcmSampler};
    use crate::train::TaskMix;

    fn corpus() -> Vec<Dataset> {
        let mut v = Vec::new();
        for seed in 0..3 {
            let spec = TcmSampler {
                length: 200,
                ..TcmSampler::default()
            }
            .sample(seed)
            .unwrap();
            v.push(Dataset {
                name: format!("tcm{seed}"),
                kind: DatasetKind::Tcm,
                series: crate::synth::tcm_generate(&spec).unwrap(),
            });
        }
        v.push(Dataset {
            name: "tsi".into(),
            kind: DatasetKind::Tsi,
            series: vec![(0..150).map(|t| (t as f64 * 0.2).sin()).collect()],
        });
        v
    }

    fn model() -> ModelConfig {
        ModelConfig {
            patch_len: 4,
            horizon_patches: 3,
            max_context: 64,
            ..ModelConfig::default()
        }
    }

    fn cfg(uv: f64, mv: f64, covariate: f64) -> TrainConfig {
        TrainConfig {
            batch_size: 6,
            min_context: 8,
            mix: TaskMix { uv, mv, covariate },
            ..TrainConfig::default()
        }
    }

    fn distinct(ids: &[u32]) -> usize {
        let mut v = ids.to_vec();
        v.dedup();
        v.len()
    }

    #[test]
    fn uv_only_gives_singleton_groups() {
        let c = corpus();
        for s in 0..20 {
            let t = sample_task(&c, &cfg(1.0, 0.0, 0.0), &model(), 64, &mut CounterRng::new(s)).unwrap();
            assert_eq!(distinct(&t.batch.group_ids), t.batch.rows);
        }
    }

    #[test]
    fn mv_only_gives_one_group_per_panel() {
        let c = corpus();
        for s in 0..20 {
            let t = sample_task(&c, &cfg(0.0, 1.0, 0.0), &model(), 64, &mut CounterRng::new(s)).unwrap();
            assert_eq!(distinct(&t.batch.group_ids), 6);
            assert!(t.batch.rows > 6);
            assert!(t.kinds.iter().all(|k| *k == TaskKind::Mv));
        }
    }

    #[test]
    fn covariate_futures_only_on_covariate_rows() {
        let c = corpus();
        for s in 0..100 {
            let t = sample_task(&c, &cfg(0.0, 0.0, 1.0), &model(), 64, &mut CounterRng::new(s)).unwrap();
            let hl = t.batch.horizon_len();
            for r in 0..t.batch.rows {
                let known = &t.batch.future_known_mask[r * hl..(r + 1) * hl];
                let w = &t.batch.future_inputs[r * hl..(r + 1) * hl];
                if t.weights[r * hl] == 1.0 {
                    assert!(known.iter().all(|k| !k));
                    assert!(w.iter().all(|v| *v == 0.0));
                } else {
                    assert!(known.iter().all(|k| *k));
                }
            }
            // one target row per group
            let targets = (0..t.batch.rows).filter(|r| t.weights[r * hl] == 1.0).count();
            assert_eq!(targets, 6);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = corpus();
        let a = sample_task(&c, &cfg(0.4, 0.4, 0.2), &model(), 64, &mut CounterRng::new(9)).unwrap();
        let b = sample_task(&c, &cfg(0.4, 0.4, 0.2), &model(), 64, &mut CounterRng::new(9)).unwrap();
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.batch.features, b.batch.features);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let r = sample_task(&[], &cfg(1.0, 0.0, 0.0), &model(), 64, &mut CounterRng::new(0));
        assert!(r.is_err());
    }
}
