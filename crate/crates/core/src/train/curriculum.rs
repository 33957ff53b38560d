use std::borrow::Cow;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use super::config::TrainConfig;
use super::step::{train_step, TrainState};
use super::task::sample_task;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::model::ModelConfig;
use crate::synth::{CounterRng, Dataset};

pub const LOG_HEADER: &str = "step,stage,loss,lr,wallclock_ms";

/// Where a curriculum run writes. Either may be omitted.
#[derive(Clone, Debug, Default)]
pub struct RunPaths {
    /// Append-only training log.
    pub log: Option<PathBuf>,
    /// Checkpoint rewritten at every cadence point and at the end.
    pub checkpoint: Option<PathBuf>,
}

struct LogSink {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl LogSink {
    fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        if fresh {
            writeln!(out, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    fn row(&mut self, step: u64, stage: usize, loss: f64, lr: f64, ms: u128) -> Result<()> {
        writeln!(self.out, "{step},{stage},{},{},{ms}", fmt_f64(loss), fmt_f64(lr))
            .map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs every stage from `state.step` to the configured total. Step `s`
/// (zero-based) draws its batch from `CounterRng::new(seed).fork(s)`, so a
/// resumed run sees the same batches an uninterrupted run would.
pub fn run_curriculum(
    cfg: &TrainConfig,
    model: &ModelConfig,
    corpus: &[Dataset],
    mut state: TrainState,
    paths: &RunPaths,
) -> Result<TrainState> {
    cfg.validate()?;
    model.validate()?;
    let total = cfg.total_steps();
    let mut log = paths.log.as_deref().map(LogSink::open).transpose()?;
    let root = CounterRng::new(cfg.seed);
    let clock = Instant::now();
    let save = |state: &TrainState, log: &mut Option<LogSink>| -> Result<()> {
        if let Some(l) = log.as_mut() {
            l.flush()?;
        }
        if let Some(p) = &paths.checkpoint {
            state.to_checkpoint(model).save(p)?;
        }
        Ok(())
    };
    let mut current: Option<(usize, TrainConfig, Cow<'_, [Dataset]>)> = None;
    while state.step < total {
        let step = state.step;
        let stage = cfg.stage_of(step);
        if current.as_ref().is_none_or(|c| c.0 != stage) {
            let st = &cfg.stages[stage];
            info!("stage {} begins at step {step} with context {}", stage + 1, st.context);
            let mut stage_cfg = cfg.clone();
            if let Some(m) = st.mix {
                stage_cfg.mix = m;
            }
            let pool: Cow<'_, [Dataset]> = match &st.kinds {
                Some(kinds) => corpus.iter().filter(|d| kinds.contains(&d.kind)).cloned().collect(),
                None => Cow::Borrowed(corpus),
            };
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "stage {} selects no dataset from the corpus",
                    stage + 1
                )));
            }
            current = Some((stage, stage_cfg, pool));
        }
        let (_, stage_cfg, pool) = current.as_ref().expect("set above");
        let task = sample_task(
            pool,
            stage_cfg,
            model,
            cfg.stages[stage].context,
            &mut root.fork(step),
        )?;
        let lr = cfg.lr_at(step);
        let loss = train_step(&mut state, cfg, model, &task, lr)?;
        if let Some(l) = log.as_mut() {
            l.row(state.step, stage + 1, loss, lr, clock.elapsed().as_millis())?;
        }
        if state.step.is_multiple_of(1000) {
            info!("step {} loss {:.4} (avg {:.4})", state.step, loss, state.loss_ema);
        }
        if cfg.checkpoint_every > 0 && state.step.is_multiple_of(cfg.checkpoint_every) {
            save(&state, &mut log)?;
        }
    }
    save(&state, &mut log)?;
    Ok(state)
}
