use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use groupcast::eval::{
    emit_artifacts, plan, read_records, run_grid, EvalRecord, Forecaster, LastValue,
    ModelForecaster, PerfectForesight, RecordWriter, Report,
};
use groupcast::model::{Checkpoint, Mode, Model};
use groupcast::panel::{build_combined, PanelKind, SeriesPanel};
use groupcast::synth::{
    load_corpus, write_dataset, BaseSpec, CounterRng, DatasetSpec, DerivedSpec, TsiSpec,
};
use groupcast::train::{run_curriculum, RunPaths, TrainState};
use groupcast::{par, Error};
use log::info;

use crate::config::RunConfig;
use crate::tables::{self, PlanRow};
use crate::{with_workers, CliResult, Exit, Failure};

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::load(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

const SYNTH_PREFIXES: [&str; 4] = ["spec_", "tsi_", "tcm_", "derived_"];

fn family_seed(seed: u64, family: u64, i: usize) -> u64 {
    CounterRng::new(seed).fork(family).fork(i as u64).next_u64()
}

/// The named recipes `synth` writes, in file order.
pub fn synth_plan(cfg: &RunConfig) -> CliResult<Vec<(String, DatasetSpec)>> {
    let s = &cfg.synth;
    let mut out: Vec<(String, DatasetSpec)> = s
        .specs
        .iter()
        .enumerate()
        .map(|(i, spec)| (format!("spec_{i:05}"), spec.clone()))
        .collect();
    for i in 0..s.tsi.count {
        let spec = TsiSpec::random(s.tsi.length, family_seed(cfg.seed, 1, i));
        out.push((format!("tsi_{i:05}"), DatasetSpec::Tsi(spec)));
    }
    for i in 0..s.tcm.count {
        let spec = s.tcm.sampler.sample(family_seed(cfg.seed, 2, i))?;
        out.push((format!("tcm_{i:05}"), DatasetSpec::Tcm(spec)));
    }
    let d = &s.derived;
    for i in 0..d.count {
        let seed = family_seed(cfg.seed, 3, i);
        let base_len = d.length + d.lag_step * d.k.saturating_sub(1);
        let base = BaseSpec::Tsi(TsiSpec::random(base_len, seed));
        let spec = DerivedSpec::lead_lag(base, d.k, d.lag_step, d.noise_scale, seed ^ 1);
        out.push((format!("derived_{i:05}"), DatasetSpec::Derived(spec)));
    }
    Ok(out)
}

/// Writes every configured dataset with its provenance recipe. Earlier
/// generated files in the corpus directory are removed first so the
/// directory always mirrors one configuration.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let recipes = synth_plan(cfg)?;
    if recipes.is_empty() {
        emit(out, "no dataset specs configured; nothing written\n")?;
        return Ok(Vec::new());
    }
    let dir = cfg.corpus_dir();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let p = entry.map_err(|e| io_err(&dir, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ours = SYNTH_PREFIXES.iter().any(|pre| name.starts_with(pre))
                && (name.ends_with(".csv") || name.ends_with(".json"));
            if ours {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
    }
    let series = with_workers(cfg.workers, || par::map_slice(&recipes, |(_, spec)| spec.generate()))?;
    let mut written = Vec::with_capacity(2 * recipes.len());
    for ((name, spec), data) in recipes.iter().zip(series) {
        let data = data.map_err(|e| match e {
            Error::Unstable { .. } | Error::Config(_) | Error::Contract(_) => {
                Failure::new(Exit::Config, Error::Config(format!("{name}: {e}")))
            }
            other => other.into(),
        })?;
        let (csv, json) = write_dataset(&dir, name, &data, spec)?;
        written.push(csv);
        written.push(json);
    }
    emit(
        out,
        &format!("wrote {} datasets to {}\n", recipes.len(), dir.display()),
    )?;
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub step: u64,
    pub last_loss: f64,
    pub checkpoint: PathBuf,
}

/// Runs the curriculum on the corpus directory. Without `resume` the run
/// starts from seeded weights and a fresh log; with it, the checkpoint's
/// step counter, weights and moments carry on and the log is appended to.
pub fn cmd_train(cfg: &RunConfig, resume: bool, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.corpus_dir();
    if !dir.is_dir() {
        return Err(Failure::new(
            Exit::Config,
            Error::Config(format!("corpus directory {} does not exist", dir.display())),
        ));
    }
    let corpus = load_corpus(&dir)?;
    if corpus.is_empty() {
        return Err(Failure::new(
            Exit::Config,
            Error::Config(format!("corpus directory {} holds no datasets", dir.display())),
        ));
    }
    let ck_path = cfg.checkpoint_path();
    let log_path = cfg.log_path();
    let state = if resume {
        let ck = Checkpoint::load(&ck_path).map_err(Failure::load)?;
        if ck.model != cfg.model {
            return Err(Failure::new(
                Exit::Config,
                Error::Config("checkpoint architecture differs from the configured model".into()),
            ));
        }
        info!("resuming from step {}", ck.step);
        TrainState::from_checkpoint(ck)
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| io_err(&log_path, e))?;
        }
        TrainState::init(&cfg.model, cfg.seed)?
    };
    let paths = RunPaths {
        log: Some(log_path),
        checkpoint: Some(ck_path.clone()),
    };
    let state = with_workers(cfg.workers, || {
        run_curriculum(&cfg.train, &cfg.model, &corpus, state, &paths)
    })??;
    emit(
        out,
        &format!(
            "trained to step {} (last loss {:.6}); checkpoint {}\n",
            state.step,
            state.last_loss,
            ck_path.display()
        ),
    )?;
    Ok(TrainOutcome {
        step: state.step,
        last_loss: state.last_loss,
        checkpoint: ck_path,
    })
}

/// Harness self-test forecasters that bypass the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stub {
    LastValue,
    Perfect,
}

impl FromStr for Stub {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "last-value" => Ok(Stub::LastValue),
            "perfect" | "perfect-foresight" => Ok(Stub::Perfect),
            _ => Err(Error::Config(format!(
                "unknown stub {s:?} (expected last-value or perfect)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluateOptions {
    /// Replaces the configured modes when non-empty.
    pub modes: Vec<Mode>,
    pub stub: Option<Stub>,
    pub dry_run: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluateOutcome {
    pub records: usize,
    pub skips: usize,
    /// Grid cells (panel, mode, n, m, origin).
    pub cells: usize,
}

/// Loads the panels the grid needs; the combined panel is built from the
/// two single-market files.
pub fn load_panels(cfg: &RunConfig) -> CliResult<BTreeMap<PanelKind, SeriesPanel>> {
    let need = |k: PanelKind| {
        cfg.grid.panels.contains(&k)
            || (cfg.grid.panels.contains(&PanelKind::Combined) && k != PanelKind::Combined)
    };
    let path_of = |k: PanelKind, p: &Option<PathBuf>| -> CliResult<PathBuf> {
        p.clone().ok_or_else(|| {
            Failure::new(
                Exit::Config,
                Error::Config(format!(
                    "the grid includes {k} but panels.{} is not set",
                    k.name()
                )),
            )
        })
    };
    let mut wanted = Vec::new();
    for (k, p) in [
        (PanelKind::Stocks, &cfg.panels.stocks),
        (PanelKind::Rates, &cfg.panels.rates),
    ] {
        if need(k) {
            wanted.push((k, path_of(k, p)?));
        }
    }
    let mut loaded = BTreeMap::new();
    for (k, path) in wanted {
        let panel = SeriesPanel::load(&path, &k.expected_ids()).map_err(Failure::load)?;
        panel.validate().map_err(Failure::load)?;
        loaded.insert(k, panel);
    }
    if cfg.grid.panels.contains(&PanelKind::Combined) {
        let c = build_combined(
            &loaded[&PanelKind::Stocks],
            &loaded[&PanelKind::Rates],
            cfg.panels.join,
        )
        .map_err(Failure::load)?;
        loaded.insert(PanelKind::Combined, c);
    }
    loaded.retain(|k, _| cfg.grid.panels.contains(k));
    Ok(loaded)
}

fn print_report(out: &mut dyn Write, report: &Report) -> CliResult<()> {
    emit(out, &tables::mode_table("Average performance by dataset and mode", &report.summary))?;
    emit(out, "\n")?;
    emit(out, &tables::series_table(&report.comparison))?;
    emit(out, "\n")?;
    emit(out, &tables::regime_line(&report.regime))
}

/// Runs the rolling grid, streams records to the records file, then writes
/// every artifact and prints the summary tables.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    opts: &EvaluateOptions,
    out: &mut dyn Write,
) -> CliResult<EvaluateOutcome> {
    let mut cfg = cfg.clone();
    if !opts.modes.is_empty() {
        cfg.grid.modes = Mode::ALL
            .into_iter()
            .filter(|m| opts.modes.contains(m))
            .collect();
    }
    cfg.validate()?;
    let panels = load_panels(&cfg)?;
    let planned = plan(&cfg.grid, &panels);
    let origins: usize = planned.iter().map(|c| c.3.len()).sum();
    let cells = origins * cfg.grid.modes.len();
    if opts.dry_run {
        let rows: Vec<PlanRow> = planned
            .iter()
            .map(|(p, n, m, o)| {
                let date = |d: Option<&chrono::NaiveDate>| d.map_or("-".to_string(), |d| d.to_string());
                (*p, *n, *m, o.len(), date(o.first()), date(o.last()))
            })
            .collect();
        let forecasts: usize = planned
            .iter()
            .map(|(p, _, _, o)| o.len() * panels[p].k())
            .sum::<usize>()
            * cfg.grid.modes.len();
        emit(out, &tables::plan_table(&rows, cfg.grid.modes.len(), cells, forecasts))?;
        let dir = cfg.out_dir();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let p = dir.join("grid_plan.csv");
        fs::write(&p, tables::plan_csv(&rows)).map_err(|e| io_err(&p, e))?;
        return Ok(EvaluateOutcome {
            cells,
            ..EvaluateOutcome::default()
        });
    }
    let forecaster: Box<dyn Forecaster> = match opts.stub {
        Some(Stub::LastValue) => Box::new(LastValue),
        Some(Stub::Perfect) => Box::new(PerfectForesight),
        None => {
            let ck = Checkpoint::load(&cfg.checkpoint_path()).map_err(Failure::load)?;
            let model = Model::new(ck.model.clone(), ck.params).map_err(Failure::load)?;
            cfg.grid.validate(Some(model.config.horizon_capacity()))?;
            Box::new(ModelForecaster {
                model,
                point_quantile: cfg.grid.point_quantile,
            })
        }
    };
    let records_path = cfg.records_path();
    if let Some(dir) = records_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut writer = RecordWriter::create(&records_path)?;
    let (records, skips) = with_workers(cfg.workers, || {
        run_grid(&cfg.grid, &panels, forecaster.as_ref(), |chunk| writer.append(chunk))
    })??;
    drop(writer);
    info!("{} records written to {}", records.len(), records_path.display());
    let report = emit_artifacts(&records, cfg.grid.cutoff, &cfg.artifacts_dir())?;
    print_report(out, &report)?;
    emit(out, &tables::skip_line(&skips))?;
    Ok(EvaluateOutcome {
        records: records.len(),
        skips: skips.len(),
        cells,
    })
}

/// Rebuilds every artifact from an existing records file.
pub fn cmd_report(
    cfg: &RunConfig,
    records: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Vec<EvalRecord>> {
    let path = records.map_or_else(|| cfg.records_path(), Path::to_path_buf);
    let recs = read_records(&path).map_err(|e| match e {
        Error::Io { .. } => Failure::load(e),
        other => Failure::new(Exit::MalformedData, other),
    })?;
    let report = emit_artifacts(&recs, cfg.grid.cutoff, &cfg.artifacts_dir())?;
    print_report(out, &report)?;
    Ok(recs)
}

/// Parses and validates one panel file and prints its summary.
pub fn cmd_panel_validate(path: &Path, kind: PanelKind, out: &mut dyn Write) -> CliResult<()> {
    let panel = SeriesPanel::load(path, &kind.expected_ids()).map_err(|e| match e {
        Error::Io { .. } => Failure::load(e),
        other => Failure::new(Exit::MalformedData, other),
    })?;
    panel
        .validate()
        .map_err(|e| Failure::new(Exit::MalformedData, e))?;
    emit(out, &format!("{} panel {}: ok\n{}", kind, path.display(), panel.summary()))
}
