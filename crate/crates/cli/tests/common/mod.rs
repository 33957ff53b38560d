#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use groupcast::panel::{RATE_IDS, STOCK_IDS};
use groupcast::synth::CounterRng;
use groupcast_cli::RunConfig;

/// Monday-to-Friday calendar between two dates inclusive.
pub fn weekdays(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Writes synthetic stock (geometric random walks sharing a market factor)
/// and rate (mean-reverting, level-linked) panels; returns their paths.
pub fn write_panels(dir: &Path, from: NaiveDate, to: NaiveDate, seed: u64) -> (PathBuf, PathBuf) {
    let cal = weekdays(from, to);
    let mut rng = CounterRng::new(seed);
    let mut px: Vec<f64> = (0..STOCK_IDS.len()).map(|k| 50.0 + 20.0 * k as f64).collect();
    let mut level = 2.0;
    let mut rates: Vec<f64> = (0..RATE_IDS.len()).map(|k| 1.0 + 0.3 * k as f64).collect();
    let mut stocks_csv = format!("date,{}\n", STOCK_IDS.join(","));
    let mut rates_csv = format!("date,{}\n", RATE_IDS.join(","));
    for (t, d) in cal.iter().enumerate() {
        let market = 0.01 * rng.normal();
        let row: Vec<String> = px
            .iter_mut()
            .map(|p| {
                *p *= (0.0003 + market + 0.01 * rng.normal()).exp();
                format!("{p:.6}")
            })
            .collect();
        stocks_csv.push_str(&format!("{d},{}\n", row.join(",")));
        level += 0.01 * (2.5 - level) + 0.03 * rng.normal();
        let row: Vec<String> = rates
            .iter_mut()
            .enumerate()
            .map(|(k, r)| {
                let target = level + 0.25 * k as f64;
                *r += 0.2 * (target - *r) + 0.01 * rng.normal();
                // FRED marks holidays with "."
                if t % 97 == 5 && k == 0 {
                    ".".to_string()
                } else {
                    format!("{r:.4}")
                }
            })
            .collect();
        rates_csv.push_str(&format!("{d},{}\n", row.join(",")));
    }
    fs::create_dir_all(dir).unwrap();
    let (s, r) = (dir.join("stocks.csv"), dir.join("rates.csv"));
    fs::write(&s, stocks_csv).unwrap();
    fs::write(&r, rates_csv).unwrap();
    (s, r)
}

/// A fast end-to-end configuration rooted at `out`.
pub fn small_config(out: &Path, panels: (PathBuf, PathBuf)) -> RunConfig {
    let overrides: Vec<String> = [
        "model.d_model=16",
        "model.n_blocks=1",
        "model.n_heads=2",
        "model.ffn_hidden=16",
        "model.patch_len=8",
        "model.max_context=64",
        "model.horizon_patches=8",
        "train.stages=[{\"context\":32,\"steps\":6},{\"context\":64,\"steps\":4}]",
        "train.batch_size=4",
        "train.checkpoint_every=5",
        "synth.tsi.count=3",
        "synth.tsi.length=256",
        "synth.tcm.count=2",
        "synth.tcm.sampler.length=256",
        "synth.derived.count=2",
        "synth.derived.length=256",
        "grid.ns=[126,252]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut cfg = RunConfig::load(None, &overrides).unwrap();
    cfg.out_dir = Some(out.to_path_buf());
    cfg.panels.stocks = Some(panels.0);
    cfg.panels.rates = Some(panels.1);
    cfg
}
