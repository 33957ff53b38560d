use chrono::{Datelike, NaiveDate};

/// Default months of history required before the first origin.
pub const WARMUP_MONTHS: u32 = 36;

fn month_index(d: NaiveDate) -> i32 {
    d.year() * 12 + d.month0() as i32
}

/// First trading day of each calendar month, from the month `warmup` months
/// after the panel's first month, keeping only origins with at least `n`
/// earlier days and `m` days from the origin onwards.
pub fn rolling_origins(dates: &[NaiveDate], n: usize, m: usize, warmup: u32) -> Vec<NaiveDate> {
    let Some(&first) = dates.first() else {
        return Vec::new();
    };
    let start = month_index(first) + warmup as i32;
    let mut out = Vec::new();
    let mut last_month = None;
    for (i, &d) in dates.iter().enumerate() {
        let mi = month_index(d);
        if last_month == Some(mi) {
            continue;
        }
        last_month = Some(mi);
        if mi >= start && i >= n && i + m <= dates.len() {
            out.push(d);
        }
    }
    out
}
