use crate::error::{Error, Result};
use crate::preprocess::ScalingState;

/// Cells with `|actual|` below this are left out of MAPE and counted.
pub const MAPE_FLOOR: f64 = 1e-8;

fn included<'a>(
    actual: &'a [f64],
    forecast: &'a [f64],
    mask: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if actual.len() != forecast.len() || mask.is_some_and(|m| m.len() != actual.len()) {
        return Err(Error::shape("metric", &[actual.len()], &[forecast.len()]));
    }
    Ok(actual
        .iter()
        .zip(forecast)
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&a, &f))| (a, f)))
}

/// Root mean squared error over cells whose mask is set (all when `None`).
pub fn rmse(actual: &[f64], forecast: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, f) in included(actual, forecast, mask)? {
        sum += (a - f) * (a - f);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate("rmse over zero observed cells".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute percentage error as a ratio, and the number of cells
/// skipped because the actual value is (nearly) zero.
pub fn mape(actual: &[f64], forecast: &[f64], mask: Option<&[bool]>) -> Result<(f64, usize)> {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for (a, f) in included(actual, forecast, mask)? {
        if a.abs() < MAPE_FLOOR {
            skipped += 1;
            continue;
        }
        sum += ((a - f) / a).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate(format!(
            "mape has no usable cells ({skipped} near-zero actuals skipped)"
        )));
    }
    Ok((sum / n as f64, skipped))
}

/// Mean pinball loss of sorted quantile paths against `actual`, measured in
/// the scaled space of `state` so series of different magnitude weigh
/// alike. `quantiles` is `len × levels.len()` row-major.
pub fn scaled_pinball(
    actual: &[f64],
    quantiles: &[f64],
    levels: &[f64],
    state: &ScalingState,
) -> Result<f64> {
    let q = levels.len();
    if quantiles.len() != actual.len() * q {
        return Err(Error::shape("scaled_pinball", &[actual.len(), q], &[quantiles.len()]));
    }
    if actual.is_empty() {
        return Err(Error::Degenerate("pinball over zero cells".into()));
    }
    let mut sum = 0.0;
    for (t, &y) in actual.iter().enumerate() {
        let ys = state.forward(y);
        for (j, &tau) in levels.iter().enumerate() {
            let e = ys - state.forward(quantiles[t * q + j]);
            sum += (tau * e).max((tau - 1.0) * e);
        }
    }
    Ok(sum / (actual.len() * q) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], None).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0], None).unwrap(), 1.0);
        let m = [false, true];
        assert_eq!(rmse(&[5.0, 1.0], &[0.0, 1.0], Some(&m)).unwrap(), 0.0);
        assert!(matches!(rmse(&[1.0], &[1.0], Some(&[false])), Err(Error::Degenerate(_))));
        assert!(rmse(&[1.0], &[1.0, 2.0], None).is_err());
    }

    #[test]
    fn rmse_matches_two_line_oracle() {
        // 63 pseudo-random pairs; oracle: sqrt(mean((a-f)**2)) in numpy
        let a: Vec<f64> = (0..63).map(|i| ((i * 37 % 101) as f64).sqrt() * 3.1).collect();
        let f: Vec<f64> = (0..63).map(|i| ((i * 53 % 97) as f64).ln_1p() * 4.7).collect();
        let oracle = (a.iter().zip(&f).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 63.0).sqrt();
        assert!((rmse(&a, &f, None).unwrap() - oracle).abs() <= 1e-12);
        assert!((oracle - 8.177_694_933_825_519).abs() <= 1e-12);
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0], None).unwrap(), (0.0, 0));
        let (v, s) = mape(&[100.0, 200.0], &[110.0, 180.0], None).unwrap();
        assert!((v - 0.10).abs() < 1e-15);
        assert_eq!(s, 0);
        assert_eq!(mape(&[0.0, 2.0], &[1.0, 2.0], None).unwrap(), (0.0, 1));
        assert!(matches!(mape(&[0.0, 1e-9], &[1.0, 1.0], None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pinball_is_zero_for_a_point_mass_at_truth() {
        let st = ScalingState { loc: 1.0, scale: 2.0 };
        let levels = [0.1, 0.5, 0.9];
        let y = [3.0, -1.0];
        let q: Vec<f64> = y.iter().flat_map(|v| [*v; 3]).collect();
        assert_eq!(scaled_pinball(&y, &q, &levels, &st).unwrap(), 0.0);
        let shifted: Vec<f64> = q.iter().map(|v| v + 1.0).collect();
        assert!(scaled_pinball(&y, &shifted, &levels, &st).unwrap() > 0.0);
    }
}
