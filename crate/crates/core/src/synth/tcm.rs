use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use crate::error::{Error, Result};

/// Lagged causal-graph autoregression over `k` variates.
///
/// `coefficients[(i * k + j) * lags + (l - 1)]` is the effect of variate `j`
/// at lag `l` on variate `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcmSpec {
    pub k: usize,
    pub lags: usize,
    pub coefficients: Vec<f64>,
    pub innovation_scale: f64,
    pub length: usize,
    pub seed: u64,
}

/// Artifact sampling ranges for random TCM graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcmSampler {
    pub k: usize,
    pub lags: usize,
    /// Probability of each allowed cross edge `(j -> i, lag)`.
    pub edge_prob: f64,
    /// Magnitude range of sampled coefficients.
    pub coef_range: (f64, f64),
    /// Graphs whose companion radius exceeds this are shrunk onto it.
    pub max_radius: f64,
    pub innovation_scale: f64,
    pub length: usize,
}

impl Default for TcmSampler {
    fn default() -> Self {
        Self {
            k: 3,
            lags: 2,
            edge_prob: 0.5,
            coef_range: (0.2, 0.9),
            max_radius: 0.95,
            innovation_scale: 1.0,
            length: 512,
        }
    }
}

impl TcmSampler {
    /// Draws a random DAG-over-lags: a random variate order admits cross
    /// edges only from earlier to later variates, every variate keeps an
    /// autoregressive self-link at lag 1, and the graph is shrunk
    /// (`A_l ← c^l A_l`) until its companion radius is at most `max_radius`.
    pub fn sample(&self, seed: u64) -> Result<TcmSpec> {
        let (k, lags) = (self.k, self.lags);
        if k == 0 || lags == 0 {
            return Err(Error::Config("tcm sampler needs k >= 1 and lags >= 1".into()));
        }
        let mut r = CounterRng::new(seed).fork(0x7C3);
        let mut order: Vec<usize> = (0..k).collect();
        r.shuffle(&mut order);
        let mut rank = vec![0; k];
        for (pos, &v) in order.iter().enumerate() {
            rank[v] = pos;
        }
        let mut coefficients = vec![0.0; k * k * lags];
        let (lo, hi) = self.coef_range;
        for i in 0..k {
            for j in 0..k {
                for l in 1..=lags {
                    let edge = if i == j {
                        l == 1 || r.bernoulli(self.edge_prob)
                    } else {
                        rank[j] < rank[i] && r.bernoulli(self.edge_prob)
                    };
                    if edge {
                        let mag = r.uniform_in(lo, hi);
                        let sign = if r.bernoulli(0.5) { -1.0 } else { 1.0 };
                        coefficients[(i * k + j) * lags + (l - 1)] = sign * mag;
                    }
                }
            }
        }
        let mut spec = TcmSpec {
            k,
            lags,
            coefficients,
            innovation_scale: self.innovation_scale,
            length: self.length,
            seed,
        };
        let rho = spec.spectral_radius();
        if rho > self.max_radius {
            let c = self.max_radius / rho;
            for i in 0..k * k {
                for l in 1..=lags {
                    spec.coefficients[i * lags + (l - 1)] *= c.powi(l as i32);
                }
            }
        }
        Ok(spec)
    }
}

impl TcmSpec {
    pub fn coef(&self, i: usize, j: usize, lag: usize) -> f64 {
        self.coefficients[(i * self.k + j) * self.lags + (lag - 1)]
    }

    pub fn burn_in(&self) -> usize {
        10 * self.lags * self.k
    }

    /// Row-major `(k·lags)²` companion matrix.
    pub fn companion(&self) -> Vec<f64> {
        let n = self.k * self.lags;
        let mut c = vec![0.0; n * n];
        for i in 0..self.k {
            for l in 1..=self.lags {
                for j in 0..self.k {
                    c[i * n + (l - 1) * self.k + j] = self.coef(i, j, l);
                }
            }
        }
        for r in self.k..n {
            c[r * n + (r - self.k)] = 1.0;
        }
        c
    }

    /// Companion spectral radius by power iteration on the matrix itself:
    /// repeated normalized squaring gives `‖A^(2^j)‖^(1/2^j) → ρ(A)`, which
    /// converges for complex dominant pairs and Jordan blocks alike. Stops
    /// when successive estimates agree to 1e-8 (relative).
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.companion(), self.k * self.lags)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.lags == 0 {
            return Err(Error::Config("tcm needs k >= 1 and lags >= 1".into()));
        }
        if self.coefficients.len() != self.k * self.k * self.lags {
            return Err(Error::Config(format!(
                "tcm coefficients: expected {} values, got {}",
                self.k * self.k * self.lags,
                self.coefficients.len()
            )));
        }
        if self.length == 0 || !(self.innovation_scale >= 0.0) {
            return Err(Error::Config("tcm length/innovation scale invalid".into()));
        }
        let radius = self.spectral_radius();
        if !(radius < 1.0) {
            return Err(Error::Unstable { radius });
        }
        Ok(())
    }

    /// Innovation streams (burn-in included), one independent stream per variate.
    pub fn innovations(&self) -> Vec<Vec<f64>> {
        let base = CounterRng::new(self.seed);
        let total = self.burn_in() + self.length;
        (0..self.k)
            .map(|j| {
                let mut r = base.fork(j as u64);
                (0..total)
                    .map(|_| self.innovation_scale * r.normal())
                    .collect()
            })
            .collect()
    }

    /// Runs the recursion on caller-supplied innovations and drops the burn-in.
    pub fn simulate(&self, innovations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let total = self.burn_in() + self.length;
        if innovations.len() != self.k || innovations.iter().any(|e| e.len() != total) {
            return Err(Error::Config("innovation streams do not match the spec".into()));
        }
        let mut x = vec![vec![0.0; total]; self.k];
        for t in 0..total {
            for i in 0..self.k {
                let mut v = innovations[i][t];
                for l in 1..=self.lags.min(t) {
                    for j in 0..self.k {
                        v += self.coef(i, j, l) * x[j][t - l];
                    }
                }
                x[i][t] = v;
            }
        }
        let burn = self.burn_in();
        Ok(x.into_iter().map(|s| s[burn..].to_vec()).collect())
    }
}

pub(crate) fn spectral_radius(a: &[f64], n: usize) -> f64 {
    let norm = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s0 = norm(a);
    if s0 == 0.0 {
        return 0.0;
    }
    let mut b: Vec<f64> = a.iter().map(|v| v / s0).collect();
    // log ‖A^(2^j)‖ accumulated as 2^j·ln(s0) + Σ 2^(j-i)·ln(s_i)
    let mut log_norm = s0.ln();
    let mut power = 1.0f64;
    let mut prev = f64::NAN;
    for step in 0..64 {
        let mut sq = vec![0.0; n * n];
        crate::tensor::gemm(&mut sq, &b, &b, n, n, n);
        let s = norm(&sq);
        if s == 0.0 || !s.is_finite() {
            return 0.0;
        }
        for (dst, v) in b.iter_mut().zip(&sq) {
            *dst = v / s;
        }
        log_norm = 2.0 * log_norm + s.ln();
        power *= 2.0;
        let est = (log_norm / power).exp();
        if step >= 8 && ((est - prev) / est).abs() < 1e-8 {
            return est;
        }
        prev = est;
    }
    prev
}

/// Simulates the spec with its own seeded innovations.
pub fn tcm_generate(spec: &TcmSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.simulate(&spec.innovations())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn eig_radius(spec: &TcmSpec) -> f64 {
        let n = spec.k * spec.lags;
        let m = DMatrix::from_row_slice(n, n, &spec.companion());
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    fn ar1(phi: f64, length: usize) -> TcmSpec {
        TcmSpec {
            k: 1,
            lags: 1,
            coefficients: vec![phi],
            innovation_scale: 1.0,
            length,
            seed: 9,
        }
    }

    #[test]
    fn radius_matches_eigen_decomposition() {
        let sampler = TcmSampler {
            k: 4,
            lags: 3,
            max_radius: 2.0,
            ..TcmSampler::default()
        };
        for seed in 0..40 {
            let s = sampler.sample(seed).unwrap();
            let (a, b) = (s.spectral_radius(), eig_radius(&s));
            assert!((a - b).abs() <= 1e-6 * b.max(1e-3), "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn rotation_companion_has_unit_radius() {
        // x_t = -x_{t-2}: eigenvalues ±i
        let s = TcmSpec {
            k: 1,
            lags: 2,
            coefficients: vec![0.0, -1.0],
            innovation_scale: 1.0,
            length: 10,
            seed: 0,
        };
        assert!((s.spectral_radius() - 1.0).abs() < 1e-8);
        assert!(matches!(tcm_generate(&s), Err(Error::Unstable { .. })));
    }

    #[test]
    fn explosive_spec_reports_radius() {
        match tcm_generate(&ar1(1.2, 10)) {
            Err(Error::Unstable { radius }) => assert!((radius - 1.2).abs() < 1e-8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_adjacency_is_white_noise() {
        let s = TcmSpec {
            k: 3,
            lags: 2,
            coefficients: vec![0.0; 18],
            innovation_scale: 1.0,
            length: 100,
            seed: 4,
        };
        let x = tcm_generate(&s).unwrap();
        let e = s.innovations();
        for j in 0..3 {
            assert_eq!(x[j], e[j][s.burn_in()..].to_vec());
        }
    }

    #[test]
    fn ar1_lag_one_autocorrelation() {
        let x = &tcm_generate(&ar1(0.9, 100_000)).unwrap()[0];
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        assert!((c1 / c0 - 0.9).abs() < 0.02, "{}", c1 / c0);
    }

    #[test]
    fn one_way_link_intervention() {
        // variate 1 drives variate 0; nothing flows back
        let s = TcmSpec {
            k: 2,
            lags: 1,
            coefficients: vec![0.3, 0.6, 0.0, 0.5],
            innovation_scale: 1.0,
            length: 300,
            seed: 21,
        };
        let base = s.simulate(&s.innovations()).unwrap();
        let mut shocked = s.innovations();
        CounterRng::new(99).shuffle(&mut shocked[1]);
        let after = s.simulate(&shocked).unwrap();
        assert_ne!(base[0], after[0]);
        assert_ne!(base[1], after[1]);

        let mut shocked = s.innovations();
        CounterRng::new(99).shuffle(&mut shocked[0]);
        let after = s.simulate(&shocked).unwrap();
        assert_eq!(base[1], after[1]);
        assert_ne!(base[0], after[0]);
    }

    #[test]
    fn sampled_specs_are_stationary() {
        let sampler = TcmSampler {
            k: 3,
            lags: 2,
            length: 2000,
            ..TcmSampler::default()
        };
        for seed in 0..100 {
            let s = sampler.sample(seed).unwrap();
            for series in tcm_generate(&s).unwrap() {
                let var = |xs: &[f64]| {
                    let m = xs.iter().sum::<f64>() / xs.len() as f64;
                    xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64
                };
                let (a, b) = (var(&series[..1000]), var(&series[1000..]));
                assert!(a.is_finite() && b.is_finite());
                assert!(b <= 2.0 * a && a <= 2.0 * b, "seed {seed}: {a} vs {b}");
            }
        }
    }
}
