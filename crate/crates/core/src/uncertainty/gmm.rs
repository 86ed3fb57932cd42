//! One-dimensional Gaussian mixtures fitted by EM.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    /// Stop once the mean per-sample log-likelihood improves by less.
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 2,
            tol: 1e-6,
            max_iter: 100,
            var_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Total log-likelihood of the series under the final parameters.
    pub log_likelihood: f64,
    /// Total log-likelihood before the first and after every EM step.
    pub history: Vec<f64>,
    /// Set when the series has no spread and the fit collapsed to the floor.
    pub degenerate: bool,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn log_density(&self, k: usize, x: f64) -> f64 {
        let v = self.variances[k];
        self.weights[k].ln() - 0.5 * ((2.0 * PI * v).ln() + (x - self.means[k]).powi(2) / v)
    }

    /// Log-likelihood of `xs`; also fills `resp` with responsibilities.
    fn e_step(&self, xs: &[f64], resp: &mut [f64]) -> f64 {
        let g = self.components();
        let mut total = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let row = &mut resp[i * g..(i + 1) * g];
            for (k, r) in row.iter_mut().enumerate() {
                *r = self.log_density(k, x);
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
            total += lse;
        }
        total
    }

    pub fn log_likelihood_of(&self, xs: &[f64]) -> f64 {
        let mut resp = vec![0.0; xs.len() * self.components()];
        self.e_step(xs, &mut resp)
    }
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance from the nearest chosen center.
fn kmeans_pp(xs: &[f64], g: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            xs[pick]
        } else {
            xs[rng.random_range(0..xs.len())]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

/// Fits a `cfg.components`-component mixture to `series`.
pub fn fit_gmm(series: &[f64], cfg: &GmmConfig, seed: u64) -> Result<GmmModel> {
    let g = cfg.components;
    let n = series.len();
    if g == 0 {
        return Err(Error::invalid("GMM needs at least one component"));
    }
    if n < 2 * g {
        return Err(Error::invalid(format!("GMM with {g} components needs ≥ {} samples, got {n}", 2 * g)));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("GMM series contains non-finite values"));
    }
    if !(cfg.var_floor > 0.0) {
        return Err(Error::invalid("variance floor must be > 0"));
    }
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let mut model = GmmModel {
            weights: vec![1.0 / g as f64; g],
            means: vec![lo; g],
            variances: vec![cfg.var_floor; g],
            log_likelihood: 0.0,
            history: Vec::new(),
            degenerate: true,
        };
        model.log_likelihood = model.log_likelihood_of(series);
        model.history.push(model.log_likelihood);
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(series, g, &mut rng);
    // hard assignment to the nearest center for the starting parameters
    let mut count = vec![0usize; g];
    let mut sum = vec![0.0; g];
    let mut sq = vec![0.0; g];
    for &x in series {
        let k = (0..g)
            .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
            .unwrap();
        count[k] += 1;
        sum[k] += x;
        sq[k] += x * x;
    }
    let global_var = {
        let m = series.iter().sum::<f64>() / n as f64;
        series.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64
    };
    let mut model = GmmModel {
        weights: count.iter().map(|&c| c.max(1) as f64).collect(),
        means: (0..g).map(|k| if count[k] > 0 { sum[k] / count[k] as f64 } else { centers[k] }).collect(),
        variances: (0..g)
            .map(|k| {
                if count[k] > 1 {
                    let m = sum[k] / count[k] as f64;
                    (sq[k] / count[k] as f64 - m * m).max(cfg.var_floor)
                } else {
                    global_var.max(cfg.var_floor)
                }
            })
            .collect(),
        log_likelihood: 0.0,
        history: Vec::new(),
        degenerate: false,
    };
    let wsum: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= wsum);

    let mut resp = vec![0.0; n * g];
    let mut ll = model.e_step(series, &mut resp);
    model.history.push(ll);
    for _ in 0..cfg.max_iter {
        for k in 0..g {
            let nk: f64 = (0..n).map(|i| resp[i * g + k]).sum();
            if nk <= 1e-300 {
                continue;
            }
            let mean = (0..n).map(|i| resp[i * g + k] * series[i]).sum::<f64>() / nk;
            let var = (0..n).map(|i| resp[i * g + k] * (series[i] - mean).powi(2)).sum::<f64>() / nk;
            model.weights[k] = nk / n as f64;
            model.means[k] = mean;
            model.variances[k] = var.max(cfg.var_floor);
        }
        let next = model.e_step(series, &mut resp);
        model.history.push(next);
        let improvement = (next - ll) / n as f64;
        ll = next;
        if improvement < cfg.tol {
            break;
        }
    }
    model.log_likelihood = ll;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_gaussian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..10_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let cfg = GmmConfig {
            components: 1,
            ..GmmConfig::default()
        };
        let m = fit_gmm(&xs, &cfg, 0).unwrap();
        assert!(m.means[0].abs() < 0.05);
        assert!((m.variances[0] - 1.0).abs() < 0.1);
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn separated_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Normal::new(0.0, 0.1).unwrap();
        let b = Normal::new(10.0, 0.1).unwrap();
        let xs: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) }).collect();
        let m = fit_gmm(&xs, &GmmConfig::default(), 5).unwrap();
        let mut comps: Vec<(f64, f64)> = m.means.iter().cloned().zip(m.weights.iter().cloned()).collect();
        comps.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert!((comps[0].0).abs() < 0.1 && (comps[1].0 - 10.0).abs() < 0.1);
        assert!((comps[0].1 - 0.5).abs() < 0.02 && (comps[1].1 - 0.5).abs() < 0.02);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let xs: Vec<f64> = (0..300).map(|_| rng.random::<f64>().powi(3) * 4.0).collect();
            for g in 1..=4 {
                let cfg = GmmConfig {
                    components: g,
                    tol: 0.0,
                    max_iter: 60,
                    ..GmmConfig::default()
                };
                let m = fit_gmm(&xs, &cfg, seed).unwrap();
                for w in m.history.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", w);
                }
                assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(m.variances.iter().all(|&v| v >= cfg.var_floor));
            }
        }
    }

    #[test]
    fn constant_series_is_degenerate() {
        let m = fit_gmm(&[3.0; 50], &GmmConfig::default(), 0).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.variances, vec![1e-6, 1e-6]);
        assert_eq!(m.means, vec![3.0, 3.0]);
    }

    #[test]
    fn preconditions() {
        assert!(fit_gmm(&[1.0, 2.0, 3.0], &GmmConfig::default(), 0).is_err());
        assert!(fit_gmm(&[1.0, f64::NAN, 3.0, 4.0], &GmmConfig::default(), 0).is_err());
        let cfg = GmmConfig {
            components: 0,
            ..GmmConfig::default()
        };
        assert!(fit_gmm(&[1.0, 2.0], &cfg, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let xs: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let a = fit_gmm(&xs, &GmmConfig::default(), 9).unwrap();
        let b = fit_gmm(&xs, &GmmConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
