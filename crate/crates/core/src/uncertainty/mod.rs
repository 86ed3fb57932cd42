//! Dataset uncertainty: a mixture-model noise term and a neighborhood
//! domain term, reported separately and as their sum.

mod gmm;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

pub use gmm::{fit_gmm, GmmConfig, GmmModel};

use crate::data::{derive_seed, ClassId};
use crate::kv::{self, KeyDoc, KvSection};
use crate::preprocess::RatioSeries;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// `1 − cos(a, b)`.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid(format!("unknown metric `{s}`"))),
        }
    }
}

/// Per-packet mean amplitude of the ratio over subcarriers.
pub fn noise_series(ratio: &RatioSeries) -> Vec<f64> {
    ratio
        .values
        .chunks(ratio.subcarriers)
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>() / ratio.subcarriers as f64)
        .collect()
}

/// `(1/(N·G)) Σ_n [Σ_k (α_nk − 1/G)² + Σ_k σ_nk]` over fitted models.
pub fn psi_noise_from_models(models: &[GmmModel]) -> Result<f64> {
    let Some(first) = models.first() else {
        return Err(Error::invalid("noise term needs at least one fitted sample"));
    };
    let g = first.components();
    if models.iter().any(|m| m.components() != g) {
        return Err(Error::invalid("all mixtures must have the same number of components"));
    }
    let terms: Vec<f64> = models
        .iter()
        .map(|m| {
            let spread: f64 = m.weights.iter().map(|a| (a - 1.0 / g as f64).powi(2)).sum();
            spread + m.variances.iter().sum::<f64>()
        })
        .collect();
    Ok(par::tree_sum(&terms) / (models.len() * g) as f64)
}

/// Noise term of a set of series plus the number of failed fits skipped.
pub fn psi_noise(series: &[Vec<f64>], cfg: &GmmConfig, seed: u64) -> Result<(f64, usize)> {
    let indexed: Vec<(usize, &Vec<f64>)> = series.iter().enumerate().collect();
    let fits = par::map(&indexed, |&(i, s)| fit_gmm(s, cfg, derive_seed(seed, i as u64)));
    let failed = fits.iter().filter(|f| f.is_err()).count();
    let models: Vec<GmmModel> = fits.into_iter().filter_map(|f| f.ok()).collect();
    Ok((psi_noise_from_models(&models)?, failed))
}

/// Domain term plus the number of samples whose class has no other member.
///
/// Every sample contributes the mean distance to its own class minus the mean
/// distance to all other classes, so overlapping classes raise the value.
pub fn psi_domain(features: &[Vec<f64>], labels: &[ClassId], metric: Metric) -> Result<(f64, usize)> {
    let n = features.len();
    if n < 2 || labels.len() != n {
        return Err(Error::invalid("domain term needs ≥ 2 labelled samples"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid("domain term needs at least two classes"));
    }
    let terms = par::map_range(n, |i| {
        let (mut same, mut ns, mut other, mut no) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = metric.distance(&features[i], &features[j]);
            if labels[j] == labels[i] {
                same += d;
                ns += 1;
            } else {
                other += d;
                no += 1;
            }
        }
        let other = other / no as f64;
        if ns == 0 {
            (-other, true)
        } else {
            (same / ns as f64 - other, false)
        }
    });
    let singletons = terms.iter().filter(|t| t.1).count();
    let values: Vec<f64> = terms.into_iter().map(|t| t.0).collect();
    Ok((par::tree_sum(&values) / n as f64, singletons))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyConfig {
    pub gmm: GmmConfig,
    pub metric: Metric,
    /// Fit the noise term on the lowpass-filtered ratio instead of the raw one.
    pub noise_lowpass: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            gmm: GmmConfig::default(),
            metric: Metric::Euclidean,
            noise_lowpass: false,
        }
    }
}

const UNCERTAINTY_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "gmm_components", help: "mixture components per sample" },
    KeyDoc { key: "gmm_tol", help: "EM stopping threshold on mean log-likelihood gain" },
    KeyDoc { key: "gmm_max_iter", help: "EM iteration cap" },
    KeyDoc { key: "var_floor", help: "smallest mixture variance" },
    KeyDoc { key: "metric", help: "domain-term distance: euclidean or cosine" },
    KeyDoc { key: "noise_lowpass", help: "fit the noise term after the denoising lowpass" },
];

impl KvSection for UncertaintyConfig {
    fn keys() -> &'static [KeyDoc] {
        UNCERTAINTY_KEYS
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "gmm_components" => self.gmm.components = kv::value(key, v, "an integer")?,
            "gmm_tol" => self.gmm.tol = kv::value(key, v, "a number")?,
            "gmm_max_iter" => self.gmm.max_iter = kv::value(key, v, "an integer")?,
            "var_floor" => self.gmm.var_floor = kv::value(key, v, "a number")?,
            "metric" => self.metric = kv::value(key, v, "euclidean or cosine")?,
            "noise_lowpass" => self.noise_lowpass = kv::flag(key, v)?,
            _ => return Err(kv::unknown_key(key, UNCERTAINTY_KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gmm_components", self.gmm.components.to_string()),
            ("gmm_tol", kv::float(self.gmm.tol)),
            ("gmm_max_iter", self.gmm.max_iter.to_string()),
            ("var_floor", kv::float(self.gmm.var_floor)),
            ("metric", self.metric.to_string()),
            ("noise_lowpass", self.noise_lowpass.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub psi_n: f64,
    pub psi_d: f64,
    pub psi_total: f64,
    pub samples: usize,
    pub failed_fits: usize,
    pub singleton_samples: usize,
    pub settings: Vec<(String, String)>,
}

impl UncertaintyReport {
    pub fn new(psi_n: f64, psi_d: f64) -> Self {
        UncertaintyReport {
            psi_n,
            psi_d,
            psi_total: psi_n + psi_d,
            samples: 0,
            failed_fits: 0,
            singleton_samples: 0,
            settings: Vec::new(),
        }
    }
}

/// Both terms under one configuration. `series` feeds the noise term and
/// `features` (with `labels`) the domain term.
pub fn uncertainty_report(
    series: &[Vec<f64>],
    features: &[Vec<f64>],
    labels: &[ClassId],
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<UncertaintyReport> {
    let (psi_n, failed) = psi_noise(series, &cfg.gmm, seed)?;
    let (psi_d, singletons) = psi_domain(features, labels, cfg.metric)?;
    let mut report = UncertaintyReport::new(psi_n, psi_d);
    report.samples = features.len();
    report.failed_fits = failed;
    report.singleton_samples = singletons;
    report.settings = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    report.settings.push(("seed".into(), seed.to_string()));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(weights: &[f64], variances: &[f64]) -> GmmModel {
        GmmModel {
            weights: weights.to_vec(),
            means: vec![0.0; weights.len()],
            variances: variances.to_vec(),
            log_likelihood: 0.0,
            history: vec![],
            degenerate: false,
        }
    }

    #[test]
    fn noise_term_by_hand() {
        assert_eq!(psi_noise_from_models(&[model(&[0.5, 0.5], &[1.0, 2.0])]).unwrap(), 1.5);
        let v = psi_noise_from_models(&[model(&[0.9, 0.1], &[0.1, 0.5])]).unwrap();
        assert!((v - 0.46).abs() < 1e-12);
        assert!(psi_noise_from_models(&[]).is_err());
    }

    fn one_d(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn domain_term_by_hand() {
        let (v, _) = psi_domain(&one_d(&[0.0, 1.0, 10.0, 11.0]), &[0, 0, 1, 1], Metric::Euclidean).unwrap();
        assert!((v + 9.0).abs() < 1e-12);
        let (w, _) = psi_domain(&one_d(&[0.0, 2.0, 1.0, 3.0]), &[0, 0, 1, 1], Metric::Euclidean).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
        let (z, _) = psi_domain(&one_d(&[4.0; 4]), &[0, 0, 1, 1], Metric::Euclidean).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn singleton_class_uses_only_other_term() {
        let (v, s) = psi_domain(&one_d(&[0.0, 1.0, 5.0]), &[0, 0, 1], Metric::Euclidean).unwrap();
        assert_eq!(s, 1);
        // samples: 1 − 5, 1 − 4, −(5 + 4)/2
        assert!((v - (-4.0 - 3.0 - 4.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn domain_term_rejects_single_class() {
        assert!(psi_domain(&one_d(&[0.0, 1.0]), &[0, 0], Metric::Euclidean).is_err());
    }

    #[test]
    fn cosine_distance() {
        assert!((Metric::Cosine.distance(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!(Metric::Cosine.distance(&[1.0, 1.0], &[2.0, 2.0]).abs() < 1e-15);
    }

    #[test]
    fn report_total_is_sum() {
        let r = UncertaintyReport::new(1.5, 0.5);
        assert_eq!(r.psi_total, 2.0);
    }
}
