//! Openness, AUROC, accuracy, open-space risk and confusion matrices, plus
//! CSV export with six significant digits.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::{Error, Result};

/// `1 − sqrt(2Y / (2Y + Q))` for `Y` known and `Q` unknown classes.
pub fn openness(y: usize, q: usize) -> Result<f64> {
    if y == 0 {
        return Err(Error::invalid("openness needs at least one known class"));
    }
    let y = y as f64;
    Ok(1.0 - (2.0 * y / (2.0 * y + q as f64)).sqrt())
}

/// Probability that an unknown score exceeds a known score, ties counting
/// half, computed from average ranks.
pub fn auroc(known: &[f64], unknown: &[f64]) -> Result<f64> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::invalid("auroc needs known and unknown scores"));
    }
    if known.iter().chain(unknown).any(|x| x.is_nan()) {
        return Err(Error::invalid("auroc scores contain NaN"));
    }
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, false))
        .chain(unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // doubled ranks keep tie averages integral
    let mut rank2_unknown: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        rank2_unknown += avg2 * all[i..=j].iter().filter(|e| e.1).count() as u128;
        i = j + 1;
    }
    let (n0, n1) = (known.len() as u128, unknown.len() as u128);
    let u2 = rank2_unknown - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

/// Fraction of `predicted[i] == Some(truth[i])`. `None` (UNKNOWN) is wrong.
pub fn close_set_accuracy(predicted: &[Option<ClassId>], truth: &[ClassId]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("predictions and truths differ in length"));
    }
    if truth.is_empty() {
        return Err(Error::invalid("accuracy needs at least one known test sample"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| **p == Some(**t)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// One classified test sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub truth: ClassId,
    /// Accepted class, `None` for UNKNOWN.
    pub label: Option<ClassId>,
    /// KNN candidate before the threshold test.
    pub candidate: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub known_classes: Vec<ClassId>,
    pub unknown_classes: usize,
    pub openness: f64,
    pub auroc: f64,
    /// UNKNOWN on a known sample counts as an error.
    pub close_set_accuracy: f64,
    /// Candidate label accuracy, ignoring the threshold.
    pub pre_threshold_accuracy: f64,
    /// Fraction of unknown-class samples accepted as some known class.
    pub open_space_risk_proxy: f64,
    pub empirical_risk: f64,
    /// Fraction of known-class samples accepted (right or wrong).
    pub accepted_known_fraction: f64,
    pub threshold: f64,
    pub test_known: usize,
    pub test_unknown: usize,
    /// Rows are truths, columns predictions; the last row and column are
    /// UNKNOWN.
    pub confusion: Vec<Vec<u64>>,
}

/// Assembles every metric from known-class and unknown-class predictions.
pub fn risk_report(
    known: &[Prediction],
    unknown: &[Prediction],
    known_classes: &BTreeSet<ClassId>,
    unknown_classes: usize,
    threshold: f64,
) -> Result<EvalReport> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::invalid("risk report needs known and unknown test predictions"));
    }
    let classes: Vec<ClassId> = known_classes.iter().cloned().collect();
    let y = classes.len();
    let slot = |c: Option<ClassId>| -> Result<usize> {
        match c {
            None => Ok(y),
            Some(c) => classes
                .binary_search(&c)
                .map_err(|_| Error::invalid(format!("class {c} is not a known class"))),
        }
    };
    let mut confusion = vec![vec![0u64; y + 1]; y + 1];
    for p in known {
        confusion[slot(Some(p.truth))?][slot(p.label)?] += 1;
    }
    for p in unknown {
        if known_classes.contains(&p.truth) {
            return Err(Error::invalid(format!("class {} is known but listed as unknown", p.truth)));
        }
        confusion[y][slot(p.label)?] += 1;
    }
    let truths: Vec<ClassId> = known.iter().map(|p| p.truth).collect();
    let accepted: Vec<Option<ClassId>> = known.iter().map(|p| p.label).collect();
    let candidates: Vec<Option<ClassId>> = known.iter().map(|p| Some(p.candidate)).collect();
    let close_set_accuracy = close_set_accuracy(&accepted, &truths)?;
    let known_scores: Vec<f64> = known.iter().map(|p| p.score).collect();
    let unknown_scores: Vec<f64> = unknown.iter().map(|p| p.score).collect();
    let frac = |ps: &[Prediction]| ps.iter().filter(|p| p.label.is_some()).count() as f64 / ps.len() as f64;
    Ok(EvalReport {
        known_classes: classes,
        unknown_classes,
        openness: openness(y, unknown_classes)?,
        auroc: auroc(&known_scores, &unknown_scores)?,
        close_set_accuracy,
        pre_threshold_accuracy: self::close_set_accuracy(&candidates, &truths)?,
        open_space_risk_proxy: frac(unknown),
        empirical_risk: 1.0 - close_set_accuracy,
        accepted_known_fraction: frac(known),
        threshold,
        test_known: known.len(),
        test_unknown: unknown.len(),
        confusion,
    })
}

/// `x` with six significant digits, `%g` style.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

impl EvalReport {
    /// `(metric, value)` rows in a fixed order.
    pub fn metric_rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("known_classes", self.known_classes.len().to_string()),
            ("unknown_classes", self.unknown_classes.to_string()),
            ("openness", sig6(self.openness)),
            ("auroc", sig6(self.auroc)),
            ("close_set_accuracy", sig6(self.close_set_accuracy)),
            ("pre_threshold_accuracy", sig6(self.pre_threshold_accuracy)),
            ("open_space_risk_proxy", sig6(self.open_space_risk_proxy)),
            ("empirical_risk", sig6(self.empirical_risk)),
            ("accepted_known_fraction", sig6(self.accepted_known_fraction)),
            ("threshold", sig6(self.threshold)),
            ("test_known", self.test_known.to_string()),
            ("test_unknown", self.test_unknown.to_string()),
        ]
    }

    pub fn write_metrics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.metric_rows() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_confusion_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let names: Vec<String> = self
            .known_classes
            .iter()
            .map(|c| c.to_string())
            .chain(std::iter::once("unknown".to_string()))
            .collect();
        let mut header = vec!["truth\\predicted".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(known: &[f64], unknown: &[f64]) -> f64 {
        let mut s = 0.0;
        for &u in unknown {
            for &k in known {
                s += if u > k { 1.0 } else if u == k { 0.5 } else { 0.0 };
            }
        }
        s / (known.len() * unknown.len()) as f64
    }

    #[test]
    fn openness_values() {
        assert!((openness(3, 6).unwrap() - 0.292893).abs() < 1e-6);
        assert!((openness(2, 7).unwrap() - 0.397).abs() < 5e-4);
        assert_eq!(openness(4, 0).unwrap(), 0.0);
        assert!(openness(0, 3).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.5, 0.6]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[0.3; 3]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2, 0.4], &[0.3, 0.9]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.2, 0.4], &[0.3, 0.9]).unwrap(), brute(&[0.2, 0.4], &[0.3, 0.9]));
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(close_set_accuracy(&[Some(1), Some(2)], &[1, 2]).unwrap(), 1.0);
        assert_eq!(close_set_accuracy(&[None, None], &[1, 2]).unwrap(), 0.0);
        let p = [Some(0), Some(1), Some(1), None];
        assert_eq!(close_set_accuracy(&p, &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(close_set_accuracy(&p, &[0]).is_err());
    }

    fn pred(truth: ClassId, label: Option<ClassId>, score: f64) -> Prediction {
        Prediction {
            truth,
            label,
            candidate: label.unwrap_or(truth),
            score,
        }
    }

    #[test]
    fn report_counts() {
        let known_classes: BTreeSet<ClassId> = [0, 1].into();
        let known = vec![pred(0, Some(0), 0.1), pred(1, Some(1), 0.2), pred(1, None, 0.9), pred(0, Some(1), 0.3)];
        let unknown: Vec<Prediction> = (0..120).map(|i| pred(5, (i < 30).then_some(0), 1.0)).collect();
        let r = risk_report(&known, &unknown, &known_classes, 3, 0.5).unwrap();
        assert_eq!(r.open_space_risk_proxy, 0.25);
        assert_eq!(r.close_set_accuracy, 0.5);
        assert_eq!(r.empirical_risk, 0.5);
        assert_eq!(r.accepted_known_fraction, 0.75);
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 1], vec![30, 0, 90]]);
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total as usize, known.len() + unknown.len());
        let none: Vec<Prediction> = (0..4).map(|_| pred(5, None, 1.0)).collect();
        assert_eq!(risk_report(&known, &none, &known_classes, 3, 0.5).unwrap().open_space_risk_proxy, 0.0);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.29289321881), "0.292893");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(123456789.0), "1.23457e8");
        assert_eq!(sig6(0.000012345678), "1.23457e-5");
        assert_eq!(sig6(999999.7), "1e6");
        assert_eq!(sig6(-0.5), "-0.5");
        assert_eq!(sig6(0.75), "0.75");
    }

    #[test]
    fn csv_layout() {
        let known_classes: BTreeSet<ClassId> = [0, 1].into();
        let r = risk_report(&[pred(0, Some(0), 0.1)], &[pred(3, None, 1.0)], &known_classes, 1, 0.5).unwrap();
        let mut buf = Vec::new();
        r.write_metrics_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("metric,value\nknown_classes,2\n"));
        assert!(s.contains("openness,0.105573\n"), "{s}");
    }
}
