//! Antenna-pair selection and the CSI ratio, which cancels the per-packet
//! phase offset shared by all antennas of one receiver.

use num_complex::Complex64;

use crate::data::CsiRecord;
use crate::{Error, Result};

const AMPLITUDE_GUARD: f64 = 1e-12;

/// Complex ratio `H_num / H_den`, packet-major `[T × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    pub packets: usize,
    pub subcarriers: usize,
    pub values: Vec<Complex64>,
    pub sample_rate: f64,
    pub pair: (usize, usize),
    /// Points whose denominator vanished and were held from the previous packet.
    pub flagged: usize,
}

impl RatioSeries {
    pub fn at(&self, t: usize, c: usize) -> Complex64 {
        self.values[t * self.subcarriers + c]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.packets).map(|t| self.at(t, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[Complex64]) {
        for (t, &v) in col.iter().enumerate() {
            self.values[t * self.subcarriers + c] = v;
        }
    }

    /// Coherent mean over subcarriers, one value per packet.
    pub fn subcarrier_mean(&self) -> Vec<Complex64> {
        self.values
            .chunks(self.subcarriers)
            .map(|row| row.iter().sum::<Complex64>() / self.subcarriers as f64)
            .collect()
    }
}

/// Sensitivity `s_a`: mean over subcarriers of var/mean of the amplitude
/// (population variance) for every antenna.
pub fn selection_scores(rec: &CsiRecord) -> Result<Vec<f64>> {
    let t_len = rec.packets as f64;
    let mut scores = Vec::with_capacity(rec.antennas);
    for a in 0..rec.antennas {
        let mut s = 0.0;
        for c in 0..rec.subcarriers {
            let amp: Vec<f64> = (0..rec.packets).map(|t| rec.at(t, c, a).norm()).collect();
            let mean = amp.iter().sum::<f64>() / t_len;
            if mean <= AMPLITUDE_GUARD {
                return Err(Error::invalid(format!(
                    "antenna {a} subcarrier {c} has mean amplitude {mean:e}"
                )));
            }
            let var = amp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t_len;
            s += var / mean;
        }
        scores.push(s / rec.subcarriers as f64);
    }
    Ok(scores)
}

/// Picks `(argmax, argmin)` of `scores`; ties go to the lower index and the
/// minimum is taken over the remaining antennas.
pub fn select_pair(scores: &[f64]) -> Result<(usize, usize)> {
    if scores.len() < 2 {
        return Err(Error::invalid("antenna selection needs at least 2 antennas"));
    }
    let mut num = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[num] {
            num = i;
        }
    }
    let mut den = usize::MAX;
    for (i, &s) in scores.iter().enumerate() {
        if i != num && (den == usize::MAX || s < scores[den]) {
            den = i;
        }
    }
    Ok((num, den))
}

/// Numerator and denominator antenna for the ratio.
pub fn antenna_select(rec: &CsiRecord) -> Result<(usize, usize)> {
    if rec.antennas < 2 {
        return Err(Error::invalid("antenna selection needs at least 2 antennas"));
    }
    select_pair(&selection_scores(rec)?)
}

/// Elementwise `H_num / H_den`. Points with `|H_den| < eps_div` repeat the
/// previous valid ratio of that subcarrier (or the next one at the start);
/// more than `max_flagged` of them rejects the record.
pub fn csi_ratio(rec: &CsiRecord, num: usize, den: usize, eps_div: f64, max_flagged: f64) -> Result<RatioSeries> {
    if num == den {
        return Err(Error::invalid("ratio needs two distinct antennas"));
    }
    if num >= rec.antennas || den >= rec.antennas {
        return Err(Error::invalid(format!(
            "antenna pair ({num}, {den}) out of range for {} antennas",
            rec.antennas
        )));
    }
    let (t_len, c_len) = (rec.packets, rec.subcarriers);
    let mut values = vec![Complex64::new(0.0, 0.0); t_len * c_len];
    let mut valid = vec![false; t_len * c_len];
    for t in 0..t_len {
        for c in 0..c_len {
            let d = rec.at(t, c, den);
            if d.norm() >= eps_div {
                values[t * c_len + c] = rec.at(t, c, num) / d;
                valid[t * c_len + c] = true;
            }
        }
    }
    let flagged = valid.iter().filter(|v| !**v).count();
    let total = t_len * c_len;
    if flagged as f64 > max_flagged * total as f64 {
        return Err(Error::RecordRejected { flagged, total });
    }
    if flagged > 0 {
        for c in 0..c_len {
            let Some(first) = (0..t_len).find(|&t| valid[t * c_len + c]) else {
                return Err(Error::RecordRejected { flagged, total });
            };
            let mut last = values[first * c_len + c];
            for t in 0..t_len {
                let i = t * c_len + c;
                if valid[i] {
                    last = values[i];
                } else {
                    values[i] = last;
                }
            }
        }
    }
    Ok(RatioSeries {
        packets: t_len,
        subcarriers: c_len,
        values,
        sample_rate: rec.sample_rate,
        pair: (num, den),
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainTag;

    /// Builds a record from per-antenna closures `h(t, c)`.
    fn record(t_len: usize, c_len: usize, hs: &[&dyn Fn(usize, usize) -> Complex64]) -> CsiRecord {
        let mut samples = Vec::new();
        for t in 0..t_len {
            for c in 0..c_len {
                for h in hs {
                    samples.push(h(t, c));
                }
            }
        }
        CsiRecord::new(t_len, c_len, hs.len(), samples, 1000.0, 5.8e9, 0, DomainTag::default()).unwrap()
    }

    #[test]
    fn constant_amplitude_scores_zero() {
        let rec = record(8, 2, &[&|t, _| Complex64::from_polar(1.0, t as f64), &|t, _| {
            Complex64::new(1.0 + (t % 2) as f64 * 2.0, 0.0)
        }]);
        let s = selection_scores(&rec).unwrap();
        assert_eq!(s[0], 0.0);
        // amplitudes alternate 1,3: mean 2, population variance 1
        assert!((s[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pair_is_argmax_then_argmin() {
        assert_eq!(select_pair(&[0.5, 0.1, 0.9]).unwrap(), (2, 1));
        assert_eq!(select_pair(&[0.3, 0.3, 0.3]).unwrap(), (0, 1));
        assert_eq!(select_pair(&[0.1, 0.7, 0.1]).unwrap(), (1, 0));
        assert!(select_pair(&[1.0]).is_err());
    }

    #[test]
    fn vanishing_mean_is_an_error() {
        let rec = record(4, 1, &[&|_, _| Complex64::new(1.0, 0.0), &|_, _| Complex64::new(0.0, 0.0)]);
        assert!(selection_scores(&rec).is_err());
    }

    #[test]
    fn common_phase_cancels() {
        let theta = |t: usize| (t as f64 * 1.7).sin() * 3.0;
        let rec = record(16, 3, &[&|t, _| Complex64::from_polar(2.0, theta(t)), &|t, _| {
            Complex64::from_polar(1.0, theta(t))
        }]);
        let r = csi_ratio(&rec, 0, 1, 1e-9, 0.05).unwrap();
        assert!(r.values.iter().all(|v| (v - Complex64::new(2.0, 0.0)).norm() < 1e-12));
        assert_eq!(r.flagged, 0);
    }

    #[test]
    fn vanishing_denominator_holds_previous() {
        // one bad point in 40 is 2.5 %
        let rec = record(20, 2, &[&|t, c| Complex64::new(t as f64 + 1.0, c as f64), &|t, c| {
            if t == 5 && c == 1 { Complex64::new(0.0, 0.0) } else { Complex64::new(1.0, 0.0) }
        }]);
        let r = csi_ratio(&rec, 0, 1, 1e-9, 0.05).unwrap();
        assert_eq!(r.flagged, 1);
        assert_eq!(r.at(5, 1), r.at(4, 1));
        assert_eq!(r.at(5, 0), Complex64::new(6.0, 0.0));
    }

    #[test]
    fn too_many_flagged_points_reject() {
        let rec = record(20, 1, &[&|_, _| Complex64::new(1.0, 0.0), &|t, _| {
            if t < 2 { Complex64::new(0.0, 0.0) } else { Complex64::new(1.0, 0.0) }
        }]);
        assert!(matches!(
            csi_ratio(&rec, 0, 1, 1e-9, 0.05),
            Err(Error::RecordRejected { flagged: 2, total: 20 })
        ));
        let r = csi_ratio(&rec, 0, 1, 1e-9, 0.2).unwrap();
        // leading invalid points take the first valid value
        assert_eq!(r.at(0, 0), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn same_antenna_rejected() {
        let rec = record(4, 1, &[&|_, _| Complex64::new(1.0, 0.0), &|_, _| Complex64::new(1.0, 0.0)]);
        assert!(csi_ratio(&rec, 1, 1, 1e-9, 0.05).is_err());
    }
}
