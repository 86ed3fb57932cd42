//! Shared data model: CSI records, domain tags, open-set splits and the
//! on-disk dataset layout.

mod csib;
mod dataset;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Mul};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use csib::{read_csib, write_csib, CSIB_HEADER_LEN, CSIB_MAGIC, CSIB_VERSION};
pub use dataset::{read_manifest, write_manifest, write_record, ManifestEntry, MANIFEST_FILE};

use crate::net::Tensor;
use crate::{Error, Result};

/// Mixes `stream` into `base` (splitmix64 finalizer) to give independent,
/// reproducible seeds for per-record and per-stage generators.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dense gesture class identifier.
pub type ClassId = u32;

/// Nuisance condition under which a record was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct DomainTag {
    pub user: u32,
    pub location: u32,
    pub orientation: u32,
}

/// Complex CSI tensor `[packets × subcarriers × antennas]` plus metadata.
///
/// Samples are stored packet-major, then subcarrier, then antenna, which is
/// also the CSIB on-disk order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub packets: usize,
    pub subcarriers: usize,
    pub antennas: usize,
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub carrier_freq: f64,
    pub label: ClassId,
    pub domain: DomainTag,
}

impl CsiRecord {
    /// Builds a record and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        packets: usize,
        subcarriers: usize,
        antennas: usize,
        samples: Vec<Complex64>,
        sample_rate: f64,
        carrier_freq: f64,
        label: ClassId,
        domain: DomainTag,
    ) -> Result<Self> {
        let rec = CsiRecord {
            packets,
            subcarriers,
            antennas,
            samples,
            sample_rate,
            carrier_freq,
            label,
            domain,
        };
        let violations = validate_record(&rec);
        if violations.is_empty() {
            Ok(rec)
        } else {
            Err(Error::InvalidRecord(violations))
        }
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, a: usize) -> usize {
        (t * self.subcarriers + c) * self.antennas + a
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize, a: usize) -> Complex64 {
        self.samples[self.index(t, c, a)]
    }

    /// Time series of one antenna/subcarrier pair.
    pub fn stream(&self, c: usize, a: usize) -> Vec<Complex64> {
        (0..self.packets).map(|t| self.at(t, c, a)).collect()
    }
}

/// Returns every invariant violation of `rec` (empty means valid).
pub fn validate_record(rec: &CsiRecord) -> Vec<String> {
    let mut v = Vec::new();
    if rec.packets < 2 {
        v.push(format!("needs ≥2 packets, has {}", rec.packets));
    }
    if rec.subcarriers < 1 {
        v.push("needs ≥1 subcarrier".to_string());
    }
    if rec.antennas < 2 {
        v.push(format!("needs ≥2 antennas, has {}", rec.antennas));
    }
    let expected = rec.packets * rec.subcarriers * rec.antennas;
    if rec.samples.len() != expected {
        v.push(format!(
            "sample count {} does not match {}×{}×{} = {}",
            rec.samples.len(),
            rec.packets,
            rec.subcarriers,
            rec.antennas,
            expected
        ));
    }
    if !(rec.sample_rate > 0.0 && rec.sample_rate.is_finite()) {
        v.push(format!("sample_rate must be > 0, is {}", rec.sample_rate));
    }
    if !(rec.carrier_freq > 0.0 && rec.carrier_freq.is_finite()) {
        v.push(format!("carrier_freq must be > 0, is {}", rec.carrier_freq));
    }
    if let Some(i) = rec
        .samples
        .iter()
        .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        v.push(format!("non-finite value at index {i}"));
    }
    v
}

/// Partition of a dataset into known/unknown classes and train/test records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenSetSplit {
    pub known_classes: BTreeSet<ClassId>,
    pub unknown_classes: BTreeSet<ClassId>,
    pub train: Vec<usize>,
    pub test_known: Vec<usize>,
    pub test_unknown: Vec<usize>,
}

impl OpenSetSplit {
    /// Number of known classes (Y).
    pub fn y(&self) -> usize {
        self.known_classes.len()
    }

    /// Number of unknown classes (Q).
    pub fn q(&self) -> usize {
        self.unknown_classes.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["record_id", "partition"])?;
        let mut rows: Vec<(usize, &str)> = Vec::new();
        rows.extend(self.train.iter().map(|&i| (i, "train")));
        rows.extend(self.test_known.iter().map(|&i| (i, "test_known")));
        rows.extend(self.test_unknown.iter().map(|&i| (i, "test_unknown")));
        rows.sort();
        for (i, p) in rows {
            w.write_record([i.to_string().as_str(), p])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a split written by [`OpenSetSplit::write_csv`]; class sets are
    /// recovered from `labels`.
    pub fn read_csv(path: &Path, labels: &[ClassId]) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let (mut train, mut test_known, mut test_unknown) = (Vec::new(), Vec::new(), Vec::new());
        for row in r.records() {
            let row = row?;
            let id: usize = row
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("split", "bad record_id"))?;
            if id >= labels.len() {
                return Err(Error::format("split", format!("record id {id} out of range")));
            }
            match row.get(1) {
                Some("train") => train.push(id),
                Some("test_known") => test_known.push(id),
                Some("test_unknown") => test_unknown.push(id),
                other => {
                    return Err(Error::format("split", format!("bad partition {other:?}")));
                }
            }
        }
        let known_classes: BTreeSet<ClassId> = train.iter().map(|&i| labels[i]).collect();
        let unknown_classes: BTreeSet<ClassId> = test_unknown.iter().map(|&i| labels[i]).collect();
        Ok(OpenSetSplit {
            known_classes,
            unknown_classes,
            train,
            test_known,
            test_unknown,
        })
    }
}

/// Stratified open-set split.
///
/// Record `i` has class `labels[i]`. For each known class the records are
/// shuffled with a seed-derived stream and `round(n·train_fraction)` of them
/// (clamped to `1..n-1`) go to `train`; every record of a non-known class goes
/// to `test_unknown`.
pub fn open_set_split(
    labels: &[ClassId],
    known: &BTreeSet<ClassId>,
    seed: u64,
    train_fraction: f64,
) -> Result<OpenSetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if known.is_empty() {
        return Err(Error::invalid("known class set is empty"));
    }
    for k in known {
        match by_class.get(k) {
            None => return Err(Error::invalid(format!("known class {k} is not in the dataset"))),
            Some(ids) if ids.len() < 2 => {
                return Err(Error::invalid(format!(
                    "known class {k} has {} sample(s), needs ≥2",
                    ids.len()
                )))
            }
            _ => {}
        }
    }

    let mut split = OpenSetSplit {
        known_classes: known.clone(),
        unknown_classes: BTreeSet::new(),
        train: Vec::new(),
        test_known: Vec::new(),
        test_unknown: Vec::new(),
    };
    for (&class, ids) in &by_class {
        if known.contains(&class) {
            let mut ids = ids.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            ids.shuffle(&mut rng);
            let n = ids.len();
            let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
            split.train.extend_from_slice(&ids[..n_train]);
            split.test_known.extend_from_slice(&ids[n_train..]);
        } else {
            split.unknown_classes.insert(class);
            split.test_unknown.extend_from_slice(ids);
        }
    }
    split.train.sort_unstable();
    split.test_known.sort_unstable();
    split.test_unknown.sort_unstable();
    Ok(split)
}

/// Linear interpolation of `series` onto `target_len` uniformly spaced points.
/// Both endpoints are preserved.
pub fn resample_time<T>(series: &[T], target_len: usize) -> Result<Vec<T>>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    if target_len < 2 {
        return Err(Error::invalid(format!("target_len must be ≥2, got {target_len}")));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid(format!("series length must be ≥2, got {n}")));
    }
    if n == target_len {
        return Ok(series.to_vec());
    }
    let step = (n - 1) as f64 / (target_len - 1) as f64;
    Ok((0..target_len)
        .map(|i| {
            if i == target_len - 1 {
                return series[n - 1];
            }
            let x = i as f64 * step;
            let lo = (x.floor() as usize).min(n - 2);
            let frac = x - lo as f64;
            series[lo] * (1.0 - frac) + series[lo + 1] * frac
        })
        .collect())
}

/// A real tensor tagged with its class and source record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTensor {
    pub tensor: Tensor,
    pub label: ClassId,
    pub record_id: usize,
}

impl LabeledTensor {
    pub fn new(tensor: Tensor, label: ClassId, record_id: usize) -> Result<Self> {
        if tensor.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("record {record_id}: non-finite tensor value")));
        }
        Ok(LabeledTensor {
            tensor,
            label,
            record_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(antennas: usize) -> CsiRecord {
        let (t, c) = (4, 3);
        CsiRecord {
            packets: t,
            subcarriers: c,
            antennas,
            samples: vec![Complex64::new(1.0, 0.5); t * c * antennas],
            sample_rate: 1000.0,
            carrier_freq: 5.825e9,
            label: 0,
            domain: DomainTag::default(),
        }
    }

    #[test]
    fn well_formed_record_is_valid() {
        assert!(validate_record(&record(3)).is_empty());
    }

    #[test]
    fn single_antenna_is_flagged() {
        let v = validate_record(&record(1));
        assert!(v.iter().any(|m| m.contains("needs ≥2 antennas")), "{v:?}");
    }

    #[test]
    fn non_finite_is_flagged_with_index() {
        let mut r = record(2);
        r.samples[5] = Complex64::new(f64::NAN, 0.0);
        let v = validate_record(&r);
        assert!(v.iter().any(|m| m == "non-finite value at index 5"), "{v:?}");
        assert!(CsiRecord::new(4, 3, 2, r.samples.clone(), 1000.0, 5e9, 0, DomainTag::default()).is_err());
    }

    #[test]
    fn validation_reports_all_violations() {
        let mut r = record(1);
        r.sample_rate = 0.0;
        r.samples[0] = Complex64::new(f64::INFINITY, 0.0);
        assert_eq!(validate_record(&r).len(), 3);
    }

    fn nine_class_labels(per_class: usize) -> Vec<ClassId> {
        (0..9).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    #[test]
    fn three_known_of_nine() {
        let labels = nine_class_labels(5);
        let known: BTreeSet<_> = [0, 1, 2].into();
        let s = open_set_split(&labels, &known, 1, 0.8).unwrap();
        assert_eq!((s.y(), s.q()), (3, 6));
        assert_eq!(s.test_unknown.len(), 30);
        assert_eq!(s.train.len(), 12);
        assert_eq!(s.test_known.len(), 3);
    }

    #[test]
    fn closed_set_has_no_unknowns() {
        let labels = nine_class_labels(4);
        let known: BTreeSet<_> = (0..9).collect();
        let s = open_set_split(&labels, &known, 1, 0.8).unwrap();
        assert!(s.test_unknown.is_empty());
        assert_eq!(s.q(), 0);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let labels = nine_class_labels(10);
        let known: BTreeSet<_> = [2, 4, 6].into();
        let a = open_set_split(&labels, &known, 42, 0.7).unwrap();
        let b = open_set_split(&labels, &known, 42, 0.7).unwrap();
        let c = open_set_split(&labels, &known, 43, 0.7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_errors() {
        let labels = vec![0, 0, 1, 2, 2];
        assert!(open_set_split(&labels, &[7].into(), 0, 0.8).is_err());
        assert!(open_set_split(&labels, &[1].into(), 0, 0.8).is_err());
        assert!(open_set_split(&labels, &[0].into(), 0, 1.0).is_err());
        assert!(open_set_split(&labels, &[0].into(), 0, 0.0).is_err());
    }

    #[test]
    fn split_csv_roundtrip() {
        let labels = nine_class_labels(6);
        let s = open_set_split(&labels, &[1, 5].into(), 3, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(OpenSetSplit::read_csv(&p, &labels).unwrap(), s);
    }

    #[test]
    fn resample_midpoint() {
        assert_eq!(resample_time(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn resample_constant() {
        let out = resample_time(&[2.5; 17], 40).unwrap();
        assert!(out.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn resample_ramp_oracle() {
        let ramp: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let out = resample_time(&ramp, 256).unwrap();
        let err = out
            .iter()
            .enumerate()
            .map(|(i, &y)| (y - i as f64 / 255.0).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn resample_complex_and_errors() {
        let z = [Complex64::new(0.0, 0.0), Complex64::new(2.0, -2.0)];
        let out = resample_time(&z, 3).unwrap();
        assert_eq!(out[1], Complex64::new(1.0, -1.0));
        assert!(resample_time(&[1.0, 2.0], 1).is_err());
        assert!(resample_time(&[1.0], 4).is_err());
    }
}
