//! Record preprocessing: antenna selection, CSI ratio, denoising, Doppler
//! spectrogram target and the amplitude/phase network input.

mod dfs;
mod filter;
mod ratio;
mod wtsr;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use dfs::{
    build_input_tensor, dfs_spectrogram, min_max_normalize, stft_magnitude, unwrap_phase, DfsSpectrogram,
    StftParams,
};
pub use filter::{butterworth, filter_series, Biquad, FilterMode, Sos};
pub use ratio::{antenna_select, csi_ratio, select_pair, selection_scores, RatioSeries};
pub use wtsr::{read_wtsr, write_wtsr, WTSR_MAGIC, WTSR_VERSION};

use crate::data::{read_manifest, CsiRecord, DomainTag, ManifestEntry, ClassId};
use crate::kv::{self, KeyDoc, KvSection};
use crate::net::Tensor;
use crate::{par, Error, Result};

pub const TENSOR_MANIFEST: &str = "tensors.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub eps_div: f64,
    /// Largest tolerated fraction of held ratio points.
    pub max_flagged: f64,
    pub lowpass_cutoff: f64,
    pub filter_order: usize,
    pub stft: StftParams,
    pub dfs_frames: usize,
    pub t_fixed: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            eps_div: 1e-9,
            max_flagged: 0.05,
            lowpass_cutoff: 120.0,
            filter_order: 4,
            stft: StftParams::default(),
            dfs_frames: 64,
            t_fixed: 256,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.stft;
        if !(self.eps_div > 0.0) {
            return Err(Error::invalid("eps_div must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.max_flagged) {
            return Err(Error::invalid("max_flagged must lie in [0, 1]"));
        }
        if !(self.lowpass_cutoff > 0.0 && s.highpass_cutoff > 0.0 && s.f_max > 0.0) {
            return Err(Error::invalid("cutoffs and f_max must be > 0"));
        }
        if self.filter_order == 0 || s.highpass_order == 0 {
            return Err(Error::invalid("filter orders must be ≥ 1"));
        }
        if s.window_len < 2 || s.hop == 0 || s.nfft < s.window_len {
            return Err(Error::invalid("need window_len ≥ 2, hop ≥ 1 and nfft ≥ window_len"));
        }
        if self.dfs_frames < 2 || self.t_fixed < 2 {
            return Err(Error::invalid("dfs_frames and t_fixed must be ≥ 2"));
        }
        Ok(())
    }

    /// Shape of the network input for records with `subcarriers` subcarriers.
    pub fn input_dims(&self, subcarriers: usize) -> Vec<usize> {
        vec![2, subcarriers, self.t_fixed]
    }

    /// Shape of the Doppler target for records sampled at `sample_rate`.
    pub fn dfs_dims(&self, sample_rate: f64) -> Vec<usize> {
        let df = sample_rate / self.stft.nfft as f64;
        let k = ((self.stft.f_max / df + 1e-9).floor() as usize).min((self.stft.nfft - 1) / 2);
        vec![2 * k + 1, self.dfs_frames]
    }
}

const PREPROCESS_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "eps_div", help: "smallest usable denominator amplitude in the CSI ratio" },
    KeyDoc { key: "max_flagged", help: "fraction of held ratio points above which a record is rejected" },
    KeyDoc { key: "lowpass_cutoff", help: "denoising lowpass cutoff (Hz)" },
    KeyDoc { key: "filter_order", help: "Butterworth order of the lowpass" },
    KeyDoc { key: "highpass_cutoff", help: "highpass cutoff before the STFT (Hz)" },
    KeyDoc { key: "highpass_order", help: "Butterworth order of the highpass" },
    KeyDoc { key: "window_len", help: "STFT window length (packets)" },
    KeyDoc { key: "hop", help: "STFT hop (packets)" },
    KeyDoc { key: "nfft", help: "FFT length (zero-padded window)" },
    KeyDoc { key: "f_max", help: "largest Doppler frequency kept (Hz)" },
    KeyDoc { key: "dfs_frames", help: "frames of the Doppler target" },
    KeyDoc { key: "t_fixed", help: "time steps of the network input" },
];

impl KvSection for PreprocessConfig {
    fn keys() -> &'static [KeyDoc] {
        PREPROCESS_KEYS
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "eps_div" => self.eps_div = kv::value(key, v, "a number")?,
            "max_flagged" => self.max_flagged = kv::value(key, v, "a fraction")?,
            "lowpass_cutoff" => self.lowpass_cutoff = kv::value(key, v, "Hz")?,
            "filter_order" => self.filter_order = kv::value(key, v, "an integer")?,
            "highpass_cutoff" => self.stft.highpass_cutoff = kv::value(key, v, "Hz")?,
            "highpass_order" => self.stft.highpass_order = kv::value(key, v, "an integer")?,
            "window_len" => self.stft.window_len = kv::value(key, v, "an integer")?,
            "hop" => self.stft.hop = kv::value(key, v, "an integer")?,
            "nfft" => self.stft.nfft = kv::value(key, v, "an integer")?,
            "f_max" => self.stft.f_max = kv::value(key, v, "Hz")?,
            "dfs_frames" => self.dfs_frames = kv::value(key, v, "an integer")?,
            "t_fixed" => self.t_fixed = kv::value(key, v, "an integer")?,
            _ => return Err(kv::unknown_key(key, PREPROCESS_KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("eps_div", kv::float(self.eps_div)),
            ("max_flagged", kv::float(self.max_flagged)),
            ("lowpass_cutoff", kv::float(self.lowpass_cutoff)),
            ("filter_order", self.filter_order.to_string()),
            ("highpass_cutoff", kv::float(self.stft.highpass_cutoff)),
            ("highpass_order", self.stft.highpass_order.to_string()),
            ("window_len", self.stft.window_len.to_string()),
            ("hop", self.stft.hop.to_string()),
            ("nfft", self.stft.nfft.to_string()),
            ("f_max", kv::float(self.stft.f_max)),
            ("dfs_frames", self.dfs_frames.to_string()),
            ("t_fixed", self.t_fixed.to_string()),
        ]
    }
}

/// Antenna selection, ratio and (optionally) the denoising lowpass applied
/// to every subcarrier.
pub fn ratio_stage(rec: &CsiRecord, cfg: &PreprocessConfig, lowpass: bool) -> Result<RatioSeries> {
    let (num, den) = antenna_select(rec)?;
    let mut ratio = csi_ratio(rec, num, den, cfg.eps_div, cfg.max_flagged)?;
    if lowpass {
        let sos = butterworth(FilterMode::Lowpass, cfg.filter_order, cfg.lowpass_cutoff, rec.sample_rate)?;
        for c in 0..ratio.subcarriers {
            let col = sos.filtfilt_complex(&ratio.column(c))?;
            ratio.set_column(c, &col);
        }
    }
    Ok(ratio)
}

/// Network input and Doppler target of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub input: Tensor,
    pub dfs: Tensor,
    pub pair: (usize, usize),
    pub flagged: usize,
}

pub fn preprocess_record(rec: &CsiRecord, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let ratio = ratio_stage(rec, cfg, true)?;
    let input = build_input_tensor(&ratio, cfg.t_fixed)?;
    let dfs = dfs_spectrogram(&ratio, &cfg.stft)?.resample_frames(cfg.dfs_frames)?;
    Ok(Preprocessed {
        input,
        dfs: dfs.to_tensor(),
        pair: ratio.pair,
        flagged: ratio.flagged,
    })
}

/// One preprocessed record on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    /// Row of the record in the source manifest.
    pub record_id: usize,
    pub input: String,
    pub dfs: String,
    pub label: ClassId,
    pub domain: DomainTag,
}

impl TensorEntry {
    pub fn load(&self, dir: &Path) -> Result<(Tensor, Tensor)> {
        let input = read_wtsr(BufReader::new(File::open(dir.join(&self.input))?))?;
        let dfs = read_wtsr(BufReader::new(File::open(dir.join(&self.dfs))?))?;
        Ok((input, dfs))
    }
}

pub fn write_tensor_manifest(dir: &Path, entries: &[TensorEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(TENSOR_MANIFEST))?;
    w.write_record(["record_id", "input", "dfs", "label", "user", "location", "orientation"])?;
    for e in entries {
        w.write_record([
            e.record_id.to_string(),
            e.input.clone(),
            e.dfs.clone(),
            e.label.to_string(),
            e.domain.user.to_string(),
            e.domain.location.to_string(),
            e.domain.orientation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor_manifest(dir: &Path) -> Result<Vec<TensorEntry>> {
    let mut r = csv::Reader::from_path(dir.join(TENSOR_MANIFEST))?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |j: usize| Error::format("tensor manifest", format!("row {}: bad column {j}", i + 1));
        let num = |j: usize| -> Result<u64> { row.get(j).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(j)) };
        let text = |j: usize| -> Result<String> { row.get(j).map(str::to_string).ok_or_else(|| bad(j)) };
        out.push(TensorEntry {
            record_id: num(0)? as usize,
            input: text(1)?,
            dfs: text(2)?,
            label: num(3)? as ClassId,
            domain: DomainTag {
                user: num(4)? as u32,
                location: num(5)? as u32,
                orientation: num(6)? as u32,
            },
        });
    }
    Ok(out)
}

/// Outcome of [`preprocess_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub entries: Vec<TensorEntry>,
    /// `(source path, reason)` of every skipped record.
    pub rejected: Vec<(String, String)>,
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_wtsr(t, BufWriter::new(File::create(path)?))
}

fn process_entry(
    i: usize,
    e: &ManifestEntry,
    in_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<std::result::Result<TensorEntry, (String, String)>> {
    let rec = e.load(in_dir)?;
    match preprocess_record(&rec, cfg) {
        Ok(p) => {
            let input = format!("{i:05}.input.wtsr");
            let dfs = format!("{i:05}.dfs.wtsr");
            write_tensor(&out_dir.join(&input), &p.input)?;
            write_tensor(&out_dir.join(&dfs), &p.dfs)?;
            Ok(Ok(TensorEntry {
                record_id: i,
                input,
                dfs,
                label: e.label,
                domain: e.domain,
            }))
        }
        Err(err @ Error::RecordRejected { .. }) => Ok(Err((e.path.clone(), err.to_string()))),
        Err(err) => Err(err),
    }
}

/// Preprocesses every record listed in `in_dir`'s manifest into `out_dir`.
/// Records rejected by the ratio guard are reported and skipped.
pub fn preprocess_dataset(in_dir: &Path, out_dir: &Path, cfg: &PreprocessConfig) -> Result<PreprocessSummary> {
    let manifest = read_manifest(in_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let indexed: Vec<(usize, &ManifestEntry)> = manifest.iter().enumerate().collect();
    let results = par::map(&indexed, |&(i, e)| process_entry(i, e, in_dir, out_dir, cfg));
    let mut summary = PreprocessSummary {
        entries: Vec::new(),
        rejected: Vec::new(),
    };
    for r in results {
        match r? {
            Ok(t) => summary.entries.push(t),
            Err(rej) => summary.rejected.push(rej),
        }
    }
    write_tensor_manifest(out_dir, &summary.entries)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let cfg = PreprocessConfig::default();
        assert_eq!(cfg.dfs_dims(1000.0), vec![121, 64]);
        assert_eq!(cfg.input_dims(30), vec![2, 30, 256]);
        let narrow = PreprocessConfig {
            stft: StftParams {
                nfft: 256,
                ..StftParams::default()
            },
            ..cfg
        };
        assert_eq!(narrow.dfs_dims(1000.0), vec![31, 64]);
    }

    #[test]
    fn kv_roundtrip() {
        let mut cfg = PreprocessConfig::default();
        cfg.set("hop", "10").unwrap();
        cfg.set("f_max", "80.5").unwrap();
        let mut back = PreprocessConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        let err = back.set("window", "3").unwrap_err();
        assert!(err.to_string().contains("window_len"), "{err}");
    }
}
