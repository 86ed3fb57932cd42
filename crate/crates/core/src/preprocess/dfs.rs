//! Doppler spectrograms and the amplitude/phase network input.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::filter::{butterworth, FilterMode};
use super::ratio::RatioSeries;
use crate::data::resample_time;
use crate::net::Tensor;
use crate::{Error, Result};

/// Short-time Fourier transform settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    /// FFT length; frames are zero-padded from `window_len` up to it.
    pub nfft: usize,
    pub f_max: f64,
    pub highpass_cutoff: f64,
    pub highpass_order: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            window_len: 256,
            hop: 25,
            nfft: 1000,
            f_max: 60.0,
            highpass_cutoff: 2.0,
            highpass_order: 4,
        }
    }
}

/// Magnitudes `[bins × frames]` (bin-major) normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DfsSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub magnitudes: Vec<f64>,
    /// Bin center frequencies, Hz, ascending and symmetric about 0.
    pub freq_axis: Vec<f64>,
    /// Window center times, seconds.
    pub frame_axis: Vec<f64>,
}

impl DfsSpectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.frames + frame]
    }

    /// Frequency of the strongest bin in every frame.
    pub fn peak_frequencies(&self) -> Vec<f64> {
        (0..self.frames)
            .map(|f| {
                let mut best = 0;
                for b in 1..self.bins {
                    if self.at(b, f) > self.at(best, f) {
                        best = b;
                    }
                }
                self.freq_axis[best]
            })
            .collect()
    }

    /// Linear interpolation of every bin onto `frames` frames.
    pub fn resample_frames(&self, frames: usize) -> Result<DfsSpectrogram> {
        let row = |b: usize| &self.magnitudes[b * self.frames..(b + 1) * self.frames];
        let stretch = |xs: &[f64]| -> Result<Vec<f64>> {
            if xs.len() == 1 {
                Ok(vec![xs[0]; frames])
            } else {
                resample_time(xs, frames)
            }
        };
        let mut magnitudes = Vec::with_capacity(self.bins * frames);
        for b in 0..self.bins {
            magnitudes.extend(stretch(row(b))?);
        }
        Ok(DfsSpectrogram {
            bins: self.bins,
            frames,
            magnitudes,
            freq_axis: self.freq_axis.clone(),
            frame_axis: stretch(&self.frame_axis)?,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.bins, self.frames], self.magnitudes.clone()).expect("consistent dims")
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Min-max normalization to `[0, 1]`; a constant input maps to zeros.
pub fn min_max_normalize(xs: &mut [f64]) {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(1.0)) {
        xs.iter_mut().for_each(|x| *x = 0.0);
    } else {
        xs.iter_mut().for_each(|x| *x = ((*x - lo) / range).clamp(0.0, 1.0));
    }
}

/// Hann-windowed, fft-shifted STFT magnitude of `series` cropped to
/// `±f_max`, without filtering or normalization.
pub fn stft_magnitude(series: &[Complex64], sample_rate: f64, p: &StftParams) -> Result<DfsSpectrogram> {
    let t_len = series.len();
    if p.window_len < 2 || p.window_len > t_len {
        return Err(Error::invalid(format!(
            "window_len {} must be in 2..={t_len}",
            p.window_len
        )));
    }
    if p.hop == 0 {
        return Err(Error::invalid("hop must be ≥ 1"));
    }
    if p.nfft < p.window_len {
        return Err(Error::invalid("nfft must be ≥ window_len"));
    }
    if !(p.f_max > 0.0 && p.f_max <= sample_rate / 2.0) {
        return Err(Error::invalid(format!(
            "f_max {} outside (0, {}]",
            p.f_max,
            sample_rate / 2.0
        )));
    }
    let df = sample_rate / p.nfft as f64;
    let k_max = ((p.f_max / df + 1e-9).floor() as usize).min((p.nfft - 1) / 2);
    let bins = 2 * k_max + 1;
    let frames = 1 + (t_len - p.window_len) / p.hop;
    let win = hann(p.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(p.nfft);

    let mut magnitudes = vec![0.0; bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); p.nfft];
    for f in 0..frames {
        let start = f * p.hop;
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (i, w) in win.iter().enumerate() {
            buf[i] = series[start + i] * w;
        }
        fft.process(&mut buf);
        for b in 0..bins {
            let k = b as isize - k_max as isize;
            let idx = k.rem_euclid(p.nfft as isize) as usize;
            magnitudes[b * frames + f] = buf[idx].norm();
        }
    }
    Ok(DfsSpectrogram {
        bins,
        frames,
        magnitudes,
        freq_axis: (0..bins).map(|b| (b as f64 - k_max as f64) * df).collect(),
        frame_axis: (0..frames)
            .map(|f| (f * p.hop) as f64 / sample_rate + p.window_len as f64 / (2.0 * sample_rate))
            .collect(),
    })
}

/// Subcarrier mean → highpass → STFT magnitude → crop → min-max normalize.
pub fn dfs_spectrogram(ratio: &RatioSeries, p: &StftParams) -> Result<DfsSpectrogram> {
    let mean = ratio.subcarrier_mean();
    let hp = butterworth(FilterMode::Highpass, p.highpass_order, p.highpass_cutoff, ratio.sample_rate)?;
    let filtered = hp.filtfilt_complex(&mean)?;
    let mut spec = stft_magnitude(&filtered, ratio.sample_rate, p)?;
    min_max_normalize(&mut spec.magnitudes);
    Ok(spec)
}

/// Unwraps a phase sequence so consecutive differences lie in `[-π, π]`.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p - phase[i - 1];
            let mut dd = (d + PI).rem_euclid(2.0 * PI) - PI;
            if dd == -PI && d > 0.0 {
                dd = PI;
            }
            offset += dd - d;
        }
        out.push(p + offset);
    }
    out
}

/// Amplitude and unwrapped phase of the ratio as a `[2, C, t_fixed]` tensor,
/// each channel resampled in time and min-max normalized on its own.
pub fn build_input_tensor(ratio: &RatioSeries, t_fixed: usize) -> Result<Tensor> {
    if ratio.packets < 2 {
        return Err(Error::invalid("input tensor needs at least 2 packets"));
    }
    let c_len = ratio.subcarriers;
    let mut amp = Vec::with_capacity(c_len * t_fixed);
    let mut phase = Vec::with_capacity(c_len * t_fixed);
    for c in 0..c_len {
        let col = ratio.column(c);
        let a: Vec<f64> = col.iter().map(|z| z.norm()).collect();
        let p = unwrap_phase(&col.iter().map(|z| z.arg()).collect::<Vec<_>>());
        amp.extend(resample_time(&a, t_fixed)?);
        phase.extend(resample_time(&p, t_fixed)?);
    }
    min_max_normalize(&mut amp);
    min_max_normalize(&mut phase);
    amp.extend(phase);
    Tensor::new(vec![2, c_len, t_fixed], amp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio_from(values: Vec<Complex64>, c_len: usize) -> RatioSeries {
        RatioSeries {
            packets: values.len() / c_len,
            subcarriers: c_len,
            values,
            sample_rate: 1000.0,
            pair: (0, 1),
            flagged: 0,
        }
    }

    #[test]
    fn zero_input_gives_zero_spectrogram() {
        let r = ratio_from(vec![Complex64::new(0.0, 0.0); 2000 * 2], 2);
        let s = dfs_spectrogram(&r, &StftParams::default()).unwrap();
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert_eq!((s.bins, s.frames), (121, 70));
    }

    #[test]
    fn tone_ridge_lands_on_fft_bin() {
        let fs = 1000.0;
        let x: Vec<Complex64> = (0..2000).map(|t| Complex64::cis(2.0 * PI * 50.0 * t as f64 / fs)).collect();
        let p = StftParams {
            nfft: 256,
            ..StftParams::default()
        };
        let s = dfs_spectrogram(&ratio_from(x, 1), &p).unwrap();
        let center = (s.bins - 1) / 2;
        // bin width 1000/256 Hz
        let want = (50.0f64 / (fs / 256.0)).round() as usize;
        assert_eq!(want, 13);
        for f in 0..s.frames {
            let best = (0..s.bins).max_by(|&a, &b| s.at(a, f).total_cmp(&s.at(b, f))).unwrap();
            assert_eq!(best, center + want);
        }
        assert!(s.magnitudes.iter().all(|m| (0.0..=1.0).contains(m)));
        for (a, b) in s.freq_axis.iter().zip(s.freq_axis.iter().rev()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_doppler_sits_below_center() {
        let x: Vec<Complex64> = (0..1000).map(|t| Complex64::cis(-2.0 * PI * 20.0 * t as f64 / 1000.0)).collect();
        let s = dfs_spectrogram(&ratio_from(x, 1), &StftParams::default()).unwrap();
        assert!(s.peak_frequencies().iter().all(|&f| (f + 20.0).abs() < 1e-9));
    }

    #[test]
    fn resampling_frames_keeps_range() {
        let x: Vec<Complex64> = (0..2000).map(|t| Complex64::cis(0.3 * t as f64)).collect();
        let s = dfs_spectrogram(&ratio_from(x, 1), &StftParams::default()).unwrap();
        let r = s.resample_frames(64).unwrap();
        assert_eq!(r.to_tensor().dims(), &[121, 64]);
        assert!(r.magnitudes.iter().all(|m| (0.0..=1.0).contains(m)));
    }

    #[test]
    fn stft_preconditions() {
        let x = vec![Complex64::new(1.0, 0.0); 100];
        let p = StftParams::default();
        assert!(stft_magnitude(&x, 1000.0, &p).is_err());
        let p = StftParams {
            window_len: 50,
            nfft: 64,
            f_max: 600.0,
            ..p
        };
        assert!(stft_magnitude(&x, 1000.0, &p).is_err());
    }

    #[test]
    fn unwrap_removes_jumps() {
        let truth: Vec<f64> = (0..200).map(|i| 0.4 * i as f64).collect();
        let wrapped: Vec<f64> = truth.iter().map(|p| Complex64::cis(*p).arg()).collect();
        let un = unwrap_phase(&wrapped);
        for (u, t) in un.iter().zip(&truth) {
            assert!((u - t - (un[0] - truth[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn input_tensor_of_rotating_ratio() {
        let c_len = 3;
        let mut v = Vec::new();
        for t in 0..500 {
            for _ in 0..c_len {
                v.push(Complex64::from_polar(2.0, 0.05 * t as f64));
            }
        }
        let x = build_input_tensor(&ratio_from(v, c_len), 64).unwrap();
        assert_eq!(x.dims(), &[2, 3, 64]);
        let d = x.data();
        assert!(d[..3 * 64].iter().all(|&a| a == 0.0));
        for c in 0..3 {
            for t in 0..64 {
                let want = t as f64 / 63.0;
                assert!((d[3 * 64 + c * 64 + t] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_ratio_gives_zero_channels() {
        let r = ratio_from(vec![Complex64::new(1.5, 0.5); 40], 2);
        let x = build_input_tensor(&r, 16).unwrap();
        assert!(x.data().iter().all(|&a| a == 0.0));
    }
}
