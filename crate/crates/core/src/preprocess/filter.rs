//! Butterworth filters as second-order sections with zero-phase
//! (forward-backward) application.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Lowpass,
    Highpass,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Lowpass => "lowpass",
            FilterMode::Highpass => "highpass",
        })
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowpass" => Ok(FilterMode::Lowpass),
            "highpass" => Ok(FilterMode::Highpass),
            _ => Err(Error::invalid(format!("unknown filter mode `{s}`"))),
        }
    }
}

/// One biquad `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Gain at `z = e^{jω}`.
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::cis(-w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }

    /// Transposed direct form II state after an infinitely long input of ones.
    fn step_state(&self) -> [f64; 2] {
        let g = (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2]);
        let z1 = self.b[2] - self.a[2] * g;
        let z0 = self.b[1] - self.a[1] * g + z1;
        [z0, z1]
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub order: usize,
}

/// Digital Butterworth design by the bilinear transform with frequency
/// prewarping so that the −3 dB point lands exactly on `cutoff`.
pub fn butterworth(mode: FilterMode, order: usize, cutoff: f64, sample_rate: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::invalid("filter order must be ≥ 1"));
    }
    if !(cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    let fs2 = 2.0 * sample_rate;
    let wc = fs2 * (PI * cutoff / sample_rate).tan();
    let n = order as f64;
    let zero_sign = match mode {
        FilterMode::Lowpass => 1.0,
        FilterMode::Highpass => -1.0,
    };
    // gain normalization point: DC for lowpass, Nyquist for highpass
    let w_ref = match mode {
        FilterMode::Lowpass => 0.0,
        FilterMode::Highpass => PI,
    };
    let analog = |k: usize| {
        let p = Complex64::cis(PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n));
        match mode {
            FilterMode::Lowpass => p * wc,
            FilterMode::Highpass => wc / p,
        }
    };
    let to_z = |s: Complex64| (fs2 + s) / (fs2 - s);

    let mut sections = Vec::new();
    for k in 0..order / 2 {
        let zp = to_z(analog(k));
        sections.push(Biquad {
            b: [1.0, 2.0 * zero_sign, 1.0],
            a: [1.0, -2.0 * zp.re, zp.norm_sqr()],
        });
    }
    if order % 2 == 1 {
        let zp = to_z(analog(order / 2)).re;
        sections.push(Biquad {
            b: [1.0, zero_sign, 0.0],
            a: [1.0, -zp, 0.0],
        });
    }
    for s in &mut sections {
        let g = s.response(w_ref).norm();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Ok(Sos { sections, order })
}

impl Sos {
    /// Complex gain at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq / sample_rate;
        self.sections.iter().map(|s| s.response(w)).product()
    }

    /// Runs the cascade in place starting from `x0` times the step state.
    fn run(&self, x: &mut [f64], x0: f64) {
        let mut scale = x0;
        for s in &self.sections {
            let [mut z0, mut z1] = s.step_state();
            z0 *= scale;
            z1 *= scale;
            for v in x.iter_mut() {
                let xi = *v;
                let y = s.b[0] * xi + z0;
                z0 = s.b[1] * xi - s.a[1] * y + z1;
                z1 = s.b[2] * xi - s.a[2] * y;
                *v = y;
            }
            scale *= (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
        }
    }

    /// Edge padding used by [`Sos::filtfilt`].
    pub fn padlen(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Zero-phase filtering: odd extension at both ends, forward pass and
    /// backward pass each started from the steady state of their first sample.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 3 * self.order || n < 2 {
            return Err(Error::invalid(format!(
                "series of length {n} too short for an order-{} filter",
                self.order
            )));
        }
        let pad = self.padlen().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    /// [`Sos::filtfilt`] on real and imaginary parts independently.
    pub fn filtfilt_complex(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let re = self.filtfilt(&re)?;
        let im = self.filtfilt(&im)?;
        Ok(re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect())
    }
}

/// Zero-phase Butterworth filtering of a complex series.
pub fn filter_series(
    series: &[Complex64],
    sample_rate: f64,
    mode: FilterMode,
    cutoff: f64,
    order: usize,
) -> Result<Vec<Complex64>> {
    butterworth(mode, order, cutoff, sample_rate)?.filtfilt_complex(series)
}
