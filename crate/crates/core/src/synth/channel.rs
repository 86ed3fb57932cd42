//! Multipath CSI rendering for a moving hand.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::trajectory::{Point, Trajectory};
use crate::data::{ClassId, CsiRecord, DomainTag};
use crate::kv::{self, KeyDoc, KvSection};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const PHASE_STREAM: u64 = 0x5048_4153_455f_4e5a;
const NOISE_STREAM: u64 = 0x4e4f_4953_455f_4157;

/// A time-invariant propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPath {
    pub gain: Complex64,
    /// Reflection point; `None` is the direct line of sight.
    pub reflector: Option<Point>,
}

/// A slowly oscillating reflector, e.g. a curtain or a fan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    pub gain: Complex64,
    pub center: Point,
    /// Oscillation amplitude along x, meters.
    pub amplitude: f64,
    pub freq: f64,
}

impl Interferer {
    fn position(&self, t: f64) -> Point {
        let dx = self.amplitude * (2.0 * PI * self.freq * t).sin();
        [self.center[0] + dx, self.center[1], self.center[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub tx_pos: Point,
    /// Center of the receive array; antennas are spread along y.
    pub rx_pos: Point,
    pub antennas: usize,
    pub antenna_spacing: f64,
    pub carrier_freq: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub sample_rate: f64,
    pub duration: f64,
    pub static_paths: Vec<StaticPath>,
    /// Reflection gain of each hand.
    pub dynamic_gain: Complex64,
    pub interferers: Vec<Interferer>,
    /// Standard deviation of the complex receiver noise.
    pub noise_std: f64,
    /// Draw a fresh uniform common phase offset per packet.
    pub phase_noise: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let carrier_freq = 5.825e9;
        SceneConfig {
            tx_pos: [0.0, 0.0, 1.0],
            rx_pos: [3.0, 0.0, 1.0],
            antennas: 3,
            antenna_spacing: SPEED_OF_LIGHT / carrier_freq / 2.0,
            carrier_freq,
            subcarriers: 30,
            subcarrier_spacing: 312.5e3,
            sample_rate: 1000.0,
            duration: 2.0,
            static_paths: vec![
                StaticPath {
                    gain: Complex64::new(1.0, 0.0),
                    reflector: None,
                },
                StaticPath {
                    gain: Complex64::from_polar(0.4, 0.7),
                    reflector: Some([1.5, -2.0, 1.0]),
                },
                StaticPath {
                    gain: Complex64::from_polar(0.3, 2.1),
                    reflector: Some([-1.0, 1.5, 1.2]),
                },
                StaticPath {
                    gain: Complex64::from_polar(0.25, -1.3),
                    reflector: Some([4.0, 2.0, 0.5]),
                },
            ],
            dynamic_gain: Complex64::new(0.25, 0.0),
            interferers: Vec::new(),
            noise_std: 0.02,
            phase_noise: true,
        }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl SceneConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn packets(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn antenna_pos(&self, a: usize) -> Point {
        let off = (a as f64 - (self.antennas as f64 - 1.0) / 2.0) * self.antenna_spacing;
        [self.rx_pos[0], self.rx_pos[1] + off, self.rx_pos[2]]
    }

    pub fn subcarrier_wavelength(&self, c: usize) -> f64 {
        let off = (c as f64 - (self.subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing;
        SPEED_OF_LIGHT / (self.carrier_freq + off)
    }

    /// Transmitter → point → antenna `a` path length.
    pub fn reflection_length(&self, p: Point, a: usize) -> f64 {
        dist(self.tx_pos, p) + dist(p, self.antenna_pos(a))
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas < 2 {
            return Err(Error::invalid("scene needs at least 2 antennas"));
        }
        if self.subcarriers == 0 || self.subcarriers > u16::MAX as usize {
            return Err(Error::invalid("subcarriers must be in 1..=65535"));
        }
        for (name, v) in [
            ("carrier_freq", self.carrier_freq),
            ("sample_rate", self.sample_rate),
            ("duration", self.duration),
            ("antenna_spacing", self.antenna_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be ≥ 0"));
        }
        if self.packets() < 2 {
            return Err(Error::invalid("scene duration yields fewer than 2 packets"));
        }
        Ok(())
    }

    /// Static channel per `(subcarrier, antenna)`.
    fn static_response(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.subcarriers * self.antennas);
        for c in 0..self.subcarriers {
            let k = 2.0 * PI / self.subcarrier_wavelength(c);
            for a in 0..self.antennas {
                let h = self
                    .static_paths
                    .iter()
                    .map(|p| {
                        let d = match p.reflector {
                            None => dist(self.tx_pos, self.antenna_pos(a)),
                            Some(r) => self.reflection_length(r, a),
                        };
                        p.gain * Complex64::cis(-k * d)
                    })
                    .sum();
                out.push(h);
            }
        }
        out
    }
}

/// Renders the CSI seen while `traj` is performed in `scene`.
///
/// Each packet is `e^{-jθ}(H_s + H_d + N)` where θ is the common phase offset
/// of that packet (zero when `phase_noise` is off) and `N` is circular
/// Gaussian noise. Phase offsets and noise come from separate streams derived
/// from `seed`, so toggling one leaves the other unchanged.
pub fn render_csi(
    scene: &SceneConfig,
    traj: &Trajectory,
    label: ClassId,
    domain: DomainTag,
    seed: u64,
) -> Result<CsiRecord> {
    scene.validate()?;
    let t_len = scene.packets();
    if traj.hands.iter().any(|h| h.len() != t_len) {
        return Err(Error::ShapeMismatch {
            expected: vec![t_len],
            found: vec![traj.len()],
        });
    }
    let (c_len, a_len) = (scene.subcarriers, scene.antennas);
    let hs = scene.static_response();
    let ks: Vec<f64> = (0..c_len).map(|c| 2.0 * PI / scene.subcarrier_wavelength(c)).collect();
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed ^ PHASE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let normal = Normal::new(0.0, scene.noise_std / 2f64.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;

    let mut samples = Vec::with_capacity(t_len * c_len * a_len);
    let mut lengths = vec![0.0; a_len];
    let mut moving: Vec<(Complex64, Vec<f64>)> = Vec::new();
    for t in 0..t_len {
        let time = t as f64 / scene.sample_rate;
        let theta: f64 = phase_rng.random_range(0.0..2.0 * PI);
        let rot = if scene.phase_noise {
            Complex64::cis(-theta)
        } else {
            Complex64::new(1.0, 0.0)
        };
        moving.clear();
        for hand in &traj.hands {
            for (a, l) in lengths.iter_mut().enumerate() {
                *l = scene.reflection_length(hand[t], a);
            }
            moving.push((scene.dynamic_gain, lengths.clone()));
        }
        for it in &scene.interferers {
            let p = it.position(time);
            moving.push((it.gain, (0..a_len).map(|a| scene.reflection_length(p, a)).collect()));
        }
        for (c, &k) in ks.iter().enumerate() {
            for a in 0..a_len {
                let mut h = hs[c * a_len + a];
                for (g, d) in &moving {
                    h += g * Complex64::cis(-k * d[a]);
                }
                let n = Complex64::new(normal.sample(&mut noise_rng), normal.sample(&mut noise_rng));
                samples.push(rot * (h + n));
            }
        }
    }
    CsiRecord::new(
        t_len,
        c_len,
        a_len,
        samples,
        scene.sample_rate,
        scene.carrier_freq,
        label,
        domain,
    )
}

/// Reflected path length of the first hand and its Doppler frequency shift.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub path_length: Vec<f64>,
    /// `-(1/λ) d'(t)` in Hz; positive when the path shortens.
    pub dfs_track: Vec<f64>,
}

/// Ground truth for antenna `a` from central differences of the path length.
pub fn ground_truth(scene: &SceneConfig, traj: &Trajectory, a: usize) -> Result<GroundTruth> {
    let hand = traj.hands.first().ok_or_else(|| Error::invalid("trajectory has no hands"))?;
    if hand.len() < 2 {
        return Err(Error::invalid("trajectory needs at least 2 samples"));
    }
    if a >= scene.antennas {
        return Err(Error::invalid(format!("antenna {a} out of range")));
    }
    let d: Vec<f64> = hand.iter().map(|&p| scene.reflection_length(p, a)).collect();
    let fs = scene.sample_rate;
    let lambda = scene.wavelength();
    let n = d.len();
    let dfs = (0..n)
        .map(|i| {
            let deriv = if i == 0 {
                (d[1] - d[0]) * fs
            } else if i == n - 1 {
                (d[n - 1] - d[n - 2]) * fs
            } else {
                (d[i + 1] - d[i - 1]) * fs / 2.0
            };
            -deriv / lambda
        })
        .collect();
    Ok(GroundTruth {
        path_length: d,
        dfs_track: dfs,
    })
}

fn parse_point(key: &str, v: &str) -> Result<Point> {
    let xs: Vec<f64> = kv::list(key, v, "x,y,z")?;
    match xs[..] {
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::InvalidValue {
            key: key.into(),
            value: v.into(),
            expected: "x,y,z".into(),
        }),
    }
}

fn parse_complex(key: &str, v: &str) -> Result<Complex64> {
    let xs: Vec<f64> = kv::list(key, v, "re,im")?;
    match xs[..] {
        [re, im] => Ok(Complex64::new(re, im)),
        _ => Err(Error::InvalidValue {
            key: key.into(),
            value: v.into(),
            expected: "re,im".into(),
        }),
    }
}

fn groups(v: &str) -> impl Iterator<Item = &str> {
    v.split(';').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_static_paths(key: &str, v: &str) -> Result<Vec<StaticPath>> {
    groups(v)
        .map(|g| {
            let xs: Vec<f64> = kv::list(key, g, "re,im[,x,y,z]")?;
            match xs[..] {
                [re, im] => Ok(StaticPath {
                    gain: Complex64::new(re, im),
                    reflector: None,
                }),
                [re, im, x, y, z] => Ok(StaticPath {
                    gain: Complex64::new(re, im),
                    reflector: Some([x, y, z]),
                }),
                _ => Err(Error::InvalidValue {
                    key: key.into(),
                    value: g.into(),
                    expected: "re,im or re,im,x,y,z".into(),
                }),
            }
        })
        .collect()
}

fn parse_interferers(key: &str, v: &str) -> Result<Vec<Interferer>> {
    groups(v)
        .map(|g| {
            let xs: Vec<f64> = kv::list(key, g, "re,im,x,y,z,amplitude,freq")?;
            match xs[..] {
                [re, im, x, y, z, amplitude, freq] => Ok(Interferer {
                    gain: Complex64::new(re, im),
                    center: [x, y, z],
                    amplitude,
                    freq,
                }),
                _ => Err(Error::InvalidValue {
                    key: key.into(),
                    value: g.into(),
                    expected: "re,im,x,y,z,amplitude,freq".into(),
                }),
            }
        })
        .collect()
}

fn fmt_floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| kv::float(x)).collect::<Vec<_>>().join(",")
}

const SCENE_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "tx_pos", help: "transmitter position x,y,z (m)" },
    KeyDoc { key: "rx_pos", help: "receive array center x,y,z (m)" },
    KeyDoc { key: "antennas", help: "receive antennas" },
    KeyDoc { key: "antenna_spacing", help: "antenna spacing (m)" },
    KeyDoc { key: "carrier_freq", help: "center frequency (Hz)" },
    KeyDoc { key: "subcarriers", help: "number of subcarriers" },
    KeyDoc { key: "subcarrier_spacing", help: "subcarrier spacing (Hz)" },
    KeyDoc { key: "sample_rate", help: "packet rate (Hz)" },
    KeyDoc { key: "duration", help: "record length (s)" },
    KeyDoc { key: "static_paths", help: "`;`-separated re,im[,x,y,z]; no point = line of sight" },
    KeyDoc { key: "dynamic_gain", help: "hand reflection gain re,im" },
    KeyDoc { key: "interferers", help: "`;`-separated re,im,x,y,z,amplitude,freq" },
    KeyDoc { key: "noise_std", help: "complex noise standard deviation" },
    KeyDoc { key: "phase_noise", help: "random common phase offset per packet" },
];

impl KvSection for SceneConfig {
    fn keys() -> &'static [KeyDoc] {
        SCENE_KEYS
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "tx_pos" => self.tx_pos = parse_point(key, v)?,
            "rx_pos" => self.rx_pos = parse_point(key, v)?,
            "antennas" => self.antennas = kv::value(key, v, "an integer")?,
            "antenna_spacing" => self.antenna_spacing = kv::value(key, v, "meters")?,
            "carrier_freq" => self.carrier_freq = kv::value(key, v, "Hz")?,
            "subcarriers" => self.subcarriers = kv::value(key, v, "an integer")?,
            "subcarrier_spacing" => self.subcarrier_spacing = kv::value(key, v, "Hz")?,
            "sample_rate" => self.sample_rate = kv::value(key, v, "Hz")?,
            "duration" => self.duration = kv::value(key, v, "seconds")?,
            "static_paths" => self.static_paths = parse_static_paths(key, v)?,
            "dynamic_gain" => self.dynamic_gain = parse_complex(key, v)?,
            "interferers" => self.interferers = parse_interferers(key, v)?,
            "noise_std" => self.noise_std = kv::value(key, v, "a number")?,
            "phase_noise" => self.phase_noise = kv::flag(key, v)?,
            _ => return Err(kv::unknown_key(key, SCENE_KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let paths = self
            .static_paths
            .iter()
            .map(|p| {
                let mut xs = vec![p.gain.re, p.gain.im];
                if let Some(r) = p.reflector {
                    xs.extend(r);
                }
                fmt_floats(&xs)
            })
            .collect::<Vec<_>>()
            .join(";");
        let interferers = self
            .interferers
            .iter()
            .map(|i| {
                let mut xs = vec![i.gain.re, i.gain.im];
                xs.extend(i.center);
                xs.extend([i.amplitude, i.freq]);
                fmt_floats(&xs)
            })
            .collect::<Vec<_>>()
            .join(";");
        vec![
            ("tx_pos", fmt_floats(&self.tx_pos)),
            ("rx_pos", fmt_floats(&self.rx_pos)),
            ("antennas", self.antennas.to_string()),
            ("antenna_spacing", kv::float(self.antenna_spacing)),
            ("carrier_freq", kv::float(self.carrier_freq)),
            ("subcarriers", self.subcarriers.to_string()),
            ("subcarrier_spacing", kv::float(self.subcarrier_spacing)),
            ("sample_rate", kv::float(self.sample_rate)),
            ("duration", kv::float(self.duration)),
            ("static_paths", paths),
            ("dynamic_gain", fmt_floats(&[self.dynamic_gain.re, self.dynamic_gain.im])),
            ("interferers", interferers),
            ("noise_std", kv::float(self.noise_std)),
            ("phase_noise", self.phase_noise.to_string()),
        ]
    }
}
