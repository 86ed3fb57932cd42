//! Parametric hand trajectories for the gesture families.
//!
//! Every family is built in a local frame (forward axis `a`, lateral axis `b`,
//! height `z`) starting at the origin, then rotated by the orientation about
//! the start position. All paths are C¹: strokes use cosine velocity ramps and
//! polylines ease in and out of every vertex.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GestureFamily {
    PushPull,
    Sweep,
    Clap,
    Slide,
    Circle,
    Zigzag,
    DrawN,
    Triangle,
    Rectangle,
}

impl GestureFamily {
    pub const ALL: [GestureFamily; 9] = [
        GestureFamily::PushPull,
        GestureFamily::Sweep,
        GestureFamily::Clap,
        GestureFamily::Slide,
        GestureFamily::Circle,
        GestureFamily::Zigzag,
        GestureFamily::DrawN,
        GestureFamily::Triangle,
        GestureFamily::Rectangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GestureFamily::PushPull => "push_pull",
            GestureFamily::Sweep => "sweep",
            GestureFamily::Clap => "clap",
            GestureFamily::Slide => "slide",
            GestureFamily::Circle => "circle",
            GestureFamily::Zigzag => "zigzag",
            GestureFamily::DrawN => "draw_n",
            GestureFamily::Triangle => "triangle",
            GestureFamily::Rectangle => "rectangle",
        }
    }
}

impl fmt::Display for GestureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GestureFamily::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gesture family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub family: GestureFamily,
    pub start_pos: Point,
    /// Characteristic size of the gesture, meters.
    pub scale: f64,
    /// Nominal hand speed, m/s: the plateau speed of strokes and the peak
    /// speed along polylines. `slide` goes out faster and returns slower.
    pub speed: f64,
    /// Rotation about the vertical axis through `start_pos`, radians.
    pub orientation: f64,
    /// Relative standard deviation applied to scale and speed.
    pub user_jitter: f64,
}

impl TrajectorySpec {
    pub fn new(family: GestureFamily, start_pos: Point) -> Self {
        TrajectorySpec {
            family,
            start_pos,
            scale: 0.3,
            speed: 0.6,
            orientation: 0.0,
            user_jitter: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("trajectory scale must be > 0, got {}", self.scale)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::invalid(format!("trajectory speed must be > 0, got {}", self.speed)));
        }
        if !(self.user_jitter >= 0.0) {
            return Err(Error::invalid("user_jitter must be ≥ 0"));
        }
        Ok(())
    }
}

/// Sampled positions of every moving hand (two for `clap`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub hands: Vec<Vec<Point>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.hands.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A hand resting at `p` for `n` samples.
    pub fn stationary(p: Point, n: usize) -> Self {
        Trajectory {
            hands: vec![vec![p; n]],
        }
    }
}

const RAMP: f64 = 0.1;

/// Position along a back-and-forth stroke of length `len`: cosine velocity
/// ramps of up to `RAMP` seconds around a constant-speed plateau at `v`.
pub fn stroke_position(t: f64, len: f64, v: f64) -> f64 {
    let tau = RAMP.min(len / v);
    let plat = len / v - tau;
    let dur = 2.0 * tau + plat;
    let one_way = |s: f64| -> f64 {
        if s < tau {
            v * (s / 2.0 - tau / (2.0 * PI) * (PI * s / tau).sin())
        } else if s < tau + plat {
            v * tau / 2.0 + v * (s - tau)
        } else {
            let u = (s - tau - plat).min(tau);
            v * tau / 2.0 + v * plat + v * (u / 2.0 + tau / (2.0 * PI) * (PI * u / tau).sin())
        }
    };
    let s = t.rem_euclid(2.0 * dur);
    if s < dur {
        one_way(s)
    } else {
        len - one_way(s - dur)
    }
}

/// Walks `pts` at peak speed `v`, easing (3u² − 2u³) along each segment;
/// the closed loop of segments repeats for as long as needed.
fn polyline_position(t: f64, pts: &[[f64; 2]], v: f64) -> [f64; 2] {
    let segs: Vec<(usize, f64)> = (0..pts.len() - 1)
        .map(|i| {
            let d = ((pts[i + 1][0] - pts[i][0]).powi(2) + (pts[i + 1][1] - pts[i][1]).powi(2)).sqrt();
            (i, 1.5 * d / v)
        })
        .filter(|(_, d)| *d > 0.0)
        .collect();
    let total: f64 = segs.iter().map(|s| s.1).sum();
    let mut s = t.rem_euclid(total);
    for &(i, d) in &segs {
        if s <= d {
            let u = s / d;
            let e = u * u * (3.0 - 2.0 * u);
            return [
                pts[i][0] + e * (pts[i + 1][0] - pts[i][0]),
                pts[i][1] + e * (pts[i + 1][1] - pts[i][1]),
            ];
        }
        s -= d;
    }
    *pts.last().unwrap()
}

/// Makes an open path closed by walking it back.
fn there_and_back(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = pts.to_vec();
    out.extend(pts.iter().rev().skip(1));
    out
}

/// Local-frame hand positions `(a, b, z)` at time `t`.
fn local_positions(family: GestureFamily, t: f64, s: f64, v: f64) -> Vec<[f64; 3]> {
    match family {
        GestureFamily::PushPull => vec![[stroke_position(t, s, v), 0.0, 0.0]],
        GestureFamily::Sweep => {
            let b = stroke_position(t, s, v);
            // shallow arc in front of the body
            let a = 0.25 * s * (PI * b / s).sin();
            vec![[a, b, 0.0]]
        }
        GestureFamily::Clap => {
            let half = s / 2.0;
            let x = stroke_position(t, half * 0.9, v);
            vec![[0.0, -x, 0.0], [0.0, -s + x, 0.0]]
        }
        GestureFamily::Slide => {
            // quick forward-lateral slide, slow return
            let pts = [[0.0, 0.0], [0.7 * s, 0.7 * s]];
            let d = 0.7 * s * 2f64.sqrt();
            let fwd = 1.5 * d / (1.5 * v);
            let back = 1.5 * d / (0.6 * v);
            let u = t.rem_euclid(fwd + back);
            let e = |u: f64| u * u * (3.0 - 2.0 * u);
            let frac = if u < fwd { e(u / fwd) } else { 1.0 - e((u - fwd) / back) };
            vec![[pts[1][0] * frac, pts[1][1] * frac, 0.0]]
        }
        GestureFamily::Circle => {
            let r = s;
            let w = v / r;
            vec![[r * (w * t).cos() - r, r * (w * t).sin(), 0.0]]
        }
        GestureFamily::Zigzag => {
            let pts = there_and_back(&[
                [0.0, 0.0],
                [0.25 * s, 0.5 * s],
                [0.5 * s, 0.0],
                [0.75 * s, 0.5 * s],
                [s, 0.0],
            ]);
            let p = polyline_position(t, &pts, v);
            vec![[p[0], p[1], 0.0]]
        }
        GestureFamily::DrawN => {
            let pts = there_and_back(&[[0.0, 0.0], [s, 0.0], [0.0, 0.6 * s], [s, 0.6 * s]]);
            let p = polyline_position(t, &pts, v);
            vec![[p[0], p[1], 0.0]]
        }
        GestureFamily::Triangle => {
            let pts = [[0.0, 0.0], [s, 0.0], [0.5 * s, 0.866 * s], [0.0, 0.0]];
            let p = polyline_position(t, &pts, v);
            vec![[p[0], p[1], 0.0]]
        }
        GestureFamily::Rectangle => {
            let pts = [[0.0, 0.0], [s, 0.0], [s, 0.6 * s], [0.0, 0.6 * s], [0.0, 0.0]];
            let p = polyline_position(t, &pts, v);
            vec![[p[0], p[1], 0.0]]
        }
    }
}

/// Samples `spec` at `sample_rate` for `duration` seconds.
///
/// `user_jitter` rescales the gesture size and speed by `1 + jitter·z` with
/// `z ~ N(0, 1)` drawn from `seed` (each factor floored at 0.3).
pub fn gen_trajectory(spec: &TrajectorySpec, sample_rate: f64, duration: f64, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    if !(sample_rate > 0.0 && duration > 0.0) {
        return Err(Error::invalid("sample_rate and duration must be > 0"));
    }
    let n = (duration * sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::invalid("trajectory needs at least 2 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z1: f64 = StandardNormal.sample(&mut rng);
    let z2: f64 = StandardNormal.sample(&mut rng);
    let scale = spec.scale * (1.0 + spec.user_jitter * z1).max(0.3);
    let speed = spec.speed * (1.0 + spec.user_jitter * z2).max(0.3);

    let (sin, cos) = spec.orientation.sin_cos();
    let n_hands = if spec.family == GestureFamily::Clap { 2 } else { 1 };
    let mut hands = vec![Vec::with_capacity(n); n_hands];
    let origin = local_positions(spec.family, 0.0, scale, speed);
    for i in 0..n {
        let t = i as f64 / sample_rate;
        for (h, p) in local_positions(spec.family, t, scale, speed).into_iter().enumerate() {
            // clap hands start apart: hand 0 at the start position, hand 1 mirrored
            let (a, b) = if h == 0 { (p[0], p[1]) } else { (p[0], p[1] - origin[1][1] - scale * 0.1) };
            hands[h].push([
                spec.start_pos[0] + cos * a - sin * b,
                spec.start_pos[1] + sin * a + cos * b,
                spec.start_pos[2] + p[2],
            ]);
        }
    }
    Ok(Trajectory { hands })
}

/// Center of a `circle` trajectory generated without jitter.
pub fn circle_center(spec: &TrajectorySpec) -> Point {
    let (sin, cos) = spec.orientation.sin_cos();
    [
        spec.start_pos[0] - cos * spec.scale,
        spec.start_pos[1] - sin * spec.scale,
        spec.start_pos[2],
    ]
}
