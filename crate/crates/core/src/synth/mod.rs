//! Synthetic WiFi gesture data: hand trajectories, multipath CSI rendering and
//! labelled datasets over a grid of users, locations and orientations.

mod channel;
mod trajectory;

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use channel::{
    ground_truth, render_csi, GroundTruth, Interferer, SceneConfig, StaticPath, SPEED_OF_LIGHT,
};
pub use trajectory::{
    circle_center, gen_trajectory, stroke_position, GestureFamily, Point, Trajectory, TrajectorySpec,
};

use crate::data::{derive_seed, write_manifest, write_record, ClassId, CsiRecord, DomainTag, ManifestEntry};
use crate::kv::{self, KeyDoc, KvSection};
use crate::{par, Error, Result};

/// Dataset generation settings. Class `i` is `classes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub classes: Vec<GestureFamily>,
    /// Instances per class; a single value applies to every class.
    pub instances: Vec<usize>,
    pub users: u32,
    pub locations: u32,
    pub orientations: u32,
    /// Hand start position at location 0.
    pub hand_pos: Point,
    /// Locations form rows of three spaced this far apart (m).
    pub location_spacing: f64,
    /// Orientation 0 angle (rad); −π/2 points the gesture's forward axis at
    /// the link.
    pub base_orientation: f64,
    /// Rotation between consecutive orientations (rad).
    pub orientation_step: f64,
    pub scale: f64,
    pub speed: f64,
    /// Per-instance relative jitter of scale and speed.
    pub user_jitter: f64,
    /// Relative spread of the per-user scale and speed habits.
    pub user_variation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene: SceneConfig::default(),
            classes: GestureFamily::ALL[..7].to_vec(),
            instances: vec![20],
            users: 1,
            locations: 1,
            orientations: 1,
            hand_pos: [1.5, 0.8, 1.0],
            location_spacing: 0.5,
            base_orientation: -PI / 2.0,
            orientation_step: PI / 4.0,
            scale: 0.3,
            speed: 0.6,
            user_jitter: 0.1,
            user_variation: 0.15,
        }
    }
}

/// One record to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordPlan {
    pub index: usize,
    pub label: ClassId,
    pub instance: usize,
    pub domain: DomainTag,
}

impl SynthConfig {
    pub fn instances_of(&self, class: usize) -> usize {
        if self.instances.len() == 1 {
            self.instances[0]
        } else {
            self.instances[class]
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.classes.is_empty() {
            return Err(Error::invalid("synth needs at least one class"));
        }
        if self.instances.len() != 1 && self.instances.len() != self.classes.len() {
            return Err(Error::invalid(format!(
                "instances lists {} counts for {} classes",
                self.instances.len(),
                self.classes.len()
            )));
        }
        if self.users == 0 || self.locations == 0 || self.orientations == 0 {
            return Err(Error::invalid("users, locations and orientations must be ≥ 1"));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<DomainTag> {
        let mut out = Vec::new();
        for user in 0..self.users {
            for location in 0..self.locations {
                for orientation in 0..self.orientations {
                    out.push(DomainTag {
                        user,
                        location,
                        orientation,
                    });
                }
            }
        }
        out
    }

    /// Records in class-major order. Domains cycle through the grid by global
    /// index, so per-class and overall domain counts differ by at most one.
    pub fn plan(&self) -> Result<Vec<RecordPlan>> {
        self.validate()?;
        let grid = self.grid();
        let mut out = Vec::new();
        for class in 0..self.classes.len() {
            for instance in 0..self.instances_of(class) {
                let index = out.len();
                out.push(RecordPlan {
                    index,
                    label: class as ClassId,
                    instance,
                    domain: grid[index % grid.len()],
                });
            }
        }
        Ok(out)
    }

    /// Trajectory parameters for `plan` before per-instance jitter.
    pub fn trajectory_spec(&self, plan: &RecordPlan, seed: u64) -> TrajectorySpec {
        let d = plan.domain;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA5A5_0000 + d.user as u64));
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let col = (d.location % 3) as f64 - 1.0;
        let row = (d.location / 3) as f64;
        TrajectorySpec {
            family: self.classes[plan.label as usize],
            start_pos: [
                self.hand_pos[0] + col * self.location_spacing,
                self.hand_pos[1] + row * self.location_spacing,
                self.hand_pos[2],
            ],
            scale: self.scale * (1.0 + self.user_variation * z1).max(0.5),
            speed: self.speed * (1.0 + self.user_variation * z2).max(0.5),
            orientation: self.base_orientation + d.orientation as f64 * self.orientation_step,
            user_jitter: self.user_jitter,
        }
    }
}

/// Renders one planned record. Depends only on `(cfg, plan, seed)`.
pub fn synth_record(cfg: &SynthConfig, plan: &RecordPlan, seed: u64) -> Result<CsiRecord> {
    let rec_seed = derive_seed(seed, plan.index as u64);
    let spec = cfg.trajectory_spec(plan, seed);
    let traj = gen_trajectory(&spec, cfg.scene.sample_rate, cfg.scene.duration, rec_seed)?;
    render_csi(&cfg.scene, &traj, plan.label, plan.domain, derive_seed(rec_seed, 1))
}

/// File name of a planned record inside a dataset directory.
pub fn record_name(plan: &RecordPlan) -> String {
    format!("rec_{:05}_c{}.csib", plan.index, plan.label)
}

/// Writes every planned record plus `manifest.csv` into `dir`.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<Vec<ManifestEntry>> {
    let plan = cfg.plan()?;
    std::fs::create_dir_all(dir)?;
    let entries = par::map(&plan, |p| {
        let rec = synth_record(cfg, p, seed)?;
        write_record(dir, &record_name(p), &rec)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    write_manifest(dir, &entries)?;
    Ok(entries)
}

fn fmt_point(p: &Point) -> String {
    p.iter().map(|&x| kv::float(x)).collect::<Vec<_>>().join(",")
}

const SYNTH_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "classes", help: "comma-separated gesture families; class i is the i-th" },
    KeyDoc { key: "instances", help: "instances per class (one value or one per class)" },
    KeyDoc { key: "users", help: "users in the domain grid" },
    KeyDoc { key: "locations", help: "locations in the domain grid" },
    KeyDoc { key: "orientations", help: "orientations in the domain grid" },
    KeyDoc { key: "hand_pos", help: "hand start position at location 0, x,y,z (m)" },
    KeyDoc { key: "location_spacing", help: "distance between neighbouring locations (m)" },
    KeyDoc { key: "base_orientation", help: "rotation of orientation 0 (rad)" },
    KeyDoc { key: "orientation_step", help: "rotation between orientations (rad)" },
    KeyDoc { key: "scale", help: "gesture size (m)" },
    KeyDoc { key: "speed", help: "peak hand speed (m/s)" },
    KeyDoc { key: "user_jitter", help: "per-instance relative jitter of size and speed" },
    KeyDoc { key: "user_variation", help: "per-user relative spread of size and speed" },
];

impl KvSection for SynthConfig {
    fn keys() -> &'static [KeyDoc] {
        SYNTH_KEYS
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "classes" => self.classes = kv::list(key, v, "gesture family names")?,
            "instances" => self.instances = kv::list(key, v, "non-negative integers")?,
            "users" => self.users = kv::value(key, v, "an integer")?,
            "locations" => self.locations = kv::value(key, v, "an integer")?,
            "orientations" => self.orientations = kv::value(key, v, "an integer")?,
            "hand_pos" => {
                let xs: Vec<f64> = kv::list(key, v, "x,y,z")?;
                self.hand_pos = xs.try_into().map_err(|_| Error::InvalidValue {
                    key: key.into(),
                    value: v.into(),
                    expected: "x,y,z".into(),
                })?;
            }
            "location_spacing" => self.location_spacing = kv::value(key, v, "meters")?,
            "base_orientation" => self.base_orientation = kv::value(key, v, "radians")?,
            "orientation_step" => self.orientation_step = kv::value(key, v, "radians")?,
            "scale" => self.scale = kv::value(key, v, "meters")?,
            "speed" => self.speed = kv::value(key, v, "m/s")?,
            "user_jitter" => self.user_jitter = kv::value(key, v, "a number")?,
            "user_variation" => self.user_variation = kv::value(key, v, "a number")?,
            _ if SceneConfig::keys().iter().any(|k| k.key == key) => self.scene.set(key, v)?,
            _ => {
                let all: Vec<KeyDoc> = SYNTH_KEYS.iter().chain(SceneConfig::keys()).copied().collect();
                return Err(kv::unknown_key(key, &all));
            }
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("classes", kv::join(&self.classes)),
            ("instances", kv::join(&self.instances)),
            ("users", self.users.to_string()),
            ("locations", self.locations.to_string()),
            ("orientations", self.orientations.to_string()),
            ("hand_pos", fmt_point(&self.hand_pos)),
            ("location_spacing", kv::float(self.location_spacing)),
            ("base_orientation", kv::float(self.base_orientation)),
            ("orientation_step", kv::float(self.orientation_step)),
            ("scale", kv::float(self.scale)),
            ("speed", kv::float(self.speed)),
            ("user_jitter", kv::float(self.user_jitter)),
            ("user_variation", kv::float(self.user_variation)),
        ];
        out.extend(self.scene.entries());
        out
    }
}
