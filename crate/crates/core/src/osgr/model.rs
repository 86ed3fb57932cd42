//! Trained decision model: network, feature bank and rejection threshold.
//!
//! On disk a model is a directory holding `model.wock` (network), `bank.wfdb`
//! (bank and threshold) and `model.cfg` (training settings, tensor shapes and
//! the unscaled threshold statistic as `key = value` lines).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::data::ClassId;
use crate::kv::{self, KvSection};
use crate::net::{load_checkpoint, save_checkpoint, Network, NetworkSpec, Tensor};
use crate::{par, Error, Result};

use super::bank::{read_wfdb, write_wfdb, FeatureBank};
use super::decision::{decide, knn_candidate, Decision};
use super::train::{unit_or_axis, TrainConfig};

pub const MODEL_FILE: &str = "model.wock";
pub const BANK_FILE: &str = "bank.wfdb";
pub const SIDECAR_FILE: &str = "model.cfg";

#[derive(Debug, Clone)]
pub struct DecisionModel {
    network: Network,
    bank: FeatureBank,
    /// Mean over the final epoch's batches of the largest same-class spread.
    threshold_base: f64,
    threshold: f64,
    config: TrainConfig,
}

impl DecisionModel {
    pub fn new(network: Network, bank: FeatureBank, threshold_base: f64, config: TrainConfig) -> Result<Self> {
        if bank.dim() != network.spec().embed_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![network.spec().embed_dim()],
                found: vec![bank.dim()],
            });
        }
        if !(threshold_base.is_finite() && threshold_base >= 0.0) {
            return Err(Error::invalid(format!("threshold statistic {threshold_base} is not a finite value ≥ 0")));
        }
        if config.k > bank.len() {
            return Err(Error::invalid(format!("k = {} exceeds the bank size {}", config.k, bank.len())));
        }
        let threshold = (config.xi * threshold_base) as f32 as f64;
        Ok(DecisionModel {
            network,
            bank,
            threshold_base,
            threshold,
            config,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn threshold_base(&self) -> f64 {
        self.threshold_base
    }

    /// The same model with the threshold rescaled to `xi`.
    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        let mut config = self.config.clone();
        config.xi = xi;
        config.validate()?;
        DecisionModel::new(self.network.clone(), self.bank.clone(), self.threshold_base, config)
    }

    /// Unit embedding of one input tensor.
    pub fn embed(&self, input: &Tensor) -> Result<Vec<f64>> {
        let (e, _) = self.network.embed(input)?;
        Ok(unit_or_axis(e.data()))
    }

    pub fn embed_all(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        par::map(inputs, |x| self.embed(x)).into_iter().collect()
    }

    /// KNN candidate plus threshold test for an embedding.
    pub fn decide_embedding(&self, embedding: &[f64]) -> Result<Decision> {
        let c = knn_candidate(embedding, &self.bank, self.config.k, None)?;
        Ok(decide(c, self.threshold))
    }

    pub fn classify(&self, input: &Tensor) -> Result<Decision> {
        self.decide_embedding(&self.embed(input)?)
    }

    pub fn classify_all(&self, inputs: &[Tensor]) -> Result<Vec<Decision>> {
        par::map(inputs, |x| self.classify(x)).into_iter().collect()
    }

    pub fn known_classes(&self) -> Vec<ClassId> {
        let mut c = self.bank.labels().to_vec();
        c.sort_unstable();
        c.dedup();
        c
    }

    fn sidecar(&self) -> String {
        let spec = self.network.spec();
        let mut entries: Vec<(String, String)> = self
            .config
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        entries.push(("input_dims".into(), kv::join(&spec.input_dims)));
        entries.push(("target_dims".into(), kv::join(&spec.target_dims)));
        entries.push(("threshold_base".into(), kv::float(self.threshold_base)));
        kv::render(&entries)
    }

    /// Writes the three model files into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(&self.network, None, BufWriter::new(File::create(dir.join(MODEL_FILE))?))?;
        write_wfdb(&self.bank, self.threshold, BufWriter::new(File::create(dir.join(BANK_FILE))?))?;
        fs::write(dir.join(SIDECAR_FILE), self.sidecar())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let side = dir.join(SIDECAR_FILE);
        if !side.exists() {
            return Err(Error::invalid(format!("no trained model in {}", dir.display())));
        }
        let mut config = TrainConfig::default();
        let (mut input_dims, mut target_dims, mut base) = (None, None, None);
        for (k, v) in kv::parse(&fs::read_to_string(&side)?)? {
            match k.as_str() {
                "input_dims" => input_dims = Some(kv::list::<usize>(&k, &v, "dimensions")?),
                "target_dims" => target_dims = Some(kv::list::<usize>(&k, &v, "dimensions")?),
                "threshold_base" => base = Some(kv::value::<f64>(&k, &v, "a number")?),
                _ => config.set(&k, &v)?,
            }
        }
        let missing = |what: &str| Error::format("model", format!("{SIDECAR_FILE} lacks `{what}`"));
        let input_dims = input_dims.ok_or_else(|| missing("input_dims"))?;
        let target_dims = target_dims.ok_or_else(|| missing("target_dims"))?;
        let base = base.ok_or_else(|| missing("threshold_base"))?;
        let spec = NetworkSpec::desk_scale(&input_dims, &target_dims, &config.arch)?;
        let (network, _) = load_checkpoint(&spec, BufReader::new(File::open(dir.join(MODEL_FILE))?))?;
        let (bank, threshold) = read_wfdb(BufReader::new(File::open(dir.join(BANK_FILE))?), config.momentum)?;
        let model = DecisionModel::new(network, bank, base, config)?;
        if model.threshold.to_bits() != threshold.to_bits() {
            return Err(Error::format(
                "model",
                format!("stored threshold {threshold} disagrees with xi·statistic {}", model.threshold),
            ));
        }
        Ok(model)
    }
}
