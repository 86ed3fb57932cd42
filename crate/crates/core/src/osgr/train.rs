//! Joint training of the embedding (neighbor loss against a feature bank)
//! and the spectrogram decoder (construction loss).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, ClassId};
use crate::kv::{self, KeyDoc, KvSection};
use crate::net::{adam_step, AdamParams, AdamState, DeskScale, Forward, Network, NetworkSpec, StepOutcome, Tensor};
use crate::{par, Error, Result};

use super::bank::FeatureBank;
use super::decision::{compute_threshold, same_class_spread};
use super::loss::{construction_loss, neighbor_loss_and_grad, total_loss};
use super::model::DecisionModel;

/// How the bank follows the network during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankMode {
    /// Momentum update of the rows seen in each batch.
    Momentum,
    /// Re-embed every training sample after each step.
    Recompute,
}

impl fmt::Display for BankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BankMode::Momentum => "momentum",
            BankMode::Recompute => "recompute",
        })
    }
}

impl FromStr for BankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentum" => Ok(BankMode::Momentum),
            "recompute" => Ok(BankMode::Recompute),
            _ => Err(Error::invalid(format!("unknown bank mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Softmax temperature of the neighbor loss.
    pub gamma: f64,
    /// Weight of the construction loss.
    pub lambda: f64,
    /// Threshold scale.
    pub xi: f64,
    /// Neighbors consulted for candidates and thresholds.
    pub k: usize,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub bank_mode: BankMode,
    pub arch: DeskScale,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.05,
            lambda: 1.0,
            xi: 2.0,
            k: 50,
            momentum: 0.5,
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_step: 15,
            bank_mode: BankMode::Momentum,
            arch: DeskScale::default(),
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be > 0"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be ≥ 0"));
        }
        if !(self.xi > 0.0) {
            return Err(Error::invalid("xi must be > 0"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::invalid("batch_size and lr_step must be ≥ 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be > 0"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

const TRAIN_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "gamma", help: "neighbor-loss temperature" },
    KeyDoc { key: "lambda", help: "construction-loss weight" },
    KeyDoc { key: "xi", help: "rejection threshold scale" },
    KeyDoc { key: "k", help: "nearest neighbors for candidates and thresholds" },
    KeyDoc { key: "momentum", help: "feature-bank momentum in [0, 1)" },
    KeyDoc { key: "epochs", help: "training epochs" },
    KeyDoc { key: "batch_size", help: "samples per optimizer step" },
    KeyDoc { key: "lr", help: "initial Adam learning rate" },
    KeyDoc { key: "lr_decay", help: "learning-rate factor applied every lr_step epochs" },
    KeyDoc { key: "lr_step", help: "epochs between learning-rate decays" },
    KeyDoc { key: "bank_mode", help: "momentum or recompute" },
    KeyDoc { key: "enc_channels", help: "encoder conv widths, comma-separated" },
    KeyDoc { key: "embed_dim", help: "embedding dimension" },
    KeyDoc { key: "dec_channels", help: "decoder conv widths, comma-separated" },
    KeyDoc { key: "dec_seed", help: "decoder seed map height,width" },
];

impl KvSection for TrainConfig {
    fn keys() -> &'static [KeyDoc] {
        TRAIN_KEYS
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "gamma" => self.gamma = kv::value(key, v, "a number")?,
            "lambda" => self.lambda = kv::value(key, v, "a number")?,
            "xi" => self.xi = kv::value(key, v, "a number")?,
            "k" => self.k = kv::value(key, v, "an integer")?,
            "momentum" => self.momentum = kv::value(key, v, "a number in [0, 1)")?,
            "epochs" => self.epochs = kv::value(key, v, "an integer")?,
            "batch_size" => self.batch_size = kv::value(key, v, "an integer")?,
            "lr" => self.lr = kv::value(key, v, "a number")?,
            "lr_decay" => self.lr_decay = kv::value(key, v, "a number")?,
            "lr_step" => self.lr_step = kv::value(key, v, "an integer")?,
            "bank_mode" => self.bank_mode = kv::value(key, v, "momentum or recompute")?,
            "enc_channels" => self.arch.enc_channels = kv::list(key, v, "integers")?,
            "embed_dim" => self.arch.embed_dim = kv::value(key, v, "an integer")?,
            "dec_channels" => self.arch.dec_channels = kv::list(key, v, "integers")?,
            "dec_seed" => {
                let hw: Vec<usize> = kv::list(key, v, "height,width")?;
                let [h, w] = hw[..] else {
                    return Err(Error::InvalidValue {
                        key: key.into(),
                        value: v.into(),
                        expected: "height,width".into(),
                    });
                };
                self.arch.dec_seed = (h, w);
            }
            _ => return Err(kv::unknown_key(key, TRAIN_KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gamma", kv::float(self.gamma)),
            ("lambda", kv::float(self.lambda)),
            ("xi", kv::float(self.xi)),
            ("k", self.k.to_string()),
            ("momentum", kv::float(self.momentum)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", kv::float(self.lr)),
            ("lr_decay", kv::float(self.lr_decay)),
            ("lr_step", self.lr_step.to_string()),
            ("bank_mode", self.bank_mode.to_string()),
            ("enc_channels", kv::join(&self.arch.enc_channels)),
            ("embed_dim", self.arch.embed_dim.to_string()),
            ("dec_channels", kv::join(&self.arch.dec_channels)),
            ("dec_seed", format!("{},{}", self.arch.dec_seed.0, self.arch.dec_seed.1)),
        ]
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Tensor,
    pub dfs: Tensor,
    pub label: ClassId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub neighbor: f64,
    pub construction: f64,
    /// Mean probability mass on same-class neighbors.
    pub p_correct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Total loss of the untrained network against its initial bank.
    pub initial: EpochStats,
    /// Running means over each epoch's batches.
    pub epochs: Vec<EpochStats>,
    /// Total loss of the final network against the final bank.
    pub trained: EpochStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DecisionModel,
    pub history: TrainHistory,
}

/// Unit vector along `v`, or the first axis if `v` vanished.
pub(crate) fn unit_or_axis(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter().map(|x| x / n).collect()
    } else {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        e
    }
}

fn embed_all(net: &Network, samples: &[TrainSample]) -> Result<Vec<Vec<f64>>> {
    par::map(samples, |s| net.embed(&s.input).map(|(e, _)| unit_or_axis(e.data())))
        .into_iter()
        .collect()
}

fn check_samples(samples: &[TrainSample], cfg: &TrainConfig) -> Result<()> {
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::invalid("training needs at least 2 known classes"));
    }
    if let Some((c, _)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::invalid(format!("class {c} has fewer than 2 training samples")));
    }
    if cfg.k > samples.len() {
        return Err(Error::invalid(format!("k = {} exceeds the {} training samples", cfg.k, samples.len())));
    }
    let (in_dims, t_dims) = (samples[0].input.dims(), samples[0].dfs.dims());
    for s in samples {
        s.input.expect_dims(in_dims)?;
        s.dfs.expect_dims(t_dims)?;
    }
    Ok(())
}

struct BatchOutcome {
    stats: EpochStats,
    grads: Vec<Tensor>,
    embeddings: Vec<Vec<f64>>,
}

/// Losses and summed parameter gradients of one batch.
fn batch_step(
    net: &Network,
    samples: &[TrainSample],
    ids: &[usize],
    bank: &FeatureBank,
    cfg: &TrainConfig,
) -> Result<BatchOutcome> {
    let fwds: Vec<Forward> = par::map(ids, |&i| net.forward(&samples[i].input))
        .into_iter()
        .collect::<Result<_>>()?;
    let embeddings: Vec<Vec<f64>> = fwds.iter().map(|f| f.embedding.data().to_vec()).collect();
    let labels: Vec<ClassId> = ids.iter().map(|&i| samples[i].label).collect();
    let self_ids: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
    let nl = neighbor_loss_and_grad(&embeddings, &labels, &self_ids, bank, cfg.gamma)?;
    let b = ids.len() as f64;
    let mut lc = 0.0;
    let mut dec_grads = Vec::with_capacity(ids.len());
    for (f, &i) in fwds.iter().zip(ids) {
        let (l, mut g) = construction_loss(&f.decoded, &samples[i].dfs)?;
        lc += l / b;
        g.scale(cfg.lambda / b);
        dec_grads.push(g);
    }
    let loss = total_loss(nl.loss, lc, cfg.lambda);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss (neighbor {}, construction {lc})",
            nl.loss
        )));
    }
    let work: Vec<usize> = (0..ids.len()).collect();
    let per_sample = par::map(&work, |&j| {
        let ge = Tensor::new(fwds[j].embedding.dims().to_vec(), nl.grads[j].clone())?;
        net.backward(&fwds[j], &ge, &dec_grads[j]).map(|g| g.params)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let grads = par::tree_reduce(per_sample, |mut a, b| {
        for (x, y) in a.iter_mut().zip(&b) {
            x.add_assign(y);
        }
        a
    })
    .expect("non-empty batch");
    let pc: Vec<f64> = nl.p_correct.iter().flatten().cloned().collect();
    Ok(BatchOutcome {
        stats: EpochStats {
            loss,
            neighbor: nl.loss,
            construction: lc,
            p_correct: pc.iter().sum::<f64>() / pc.len().max(1) as f64,
        },
        grads,
        embeddings,
    })
}

fn mean_stats(all: &[(EpochStats, f64)]) -> EpochStats {
    let w: f64 = all.iter().map(|a| a.1).sum();
    let avg = |f: fn(&EpochStats) -> f64| all.iter().map(|(s, n)| f(s) * n).sum::<f64>() / w;
    EpochStats {
        loss: avg(|s| s.loss),
        neighbor: avg(|s| s.neighbor),
        construction: avg(|s| s.construction),
        p_correct: avg(|s| s.p_correct),
    }
}

/// Loss of every sample against `bank` without updating anything.
fn evaluate(net: &Network, samples: &[TrainSample], bank: &FeatureBank, cfg: &TrainConfig) -> Result<EpochStats> {
    let ids: Vec<usize> = (0..samples.len()).collect();
    let parts = ids
        .chunks(cfg.batch_size)
        .map(|chunk| {
            let fwds: Vec<Forward> = par::map(chunk, |&i| net.forward(&samples[i].input))
                .into_iter()
                .collect::<Result<_>>()?;
            let emb: Vec<Vec<f64>> = fwds.iter().map(|f| f.embedding.data().to_vec()).collect();
            let labels: Vec<ClassId> = chunk.iter().map(|&i| samples[i].label).collect();
            let self_ids: Vec<Option<usize>> = chunk.iter().map(|&i| Some(i)).collect();
            let nl = neighbor_loss_and_grad(&emb, &labels, &self_ids, bank, cfg.gamma)?;
            let mut lc = 0.0;
            for (f, &i) in fwds.iter().zip(chunk) {
                lc += construction_loss(&f.decoded, &samples[i].dfs)?.0 / chunk.len() as f64;
            }
            let pc: Vec<f64> = nl.p_correct.iter().flatten().cloned().collect();
            Ok((
                EpochStats {
                    loss: total_loss(nl.loss, lc, cfg.lambda),
                    neighbor: nl.loss,
                    construction: lc,
                    p_correct: pc.iter().sum::<f64>() / pc.len().max(1) as f64,
                },
                chunk.len() as f64,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_stats(&parts))
}

/// Trains the network and builds the decision model. Deterministic for a
/// given `seed` regardless of thread count.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_samples(samples, cfg)?;
    let spec = NetworkSpec::desk_scale(samples[0].input.dims(), samples[0].dfs.dims(), &cfg.arch)?;
    let mut net = Network::new(spec, derive_seed(seed, 1))?;
    let labels: Vec<ClassId> = samples.iter().map(|s| s.label).collect();
    let mut bank = FeatureBank::new(embed_all(&net, samples)?, labels.clone(), cfg.momentum)?;
    let initial = evaluate(&net, samples, &bank, cfg)?;

    let mut adam = AdamState::new(net.params());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut spreads: Vec<Vec<Option<f64>>> = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + epoch as u64)));
        let last = epoch + 1 == cfg.epochs;
        let mut parts = Vec::new();
        for ids in order.chunks(cfg.batch_size) {
            let out = batch_step(&net, samples, ids, &bank, cfg)?;
            if last {
                spreads.push(
                    ids.iter()
                        .zip(&out.embeddings)
                        .map(|(&i, v)| same_class_spread(v, labels[i], Some(i), &bank, cfg.k))
                        .collect(),
                );
            }
            if adam_step(net.params_mut(), &out.grads, &mut adam, lr, cfg.adam)? == StepOutcome::Skipped {
                return Err(Error::Divergence(format!("non-finite gradient in epoch {}", epoch + 1)));
            }
            match cfg.bank_mode {
                BankMode::Momentum => {
                    let fresh: Vec<Vec<f64>> = out.embeddings.iter().map(|v| unit_or_axis(v)).collect();
                    bank.update(ids, &fresh)?;
                }
                BankMode::Recompute => {
                    let rows = embed_all(&net, samples)?;
                    for (i, r) in rows.iter().enumerate() {
                        bank.set_row(i, r)?;
                    }
                }
            }
            parts.push((out.stats, ids.len() as f64));
        }
        epochs.push(mean_stats(&parts));
    }

    net.round_params_to_f32();
    let mut final_bank = FeatureBank::new(embed_all(&net, samples)?, labels, cfg.momentum)?;
    final_bank.round_to_f32();
    let threshold_base = if spreads.is_empty() {
        // no training epochs: statistics from the initial bank
        let rows = embed_all(&net, samples)?;
        let ids: Vec<usize> = (0..samples.len()).collect();
        let stats = ids
            .chunks(cfg.batch_size)
            .map(|c| c.iter().map(|&i| same_class_spread(&rows[i], samples[i].label, Some(i), &final_bank, cfg.k)).collect())
            .collect::<Vec<Vec<_>>>();
        compute_threshold(&stats, 1.0)?
    } else {
        compute_threshold(&spreads, 1.0)?
    };
    let trained = evaluate(&net, samples, &final_bank, cfg)?;
    let model = DecisionModel::new(net, final_bank, threshold_base, cfg.clone())?;
    Ok(TrainOutcome {
        model,
        history: TrainHistory {
            initial,
            epochs,
            trained,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.gamma, c.lambda, c.xi, c.k), (0.05, 1.0, 2.0, 50));
        assert_eq!(c.lr_at(0), 1e-3);
        assert!((c.lr_at(15) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(49) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn kv_roundtrip() {
        let mut c = TrainConfig::default();
        c.set("xi", "3").unwrap();
        c.set("dec_seed", "4,2").unwrap();
        c.set("bank_mode", "recompute").unwrap();
        let mut back = TrainConfig::default();
        for (k, v) in c.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
        let e = back.set("gama", "1").unwrap_err();
        assert!(e.to_string().contains("`gamma`"), "{e}");
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.gamma = 0.0));
        assert!(bad(|c| c.lambda = -1.0));
        assert!(bad(|c| c.momentum = 1.0));
        assert!(bad(|c| c.k = 0));
    }
}
