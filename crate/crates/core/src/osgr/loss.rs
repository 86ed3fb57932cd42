//! Neighbor loss over a feature bank and the spectrogram construction loss.

use crate::data::ClassId;
use crate::net::{dot, Tensor};
use crate::{Error, Result};

use super::bank::FeatureBank;

/// Tolerance on `‖v‖ = 1` for [`cosine_sim`].
pub const UNIT_TOL: f64 = 1e-4;

/// Floor on the correct-neighbor probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cosine similarity of two unit vectors.
pub fn cosine_sim(v: &[f64], u: &[f64]) -> Result<f64> {
    if v.len() != u.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![v.len()],
            found: vec![u.len()],
        });
    }
    for x in [v, u] {
        let n = dot(x, x).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("cosine_sim expects unit vectors, got norm {n}")));
        }
    }
    Ok(dot(v, u))
}

/// Softmax of `sims / gamma` over every entry except `self_index`, which
/// gets probability 0.
pub fn neighbor_probs(sims: &[f64], self_index: Option<usize>, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if sims.len() < 2 {
        return Err(Error::invalid("neighbor_probs needs a row of at least 2 entries"));
    }
    let live = |j: usize| Some(j) != self_index;
    let m = (0..sims.len())
        .filter(|&j| live(j))
        .map(|j| sims[j] / gamma)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = (0..sims.len())
        .map(|j| if live(j) { (sims[j] / gamma - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

/// Loss and gradients of one batch against the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLoss {
    /// Mean of the per-sample losses over included samples.
    pub loss: f64,
    /// `-log p_n` per batch sample; `None` for excluded samples.
    pub per_sample: Vec<Option<f64>>,
    /// `∂loss/∂v_n` for every batch sample (zero when excluded).
    pub grads: Vec<Vec<f64>>,
    /// Probability mass on same-class neighbors, per included sample.
    pub p_correct: Vec<Option<f64>>,
    /// Batch positions with no same-class neighbor in the bank.
    pub excluded: Vec<usize>,
}

/// Neighbor loss of a batch of embeddings against `bank`.
///
/// Sample `n` has embedding `batch[n]`, class `labels[n]` and, if it is
/// itself stored in the bank, bank row `self_ids[n]`, which is left out of
/// its neighborhood. The bank is treated as constant.
pub fn neighbor_loss_and_grad(
    batch: &[Vec<f64>],
    labels: &[ClassId],
    self_ids: &[Option<usize>],
    bank: &FeatureBank,
    gamma: f64,
) -> Result<NeighborLoss> {
    if batch.len() != labels.len() || batch.len() != self_ids.len() {
        return Err(Error::invalid("batch, labels and ids differ in length"));
    }
    let d = bank.dim();
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut p_correct = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    let mut excluded = Vec::new();
    for (n, v) in batch.iter().enumerate() {
        if v.len() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![d],
                found: vec![v.len()],
            });
        }
        let sims: Vec<f64> = (0..bank.len()).map(|j| dot(v, bank.row(j))).collect();
        let same: Vec<usize> = (0..bank.len())
            .filter(|&j| Some(j) != self_ids[n] && bank.labels()[j] == labels[n])
            .collect();
        if same.is_empty() {
            excluded.push(n);
            per_sample.push(None);
            p_correct.push(None);
            grads.push(vec![0.0; d]);
            continue;
        }
        let p = neighbor_probs(&sims, self_ids[n], gamma)?;
        let pn: f64 = same.iter().map(|&j| p[j]).sum();
        let clamped = pn < PROB_FLOOR;
        per_sample.push(Some(-pn.max(PROB_FLOOR).ln()));
        p_correct.push(Some(pn));
        let mut g = vec![0.0; d];
        if !clamped {
            // (1/γ)(Σ_k p_k v_k − Σ_{j∈S} p̃_j v_j)
            for (j, &pj) in p.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                let row = bank.row(j);
                let w = pj / gamma;
                let w_same = if bank.labels()[j] == labels[n] && Some(j) != self_ids[n] {
                    pj / pn / gamma
                } else {
                    0.0
                };
                for (gi, ri) in g.iter_mut().zip(row) {
                    *gi += (w - w_same) * ri;
                }
            }
        }
        grads.push(g);
    }
    let count = per_sample.iter().flatten().count();
    if count == 0 {
        return Err(Error::invalid("no batch sample has a same-class neighbor in the bank"));
    }
    let scale = 1.0 / count as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    let loss = per_sample.iter().flatten().sum::<f64>() * scale;
    Ok(NeighborLoss {
        loss,
        per_sample,
        grads,
        p_correct,
        excluded,
    })
}

/// Mean squared error and its gradient `2(ŷ − y)/count`.
pub fn construction_loss(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: target.dims().to_vec(),
            found: output.dims().to_vec(),
        });
    }
    let count = output.len() as f64;
    let diff: Vec<f64> = output.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let grad = Tensor::new(output.dims().to_vec(), diff.iter().map(|d| 2.0 * d / count).collect())?;
    Ok((loss, grad))
}

/// `L_e + λ·L_c`.
pub fn total_loss(neighbor: f64, construction: f64, lambda: f64) -> f64 {
    neighbor + lambda * construction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::{numeric_gradient, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[0.6, 0.8], &[1.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(cosine_sim(&[2.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn probs_examples() {
        let p = neighbor_probs(&[1.0, 0.3, 0.3], Some(0), 0.05).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-15 && (p[2] - 0.5).abs() < 1e-15);
        let p = neighbor_probs(&[0.9, 0.1], None, 1.0).unwrap();
        let want = 0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp());
        assert!((p[0] - want).abs() < 1e-15);
        assert!((p[0] - 0.6900).abs() < 5e-5);
        assert!(neighbor_probs(&[0.5], Some(0), 1.0).is_err());
        assert!(neighbor_probs(&[0.5, 0.2], None, 0.0).is_err());
    }

    #[test]
    fn probs_shift_invariant() {
        let s = [0.3, -0.2, 0.9, 0.1];
        let a = neighbor_probs(&s, Some(2), 0.05).unwrap();
        let shifted: Vec<f64> = s.iter().map(|x| x + 0.37).collect();
        let b = neighbor_probs(&shifted, Some(2), 0.05).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: u32) -> FeatureBank {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| unit((0..d).map(|_| rng.random::<f64>() - 0.5).collect())).collect();
        let labels: Vec<ClassId> = (0..n).map(|i| i as u32 % classes).collect();
        FeatureBank::new(rows, labels, 0.5).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for cfg in 0..20 {
            let bank = random_bank(&mut rng, 12, 8, 3);
            let gamma = [0.05, 0.1, 0.5, 1.0][cfg % 4];
            let batch: Vec<Vec<f64>> = (0..6).map(|_| (0..8).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
            let labels: Vec<ClassId> = (0..6).map(|i| i as u32 % 3).collect();
            let ids: Vec<Option<usize>> = (0..6).map(|i| if i % 2 == 0 { Some(i) } else { None }).collect();
            let out = neighbor_loss_and_grad(&batch, &labels, &ids, &bank, gamma).unwrap();
            let flat: Vec<f64> = batch.concat();
            let f = |x: &[f64]| {
                let b: Vec<Vec<f64>> = x.chunks(8).map(|c| c.to_vec()).collect();
                neighbor_loss_and_grad(&b, &labels, &ids, &bank, gamma).unwrap().loss
            };
            let coords: Vec<usize> = (0..flat.len()).collect();
            let num = numeric_gradient(f, &flat, &coords, 1e-6);
            let err = relative_error(&out.grads.concat(), &num);
            assert!(err < 1e-6, "config {cfg}: {err}");
        }
    }

    #[test]
    fn separated_bank_has_vanishing_loss() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let neg = |i: usize| e(i).into_iter().map(|x| -x).collect::<Vec<_>>();
        let bank = FeatureBank::new(vec![e(0), e(0), neg(0), neg(0)], vec![0, 0, 1, 1], 0.5).unwrap();
        let out =
            neighbor_loss_and_grad(&[e(0), neg(0)], &[0, 1], &[Some(0), Some(2)], &bank, 0.05).unwrap();
        assert!(out.loss < 1e-15);
        // symmetric configuration gives equal per-sample losses
        assert_eq!(out.per_sample[0], out.per_sample[1]);
    }

    #[test]
    fn missing_class_is_excluded() {
        let bank = FeatureBank::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], 0.5).unwrap();
        let out = neighbor_loss_and_grad(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0, 1],
            &[Some(0), None],
            &bank,
            0.1,
        )
        .unwrap();
        assert_eq!(out.excluded, vec![0]);
        assert!(out.per_sample[0].is_none());
        assert!(out.per_sample[1].is_some());
    }

    #[test]
    fn construction_examples() {
        let y = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1);
        assert_eq!(construction_loss(&y, &y).unwrap().0, 0.0);
        let shifted = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1 + 0.1);
        assert!((construction_loss(&shifted, &y).unwrap().0 - 0.01).abs() < 1e-15);
        assert!(construction_loss(&Tensor::zeros(&[12]), &y).is_err());
    }

    #[test]
    fn construction_gradient_matches_finite_differences() {
        let y = Tensor::from_fn(&[5, 3], |i| (i as f64 * 0.7).sin());
        let x = Tensor::from_fn(&[5, 3], |i| (i as f64 * 0.3).cos());
        let (_, g) = construction_loss(&x, &y).unwrap();
        let f = |v: &[f64]| construction_loss(&Tensor::new(vec![5, 3], v.to_vec()).unwrap(), &y).unwrap().0;
        let coords: Vec<usize> = (0..15).collect();
        let num = numeric_gradient(f, x.data(), &coords, 1e-5);
        assert!(relative_error(g.data(), &num) < 1e-7);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.7, 5.0, 0.0), 0.7);
        assert!((total_loss(0.7, 0.3, 1.0) - 1.0).abs() < 1e-15);
    }
}
