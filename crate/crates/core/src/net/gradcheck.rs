//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, LayerSpec};
use super::{Network, Tensor};
use crate::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` along the coordinates in `coords`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub input_err: f64,
    pub param_err: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.input_err.max(self.param_err)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], avoid_zero: bool) -> Tensor {
    Tensor::from_fn(dims, |_| {
        let v: f64 = rng.random_range(-1.0..1.0);
        if avoid_zero && v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    })
}

/// One representative configuration per layer kind, with its input dims.
pub fn layer_cases() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (LayerSpec::Conv2d { out_ch: 3, kernel: 3, stride: 1 }, vec![2, 5, 6]),
        (LayerSpec::Conv2d { out_ch: 4, kernel: 3, stride: 2 }, vec![2, 7, 8]),
        (LayerSpec::Conv2d { out_ch: 2, kernel: 1, stride: 1 }, vec![3, 4, 4]),
        (LayerSpec::Relu, vec![2, 3, 4]),
        (LayerSpec::MaxPool2, vec![2, 5, 6]),
        (LayerSpec::GlobalAvgPool, vec![3, 4, 5]),
        (LayerSpec::Dense { out: 4 }, vec![6]),
        (LayerSpec::Dense { out: 3 }, vec![2, 2, 3]),
        (LayerSpec::L2Normalize, vec![7]),
        (LayerSpec::Reshape(vec![3, 2, 2]), vec![12]),
        (LayerSpec::Upsample2x, vec![2, 3, 2]),
        (LayerSpec::Sigmoid, vec![2, 3, 3]),
        (LayerSpec::Resize { height: 7, width: 5 }, vec![2, 3, 4]),
        (LayerSpec::Resize { height: 2, width: 3 }, vec![1, 5, 6]),
    ]
}

/// Checks one layer kind on random inputs against the loss `Σ rᵢ·yᵢ`.
pub fn check_layer(spec: &LayerSpec, in_dims: &[usize], seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out_dims, shapes) = spec.resolve(in_dims)?;
    let mut params: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s, false)).collect();
    let layer = Layer {
        spec: spec.clone(),
        in_dims: in_dims.to_vec(),
        out_dims: out_dims.clone(),
        params: (0..params.len()).collect(),
    };
    let x = random_tensor(&mut rng, in_dims, matches!(spec, LayerSpec::Relu));
    let r = random_tensor(&mut rng, &out_dims, false);

    let loss = |params: &[Tensor], x: &Tensor| -> f64 {
        let y = layer.forward(params, x).expect("forward");
        y.output.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let cache = layer.forward(&params, &x)?;
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.dims())).collect();
    let gin = layer.backward(&params, &cache, &r, &mut grads)?;

    let coords: Vec<usize> = (0..x.len()).collect();
    let num_in = numeric_gradient(
        |xs| loss(&params, &Tensor::new(x.dims().to_vec(), xs.to_vec()).unwrap()),
        x.data(),
        &coords,
        FD_STEP,
    );
    let input_err = relative_error(gin.data(), &num_in);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for j in 0..params.len() {
        let base = params[j].clone();
        let coords: Vec<usize> = (0..base.len()).collect();
        let num = numeric_gradient(
            |ps| {
                params[j] = Tensor::new(base.dims().to_vec(), ps.to_vec()).unwrap();
                loss(&params, &x)
            },
            base.data(),
            &coords,
            FD_STEP,
        );
        params[j] = base;
        analytic.extend_from_slice(grads[j].data());
        numeric.extend(num);
    }
    Ok(GradCheck {
        input_err,
        param_err: relative_error(&analytic, &numeric),
    })
}

/// Checks a whole network against `rₑ·embedding + r_d·decoded`, sampling at
/// most `max_coords` coordinates per parameter tensor.
pub fn check_network(net: &Network, x: &Tensor, seed: u64, max_coords: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fwd = net.forward(x)?;
    let re = random_tensor(&mut rng, fwd.embedding.dims(), false);
    let rd = random_tensor(&mut rng, fwd.decoded.dims(), false);
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
    let loss = |n: &Network, x: &Tensor| -> f64 {
        let f = n.forward(x).expect("forward");
        dot(&f.embedding, &re) + dot(&f.decoded, &rd)
    };
    let grads = net.backward(&fwd, &re, &rd)?;

    let mut pick = |n: usize| -> Vec<usize> {
        if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..n)).collect()
        }
    };

    let coords = pick(x.len());
    let num_in = numeric_gradient(
        |xs| loss(net, &Tensor::new(x.dims().to_vec(), xs.to_vec()).unwrap()),
        x.data(),
        &coords,
        FD_STEP,
    );
    let ana_in: Vec<f64> = coords.iter().map(|&i| grads.input.data()[i]).collect();
    let input_err = relative_error(&ana_in, &num_in);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = net.clone();
    for j in 0..net.params().len() {
        let base = net.params()[j].clone();
        let coords = pick(base.len());
        let num = numeric_gradient(
            |ps| {
                probe.params_mut()[j].data_mut().copy_from_slice(ps);
                loss(&probe, x)
            },
            base.data(),
            &coords,
            FD_STEP,
        );
        probe.params_mut()[j] = base;
        analytic.extend(coords.iter().map(|&i| grads.params[j].data()[i]));
        numeric.extend(num);
    }
    Ok(GradCheck {
        input_err,
        param_err: relative_error(&analytic, &numeric),
    })
}
