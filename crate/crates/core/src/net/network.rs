//! Two-branch network: an encoder ending in an L2-normalized embedding and a
//! decoder that reconstructs the Doppler spectrogram from that embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::layers::{Layer, LayerCache, LayerSpec};
use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Per-sample input dims, `[channels, height, width]`.
    pub input_dims: Vec<usize>,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    /// Decoder output dims (the reconstruction target).
    pub target_dims: Vec<usize>,
}

/// Knobs of the default convolutional encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskScale {
    pub enc_channels: Vec<usize>,
    pub embed_dim: usize,
    /// Decoder channel widths; the first is the reshaped seed map, each
    /// following one is an upsample + conv block, then a final 1-channel conv.
    pub dec_channels: Vec<usize>,
    pub dec_seed: (usize, usize),
}

impl Default for DeskScale {
    fn default() -> Self {
        DeskScale {
            enc_channels: vec![8, 16, 32, 32],
            embed_dim: 32,
            dec_channels: vec![16, 8],
            dec_seed: (8, 4),
        }
    }
}

impl NetworkSpec {
    /// Stride-2 conv blocks → global average pool → dense → L2 normalize;
    /// dense → reshape → (upsample + conv) blocks → sigmoid → bilinear resize.
    pub fn desk_scale(input_dims: &[usize], target_dims: &[usize], opts: &DeskScale) -> Result<Self> {
        if target_dims.len() != 2 {
            return Err(Error::invalid(format!("target must be 2-D, got {target_dims:?}")));
        }
        let mut encoder = Vec::new();
        for &ch in &opts.enc_channels {
            encoder.push(LayerSpec::Conv2d { out_ch: ch, kernel: 3, stride: 2 });
            encoder.push(LayerSpec::Relu);
        }
        encoder.push(LayerSpec::GlobalAvgPool);
        encoder.push(LayerSpec::Dense { out: opts.embed_dim });
        encoder.push(LayerSpec::L2Normalize);

        let c0 = *opts
            .dec_channels
            .first()
            .ok_or_else(|| Error::invalid("decoder needs at least one channel width"))?;
        let (h0, w0) = opts.dec_seed;
        let mut decoder = vec![
            LayerSpec::Dense { out: c0 * h0 * w0 },
            LayerSpec::Relu,
            LayerSpec::Reshape(vec![c0, h0, w0]),
        ];
        for &ch in &opts.dec_channels[1..] {
            decoder.push(LayerSpec::Upsample2x);
            decoder.push(LayerSpec::Conv2d { out_ch: ch, kernel: 3, stride: 1 });
            decoder.push(LayerSpec::Relu);
        }
        decoder.push(LayerSpec::Upsample2x);
        decoder.push(LayerSpec::Conv2d { out_ch: 1, kernel: 3, stride: 1 });
        decoder.push(LayerSpec::Sigmoid);
        decoder.push(LayerSpec::Resize {
            height: target_dims[0],
            width: target_dims[1],
        });
        decoder.push(LayerSpec::Reshape(target_dims.to_vec()));

        let spec = NetworkSpec {
            input_dims: input_dims.to_vec(),
            encoder,
            decoder,
            target_dims: target_dims.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the bottleneck, embedding and reconstruction contracts.
    pub fn validate(&self) -> Result<usize> {
        let mut dims = self.input_dims.clone();
        for l in &self.encoder {
            dims = l.resolve(&dims)?.0;
        }
        if dims.len() != 1 {
            return Err(Error::invalid(format!("encoder must end in a vector, ends in {dims:?}")));
        }
        if self.encoder.last() != Some(&LayerSpec::L2Normalize) {
            return Err(Error::invalid("encoder must end with l2_normalize"));
        }
        let embed_dim = dims[0];
        let flat: usize = self.input_dims.iter().product();
        if embed_dim >= flat {
            return Err(Error::invalid(format!(
                "embedding dim {embed_dim} is not a bottleneck for input size {flat}"
            )));
        }
        for l in &self.decoder {
            dims = l.resolve(&dims)?.0;
        }
        if dims != self.target_dims {
            return Err(Error::ShapeMismatch {
                expected: self.target_dims.clone(),
                found: dims,
            });
        }
        Ok(embed_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.validate().unwrap_or(0)
    }

    /// Canonical text form, the basis of [`NetworkSpec::fingerprint`].
    pub fn describe(&self) -> String {
        let layers = |ls: &[LayerSpec]| ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" > ");
        format!(
            "input{:?} | enc: {} | dec: {} | target{:?}",
            self.input_dims,
            layers(&self.encoder),
            layers(&self.decoder),
            self.target_dims
        )
    }

    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embedding: Tensor,
    pub decoded: Tensor,
    /// The pre-normalization norm fell below the guard.
    pub degenerate: bool,
    enc: Vec<LayerCache>,
    dec: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Network {
    /// He-initialized network; weights start f32-representable.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let (encoder, decoder, shapes, names) = bind(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .iter()
            .map(|s| {
                if s.len() == 1 {
                    return Tensor::zeros(s);
                }
                let fan_in: usize = s[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                Tensor::from_fn(s, |_| normal.sample(&mut rng) as f32 as f64)
            })
            .collect();
        Ok(Network {
            spec,
            encoder,
            decoder,
            params,
            names,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let (encoder, decoder, shapes, names) = bind(&spec)?;
        if params.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "network needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&shapes) {
            p.expect_dims(s)?;
        }
        Ok(Network {
            spec,
            encoder,
            decoder,
            params,
            names,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.dims())).collect()
    }

    pub fn round_params_to_f32(&mut self) {
        self.params.iter_mut().for_each(Tensor::round_to_f32);
    }

    /// Smallest kink margin over every layer of a forward pass.
    pub fn kink_margin(&self, fwd: &Forward) -> f64 {
        self.encoder
            .iter()
            .zip(&fwd.enc)
            .chain(self.decoder.iter().zip(&fwd.dec))
            .fold(f64::INFINITY, |m, (l, c)| m.min(l.kink_margin(c)))
    }

    /// Encoder only. Returns the embedding and the degenerate-norm flag.
    pub fn embed(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let mut h = x.clone();
        let mut degenerate = false;
        for l in &self.encoder {
            let c = l.forward(&self.params, &h)?;
            if c.guarded {
                degenerate = true;
            }
            h = c.output;
        }
        Ok((h, degenerate))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        x.expect_dims(&self.spec.input_dims)?;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        let mut degenerate = false;
        for l in &self.encoder {
            let c = l.forward(&self.params, &h)?;
            if c.guarded {
                degenerate = true;
            }
            h = c.output.clone();
            enc.push(c);
        }
        let embedding = h.clone();
        let mut dec = Vec::with_capacity(self.decoder.len());
        for l in &self.decoder {
            let c = l.forward(&self.params, &h)?;
            h = c.output.clone();
            dec.push(c);
        }
        Ok(Forward {
            embedding,
            decoded: h,
            degenerate,
            enc,
            dec,
        })
    }

    /// Backpropagates loss gradients w.r.t. the embedding and the decoder
    /// output through both branches.
    pub fn backward(&self, fwd: &Forward, grad_embedding: &Tensor, grad_decoded: &Tensor) -> Result<Gradients> {
        let mut grads = self.zero_grads();
        let mut g = grad_decoded.clone();
        for (l, c) in self.decoder.iter().zip(&fwd.dec).rev() {
            g = l.backward(&self.params, c, &g, &mut grads)?;
        }
        g.expect_dims(grad_embedding.dims())?;
        g.add_assign(grad_embedding);
        for (l, c) in self.encoder.iter().zip(&fwd.enc).rev() {
            g = l.backward(&self.params, c, &g, &mut grads)?;
        }
        Ok(Gradients { params: grads, input: g })
    }
}

type Bound = (Vec<Layer>, Vec<Layer>, Vec<Vec<usize>>, Vec<String>);

fn bind(spec: &NetworkSpec) -> Result<Bound> {
    spec.validate()?;
    let mut shapes = Vec::new();
    let mut names = Vec::new();
    let mut dims = spec.input_dims.clone();
    let mut branch = |prefix: &str, specs: &[LayerSpec], dims: &mut Vec<usize>| -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        for (i, ls) in specs.iter().enumerate() {
            let (out, pshapes) = ls.resolve(dims)?;
            let mut idx = Vec::new();
            for (j, s) in pshapes.into_iter().enumerate() {
                idx.push(shapes.len());
                shapes.push(s);
                names.push(format!("{prefix}.{i}.{}", if j == 0 { "weight" } else { "bias" }));
            }
            layers.push(Layer {
                spec: ls.clone(),
                in_dims: dims.clone(),
                out_dims: out.clone(),
                params: idx,
            });
            *dims = out;
        }
        Ok(layers)
    };
    let encoder = branch("enc", &spec.encoder, &mut dims)?;
    let decoder = branch("dec", &spec.decoder, &mut dims)?;
    Ok((encoder, decoder, shapes, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::desk_scale(
            &[2, 8, 16],
            &[9, 6],
            &DeskScale {
                enc_channels: vec![3, 4],
                embed_dim: 5,
                dec_channels: vec![2, 2],
                dec_seed: (2, 2),
            },
        )
        .unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm_and_decoder_in_unit_interval() {
        let net = Network::new(toy_spec(), 1).unwrap();
        let x = Tensor::from_fn(&[2, 8, 16], |i| ((i * 37) % 17) as f64 / 17.0);
        let f = net.forward(&x).unwrap();
        assert!((f.embedding.norm() - 1.0).abs() < 1e-6);
        assert!(f.decoded.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(f.decoded.dims(), &[9, 6]);
        assert!(!f.degenerate);
    }

    #[test]
    fn zero_input_with_zero_bias_is_flagged() {
        let spec = NetworkSpec {
            input_dims: vec![1, 2, 3],
            encoder: vec![LayerSpec::Dense { out: 4 }, LayerSpec::L2Normalize],
            decoder: vec![LayerSpec::Dense { out: 2 }, LayerSpec::Sigmoid],
            target_dims: vec![2],
        };
        let net = Network::new(spec, 0).unwrap();
        let f = net.forward(&Tensor::zeros(&[1, 2, 3])).unwrap();
        assert!(f.degenerate);
        assert!(f.embedding.is_finite());
    }

    #[test]
    fn duplicated_inputs_give_identical_embeddings() {
        let net = Network::new(toy_spec(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 8, 16], |i| (i as f64 * 0.37).sin());
        let a = net.forward(&x).unwrap().embedding;
        let b = net.forward(&x.clone()).unwrap().embedding;
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Network::new(toy_spec(), 3).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[2, 8, 15])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bottleneck_is_enforced() {
        let r = NetworkSpec::desk_scale(
            &[1, 2, 2],
            &[4, 4],
            &DeskScale { enc_channels: vec![2], embed_dim: 8, dec_channels: vec![1], dec_seed: (2, 2) },
        );
        assert!(r.is_err());
    }

    #[test]
    fn fingerprint_tracks_architecture() {
        let a = toy_spec();
        let mut b = a.clone();
        b.encoder[0] = LayerSpec::Conv2d { out_ch: 5, kernel: 3, stride: 2 };
        assert_eq!(a.fingerprint(), toy_spec().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
