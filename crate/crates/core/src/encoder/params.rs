use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
        Tensor {
            shape: shape.to_vec(),
            data: (0..shape.iter().product::<usize>())
                .map(|_| T::from_f64(dist.sample(rng)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::ZERO);
    }
}

/// `y = x W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::normal(&[d_in, d_out], std, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            weight: Tensor::filled(&[dim], T::ONE),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm {
            weight: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub attn_output: Linear<T>,
    pub attn_norm: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: LayerNorm<T>,
}

/// Masked-LM projection. The output matrix is the word embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct LmHead<T> {
    pub dense: Linear<T>,
    pub norm: LayerNorm<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub word_embeddings: Tensor<T>,
    pub position_embeddings: Tensor<T>,
    pub embed_norm: LayerNorm<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lm_head: LmHead<T>,
}

const INIT_STD: f64 = 0.02;

impl<T: Scalar> EncoderParams<T> {
    /// Normal(0, 0.02) weights, zero biases, unit norms, zeroed pad rows.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        Self::init_with_std(config, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(config: &ModelConfig, std: f64, rng: &mut R) -> Self {
        let h = config.hidden_size;
        let f = config.ffn_size;
        let pad = config.pad_id as usize;
        let mut word_embeddings = Tensor::normal(&[config.vocab_size, h], std, rng);
        let mut position_embeddings = Tensor::normal(&[config.position_rows(), h], std, rng);
        if pad < config.vocab_size {
            word_embeddings.data[pad * h..(pad + 1) * h].fill(T::ZERO);
        }
        position_embeddings.data[pad * h..(pad + 1) * h].fill(T::ZERO);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                query: Linear::init(h, h, std, rng),
                key: Linear::init(h, h, std, rng),
                value: Linear::init(h, h, std, rng),
                attn_output: Linear::init(h, h, std, rng),
                attn_norm: LayerNorm::identity(h),
                ffn_in: Linear::init(h, f, std, rng),
                ffn_out: Linear::init(f, h, std, rng),
                ffn_norm: LayerNorm::identity(h),
            })
            .collect();
        EncoderParams {
            word_embeddings,
            position_embeddings,
            embed_norm: LayerNorm::identity(h),
            layers,
            lm_head: LmHead {
                dense: Linear::init(h, h, std, rng),
                norm: LayerNorm::identity(h),
                bias: Tensor::zeros(&[config.vocab_size]),
            },
        }
    }

    /// All-zero parameters with the manifest's shapes (gradient buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        let f = config.ffn_size;
        EncoderParams {
            word_embeddings: Tensor::zeros(&[config.vocab_size, h]),
            position_embeddings: Tensor::zeros(&[config.position_rows(), h]),
            embed_norm: LayerNorm::zeros(h),
            layers: (0..config.num_layers)
                .map(|_| LayerParams {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    value: Linear::zeros(h, h),
                    attn_output: Linear::zeros(h, h),
                    attn_norm: LayerNorm::zeros(h),
                    ffn_in: Linear::zeros(h, f),
                    ffn_out: Linear::zeros(f, h),
                    ffn_norm: LayerNorm::zeros(h),
                })
                .collect(),
            lm_head: LmHead {
                dense: Linear::zeros(h, h),
                norm: LayerNorm::zeros(h),
                bias: Tensor::zeros(&[config.vocab_size]),
            },
        }
    }

    /// Named tensors in manifest order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("embeddings.word.weight".to_string(), &self.word_embeddings),
            ("embeddings.position.weight".to_string(), &self.position_embeddings),
            ("embeddings.norm.weight".to_string(), &self.embed_norm.weight),
            ("embeddings.norm.bias".to_string(), &self.embed_norm.bias),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attention.query.weight"), &l.query.weight));
            out.push((format!("{p}.attention.query.bias"), &l.query.bias));
            out.push((format!("{p}.attention.key.weight"), &l.key.weight));
            out.push((format!("{p}.attention.key.bias"), &l.key.bias));
            out.push((format!("{p}.attention.value.weight"), &l.value.weight));
            out.push((format!("{p}.attention.value.bias"), &l.value.bias));
            out.push((format!("{p}.attention.output.weight"), &l.attn_output.weight));
            out.push((format!("{p}.attention.output.bias"), &l.attn_output.bias));
            out.push((format!("{p}.attention.norm.weight"), &l.attn_norm.weight));
            out.push((format!("{p}.attention.norm.bias"), &l.attn_norm.bias));
            out.push((format!("{p}.ffn.intermediate.weight"), &l.ffn_in.weight));
            out.push((format!("{p}.ffn.intermediate.bias"), &l.ffn_in.bias));
            out.push((format!("{p}.ffn.output.weight"), &l.ffn_out.weight));
            out.push((format!("{p}.ffn.output.bias"), &l.ffn_out.bias));
            out.push((format!("{p}.ffn.norm.weight"), &l.ffn_norm.weight));
            out.push((format!("{p}.ffn.norm.bias"), &l.ffn_norm.bias));
        }
        out.push(("lm_head.dense.weight".into(), &self.lm_head.dense.weight));
        out.push(("lm_head.dense.bias".into(), &self.lm_head.dense.bias));
        out.push(("lm_head.norm.weight".into(), &self.lm_head.norm.weight));
        out.push(("lm_head.norm.bias".into(), &self.lm_head.norm.bias));
        out.push(("lm_head.bias".into(), &self.lm_head.bias));
        out
    }

    /// Mutable tensors in manifest order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.word_embeddings,
            &mut self.position_embeddings,
            &mut self.embed_norm.weight,
            &mut self.embed_norm.bias,
        ];
        for l in &mut self.layers {
            out.push(&mut l.query.weight);
            out.push(&mut l.query.bias);
            out.push(&mut l.key.weight);
            out.push(&mut l.key.bias);
            out.push(&mut l.value.weight);
            out.push(&mut l.value.bias);
            out.push(&mut l.attn_output.weight);
            out.push(&mut l.attn_output.bias);
            out.push(&mut l.attn_norm.weight);
            out.push(&mut l.attn_norm.bias);
            out.push(&mut l.ffn_in.weight);
            out.push(&mut l.ffn_in.bias);
            out.push(&mut l.ffn_out.weight);
            out.push(&mut l.ffn_out.bias);
            out.push(&mut l.ffn_norm.weight);
            out.push(&mut l.ffn_norm.bias);
        }
        out.push(&mut self.lm_head.dense.weight);
        out.push(&mut self.lm_head.dense.bias);
        out.push(&mut self.lm_head.norm.weight);
        out.push(&mut self.lm_head.norm.bias);
        out.push(&mut self.lm_head.bias);
        out
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let mut out = EncoderParams::<U>::zeros_like_shapes(self);
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    fn zeros_like_shapes<S: Scalar>(other: &EncoderParams<S>) -> Self {
        let h = other.embed_norm.weight.len();
        let f = other.layers.first().map(|l| l.ffn_in.d_out()).unwrap_or(0);
        let v = other.word_embeddings.shape[0];
        let p = other.position_embeddings.shape[0];
        EncoderParams {
            word_embeddings: Tensor::zeros(&[v, h]),
            position_embeddings: Tensor::zeros(&[p, h]),
            embed_norm: LayerNorm::zeros(h),
            layers: (0..other.layers.len())
                .map(|_| LayerParams {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    value: Linear::zeros(h, h),
                    attn_output: Linear::zeros(h, h),
                    attn_norm: LayerNorm::zeros(h),
                    ffn_in: Linear::zeros(h, f),
                    ffn_out: Linear::zeros(f, h),
                    ffn_norm: LayerNorm::zeros(h),
                })
                .collect(),
            lm_head: LmHead {
                dense: Linear::zeros(h, h),
                norm: LayerNorm::zeros(h),
                bias: Tensor::zeros(&[v]),
            },
        }
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds parameters from named tensors, requiring an exact manifest match.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let manifest = parameter_manifest(config);
        if named.len() != manifest.len() {
            return Err(Error::Structure(format!(
                "expected {} tensors for this config, found {}",
                manifest.len(),
                named.len()
            )));
        }
        let mut params = Self::zeros(config);
        let mut by_name: std::collections::HashMap<String, Tensor<T>> = named.into_iter().collect();
        for (slot, (name, shape)) in params.tensors_mut().into_iter().zip(&manifest) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Structure(format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(Error::Structure(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Structure(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }
}

/// Names and shapes of every encoder + MLM-head tensor for `config`.
pub fn parameter_manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_size;
    let f = config.ffn_size;
    let v = config.vocab_size;
    let mut out = vec![
        ("embeddings.word.weight".to_string(), vec![v, h]),
        ("embeddings.position.weight".to_string(), vec![config.position_rows(), h]),
        ("embeddings.norm.weight".to_string(), vec![h]),
        ("embeddings.norm.bias".to_string(), vec![h]),
    ];
    for i in 0..config.num_layers {
        let p = format!("layers.{i}");
        for part in ["query", "key", "value", "output"] {
            out.push((format!("{p}.attention.{part}.weight"), vec![h, h]));
            out.push((format!("{p}.attention.{part}.bias"), vec![h]));
        }
        out.push((format!("{p}.attention.norm.weight"), vec![h]));
        out.push((format!("{p}.attention.norm.bias"), vec![h]));
        out.push((format!("{p}.ffn.intermediate.weight"), vec![h, f]));
        out.push((format!("{p}.ffn.intermediate.bias"), vec![f]));
        out.push((format!("{p}.ffn.output.weight"), vec![f, h]));
        out.push((format!("{p}.ffn.output.bias"), vec![h]));
        out.push((format!("{p}.ffn.norm.weight"), vec![h]));
        out.push((format!("{p}.ffn.norm.bias"), vec![h]));
    }
    out.push(("lm_head.dense.weight".into(), vec![h, h]));
    out.push(("lm_head.dense.bias".into(), vec![h]));
    out.push(("lm_head.norm.weight".into(), vec![h]));
    out.push(("lm_head.norm.bias".into(), vec![h]));
    out.push(("lm_head.bias".into(), vec![v]));
    out
}

/// Exact parameter count of encoder plus tied MLM head. Task heads are not
/// included.
pub fn count_parameters(config: &ModelConfig) -> u64 {
    parameter_manifest(config)
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>() as u64)
        .sum()
}
