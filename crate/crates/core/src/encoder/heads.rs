//! Task heads for fine-tuning: per-token tagging and `<s>`-pooled sequence
//! classification. Neither is tied to the embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{linear, linear_backward};
use super::params::{Linear, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Token,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub num_labels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskHead<T> {
    Token(Linear<T>),
    Sequence { pool: Linear<T>, out: Linear<T> },
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    input: Vec<T>,
    pooled: Vec<T>,
    n_seq: usize,
    seq_len: usize,
}

impl<T: Scalar> TaskHead<T> {
    pub fn init<R: Rng + ?Sized>(config: &HeadConfig, hidden: usize, rng: &mut R) -> Result<Self> {
        if config.num_labels < 2 {
            return Err(Error::Config(format!(
                "a task head needs at least 2 labels, got {}",
                config.num_labels
            )));
        }
        Ok(match config.kind {
            HeadKind::Token => TaskHead::Token(Linear::init(hidden, config.num_labels, 0.02, rng)),
            HeadKind::Sequence => TaskHead::Sequence {
                pool: Linear::init(hidden, hidden, 0.02, rng),
                out: Linear::init(hidden, config.num_labels, 0.02, rng),
            },
        })
    }

    pub fn zeros(config: &HeadConfig, hidden: usize) -> Self {
        match config.kind {
            HeadKind::Token => TaskHead::Token(Linear::zeros(hidden, config.num_labels)),
            HeadKind::Sequence => TaskHead::Sequence {
                pool: Linear::zeros(hidden, hidden),
                out: Linear::zeros(hidden, config.num_labels),
            },
        }
    }

    pub fn config(&self) -> HeadConfig {
        match self {
            TaskHead::Token(l) => HeadConfig {
                kind: HeadKind::Token,
                num_labels: l.d_out(),
            },
            TaskHead::Sequence { out, .. } => HeadConfig {
                kind: HeadKind::Sequence,
                num_labels: out.d_out(),
            },
        }
    }

    pub fn num_labels(&self) -> usize {
        self.config().num_labels
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            TaskHead::Token(l) => vec![
                ("head.token.weight".into(), &l.weight),
                ("head.token.bias".into(), &l.bias),
            ],
            TaskHead::Sequence { pool, out } => vec![
                ("head.pool.weight".into(), &pool.weight),
                ("head.pool.bias".into(), &pool.bias),
                ("head.out.weight".into(), &out.weight),
                ("head.out.bias".into(), &out.bias),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            TaskHead::Token(l) => vec![&mut l.weight, &mut l.bias],
            TaskHead::Sequence { pool, out } => {
                vec![&mut pool.weight, &mut pool.bias, &mut out.weight, &mut out.bias]
            }
        }
    }

    /// Token heads return `[n_seq * seq_len, labels]`; sequence heads read the
    /// hidden state at position 0 and return `[n_seq, labels]`.
    pub fn forward(&self, hidden: &[T], n_seq: usize, seq_len: usize) -> (Vec<T>, HeadCache<T>) {
        match self {
            TaskHead::Token(l) => {
                let rows = n_seq * seq_len;
                (
                    linear(hidden, l, rows),
                    HeadCache {
                        input: Vec::new(),
                        pooled: Vec::new(),
                        n_seq,
                        seq_len,
                    },
                )
            }
            TaskHead::Sequence { pool, out } => {
                let h = pool.d_in();
                let mut first = Vec::with_capacity(n_seq * h);
                for s in 0..n_seq {
                    let r = s * seq_len;
                    first.extend_from_slice(&hidden[r * h..(r + 1) * h]);
                }
                let pooled: Vec<T> = linear(&first, pool, n_seq).into_iter().map(|z| z.tanh()).collect();
                let logits = linear(&pooled, out, n_seq);
                (
                    logits,
                    HeadCache {
                        input: first,
                        pooled,
                        n_seq,
                        seq_len,
                    },
                )
            }
        }
    }

    /// Accumulates head gradients into `grad`; returns d(hidden).
    pub fn backward(&self, hidden: &[T], cache: &HeadCache<T>, d_logits: &[T], grad: &mut TaskHead<T>) -> Vec<T> {
        match (self, grad) {
            (TaskHead::Token(l), TaskHead::Token(g)) => {
                linear_backward(hidden, l, g, d_logits, cache.n_seq * cache.seq_len)
            }
            (TaskHead::Sequence { pool, out }, TaskHead::Sequence { pool: gp, out: go }) => {
                let h = pool.d_in();
                let mut d_pooled = linear_backward(&cache.pooled, out, go, d_logits, cache.n_seq);
                for (d, &p) in d_pooled.iter_mut().zip(&cache.pooled) {
                    *d *= T::ONE - p * p;
                }
                let d_first = linear_backward(&cache.input, pool, gp, &d_pooled, cache.n_seq);
                let mut d_hidden = vec![T::ZERO; cache.n_seq * cache.seq_len * h];
                for s in 0..cache.n_seq {
                    let r = s * cache.seq_len;
                    d_hidden[r * h..(r + 1) * h].copy_from_slice(&d_first[s * h..(s + 1) * h]);
                }
                d_hidden
            }
            _ => panic!("head gradient buffer does not match head kind"),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TaskHead<U> {
        let cast_linear = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        match self {
            TaskHead::Token(l) => TaskHead::Token(cast_linear(l)),
            TaskHead::Sequence { pool, out } => TaskHead::Sequence {
                pool: cast_linear(pool),
                out: cast_linear(out),
            },
        }
    }

    pub fn head_manifest(config: &HeadConfig, hidden: usize) -> Vec<(String, Vec<usize>)> {
        Self::zeros(config, hidden)
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape.clone()))
            .collect()
    }

    pub fn from_named(config: &HeadConfig, hidden: usize, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut head = Self::zeros(config, hidden);
        let manifest = Self::head_manifest(config, hidden);
        if named.len() != manifest.len() {
            return Err(Error::Structure(format!(
                "head expects {} tensors, found {}",
                manifest.len(),
                named.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, Tensor<T>> = named.into_iter().collect();
        for (slot, (name, shape)) in head.tensors_mut().into_iter().zip(&manifest) {
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
        Ok(head)
    }
}
