//! Central finite-difference check of every parameter gradient of the
//! encoder, MLM head and task heads in f64.

use mlm_core::encoder::{cross_entropy_sum, Batch, EncoderParams, HeadConfig, HeadKind, ModelConfig, TaskHead};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
const NORM_FLOOR: f64 = 1e-6;
/// Weight scale of the test point. At the 0.02 training init, layer-norm
/// curvature makes a 1e-3 central difference inaccurate to about 4e-4.
const TEST_STD: f64 = 0.3;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_size: 8,
        num_heads: 2,
        ffn_size: 16,
        vocab_size: 40,
        max_positions: 12,
        dropout: 0.1,
        attention_dropout: 0.1,
        layer_norm_eps: 1e-5,
        pad_id: 1,
    }
}

fn batch() -> Batch {
    Batch::from_sequences(&[vec![0, 7, 12, 39, 5, 2], vec![0, 9, 9, 2], vec![0, 33, 4, 18, 21, 2]], 1)
}

const MLM_ROWS: [usize; 5] = [1, 3, 7, 8, 14];
const MLM_TARGETS: [u32; 5] = [11, 6, 30, 9, 20];

fn mlm_loss(p: &EncoderParams<f64>, c: &ModelConfig, grads: Option<&mut EncoderParams<f64>>) -> f64 {
    let b = batch();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (hidden, cache) = p.forward(c, &b, Some(&mut rng)).unwrap();
    let (logits, head_cache) = p.mlm_logits_rows(c, &hidden, &MLM_ROWS);
    let scale = 1.0 / MLM_ROWS.len() as f64;
    let (sum, d_logits) = cross_entropy_sum(&logits, &MLM_TARGETS, c.vocab_size, scale);
    if let Some(g) = grads {
        let dh = p.mlm_head_backward(c, &head_cache, &d_logits, b.rows(), g);
        p.backward(c, &cache, &dh, g);
    }
    sum * scale
}

fn task_loss(
    p: &EncoderParams<f64>,
    h: &TaskHead<f64>,
    c: &ModelConfig,
    grads: Option<(&mut EncoderParams<f64>, &mut TaskHead<f64>)>,
) -> f64 {
    let b = batch();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (hidden, cache) = p.forward(c, &b, Some(&mut rng)).unwrap();
    let (logits, hc) = h.forward(&hidden, b.n_seq, b.seq_len);
    let n = h.num_labels();
    let (picked, targets): (Vec<f64>, Vec<u32>) = match h.config().kind {
        HeadKind::Token => {
            let rows = [1usize, 2, 7, 13, 16];
            let mut v = Vec::new();
            for r in rows {
                v.extend_from_slice(&logits[r * n..(r + 1) * n]);
            }
            (v, vec![0, 2, 1, 2, 0])
        }
        HeadKind::Sequence => (logits.clone(), vec![1, 0, 1]),
    };
    let scale = 1.0 / targets.len() as f64;
    let (sum, d_picked) = cross_entropy_sum(&picked, &targets, n, scale);
    if let Some((gp, gh)) = grads {
        let d_logits = match h.config().kind {
            HeadKind::Token => {
                let mut d = vec![0.0; logits.len()];
                for (i, r) in [1usize, 2, 7, 13, 16].into_iter().enumerate() {
                    d[r * n..(r + 1) * n].copy_from_slice(&d_picked[i * n..(i + 1) * n]);
                }
                d
            }
            HeadKind::Sequence => d_picked,
        };
        let dh = h.backward(&hidden, &hc, &d_logits, gh);
        p.backward(c, &cache, &dh, gp);
    }
    sum * scale
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|, NORM_FLOOR)` in the
/// Euclidean norm, maximised over tensors. The floor covers gradients that
/// vanish identically (e.g. attention key biases). Returns the worst value and its tensor.
fn check_tensors(
    mut loss_at: impl FnMut(usize, usize, f64) -> f64,
    analytic: Vec<(String, Vec<f64>)>,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for (j, &a) in grad.iter().enumerate() {
            let n = (loss_at(ti, j, STEP) - loss_at(ti, j, -STEP)) / (2.0 * STEP);
            diff += (a - n).powi(2);
            na += a * a;
            nn += n * n;
        }
        let e = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(NORM_FLOOR);
        if e > worst.0 {
            worst = (e, name.clone());
        }
    }
    worst
}

/// Worst per-tensor relative error over the encoder and MLM head.
pub fn encoder_and_mlm_head() -> (f64, String) {
    let c = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = EncoderParams::<f64>::init_with_std(&c, TEST_STD, &mut rng);
    let mut grads = EncoderParams::<f64>::zeros(&c);
    mlm_loss(&params, &c, Some(&mut grads));
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let mut work = params.clone();
    check_tensors(
        |ti, j, d| {
            let orig = work.tensors_mut()[ti].data[j];
            work.tensors_mut()[ti].data[j] = orig + d;
            let l = mlm_loss(&work, &c, None);
            work.tensors_mut()[ti].data[j] = orig;
            l
        },
        analytic,
    )
}

/// Worst per-tensor relative error over the encoder and a task head.
pub fn task_head(kind: HeadKind) -> (f64, String) {
    let c = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = EncoderParams::<f64>::init_with_std(&c, TEST_STD, &mut rng);
    let hc = HeadConfig { kind, num_labels: 3 };
    let mut head = TaskHead::<f64>::init(&hc, c.hidden_size, &mut rng).unwrap();
    // Scale head weights to the same test-point magnitude.
    for t in head.tensors_mut() {
        for v in t.data.iter_mut() {
            *v *= TEST_STD / 0.02;
        }
    }
    let mut gp = EncoderParams::<f64>::zeros(&c);
    let mut gh = TaskHead::<f64>::zeros(&hc, c.hidden_size);
    task_loss(&params, &head, &c, Some((&mut gp, &mut gh)));
    let n_enc = gp.tensors().len();
    let mut analytic: Vec<(String, Vec<f64>)> = gp.tensors().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    analytic.extend(gh.tensors().into_iter().map(|(n, t)| (n, t.data.clone())));
    let (mut wp, mut wh) = (params.clone(), head.clone());
    check_tensors(
        |ti, j, d| {
            let slot = |wp: &mut EncoderParams<f64>, wh: &mut TaskHead<f64>, v: Option<f64>| -> f64 {
                let cell = if ti < n_enc {
                    &mut wp.tensors_mut()[ti].data[j]
                } else {
                    &mut wh.tensors_mut()[ti - n_enc].data[j]
                };
                let old = *cell;
                if let Some(v) = v {
                    *cell = v;
                }
                old
            };
            let orig = slot(&mut wp, &mut wh, None);
            slot(&mut wp, &mut wh, Some(orig + d));
            let l = task_loss(&wp, &wh, &c, None);
            slot(&mut wp, &mut wh, Some(orig));
            l
        },
        analytic,
    )
}
