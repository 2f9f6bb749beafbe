//! Seeded random models and the hand-built copy-attention model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Result};
use crate::model::{LayerWeights, ModelConfig, ModelWeights};
use crate::tensor::Matrix;

fn gaussian(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// Deterministic per seed; every matrix entry is `N(0, 1) / sqrt(d_model)`,
/// norm gains are 1.
pub fn make_random_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let scale = 1.0 / (d as f32).sqrt();
    let tok_embeddings = gaussian(cfg.vocab_size, d, scale, &mut rng);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            attn_norm: vec![1.0; d],
            wq: gaussian(d, cfg.q_dim(), scale, &mut rng),
            wk: gaussian(d, cfg.kv_dim(), scale, &mut rng),
            wv: gaussian(d, cfg.kv_dim(), scale, &mut rng),
            wo: gaussian(cfg.q_dim(), d, scale, &mut rng),
            mlp_norm: vec![1.0; d],
            w_gate_up: gaussian(d, 2 * cfg.hidden_mlp, scale, &mut rng),
            w_down: gaussian(cfg.hidden_mlp, d, scale, &mut rng),
        })
        .collect();
    let output = gaussian(d, cfg.vocab_size, scale, &mut rng);
    let weights = ModelWeights {
        config: cfg.clone(),
        tok_embeddings,
        layers,
        final_norm: vec![1.0; d],
        output,
    };
    weights.validate()?;
    Ok(weights)
}

/// Token ids in the order they receive exactly orthonormal embeddings:
/// lowercase, uppercase, digits, space, period, then everything else.
pub fn copy_model_token_order(vocab_size: usize) -> Vec<u32> {
    let mut order: Vec<u32> = Vec::with_capacity(vocab_size);
    order.extend((b'a'..=b'z').map(u32::from));
    order.extend((b'A'..=b'Z').map(u32::from));
    order.extend((b'0'..=b'9').map(u32::from));
    order.push(u32::from(b' '));
    order.push(u32::from(b'.'));
    order.retain(|&t| (t as usize) < vocab_size);
    let rest: Vec<u32> = (0..vocab_size as u32).filter(|t| !order.contains(t)).collect();
    order.extend(rest);
    order
}

/// Copy-attention model: no rotary positions, identity Q/K/V/O projections,
/// zeroed MLP and unit norm gains in every layer, tied output embedding.
///
/// The first `d_model` tokens of [`copy_model_token_order`] get exactly
/// orthonormal embeddings, the rest seeded random unit vectors. The
/// selection score of position `i` is then proportional to
/// `<e(T_last), e(T_i)>`, maximal wherever `T_i` equals the final token.
pub fn make_copy_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    if cfg.use_rope {
        return Err(config("copy model requires use_rope = false"));
    }
    if cfg.head_dim < 64 {
        return Err(config(format!("copy model requires head_dim >= 64, got {}", cfg.head_dim)));
    }
    if cfg.n_kv_heads != cfg.n_heads {
        return Err(config("copy model requires n_kv_heads = n_heads (identity key projection)"));
    }
    let d = cfg.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = copy_model_token_order(cfg.vocab_size);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut tok_embeddings = Matrix::zeros(cfg.vocab_size, d);
    for &tok in &order {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if basis.len() < d {
            // Gram-Schmidt, twice for numerical orthogonality
            for _ in 0..2 {
                for b in &basis {
                    let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= proj * y;
                    }
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        let row = tok_embeddings.row_mut(tok as usize);
        for (dst, src) in row.iter_mut().zip(&v) {
            *dst = *src as f32;
        }
        if basis.len() < d {
            basis.push(v);
        }
    }

    let layers = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            attn_norm: vec![1.0; d],
            wq: Matrix::identity(d),
            wk: Matrix::identity(d),
            wv: Matrix::identity(d),
            wo: Matrix::identity(d),
            mlp_norm: vec![1.0; d],
            w_gate_up: Matrix::zeros(d, 2 * cfg.hidden_mlp),
            w_down: Matrix::zeros(cfg.hidden_mlp, d),
        })
        .collect();
    let output = tok_embeddings.transpose();
    let weights = ModelWeights {
        config: cfg.clone(),
        tok_embeddings,
        layers,
        final_norm: vec![1.0; d],
        output,
    };
    weights.validate()?;
    Ok(weights)
}

/// Default copy-model config: one 64-wide head, no rotary positions.
pub fn copy_model_config(n_layers: usize) -> ModelConfig {
    ModelConfig {
        use_rope: false,
        hidden_mlp: 16,
        ..ModelConfig::new(n_layers, 1, 1, 64)
    }
}
