use std::collections::BTreeMap;

use crate::error::{config, contract, FormatError, Result};
use crate::model::ModelConfig;
use crate::tensor::Matrix;

/// Parameters of one transformer layer. Projections are stored `[in, out]`
/// so that activations multiply on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Vec<f32>,
    /// Gate and up projections side by side, `[d_model, 2 * hidden_mlp]`.
    pub w_gate_up: Matrix,
    pub w_down: Matrix,
}

impl LayerWeights {
    pub fn byte_len(&self) -> u64 {
        let vecs = (self.attn_norm.len() + self.mlp_norm.len()) * std::mem::size_of::<f32>();
        vecs as u64
            + self.wq.byte_len()
            + self.wk.byte_len()
            + self.wv.byte_len()
            + self.wo.byte_len()
            + self.w_gate_up.byte_len()
            + self.w_down.byte_len()
    }
}

/// All model parameters. Immutable after construction; share by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Vocabulary dictionary, `[vocab_size, d_model]`.
    pub tok_embeddings: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    /// Output embedding, `[d_model, vocab_size]`.
    pub output: Matrix,
}

/// Expected tensor names and shapes for a config, in file order.
pub fn tensor_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut shapes = vec![("tok_embeddings".to_string(), vec![cfg.vocab_size, d])];
    for i in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{i}.{s}");
        shapes.push((p("attn_norm"), vec![d]));
        shapes.push((p("wq"), vec![d, cfg.q_dim()]));
        shapes.push((p("wk"), vec![d, cfg.kv_dim()]));
        shapes.push((p("wv"), vec![d, cfg.kv_dim()]));
        shapes.push((p("wo"), vec![cfg.q_dim(), d]));
        shapes.push((p("mlp_norm"), vec![d]));
        shapes.push((p("w_gate_up"), vec![d, 2 * cfg.hidden_mlp]));
        shapes.push((p("w_down"), vec![cfg.hidden_mlp, d]));
    }
    shapes.push(("norm".to_string(), vec![d]));
    shapes.push(("output".to_string(), vec![d, cfg.vocab_size]));
    shapes
}

impl ModelWeights {
    /// Checks every tensor against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(config(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let expected = tensor_shapes(&self.config);
        for ((name, dims, data), (_, want)) in self.named_tensors().into_iter().zip(&expected) {
            if &dims != want || data.len() != want.iter().product::<usize>() {
                return Err(config(format!("tensor {name} has shape {dims:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// Per-layer weight bytes measured from the tensors themselves. All
    /// layers share one shape, so layer 0 is representative.
    pub fn layer_weight_bytes(&self) -> u64 {
        self.layers.first().map_or(0, LayerWeights::byte_len)
    }

    /// Bytes outside the transformer layers (embeddings, final norm, output).
    pub fn shared_weight_bytes(&self) -> u64 {
        self.tok_embeddings.byte_len()
            + self.output.byte_len()
            + (self.final_norm.len() * std::mem::size_of::<f32>()) as u64
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mat = |m: &Matrix| vec![m.rows(), m.cols()];
        let mut out: Vec<(String, Vec<usize>, &[f32])> = vec![(
            "tok_embeddings".into(),
            mat(&self.tok_embeddings),
            self.tok_embeddings.data(),
        )];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("attn_norm"), vec![l.attn_norm.len()], &l.attn_norm));
            out.push((p("wq"), mat(&l.wq), l.wq.data()));
            out.push((p("wk"), mat(&l.wk), l.wk.data()));
            out.push((p("wv"), mat(&l.wv), l.wv.data()));
            out.push((p("wo"), mat(&l.wo), l.wo.data()));
            out.push((p("mlp_norm"), vec![l.mlp_norm.len()], &l.mlp_norm));
            out.push((p("w_gate_up"), mat(&l.w_gate_up), l.w_gate_up.data()));
            out.push((p("w_down"), mat(&l.w_down), l.w_down.data()));
        }
        out.push(("norm".into(), vec![self.final_norm.len()], &self.final_norm));
        out.push(("output".into(), mat(&self.output), self.output.data()));
        out
    }

    /// Assembles weights from named tensors, which must match the config's
    /// tensor list exactly.
    pub fn from_named(
        config: ModelConfig,
        mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = tensor_shapes(&config);
        for (name, want) in &shapes {
            match tensors.get(name) {
                None => return Err(FormatError::Missing(name.clone()).into()),
                Some((dims, _)) if dims != want => {
                    return Err(FormatError::Shape {
                        name: name.clone(),
                        expected: want.clone(),
                        found: dims.clone(),
                    }
                    .into())
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = tensors
            .keys()
            .find(|k| !shapes.iter().any(|(n, _)| n == *k))
        {
            return Err(FormatError::Unknown(extra.clone()).into());
        }

        let mut take_mat = |name: &str| -> Result<Matrix> {
            let (dims, data) = tensors
                .remove(name)
                .ok_or_else(|| contract(format!("tensor {name} consumed twice")))?;
            Matrix::new(dims[0], dims[1], data)
        };
        let tok_embeddings = take_mat("tok_embeddings")?;
        let output = take_mat("output")?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            layers.push(LayerWeights {
                attn_norm: Vec::new(),
                wq: take_mat(&p("wq"))?,
                wk: take_mat(&p("wk"))?,
                wv: take_mat(&p("wv"))?,
                wo: take_mat(&p("wo"))?,
                mlp_norm: Vec::new(),
                w_gate_up: take_mat(&p("w_gate_up"))?,
                w_down: take_mat(&p("w_down"))?,
            });
        }
        let mut take_vec = |name: &str| -> Vec<f32> {
            tensors.remove(name).map(|(_, d)| d).unwrap_or_default()
        };
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.attn_norm = take_vec(&format!("layers.{i}.attn_norm"));
            layer.mlp_norm = take_vec(&format!("layers.{i}.mlp_norm"));
        }
        let final_norm = take_vec("norm");
        let weights = Self {
            config,
            tok_embeddings,
            layers,
            final_norm,
            output,
        };
        weights.validate()?;
        Ok(weights)
    }
}
