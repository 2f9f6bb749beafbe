//! Key/value storage. Each kv head keeps its own contiguous `[seq, head_dim]`
//! buffers and its own position list, so full and per-head compressed caches
//! share one representation.

use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadKv {
    head_dim: usize,
    /// Original token positions, strictly increasing.
    pub positions: Vec<usize>,
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

impl HeadKv {
    pub fn new(head_dim: usize) -> Self {
        Self {
            head_dim,
            positions: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn with_capacity(head_dim: usize, len: usize) -> Self {
        Self {
            head_dim,
            positions: Vec::with_capacity(len),
            keys: Vec::with_capacity(len * head_dim),
            values: Vec::with_capacity(len * head_dim),
        }
    }

    /// `keys` and `values` are row-major `[positions.len(), head_dim]`.
    pub fn from_parts(head_dim: usize, positions: Vec<usize>, keys: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        if keys.len() != positions.len() * head_dim || values.len() != keys.len() {
            return Err(contract(format!(
                "{} positions need {} key/value elements, got {} and {}",
                positions.len(),
                positions.len() * head_dim,
                keys.len(),
                values.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("positions must be strictly increasing"));
        }
        Ok(Self {
            head_dim,
            positions,
            keys,
            values,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.head_dim..(i + 1) * self.head_dim]
    }

    pub fn value(&self, i: usize) -> &[f32] {
        &self.values[i * self.head_dim..(i + 1) * self.head_dim]
    }

    pub fn push(&mut self, position: usize, key: &[f32], value: &[f32]) -> Result<()> {
        if key.len() != self.head_dim || value.len() != self.head_dim {
            return Err(contract("key/value width does not match head_dim"));
        }
        if self.positions.last().is_some_and(|&p| p >= position) {
            return Err(contract(format!(
                "position {position} does not follow {:?}",
                self.positions.last()
            )));
        }
        self.positions.push(position);
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        Ok(())
    }

    /// Keeps only the entries at `indices` (ascending, into this head).
    pub fn gather(&self, indices: &[usize]) -> HeadKv {
        let mut out = HeadKv::with_capacity(self.head_dim, indices.len());
        for &i in indices {
            out.positions.push(self.positions[i]);
            out.keys.extend_from_slice(self.key(i));
            out.values.extend_from_slice(self.value(i));
        }
        out
    }

    pub fn bytes(&self) -> u64 {
        ((self.keys.len() + self.values.len()) * std::mem::size_of::<f32>()) as u64
    }
}

/// One layer's cache: a [`HeadKv`] per kv head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub heads: Vec<HeadKv>,
}

impl LayerKv {
    pub fn new(n_kv_heads: usize, head_dim: usize) -> Self {
        Self {
            heads: (0..n_kv_heads).map(|_| HeadKv::new(head_dim)).collect(),
        }
    }

    /// Longest head; equal to every head's length for an uncompressed cache.
    pub fn seq_len(&self) -> usize {
        self.heads.iter().map(HeadKv::len).max().unwrap_or(0)
    }

    pub fn bytes(&self) -> u64 {
        self.heads.iter().map(HeadKv::bytes).sum()
    }
}

/// Per-layer caches of one session plus the next position to assign.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvCache {
    pub layers: Vec<LayerKv>,
    pub next_position: usize,
}

impl KvCache {
    pub fn bytes(&self) -> u64 {
        self.layers.iter().map(LayerKv::bytes).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Exact key+value bytes held by a cache.
pub fn cache_bytes(cache: &KvCache) -> u64 {
    cache.bytes()
}
