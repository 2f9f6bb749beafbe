//! Byte-level tokenizer: ids 0..256 are raw bytes, followed by four
//! reserved specials.

use crate::model::TokenSeq;

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const SEP: u32 = 259;
pub const VOCAB_SIZE: usize = 260;

pub fn tokenize(text: &[u8]) -> TokenSeq {
    TokenSeq::new(text.iter().map(|&b| b as u32).collect())
}

/// Inverse of [`tokenize`]. Special and out-of-range ids render as readable
/// escapes such as `<eos>`.
pub fn detokenize(tokens: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        match t {
            0..=255 => out.push(t as u8),
            BOS => out.extend_from_slice(b"<bos>"),
            EOS => out.extend_from_slice(b"<eos>"),
            PAD => out.extend_from_slice(b"<pad>"),
            SEP => out.extend_from_slice(b"<sep>"),
            _ => out.extend_from_slice(format!("<unk:{t}>").as_bytes()),
        }
    }
    out
}
