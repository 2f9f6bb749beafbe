//! `GFM1` model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "GFM1"
//! header_len   u32
//! header       header_len bytes of JSON (ModelConfig)
//! tensors, repeated until end of file:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   dtype      u8 (0 = f32)
//!   rank       u8
//!   dims       rank x u64
//!   payload    prod(dims) x f32, row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::model::{tensor_shapes, ModelConfig, ModelWeights};

pub const MAGIC: &[u8; 4] = b"GFM1";
const DTYPE_F32: u8 = 0;

pub fn write_model<W: Write>(weights: &ModelWeights, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let header = serde_json::to_vec(&weights.config)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for (name, dims, data) in weights.named_tensors() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F32, dims.len() as u8])?;
        for d in &dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => FormatError::Truncated(what.to_string()).into(),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one byte, or `None` at a clean end of file.
fn peek_eof<R: Read>(r: &mut R) -> Result<Option<u8>> {
    let mut b = [0u8; 1];
    loop {
        match r.read(&mut b) {
            Ok(0) => return Ok(None),
            Ok(_) => return Ok(Some(b[0])),
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<ModelWeights> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let header_len = read_u32(&mut r, "header length")? as usize;
    let mut header = vec![0u8; header_len];
    read_exact(&mut r, &mut header, "header")?;
    let config: ModelConfig =
        serde_json::from_slice(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    config.validate()?;
    let shapes: BTreeMap<String, Vec<usize>> = tensor_shapes(&config).into_iter().collect();

    let mut tensors = BTreeMap::new();
    while let Some(first) = peek_eof(&mut r)? {
        let mut rest = [0u8; 3];
        read_exact(&mut r, &mut rest, "tensor name length")?;
        let name_len = u32::from_le_bytes([first, rest[0], rest[1], rest[2]]) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, "tensor name")?;
        let name = String::from_utf8(name)
            .map_err(|_| FormatError::Header("tensor name is not UTF-8".into()))?;
        let mut tag = [0u8; 2];
        read_exact(&mut r, &mut tag, &format!("{name} dtype"))?;
        if tag[0] != DTYPE_F32 {
            return Err(FormatError::Dtype { name, tag: tag[0] }.into());
        }
        let mut dims = Vec::with_capacity(tag[1] as usize);
        for _ in 0..tag[1] {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, &format!("{name} dims"))?;
            dims.push(u64::from_le_bytes(b) as usize);
        }
        // reject before allocating the payload
        match shapes.get(&name) {
            None => return Err(FormatError::Unknown(name).into()),
            Some(want) if *want != dims => {
                return Err(FormatError::Shape {
                    name,
                    expected: want.clone(),
                    found: dims,
                }
                .into())
            }
            Some(_) => {}
        }
        let count: usize = dims.iter().product();
        let mut raw = vec![0u8; count * 4];
        read_exact(&mut r, &mut raw, &format!("{name} payload"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(FormatError::Duplicate(name).into());
        }
    }
    ModelWeights::from_named(config, tensors)
}

pub fn save_model(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    write_model(weights, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    read_model(BufReader::new(File::open(path)?))
}
