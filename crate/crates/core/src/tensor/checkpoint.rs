//! Flat binary parameter checkpoints.
//!
//! Layout: the magic bytes `NSEG1`, then for every parameter in store order:
//! name length (`u32` LE), name bytes (UTF-8), rank (`u32` LE), each dim
//! (`u32` LE), and the values (`f64` LE). The file ends after the last
//! parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ParamStore, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"NSEG1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for (name, p) in store.iter() {
        out.write_all(&u32_len(name.len())?.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let shape = p.value.shape();
        out.write_all(&u32_len(shape.len())?.to_le_bytes())?;
        for &d in shape {
            out.write_all(&u32_len(d)?.to_le_bytes())?;
        }
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| TensorError::Checkpoint(format!("{n} does not fit in u32")))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| TensorError::Checkpoint("file too short for magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len) as usize;
        let mut name = vec![0u8; name_len];
        read_body(&mut input, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        read_body(&mut input, &mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

fn read_body<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| TensorError::Checkpoint("truncated parameter record".into()))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_body(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

/// Loads a checkpoint into `store`, replacing the values of parameters with
/// matching ids. Every stored parameter must exist with the same shape.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    if entries.len() != store.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint holds {} parameters, network expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let p = store
            .get_mut(&name)
            .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
        if p.value.shape() != tensor.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "load_checkpoint",
                lhs: p.value.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        p.value = tensor;
    }
    Ok(())
}
