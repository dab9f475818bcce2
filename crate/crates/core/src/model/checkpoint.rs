//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic    4 bytes   "MOEC"
//! version  u32       currently 1
//! cfg_len  u32       length of the config JSON text block
//! cfg      cfg_len bytes of canonical JSON (struct field order)
//! count    u32       number of named tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, extents rank × u64
//!   data     product(extents) × f64, IEEE-754 little-endian
//! ```
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MoEModel, MoEModelConfig, ModelError, Param, Result};

const MAGIC: &[u8; 4] = b"MOEC";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &MoEModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for p in model.params() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &e in &p.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MoEModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg: MoEModelConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| ModelError::Format(format!("config block: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    // decay flags are structural, not stored; recover them from a fresh
    // model of the same config
    let template = MoEModel::new(cfg.clone())?;
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| ModelError::Format("non-UTF-8 tensor name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let decay = template
            .param(&name)
            .ok_or_else(|| ModelError::Format(format!("unknown tensor {name}")))?
            .decay;
        params.push(Param { name, shape, data, decay });
    }
    if params.len() != template.params().len() {
        return Err(ModelError::Format(format!(
            "checkpoint holds {} tensors, config implies {}",
            params.len(),
            template.params().len()
        )));
    }
    MoEModel::from_parts(cfg, params)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
