use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::TaskModel;

const MAGIC: &[u8; 4] = b"SGTM";
const VERSION: u32 = 1;

/// Header (magic, version, task id, dim, iterations, staleness, samples)
/// followed by `dim` little-endian f64 values.
pub fn write_checkpoint<W: Write>(model: &TaskModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.task_id as u64).to_le_bytes())?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    w.write_all(&model.local_iterations_done.to_le_bytes())?;
    w.write_all(&model.staleness.to_le_bytes())?;
    w.write_all(&model.samples.to_le_bytes())?;
    for p in &model.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TaskModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a task-model checkpoint".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let task_id = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)?;
    if dim > (1 << 32) {
        return Err(Error::Format(format!("implausible parameter count {dim}")));
    }
    let local_iterations_done = read_u64(&mut r)?;
    let staleness = read_u64(&mut r)?;
    let samples = f64::from_bits(read_u64(&mut r)?);
    let mut params = Vec::with_capacity(dim as usize);
    for _ in 0..dim {
        params.push(f64::from_bits(read_u64(&mut r)?));
    }
    Ok(TaskModel { task_id, params, local_iterations_done, staleness, samples })
}
