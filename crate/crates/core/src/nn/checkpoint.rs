use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ESPRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus a free-form JSON metadata string. Values are stored as
/// little-endian f64 bits, so a round trip is exact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: String, tensors: Vec<(String, Array2<f64>)>) -> Self {
        Self { meta, tensors }
    }

    pub fn map(&self) -> HashMap<String, Array2<f64>> {
        self.tensors.iter().cloned().collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(w, self.meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_bytes(w, name.as_bytes())?;
            w.write_all(&(t.nrows() as u64).to_le_bytes())?;
            w.write_all(&(t.ncols() as u64).to_le_bytes())?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let meta = String::from_utf8(read_bytes(r)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_u64(r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut values = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u64).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 30 {
        return Err(Error::Checkpoint("corrupt length field".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}
