//! Binary checkpoint: magic, format version, a JSON metadata blob, then
//! named parameter records holding shape and little-endian `f64` values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"QACCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint has unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn write_to<W: Write>(mut w: W, store: &ParamStore, metadata: &str) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(metadata.len() as u64).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save(path: &Path, store: &ParamStore, metadata: &str) -> Result<(), CheckpointError> {
    let f = BufWriter::new(File::create(path)?);
    write_to(f, store, metadata)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, CheckpointError> {
    if len > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!("string length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

/// Reads every record into a fresh store and returns it with the metadata.
pub fn read_from<R: Read>(mut r: R) -> Result<(ParamStore, String), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = read_u64(&mut r)? as usize;
    let metadata = read_string(&mut r, meta_len)?;
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = read_string(&mut r, name_len)?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("{name}: {ndim} dims")));
        }
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    Ok((store, metadata))
}

pub fn load(path: &Path) -> Result<(ParamStore, String), CheckpointError> {
    read_from(BufReader::new(File::open(path)?))
}

/// Copies checkpoint values into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), CheckpointError> {
    for name in loaded.names() {
        if target.id(name).is_none() {
            return Err(CheckpointError::Unexpected(name.to_string()));
        }
    }
    let ids: Vec<_> = target.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = target.get(id).name.clone();
        let src = loaded
            .by_name(&name)
            .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        let expected = target.get(id).value.shape().to_vec();
        if src.value.shape() != expected.as_slice() {
            return Err(CheckpointError::Shape {
                name,
                found: src.value.shape().to_vec(),
                expected,
            });
        }
        target.get_mut(id).value = src.value.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.0]).unwrap())
            .unwrap();
        s.insert("a.b", Tensor::row_vector(vec![0.5, f64::MIN_POSITIVE])).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample();
        let mut buf = Vec::new();
        write_to(&mut buf, &store, "{\"variant\":\"sin\"}").unwrap();
        let (loaded, meta) = read_from(buf.as_slice()).unwrap();
        assert_eq!(meta, "{\"variant\":\"sin\"}");
        for (_, p) in store.iter() {
            assert_eq!(loaded.by_name(&p.name).unwrap().value, p.value);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_to(&mut buf, &sample(), "").unwrap();
        buf[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_from(buf.as_slice()),
            Err(CheckpointError::Version { found: 7, .. })
        ));
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let loaded = sample();
        let mut target = ParamStore::new();
        target.zeros("a.w", &[3, 2]).unwrap();
        target.zeros("a.b", &[1, 2]).unwrap();
        assert!(matches!(
            restore_into(&mut target, &loaded),
            Err(CheckpointError::Shape { .. })
        ));
        let mut target = ParamStore::new();
        target.zeros("a.w", &[2, 3]).unwrap();
        assert!(matches!(
            restore_into(&mut target, &loaded),
            Err(CheckpointError::Unexpected(_))
        ));
        let mut target = ParamStore::new();
        target.zeros("a.w", &[2, 3]).unwrap();
        target.zeros("a.b", &[1, 2]).unwrap();
        restore_into(&mut target, &loaded).unwrap();
        assert_eq!(target.by_name("a.b").unwrap().value.data()[0], 0.5);
    }
}
