//! Binary parameter container.
//!
//! Layout (little-endian): magic `SBPC`, `u32` version, `u32` record count,
//! then per record: `u32` name length, UTF-8 name, `u32` rank (always 2),
//! `u64` per dimension, and the values as `f32`.

use std::io::{Read, Write};

use crate::error::DiffError;
use crate::{Init, ParamStore, Real, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBPC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_params<T: Real, W: Write>(w: &mut W, store: &ParamStore<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&2u32.to_le_bytes())?;
        for d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&(x.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<T: Real, R: Read>(r: &mut R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| DiffError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(r)?;
        if rank != 2 {
            return Err(DiffError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            data.push(T::of(f32::from_le_bytes(b) as f64));
        }
        store.insert(name, Tensor::new(rows, cols, data)?, Init::Loaded);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_byte_stable() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s: ParamStore<f32> = ParamStore::new();
        s.add("embed.activity", 6, 4, Init::FanIn(6), &mut rng);
        s.add("ln.gain", 1, 4, Init::Ones, &mut rng);
        let mut a = Vec::new();
        write_params(&mut a, &s).unwrap();
        let back: ParamStore<f32> = read_params(&mut a.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in s.iter().zip(back.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
        let mut b = Vec::new();
        write_params(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_bytes() {
        let err = read_params::<f32, _>(&mut &b"NOPE\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, DiffError::Checkpoint(_)));
    }
}
