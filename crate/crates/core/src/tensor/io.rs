//! Binary tensor container.
//!
//! A single tensor is stored as
//!
//! ```text
//! b"MNT1" | rank: u32 | dims: rank × u32 | payload: product(dims) × f64
//! ```
//!
//! with every integer and float little-endian and the payload row-major.
//! Named collections (checkpoints) use a bundle:
//!
//! ```text
//! b"MNTB" | count: u32 | count × (name_len: u32 | name: UTF-8 | MNT1 record)
//! ```

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, IoContext, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MNT1";
pub const BUNDLE_MAGIC: &[u8; 4] = b"MNTB";

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!(
                "truncated container: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        if self.take(4)? != TENSOR_MAGIC {
            return Err(Error::format("bad tensor magic, expected MNT1"));
        }
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(format!("unsupported tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(Error::format("zero-sized tensor dimension"));
            }
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::format("tensor size overflows"))?;
            shape.push(d);
        }
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format("tensor size overflows"))?;
        let payload = self.take(bytes)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::from_vec(&shape, data)
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let t = cur.tensor()?;
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(t)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    fs::write(path, buf).with_path(path)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_path(path)?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::InvalidFormat(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_bundle(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(BUNDLE_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut buf);
    }
    buf
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4)? != BUNDLE_MAGIC {
        return Err(Error::format("bad bundle magic, expected MNTB"));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::format("bundle entry name is not UTF-8"))?
            .to_string();
        entries.push((name, cur.tensor()?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after bundle"));
    }
    Ok(entries)
}

pub fn save_bundle(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_bundle(entries)).with_path(path)
}

pub fn load_bundle(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).with_path(path)?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::matrix(1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        assert_eq!(&buf[..4], b"MNT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 16 + 16);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::vector(&[1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        assert!(decode_tensor(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode_tensor(&bad).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(decode_tensor(&long).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let entries = vec![
            ("weight".to_string(), Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap()),
            ("bias".to_string(), Tensor::vector(&[0.5, -0.5]).unwrap()),
        ];
        let bytes = encode_bundle(&entries);
        assert_eq!(decode_bundle(&bytes).unwrap(), entries);
    }

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut rng = crate::tensor::Rng::new(seed);
            let data: Vec<f64> = (0..n).map(|_| rng.normal() * 1e3).collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let mut buf = Vec::new();
            encode_tensor(&t, &mut buf);
            let back = decode_tensor(&buf).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
