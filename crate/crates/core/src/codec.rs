//! Binary weight files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic  b"DVFW"
//! u32    format version (1)
//! u32    network count
//! per network:
//!   u32  layer count
//!   per layer:
//!     u32 rows, u32 cols, u8 activation code
//!     rows*cols f64   weights, row-major (input-major)
//!     cols f64        bias
//! ```

use crate::error::{Error, Result};
use crate::numkit::{Activation, DenseNet, Layer, Mat};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DVFW";
const VERSION: u32 = 1;

pub fn encode(nets: &[&DenseNet]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for l in net.layers() {
            out.extend_from_slice(&(l.weight.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weight.cols() as u32).to_le_bytes());
            out.push(l.activation.code());
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Input(format!(
                "weight file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Input("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<DenseNet>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Input("not a weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Input(format!("unsupported weight format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let act = Activation::from_code(r.take(1)?[0])?;
            let w = r.f64s(rows * cols)?;
            let b = r.f64s(cols)?;
            layers.push(Layer::new(Mat::from_vec(rows, cols, w)?, b, act)?);
        }
        nets.push(DenseNet::from_layers(layers)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Input(format!(
            "{} trailing bytes in weight file",
            bytes.len() - r.pos
        )));
    }
    Ok(nets)
}

pub fn save(path: &Path, nets: &[&DenseNet]) -> Result<()> {
    std::fs::write(path, encode(nets)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<DenseNet>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), a in 1usize..6, b in 1usize..6, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n1 = DenseNet::init(&[a, b, c], &[Activation::Tanh, Activation::Sigmoid], &mut rng).unwrap();
            let n2 = DenseNet::init(&[c, a], &[Activation::Relu], &mut rng).unwrap();
            let back = decode(&encode(&[&n1, &n2])).unwrap();
            prop_assert_eq!(back, vec![n1, n2]);
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = DenseNet::init(&[2, 2], &[Activation::Linear], &mut rng).unwrap();
        let bytes = encode(&[&n]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
