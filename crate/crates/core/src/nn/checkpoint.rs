//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "RPTN" | version u32 | iteration u32 | N u32 | N × i32 class scores
//! | input C,H,W u32×3 | layer count u32
//! | per layer: kind u8, trainable u8, 5 × u32 dims
//! | per parametric layer: weights f32…, biases f32…
//! | CRC32 of everything above
//! ```

use std::path::Path;

use super::layer::{LayerKind, LayerSpec};
use super::network::{Network, Params};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RPTN";
pub const FORMAT_VERSION: u32 = 1;

/// A network tagged with the training iteration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u32,
    pub network: Network,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_layer(buf: &mut Vec<u8>, spec: &LayerSpec) {
    let (code, dims) = match spec.kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        } => (1u8, [in_channels, out_channels, kernel_size, stride, padding]),
        LayerKind::ReLU => (2, [0; 5]),
        LayerKind::MaxPool { window, stride } => (3, [window, stride, 0, 0, 0]),
        LayerKind::Flatten => (4, [0; 5]),
        LayerKind::Dense {
            in_features,
            out_features,
        } => (5, [in_features, out_features, 0, 0, 0]),
    };
    buf.push(code);
    buf.push(spec.trainable as u8);
    for d in dims {
        put_u32(buf, d as u32);
    }
}

pub fn encode_checkpoint(net: &Network, iteration: u32) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, iteration);
    put_u32(&mut buf, net.num_classes() as u32);
    for &s in net.class_scores() {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for d in net.input_shape() {
        put_u32(&mut buf, d as u32);
    }
    put_u32(&mut buf, net.layers().len() as u32);
    for spec in net.layers() {
        encode_layer(&mut buf, spec);
    }
    for p in net.params().iter().flatten() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn decode_layer(r: &mut Reader) -> Result<LayerSpec> {
    let code = r.u8()?;
    let trainable = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::CorruptCheckpoint(format!("bad trainable flag {other}"))),
    };
    let mut d = [0usize; 5];
    for slot in &mut d {
        *slot = r.u32()? as usize;
    }
    let kind = match code {
        1 => LayerKind::Conv {
            in_channels: d[0],
            out_channels: d[1],
            kernel_size: d[2],
            stride: d[3],
            padding: d[4],
        },
        2 => LayerKind::ReLU,
        3 => LayerKind::MaxPool {
            window: d[0],
            stride: d[1],
        },
        4 => LayerKind::Flatten,
        5 => LayerKind::Dense {
            in_features: d[0],
            out_features: d[1],
        },
        other => return Err(Error::CorruptCheckpoint(format!("unknown layer kind {other}"))),
    };
    Ok(LayerSpec { kind, trainable })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptCheckpoint("CRC mismatch".into()));
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let iteration = r.u32()?;
    let n = r.u32()? as usize;
    let class_scores = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    let input_shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let layer_count = r.u32()? as usize;
    let layers = (0..layer_count)
        .map(|_| decode_layer(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let mut params = Vec::with_capacity(layers.len());
    for spec in &layers {
        params.push(match spec.param_shapes() {
            Some((ws, bs)) => {
                let weight = r.f32s(ws.iter().product())?;
                let bias = r.f32s(bs.iter().product())?;
                Some(Params {
                    weight: Tensor::new(ws, weight)?,
                    bias: Tensor::new(bs, bias)?,
                })
            }
            None => None,
        });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after parameters".into()));
    }
    let network = Network::from_parts(input_shape, layers, params, class_scores)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint { iteration, network })
}

pub fn save_checkpoint(net: &Network, iteration: u32, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net, iteration))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::default_architecture;

    fn net() -> Network {
        Network::build([3, 8, 8], default_architecture(3, 8, 4), vec![2, 3, 4, 5], 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let n = net();
        let back = decode_checkpoint(&encode_checkpoint(&n, 7)).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.network, n);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_checkpoint(&net(), 1);
        let err = decode_checkpoint(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(_)), "{err}");
    }

    #[test]
    fn bumped_version_is_unsupported() {
        let mut bytes = encode_checkpoint(&net(), 1);
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::UnsupportedVersion(v)) if v == FORMAT_VERSION + 1));
    }

    #[test]
    fn flipped_parameter_bit_is_detected() {
        let mut bytes = encode_checkpoint(&net(), 1);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&net(), 1);
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(decode_checkpoint(&[]), Err(Error::CorruptCheckpoint(_))));
    }
}
