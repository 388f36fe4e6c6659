//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"CDNN"
//! version  u16
//! layers   u32
//! input    u32 rank, then u32 dims
//! per layer:
//!   kind   u8   0 dense, 1 conv2d, 2 relu, 3 global-avg-pool, 4 softmax-output
//!   conv2d only: u32 stride, u32 padding
//!   dense / conv2d:
//!     shape      u8 rank, then u32 dims
//!     precision  u8 (0 full32, 1 binary1 followed by f64 alpha)
//!     weights    f32 * product(shape)
//!     bias       u8 flag, then u32 len and f32 * len
//!     mask       u8 flag, then ceil(n / 8) bytes, bit i of byte i/8 (LSB first) = kept
//!     scores     u8 flag, then f32 * n
//! ```

use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::nn::layer::{Layer, Mask, Params, Precision};
use crate::nn::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CDNN";
pub const VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint", "unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("checkpoint", "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::format("checkpoint", format!("bad flag byte {t}"))),
        }
    }
}

fn write_params(w: &mut Writer, p: &Params) {
    let shape = p.weight.shape();
    w.u8(shape.len() as u8);
    for &d in shape {
        w.u32(d);
    }
    match p.precision {
        Precision::Full32 => w.u8(0),
        Precision::Binary1 { alpha } => {
            w.u8(1);
            w.0.extend_from_slice(&alpha.to_le_bytes());
        }
    }
    w.f32s(p.weight.data());
    match &p.bias {
        None => w.u8(0),
        Some(b) => {
            w.u8(1);
            w.u32(b.len());
            w.f32s(b.data());
        }
    }
    match &p.mask {
        None => w.u8(0),
        Some(m) => {
            w.u8(1);
            let mut bytes = vec![0u8; m.len().div_ceil(8)];
            for (i, &k) in m.keep().iter().enumerate() {
                if k {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            w.0.extend_from_slice(&bytes);
        }
    }
    match &p.scores {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.f32s(s.data());
        }
    }
}

fn read_params(r: &mut Reader) -> Result<Params> {
    let rank = r.u8()? as usize;
    let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let precision = match r.u8()? {
        0 => Precision::Full32,
        1 => Precision::Binary1 { alpha: r.f64()? },
        t => {
            return Err(Error::format(
                "checkpoint",
                format!("unknown precision tag {t}"),
            ))
        }
    };
    let weight = Tensor::new(shape.clone(), r.f32s(n)?)?;
    let bias = if r.flag()? {
        let len = r.u32()?;
        Some(Tensor::new(vec![len], r.f32s(len)?)?)
    } else {
        None
    };
    let mask = if r.flag()? {
        let bytes = r.take(n.div_ceil(8))?;
        Some(Mask::from_keep(
            (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect(),
        ))
    } else {
        None
    };
    let scores = if r.flag()? {
        Some(Tensor::new(shape, r.f32s(n)?)?)
    } else {
        None
    };
    Ok(Params {
        weight,
        bias,
        mask,
        scores,
        precision,
    })
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u32(net.layers().len());
    w.u32(net.input_shape().len());
    for &d in net.input_shape() {
        w.u32(d);
    }
    for layer in net.layers() {
        match layer {
            Layer::Dense(p) => {
                w.u8(0);
                write_params(&mut w, p);
            }
            Layer::Conv2d {
                params,
                stride,
                padding,
            } => {
                w.u8(1);
                w.u32(*stride);
                w.u32(*padding);
                write_params(&mut w, params);
            }
            Layer::Relu => w.u8(2),
            Layer::GlobalAvgPool => w.u8(3),
            Layer::SoftmaxOutput => w.u8(4),
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let count = r.u32()?;
    let rank = r.u32()?;
    let input = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let layer = match r.u8()? {
            0 => Layer::Dense(read_params(&mut r)?),
            1 => {
                let stride = r.u32()?;
                let padding = r.u32()?;
                Layer::Conv2d {
                    params: read_params(&mut r)?,
                    stride,
                    padding,
                }
            }
            2 => Layer::Relu,
            3 => Layer::GlobalAvgPool,
            4 => Layer::SoftmaxOutput,
            t => {
                return Err(Error::format(
                    "checkpoint",
                    format!("unknown layer kind {t}"),
                ))
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Network::new(input, layers)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net)).at(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    decode(&std::fs::read(path).at(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;

    #[test]
    fn truncated_files_are_rejected() {
        let mut net = Network::mlp(vec![4], &[3], 2).unwrap();
        init::kaiming_normal(&mut net, 0);
        let bytes = encode(&net);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert_eq!(decode(&bytes).unwrap(), net);
    }
}
