//! Binary network checkpoints.
//!
//! Layout (little endian): magic `AEVNET1`, `u32` classes, `u32` head index,
//! `u32` input rank and dims, `u32` layer count, then per layer a `u8` tag
//! followed by its hyperparameters (`u32`) and parameters (`f32`).

use std::path::Path;

use crate::binio::{push_f32s, push_u32, read_file, write_file, ByteReader};
use crate::error::Result;
use crate::nn::layers::{Conv2d, Dense, Layer, MaxPool2d};
use crate::nn::network::Network;
use crate::scalar::Scalar;

const MAGIC: &[u8] = b"AEVNET1";
const TAG_DENSE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_POOL: u8 = 5;

pub fn encode_network<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    push_u32(&mut out, net.classes());
    push_u32(&mut out, net.head_index());
    push_u32(&mut out, net.input_shape().len());
    for &d in net.input_shape() {
        push_u32(&mut out, d);
    }
    push_u32(&mut out, net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                push_u32(&mut out, d.in_features);
                push_u32(&mut out, d.out_features);
                push_f32s(&mut out, &d.weights);
                push_f32s(&mut out, &d.bias);
            }
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                for v in [
                    c.in_channels,
                    c.out_channels,
                    c.kernel.0,
                    c.kernel.1,
                    c.stride,
                ] {
                    push_u32(&mut out, v);
                }
                push_f32s(&mut out, &c.weights);
                push_f32s(&mut out, &c.bias);
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::Flatten => out.push(TAG_FLATTEN),
            Layer::MaxPool2d(p) => {
                out.push(TAG_POOL);
                push_u32(&mut out, p.size);
                push_u32(&mut out, p.stride);
            }
        }
    }
    out
}

pub fn decode_network<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Network<T>> {
    let mut r = ByteReader::new(path, bytes);
    r.expect_magic(MAGIC)?;
    let classes = r.u32_le()? as usize;
    let head_index = r.u32_le()? as usize;
    let rank = r.u32_le()? as usize;
    if rank == 0 || rank > 4 {
        return Err(r.error(format!("unsupported input rank {rank}")));
    }
    let input_shape = (0..rank)
        .map(|_| r.u32_le().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = r.u32_le()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    let cast = |v: Vec<f32>| {
        v.into_iter()
            .map(|x| T::narrow(x as f64))
            .collect::<Vec<T>>()
    };
    for _ in 0..count {
        let at = r.offset();
        let layer = match r.u8()? {
            TAG_DENSE => {
                let in_features = r.u32_le()? as usize;
                let out_features = r.u32_le()? as usize;
                let weights = r.f32_vec(in_features * out_features)?;
                let bias = r.f32_vec(out_features)?;
                Layer::Dense(Dense {
                    in_features,
                    out_features,
                    weights: cast(weights),
                    bias: cast(bias),
                })
            }
            TAG_CONV => {
                let dims = (0..5)
                    .map(|_| r.u32_le().map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?;
                let [in_channels, out_channels, kh, kw, stride] = dims[..] else {
                    unreachable!()
                };
                if stride == 0 {
                    return Err(r.error_at(at, "conv stride must be positive"));
                }
                let weights = r.f32_vec(in_channels * out_channels * kh * kw)?;
                let bias = r.f32_vec(out_channels)?;
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel: (kh, kw),
                    stride,
                    weights: cast(weights),
                    bias: cast(bias),
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_FLATTEN => Layer::Flatten,
            TAG_POOL => {
                let size = r.u32_le()? as usize;
                let stride = r.u32_le()? as usize;
                if size == 0 || stride == 0 {
                    return Err(r.error_at(at, "pool size and stride must be positive"));
                }
                Layer::MaxPool2d(MaxPool2d { size, stride })
            }
            other => return Err(r.error_at(at, format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    r.finish()?;
    let net =
        Network::new(input_shape, layers).map_err(|e| r.error(format!("invalid network: {e}")))?;
    if net.classes() != classes || net.head_index() != head_index {
        return Err(r.error(format!(
            "header says {classes} classes / head {head_index}, layers give {} / {}",
            net.classes(),
            net.head_index()
        )));
    }
    Ok(net)
}

pub fn save_network<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    write_file(path, &encode_network(net))
}

pub fn load_network<T: Scalar>(path: &Path) -> Result<Network<T>> {
    decode_network(path, &read_file(path)?)
}
