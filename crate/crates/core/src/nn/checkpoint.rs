//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `MMLP1`, `u32` network count (3), then per
//! network a `u32` layer-size count followed by the sizes as `u32`, then every
//! parameter as `f64` in [`PredictorParams::to_flat`] order.

use std::path::Path;

use super::mlp::{Mlp, PredictorParams};
use crate::channels::ByteReader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MMLP1";

pub fn encode_checkpoint(params: &PredictorParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for net in params.nets() {
        out.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
        for &s in net.sizes() {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
    }
    for x in params.to_flat() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PredictorParams> {
    if bytes.len() < MAGIC.len() || &bytes[..5] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "missing MMLP1 magic".into(),
        });
    }
    let mut r = ByteReader::new(bytes, 5);
    let nets = r.u32()?;
    if nets != 3 {
        return Err(Error::Format {
            offset: 5,
            msg: format!("expected 3 networks, found {nets}"),
        });
    }
    let mut shapes = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format {
                offset: 0,
                msg: format!("implausible layer count {count}"),
            });
        }
        let sizes = (0..count)
            .map(|_| r.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(sizes);
    }
    let zero = |s: &[usize]| {
        Mlp::zeros(s).map_err(|e| Error::Format {
            offset: 0,
            msg: e.to_string(),
        })
    };
    let mut params = PredictorParams {
        u_net: zero(&shapes[0])?,
        w_net: zero(&shapes[1])?,
        mu_net: zero(&shapes[2])?,
    };
    let flat = (0..params.num_params())
        .map(|_| r.f64())
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &PredictorParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<PredictorParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
