//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "CSDM"               4 bytes magic
//! version              u16
//! dim_count            u32   (number of entries in layer_dims)
//! layer_dims           u32 × dim_count
//! activation           u8    (0 = silu, 1 = relu)
//! parameters           f64 × P   (W_0, b_0, W_1, b_1, … row-major)
//! adam step_count      u64
//! adam lr, beta1, beta2, eps_hat   f64 × 4
//! adam first moment    f64 × P
//! adam second moment   f64 × P
//! checksum             u64   FNV-1a over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, AdamConfig, AdamState, MlpParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSDM";
pub const CHECKPOINT_VERSION: u16 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode_checkpoint(params: &MlpParams, state: &AdamState) -> Result<Vec<u8>> {
    if !params.same_shape(&state.first_moment) || !params.same_shape(&state.second_moment) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", params.layer_dims()),
            found: format!("{:?}", state.first_moment.layer_dims()),
        });
    }
    let mut out = Vec::with_capacity(64 + 24 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layer_dims().len() as u32).to_le_bytes());
    for &d in params.layer_dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(params.activation().tag());
    let put = |out: &mut Vec<u8>, p: &MlpParams| {
        for s in p.slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    };
    put(&mut out, params);
    out.extend_from_slice(&state.step_count.to_le_bytes());
    let c = state.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps_hat] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put(&mut out, &state.first_moment);
    put(&mut out, &state.second_moment);
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(MlpParams, AdamState)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected \"CSDM\"".into(),
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count_at = r.pos;
    let count = r.u32("layer count")? as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::Format {
            offset: count_at as u64,
            msg: format!("implausible layer count {count}"),
        });
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        dims.push(r.u32("layer dims")? as usize);
    }
    let act_at = r.pos;
    let act = r.u8("activation")?;
    let activation = Activation::from_tag(act).ok_or_else(|| Error::Format {
        offset: act_at as u64,
        msg: format!("unknown activation tag {act}"),
    })?;
    let n_params: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
    let body_at = r.pos;
    let bad_dims = |e: Error| match e {
        Error::InvalidArgument(msg) => Error::Format {
            offset: body_at as u64,
            msg,
        },
        other => other,
    };
    let params = MlpParams::from_flat(&dims, activation, &r.f64s(n_params, "parameters")?).map_err(bad_dims)?;
    let step_count = r.u64("adam step count")?;
    let c = r.f64s(4, "adam config")?;
    let config = AdamConfig {
        lr: c[0],
        beta1: c[1],
        beta2: c[2],
        eps_hat: c[3],
    };
    let m = MlpParams::from_flat(&dims, activation, &r.f64s(n_params, "adam first moment")?).map_err(bad_dims)?;
    let v = MlpParams::from_flat(&dims, activation, &r.f64s(n_params, "adam second moment")?).map_err(bad_dims)?;
    let sum_at = r.pos;
    let stored = r.u64("checksum")?;
    if fnv1a64(&buf[..sum_at]) != stored {
        return Err(Error::Format {
            offset: sum_at as u64,
            msg: "checksum mismatch".into(),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: "trailing bytes after checksum".into(),
        });
    }
    Ok((
        params,
        AdamState {
            step_count,
            first_moment: m,
            second_moment: v,
            config,
        },
    ))
}

pub fn save_checkpoint(params: &MlpParams, state: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpParams, AdamState)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks its layer dims against `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &[usize]) -> Result<(MlpParams, AdamState)> {
    let (p, st) = load_checkpoint(path)?;
    if p.layer_dims() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            found: format!("{:?}", p.layer_dims()),
        });
    }
    Ok((p, st))
}
