//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`; all parameter values little-endian
//! IEEE-754 `f32`.
//!
//! ```text
//! magic           8 bytes   "DIFFSRCK"
//! version         u32       FORMAT_VERSION
//! header_len      u32       byte length of the header text
//! header          UTF-8     "key=value\n" lines:
//!                             image_channels, base_channels,
//!                             channel_multipliers (comma separated),
//!                             res_blocks, time_embedding_dim, num_timesteps
//! tensor_count    u32
//! per tensor:
//!   name_len      u32
//!   name          UTF-8
//!   ndim          u32
//!   dims          ndim × u32
//!   values        product(dims) × f32
//! ```
//!
//! Readers reject unknown versions, rebuild the network from the header and
//! require every tensor name and shape to match it.

use std::path::Path;

use crate::denoiser::ops::Real;
use crate::denoiser::params::{ParamStore, Tensor};
use crate::denoiser::unet::{ArchitectureConfig, UNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DIFFSRCK";
pub const FORMAT_VERSION: u32 = 1;

fn header_text(config: &ArchitectureConfig, num_timesteps: usize) -> String {
    let mults: Vec<String> = config.channel_multipliers.iter().map(|m| m.to_string()).collect();
    format!(
        "image_channels={}\nbase_channels={}\nchannel_multipliers={}\nres_blocks={}\ntime_embedding_dim={}\nnum_timesteps={}\n",
        config.image_channels,
        config.base_channels,
        mults.join(","),
        config.res_blocks,
        config.time_embedding_dim,
        num_timesteps
    )
}

fn parse_header(text: &str) -> Result<(ArchitectureConfig, usize)> {
    let mut cfg = ArchitectureConfig::default();
    let mut t = None;
    let mut seen = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line '{line}'")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad value for {key}: '{v}'")))
        };
        match key.trim() {
            "image_channels" => cfg.image_channels = num(value)?,
            "base_channels" => cfg.base_channels = num(value)?,
            "channel_multipliers" => {
                cfg.channel_multipliers = value.split(',').map(num).collect::<Result<_>>()?
            }
            "res_blocks" => cfg.res_blocks = num(value)?,
            "time_embedding_dim" => cfg.time_embedding_dim = num(value)?,
            "num_timesteps" => t = Some(num(value)?),
            other => return Err(Error::Checkpoint(format!("unknown header key '{other}'"))),
        }
        seen += 1;
    }
    match t {
        Some(t) if seen == 6 => Ok((cfg, t)),
        _ => Err(Error::Checkpoint("incomplete header".into())),
    }
}

pub fn encode<T: Real>(net: &UNet, params: &ParamStore<T>) -> Result<Vec<u8>> {
    net.check_params(params)?;
    let header = header_text(net.config(), net.num_timesteps());
    let mut out = Vec::with_capacity(64 + 4 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<(UNet, ParamStore<T>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} not supported (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = r.u32()?;
    let (config, num_timesteps) = parse_header(&r.string(header_len)?)?;
    let net = UNet::new(config, num_timesteps).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = r.string(name_len)?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| T::of(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let params = ParamStore { tensors };
    net.check_params(&params)
        .map_err(|e| Error::Checkpoint(format!("architecture mismatch: {e}")))?;
    Ok((net, params))
}

pub fn save<T: Real>(net: &UNet, params: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net, params)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(UNet, ParamStore<T>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNet {
        UNet::new(
            ArchitectureConfig {
                image_channels: 1,
                base_channels: 8,
                channel_multipliers: vec![1, 2],
                res_blocks: 1,
                time_embedding_dim: 8,
            },
            50,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip() {
        let net = small();
        let p = net.init_params::<f32>(9);
        let bytes = encode(&net, &p).unwrap();
        let (net2, p2) = decode::<f32>(&bytes).unwrap();
        assert_eq!(net2.config(), net.config());
        assert_eq!(net2.num_timesteps(), 50);
        assert_eq!(p2, p);
        assert_eq!(encode(&net2, &p2).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let net = small();
        let bytes = encode(&net, &net.zero_params::<f32>()).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[16..16 + n]).unwrap();
        assert!(text.contains("channel_multipliers=1,2\n"));
        assert!(text.contains("num_timesteps=50\n"));
    }

    #[test]
    fn rejects_version_and_corruption() {
        let net = small();
        let mut bytes = encode(&net, &net.zero_params::<f32>()).unwrap();
        let good = bytes.clone();
        bytes[8] = 2;
        assert!(decode::<f32>(&bytes).unwrap_err().to_string().contains("version 2"));
        assert!(decode::<f32>(&good[..good.len() - 3]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
        let mut extra = good;
        extra.push(0);
        assert!(decode::<f32>(&extra).is_err());
    }

    #[test]
    fn rejects_params_for_other_architecture() {
        let net = small();
        let other = UNet::new(ArchitectureConfig::default(), 50).unwrap();
        assert!(encode(&net, &other.zero_params::<f32>()).is_err());
    }
}
