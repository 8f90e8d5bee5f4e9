//! Binary numeric block accompanying a serialized prompt.
//!
//! Layout (little-endian): `u32` header length, UTF-8 JSON header, then one
//! record per token in prompt order: `D × f32` feature, `6 × f32` relative
//! position, `u8` validity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIDECAR_FORMAT: &str = "dynscene-prompt-sidecar";
pub const SIDECAR_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarHeader {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub patch_tokens: usize,
    pub instance_tokens: usize,
    pub zone_tokens: usize,
}

impl SidecarHeader {
    pub fn token_count(&self) -> Option<usize> {
        self.patch_tokens.checked_add(self.instance_tokens)?.checked_add(self.zone_tokens)
    }

    pub fn record_len(&self) -> Option<usize> {
        self.feature_dim.checked_add(6)?.checked_mul(4)?.checked_add(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SidecarToken {
    pub feature: Vec<f32>,
    pub relpos: [f32; 6],
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub header: SidecarHeader,
    pub tokens: Vec<SidecarToken>,
}

impl Sidecar {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let expected = self.header.token_count().ok_or_else(|| Error::Sidecar("token count overflow".into()))?;
        if self.tokens.len() != expected {
            return Err(Error::Sidecar(format!("header declares {expected} tokens, have {}", self.tokens.len())));
        }
        let header = serde_json::to_vec(&self.header)?;
        let rec = self.header.record_len().ok_or_else(|| Error::Sidecar("record length overflow".into()))?;
        let mut out = Vec::with_capacity(4 + header.len() + rec * expected);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tokens {
            if t.feature.len() != self.header.feature_dim {
                return Err(Error::Sidecar(format!("token feature has {} dims, header says {}", t.feature.len(), self.header.feature_dim)));
            }
            for x in t.feature.iter().chain(&t.relpos) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(t.valid as u8);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Sidecar(m.to_string());
        let len_bytes: [u8; 4] = bytes.get(..4).ok_or_else(|| err("truncated header length"))?.try_into().expect("4 bytes");
        let hlen = u32::from_le_bytes(len_bytes) as usize;
        if hlen > MAX_HEADER {
            return Err(err("header too large"));
        }
        let hbytes = bytes.get(4..4 + hlen).ok_or_else(|| err("truncated header"))?;
        let header: SidecarHeader = serde_json::from_slice(hbytes).map_err(|e| Error::Sidecar(format!("bad header: {e}")))?;
        if header.format != SIDECAR_FORMAT {
            return Err(Error::Sidecar(format!("unknown format {:?}", header.format)));
        }
        if header.version != SIDECAR_VERSION {
            return Err(Error::Sidecar(format!("unsupported version {}", header.version)));
        }
        let count = header.token_count().ok_or_else(|| err("token count overflow"))?;
        let rec = header.record_len().ok_or_else(|| err("record length overflow"))?;
        let body = &bytes[4 + hlen..];
        if count.checked_mul(rec) != Some(body.len()) {
            return Err(Error::Sidecar(format!("body is {} bytes, expected {count} records of {rec}", body.len())));
        }
        let d = header.feature_dim;
        let tokens = body
            .chunks_exact(rec.max(1))
            .map(|r| {
                let f = |i: usize| f32::from_le_bytes(r[4 * i..4 * i + 4].try_into().expect("4 bytes"));
                let valid = match r[rec - 1] {
                    0 => false,
                    1 => true,
                    _ => return Err(err("validity byte must be 0 or 1")),
                };
                Ok(SidecarToken { feature: (0..d).map(f).collect(), relpos: std::array::from_fn(|k| f(d + k)), valid })
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sidecar {
        let header =
            SidecarHeader { format: SIDECAR_FORMAT.into(), version: SIDECAR_VERSION, feature_dim: 2, patch_tokens: 1, instance_tokens: 1, zone_tokens: 0 };
        let tokens = vec![
            SidecarToken { feature: vec![0.0, 0.0], relpos: [0.0, 0.0, 0.0, 0.0, 1.0, 0.0], valid: false },
            SidecarToken { feature: vec![0.6, 0.8], relpos: [1.0, 0.0, 2.0, 5f32.sqrt(), 0.9, 0.4], valid: true },
        ];
        Sidecar { header, tokens }
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let bytes = s.encode().unwrap();
        assert_eq!(Sidecar::decode(&bytes).unwrap(), s);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().encode().unwrap();
        assert!(Sidecar::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut flag = bytes.clone();
        *flag.last_mut().unwrap() = 7;
        assert!(Sidecar::decode(&flag).is_err());
        assert!(Sidecar::decode(&[1, 0]).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Sidecar::decode(&extra).is_err());
    }
}
