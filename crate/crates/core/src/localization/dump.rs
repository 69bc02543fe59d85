//! Binary activation dumps: 16-byte magic, header (K, L, M as little-endian
//! u32, then a position-policy byte), then K·L·M little-endian f32 values,
//! prompt-major, then layer, then neuron.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 16] = b"ENTCELL-ACTDUMP1";
const HEADER_LEN: usize = 16 + 3 * 4 + 1;

/// Which token position each prompt's activations were read at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionPolicy {
    EntityToken,
    FinalToken,
}

impl PositionPolicy {
    fn byte(self) -> u8 {
        match self {
            PositionPolicy::EntityToken => 0,
            PositionPolicy::FinalToken => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(PositionPolicy::EntityToken),
            1 => Ok(PositionPolicy::FinalToken),
            other => Err(Error::Dump(format!("unknown position policy byte {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub policy: PositionPolicy,
    /// K × L × M
    pub values: Array3<f32>,
}

impl ActivationDump {
    pub fn new(policy: PositionPolicy, values: Array3<f32>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dump("non-finite activation".into()));
        }
        Ok(ActivationDump { policy, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, l, m) = self.values.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(DUMP_MAGIC);
        for n in [k, l, m] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.push(self.policy.byte());
        for x in self.values.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Dump(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..16] != DUMP_MAGIC {
            return Err(Error::Dump("bad magic".into()));
        }
        let dim = |i: usize| {
            let at = 16 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        };
        let (k, l, m) = (dim(0), dim(1), dim(2));
        let policy = PositionPolicy::from_byte(bytes[HEADER_LEN - 1])?;
        let payload = &bytes[HEADER_LEN..];
        let expected = k
            .checked_mul(l)
            .and_then(|x| x.checked_mul(m))
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Dump("header dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::Dump(format!(
                "header says {k}×{l}×{m} values ({expected} bytes), payload has {} bytes",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let values = Array3::from_shape_vec((k, l, m), values).expect("length checked");
        ActivationDump::new(policy, values)
    }

    /// Activations as f64 for scoring.
    pub fn to_f64(&self) -> Array3<f64> {
        self.values.mapv(f64::from)
    }
}

pub fn write_activation_dump(path: &Path, dump: &ActivationDump) -> Result<()> {
    fs::write(path, dump.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_activation_dump(path: &Path) -> Result<ActivationDump> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ActivationDump::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ActivationDump {
        let values = Array3::from_shape_fn((3, 2, 4), |(k, l, m)| (k * 100 + l * 10 + m) as f32 * 0.37 - 5.0);
        ActivationDump::new(PositionPolicy::EntityToken, values).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dump = sample();
        let back = ActivationDump::from_bytes(&dump.to_bytes()).unwrap();
        assert_eq!(back.policy, dump.policy);
        assert!(back
            .values
            .iter()
            .zip(dump.values.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_or_mismatched_payload_rejected() {
        let bytes = sample().to_bytes();
        assert!(ActivationDump::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ActivationDump::from_bytes(&bytes[..10]).is_err());
        let mut wrong = bytes.clone();
        wrong[16] = 4;
        assert!(ActivationDump::from_bytes(&wrong).is_err());
    }
}
