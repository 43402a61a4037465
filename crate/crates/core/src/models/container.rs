//! The `.nzb` container: a fixed little-endian header followed by
//! length-prefixed range-coder payloads.

use super::config::{ArchitectureConfig, Metric, ModelKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NZ01";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "nzb";
const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 1 + 2 + 2 + 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub version: u8,
    pub model: ModelKind,
    pub quality: u8,
    pub metric: Metric,
    pub orig_h: u16,
    pub orig_w: u16,
    /// Hyperprior models store the hyper-latent stream first.
    pub streams: Vec<Vec<u8>>,
}

impl BitstreamContainer {
    pub fn matches(&self, config: &ArchitectureConfig) -> bool {
        self.model == config.model && self.quality == config.quality && self.metric == config.metric
    }

    /// Total serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.streams.iter().map(|s| 4 + s.len()).sum::<usize>()
    }

    /// Sum of payload lengths in bits (without header and length prefixes).
    pub fn payload_bits(&self) -> u64 {
        self.streams.iter().map(|s| s.len() as u64 * 8).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(self.model.id());
        out.push(self.quality);
        out.push(self.metric.id());
        out.extend_from_slice(&self.orig_h.to_le_bytes());
        out.extend_from_slice(&self.orig_w.to_le_bytes());
        out.push(self.streams.len() as u8);
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Error::Format("bad magic".into()));
            }
            return Err(Error::corrupt(format!("container header truncated at {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported container version {}", bytes[4])));
        }
        let model = ModelKind::from_id(bytes[5])?;
        let quality = bytes[6];
        let metric = Metric::from_id(bytes[7])?;
        let orig_h = u16::from_le_bytes([bytes[8], bytes[9]]);
        let orig_w = u16::from_le_bytes([bytes[10], bytes[11]]);
        let count = bytes[12] as usize;
        let mut pos = HEADER_LEN;
        let mut streams = Vec::with_capacity(count);
        for i in 0..count {
            let len_bytes = bytes
                .get(pos..pos + 4)
                .ok_or_else(|| Error::corrupt(format!("stream {i} length truncated")))?;
            let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
            pos += 4;
            let payload = bytes
                .get(pos..pos + len)
                .ok_or_else(|| Error::corrupt(format!("stream {i} payload truncated")))?;
            streams.push(payload.to_vec());
            pos += len;
        }
        Ok(BitstreamContainer {
            version: VERSION,
            model,
            quality,
            metric,
            orig_h,
            orig_w,
            streams,
        })
    }
}
