use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SabrError};
use crate::tensor::Tensor;

pub const MOTION_MAGIC: &[u8; 8] = b"SABRMOT1";
pub const MOTION_VERSION: u32 = 1;
pub const MOTION_FILE: &str = "motion.sabr";

/// Metadata stored ahead of a sampled motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionHeader {
    pub version: u32,
    pub record: usize,
    pub frames: usize,
    pub dim: usize,
    pub sample_steps: usize,
    pub seed: u64,
    pub checkpoint_step: u64,
    pub manifest_hash: String,
    pub context_fraction: Option<f64>,
    /// Frames whose rotations could not be repaired.
    pub flagged_frames: Vec<usize>,
    pub payload_sha256: String,
}

/// Decoded (raw, repaired) motion [F×D] plus its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFile {
    pub header: MotionHeader,
    pub motion: Tensor<f64>,
}

impl MotionFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload: Vec<u8> = self
            .motion
            .data()
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        let header = MotionHeader {
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            ..self.header.clone()
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend(MOTION_MAGIC);
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json);
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MOTION_MAGIC {
            return Err(SabrError::format(path, "missing SABRMOT1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header: MotionHeader = serde_json::from_slice(
            bytes
                .get(12..12 + hlen)
                .ok_or_else(|| SabrError::format(path, "truncated header"))?,
        )
        .map_err(|e| SabrError::format(path, format!("bad header: {e}")))?;
        if header.version != MOTION_VERSION {
            return Err(SabrError::format(
                path,
                format!("version {} (reader is {MOTION_VERSION})", header.version),
            ));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != header.frames * header.dim * 4 {
            return Err(SabrError::Integrity {
                record: path.display().to_string(),
                reason: "payload length".into(),
            });
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(SabrError::Integrity {
                record: path.display().to_string(),
                reason: "payload checksum".into(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let motion = Tensor::new(&[header.frames, header.dim], data)?;
        Ok(MotionFile { header, motion })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| SabrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SabrError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
