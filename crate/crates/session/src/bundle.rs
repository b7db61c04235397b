//! Session bundles.
//!
//! Layout: `SMBN`, u32 version, u64 header length, JSON header, memory
//! cells (3 x i64 key, 3 x f64 position sum, 3 x f64 color sum, u64 count,
//! all little-endian, in key order), then per archive frame its RGB as f32
//! and, when the header says so, its mask as one byte per pixel. A SHA-256
//! of everything before it closes the file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scenemem_core::memory::{Cell, VoxelKey};
use scenemem_core::{CameraView, Intrinsics, Mask, Pose, RgbImage, SpatialMemory};

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::state::{ArchiveFrame, SceneSource, SessionState};

pub const MAGIC: &[u8; 4] = b"SMBN";
pub const VERSION: u32 = 1;
const CELL_BYTES: usize = 3 * 8 + 3 * 8 + 3 * 8 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FrameMeta {
    clip: usize,
    time: f64,
    pose: Pose,
    intrinsics: Intrinsics,
    has_mask: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: SessionConfig,
    scene: Option<SceneSource>,
    seed: u64,
    clip_index: usize,
    cube_side: f64,
    cells: usize,
    frames: Vec<FrameMeta>,
}

fn body(state: &SessionState) -> Vec<u8> {
    let header = Header {
        version: VERSION,
        config: state.config.clone(),
        scene: state.scene.clone(),
        seed: state.seed,
        clip_index: state.clip_index,
        cube_side: state.memory.cube_side(),
        cells: state.memory.len(),
        frames: state
            .archive
            .iter()
            .map(|f| FrameMeta {
                clip: f.clip,
                time: f.time,
                pose: f.view.pose,
                intrinsics: f.view.intrinsics,
                has_mask: f.mask.is_some(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (k, c) in state.memory.cells() {
        for v in k.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in c.sum_position.iter().chain(&c.sum_color) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.count.to_le_bytes());
    }
    for f in &state.archive {
        for v in f.rgb.to_interleaved() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(m) = &f.mask {
            out.extend(m.data().iter().map(|&b| b as u8));
        }
    }
    out
}

pub fn export(state: &SessionState) -> Vec<u8> {
    let mut out = body(state);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Hex SHA-256 of the bundle body; equal states give equal checksums.
pub fn checksum(state: &SessionState) -> String {
    Sha256::digest(body(state)).iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::CorruptBundle("truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn import(bytes: &[u8]) -> Result<SessionState> {
    if bytes.len() < 16 + 32 {
        return Err(Error::CorruptBundle("truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptBundle("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BundleVersion(version));
    }
    let (data, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(data).as_slice() != digest {
        return Err(Error::CorruptBundle("checksum mismatch".into()));
    }
    let mut r = Reader { data, pos: 8 };
    let hlen = r.u64()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::CorruptBundle(format!("header: {e}")))?;
    if header.version != version {
        return Err(Error::CorruptBundle("header version disagrees with preamble".into()));
    }
    let need = header
        .cells
        .checked_mul(CELL_BYTES)
        .ok_or_else(|| Error::CorruptBundle("cell count overflows".into()))?;
    if need > data.len() {
        return Err(Error::CorruptBundle("truncated".into()));
    }
    let mut cells = Vec::with_capacity(header.cells);
    for _ in 0..header.cells {
        let key = VoxelKey([r.i64()?, r.i64()?, r.i64()?]);
        let sum_position = [r.f64()?, r.f64()?, r.f64()?];
        let sum_color = [r.f64()?, r.f64()?, r.f64()?];
        let count = r.u64()?;
        cells.push((
            key,
            Cell {
                sum_position,
                sum_color,
                count,
            },
        ));
    }
    if cells.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::CorruptBundle("cells out of order".into()));
    }
    let memory = SpatialMemory::from_cells(header.cube_side, cells).map_err(|e| Error::CorruptBundle(e.to_string()))?;
    if header.frames.is_empty() {
        return Err(Error::CorruptBundle("empty archive".into()));
    }
    let mut archive = Vec::with_capacity(header.frames.len());
    for m in header.frames {
        let (w, h) = (m.intrinsics.width, m.intrinsics.height);
        let n = w
            .checked_mul(h)
            .filter(|n| n.checked_mul(12).is_some_and(|b| b <= data.len()))
            .ok_or_else(|| Error::CorruptBundle("frame size".into()))?;
        let raw = r.take(n * 12)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rgb = RgbImage::from_interleaved(w, h, &values).map_err(|e| Error::CorruptBundle(e.to_string()))?;
        let mask = if m.has_mask {
            let raw = r.take(n)?;
            if raw.iter().any(|&b| b > 1) {
                return Err(Error::CorruptBundle("mask byte out of range".into()));
            }
            Some(
                Mask::from_vec(w, h, raw.iter().map(|&b| b == 1).collect())
                    .map_err(|e| Error::CorruptBundle(e.to_string()))?,
            )
        } else {
            None
        };
        archive.push(ArchiveFrame {
            clip: m.clip,
            time: m.time,
            view: CameraView {
                pose: m.pose,
                intrinsics: m.intrinsics,
            },
            rgb,
            mask,
        });
    }
    if r.pos != data.len() {
        return Err(Error::CorruptBundle("trailing bytes".into()));
    }
    Ok(SessionState {
        config: header.config,
        scene: header.scene,
        seed: header.seed,
        clip_index: header.clip_index,
        memory,
        archive,
    })
}

pub fn save(state: &SessionState, path: impl AsRef<std::path::Path>) -> Result<()> {
    Ok(std::fs::write(path, export(state))?)
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<SessionState> {
    import(&std::fs::read(path)?)
}
