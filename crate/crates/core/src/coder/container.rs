//! Wire format.
//!
//! ```text
//! header : "MSC1" | u16 version | u8 depth | f64 side | 3 x f64 center | u64 model hash | u32 frames
//! frame  : u32 section count n | n x u32 section length | section payloads
//! ```
//!
//! Sections, in order: occupancy (range coded), leaf offsets (packed bits, raw), intensity
//! (range coded, or one raw byte per point), meta (u64 timestamp, u8 pose flag [+ 12 x f64],
//! u64 original point count). Readers skip sections past the ones they know.

use crate::bytes::{PutLe, Reader};
use crate::error::{Error, Result};
use crate::octree::check_depth;
use crate::pointcloud::{RegionOfInterest, RigidTransform};

const MAGIC: &[u8; 4] = b"MSC1";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Occupancy = 0,
    LeafOffsets = 1,
    Intensity = 2,
    Meta = 3,
}

impl SectionKind {
    pub const ALL: [SectionKind; 4] = [
        SectionKind::Occupancy,
        SectionKind::LeafOffsets,
        SectionKind::Intensity,
        SectionKind::Meta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionKind::Occupancy => "occupancy",
            SectionKind::LeafOffsets => "leaf_offsets",
            SectionKind::Intensity => "intensity",
            SectionKind::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub timestamp: u64,
    pub pose: Option<RigidTransform>,
    /// Points in the sweep before quantization (bitrate denominator).
    pub point_count: u64,
}

impl FrameMeta {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u64(self.timestamp);
        match &self.pose {
            Some(p) => {
                out.put_u8(1);
                for v in p.to_array() {
                    out.put_f64(v);
                }
            }
            None => out.put_u8(0),
        }
        out.put_u64(self.point_count);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let timestamp = r.u64()?;
        let pose = match r.u8()? {
            0 => None,
            1 => {
                let mut a = [0.0; 12];
                for v in &mut a {
                    *v = r.f64()?;
                }
                Some(RigidTransform::from_array(&a))
            }
            f => return Err(Error::corruption(8, format!("bad pose flag {f}"))),
        };
        let point_count = r.u64()?;
        if r.remaining() != 0 {
            return Err(Error::corruption(r.pos(), "trailing bytes in meta section"));
        }
        Ok(FrameMeta {
            timestamp,
            pose,
            point_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    /// Payloads indexed by [`SectionKind`]; extra entries are unknown sections.
    pub sections: Vec<Vec<u8>>,
}

impl Frame {
    pub fn section(&self, kind: SectionKind) -> &[u8] {
        self.sections.get(kind as usize).map_or(&[], Vec::as_slice)
    }

    /// Section payload bytes plus the framing (count and lengths).
    pub fn encoded_len(&self) -> usize {
        4 + 4 * self.sections.len() + self.sections.iter().map(Vec::len).sum::<usize>()
    }

    pub fn meta(&self) -> Result<FrameMeta> {
        if self.sections.len() <= SectionKind::Meta as usize {
            return Err(Error::corruption(0, "frame has no meta section"));
        }
        FrameMeta::from_bytes(self.section(SectionKind::Meta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub depth: u32,
    pub roi: RegionOfInterest,
    pub model_hash: u64,
    pub frames: Vec<Frame>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u16(CONTAINER_VERSION);
        out.put_u8(self.depth as u8);
        out.put_f64(self.roi.side);
        for c in self.roi.center {
            out.put_f64(c);
        }
        out.put_u64(self.model_hash);
        out.put_u32(self.frames.len() as u32);
        for f in &self.frames {
            out.put_u32(f.sections.len() as u32);
            for s in &f.sections {
                out.put_u32(s.len() as u32);
            }
            for s in &f.sections {
                out.extend_from_slice(s);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let at = r.pos();
        let version = r.u16()?;
        if version != CONTAINER_VERSION {
            return Err(Error::corruption(
                at,
                format!("unsupported container version {version}"),
            ));
        }
        let at = r.pos();
        let depth = u32::from(r.u8()?);
        check_depth(depth).map_err(|e| Error::corruption(at, e.to_string()))?;
        let at = r.pos();
        let side = r.f64()?;
        let center = [r.f64()?, r.f64()?, r.f64()?];
        let roi = RegionOfInterest::new(side, center)
            .map_err(|e| Error::corruption(at, e.to_string()))?;
        let model_hash = r.u64()?;
        let n = r.u32()? as usize;
        let mut frames = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let count = r.u32()? as usize;
            // Each length needs 4 bytes; reject counts the buffer cannot hold before allocating.
            if count > r.remaining() / 4 {
                return Err(Error::corruption(
                    r.pos(),
                    format!("frame declares {count} sections"),
                ));
            }
            let lens: Vec<usize> = (0..count)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<_>>()?;
            let sections = lens
                .iter()
                .map(|&l| r.take(l).map(<[u8]>::to_vec))
                .collect::<Result<_>>()?;
            frames.push(Frame { sections });
        }
        if r.remaining() != 0 {
            return Err(Error::corruption(
                r.pos(),
                "trailing bytes after last frame",
            ));
        }
        Ok(Container {
            depth,
            roi,
            model_hash,
            frames,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
