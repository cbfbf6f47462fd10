//! Generic lossless byte compressors used as baselines.

use std::io::Write;

use flate2::write::ZlibEncoder;
use flate2::Compression;

pub trait ByteCompressor {
    fn name(&self) -> &str;
    fn compress(&self, data: &[u8]) -> Vec<u8>;
}

/// zlib container around deflate at maximum compression.
#[derive(Debug, Default, Clone, Copy)]
pub struct Deflate;

impl ByteCompressor for Deflate {
    fn name(&self) -> &str {
        "zlib"
    }

    fn compress(&self, data: &[u8]) -> Vec<u8> {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
        enc.write_all(data).expect("in-memory write");
        enc.finish().expect("in-memory write")
    }
}
