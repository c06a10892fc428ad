//! Deterministic lossless plane-sequence codec.
//!
//! The first frame is stored with a left-neighbour (PNG "sub") predictor,
//! every later frame as the wrapping byte difference to its predecessor.
//! The residual bytes are concatenated and zlib-compressed.

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::{PlaneCodec, QpSetting};
use crate::error::{Error, Result};

pub const LOSSLESS_ID: &str = "lossless-internal";

#[derive(Debug, Clone, Copy, Default)]
pub struct LosslessCodec;

fn predict_frame(width: usize, frame: &[u8], out: &mut Vec<u8>) {
    for row in frame.chunks(width) {
        let mut left = 0u8;
        for &v in row {
            out.push(v.wrapping_sub(left));
            left = v;
        }
    }
}

fn unpredict_frame(width: usize, residual: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(residual.len());
    for row in residual.chunks(width) {
        let mut left = 0u8;
        for &r in row {
            left = r.wrapping_add(left);
            frame.push(left);
        }
    }
    frame
}

impl PlaneCodec for LosslessCodec {
    fn id(&self) -> &'static str {
        LOSSLESS_ID
    }

    fn encode_stream(
        &self,
        width: usize,
        height: usize,
        frames: &[Vec<u8>],
        _qp: QpSetting,
    ) -> Result<Vec<u8>> {
        let pixels = width * height;
        let mut residual = Vec::with_capacity(pixels * frames.len());
        for (t, frame) in frames.iter().enumerate() {
            if frame.len() != pixels {
                return Err(Error::PlaneShape(format!(
                    "frame {t} has {} bytes, expected {pixels}",
                    frame.len()
                )));
            }
            if t == 0 {
                predict_frame(width, frame, &mut residual);
            } else {
                let prev = &frames[t - 1];
                residual.extend(frame.iter().zip(prev).map(|(a, b)| a.wrapping_sub(*b)));
            }
        }
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&residual)?;
        Ok(enc.finish()?)
    }

    fn decode_stream(
        &self,
        width: usize,
        height: usize,
        num_frames: usize,
        data: &[u8],
    ) -> Result<Vec<Vec<u8>>> {
        let pixels = width * height;
        let mut residual = Vec::with_capacity(pixels * num_frames);
        ZlibDecoder::new(data)
            .read_to_end(&mut residual)
            .map_err(|e| Error::Bitstream(format!("inflate failed: {e}")))?;
        if residual.len() != pixels * num_frames {
            return Err(Error::Bitstream(format!(
                "expected {} residual bytes, got {}",
                pixels * num_frames,
                residual.len()
            )));
        }
        let mut frames: Vec<Vec<u8>> = Vec::with_capacity(num_frames);
        for (t, chunk) in residual.chunks(pixels.max(1)).take(num_frames).enumerate() {
            let frame = if t == 0 {
                unpredict_frame(width, chunk)
            } else {
                let prev = &frames[t - 1];
                chunk.iter().zip(prev).map(|(r, p)| r.wrapping_add(*p)).collect()
            };
            frames.push(frame);
        }
        Ok(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_planes_compress_well() {
        let frames = vec![vec![77u8; 64 * 64]; 20];
        let data = LosslessCodec.encode_stream(64, 64, &frames, QpSetting::Lossless).unwrap();
        let raw = 64 * 64 * 20;
        assert!(data.len() * 20 < raw, "{} of {raw}", data.len());
        assert_eq!(LosslessCodec.decode_stream(64, 64, 20, &data).unwrap(), frames);
    }

    #[test]
    fn truncated_stream_fails() {
        let frames = vec![(0..64).map(|v| v as u8).collect::<Vec<_>>(); 3];
        let data = LosslessCodec.encode_stream(8, 8, &frames, QpSetting::Lossless).unwrap();
        assert!(LosslessCodec.decode_stream(8, 8, 3, &data[..data.len() / 2]).is_err());
        assert!(LosslessCodec.decode_stream(8, 8, 4, &data).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact(frames in prop::collection::vec(prop::collection::vec(any::<u8>(), 64), 1..6)) {
            let data = LosslessCodec.encode_stream(8, 8, &frames, QpSetting::Lossless).unwrap();
            let back = LosslessCodec.decode_stream(8, 8, frames.len(), &data).unwrap();
            prop_assert_eq!(back, frames);
        }
    }
}
