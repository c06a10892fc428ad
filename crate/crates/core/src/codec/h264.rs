//! H.264 backend driving an external `ffmpeg` (libx264) process.
//!
//! Encoding feeds raw 8-bit grayscale frames on stdin and reads an Annex-B
//! elementary stream from stdout:
//!
//! ```text
//! ffmpeg -f rawvideo -pix_fmt gray -s WxH -r 30 -i pipe:0
//!        -c:v libx264 -preset medium -qp QP -g N -keyint_min N -sc_threshold 0 -bf 0
//!        -pix_fmt gray -f h264 pipe:1
//! ```
//!
//! One stream covers exactly one frame group, so it starts with an IDR frame
//! and references nothing outside the group. The binary is taken from the
//! `GVV_FFMPEG` environment variable, falling back to `ffmpeg` on `PATH`.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread;

use super::{PlaneCodec, QpSetting};
use crate::error::{Error, Result};

pub const H264_ID: &str = "h264";
pub const FFMPEG_ENV: &str = "GVV_FFMPEG";

#[derive(Debug, Clone)]
pub struct H264External {
    ffmpeg: PathBuf,
    preset: String,
}

impl H264External {
    pub fn with_binary(ffmpeg: impl Into<PathBuf>) -> Result<Self> {
        let ffmpeg = ffmpeg.into();
        let ok = Command::new(&ffmpeg)
            .arg("-version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        if !ok {
            return Err(Error::BackendUnavailable(format!(
                "cannot run {}",
                ffmpeg.display()
            )));
        }
        Ok(H264External {
            ffmpeg,
            preset: "medium".into(),
        })
    }

    /// Locates ffmpeg via `GVV_FFMPEG` or `PATH`. The probe runs once per process.
    pub fn discover() -> Result<Self> {
        static FOUND: OnceLock<Option<H264External>> = OnceLock::new();
        FOUND
            .get_or_init(|| {
                let bin = std::env::var_os(FFMPEG_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("ffmpeg"));
                H264External::with_binary(bin).ok()
            })
            .clone()
            .ok_or_else(|| {
                Error::BackendUnavailable(format!(
                    "ffmpeg not found (set {FFMPEG_ENV} or add it to PATH)"
                ))
            })
    }

    pub fn is_available() -> bool {
        Self::discover().is_ok()
    }

    fn run(&self, args: &[String], input: Vec<u8>) -> Result<Vec<u8>> {
        let mut child = Command::new(&self.ffmpeg)
            .args(["-hide_banner", "-loglevel", "error", "-nostdin"])
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::EncoderFailed(format!("spawn {}: {e}", self.ffmpeg.display())))?;
        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            // a closed pipe surfaces through the exit status below
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let mut out = Vec::new();
        stdout.read_to_end(&mut out)?;
        let _ = writer.join();
        let diagnostics = err_reader.join().unwrap_or_default();
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::EncoderFailed(format!(
                "ffmpeg exited with {status}: {}",
                diagnostics.trim()
            )));
        }
        Ok(out)
    }
}

impl PlaneCodec for H264External {
    fn id(&self) -> &'static str {
        H264_ID
    }

    fn encode_stream(
        &self,
        width: usize,
        height: usize,
        frames: &[Vec<u8>],
        qp: QpSetting,
    ) -> Result<Vec<u8>> {
        let n = frames.len().max(1).to_string();
        let qp = match qp {
            QpSetting::Lossless => 0,
            QpSetting::Qp(q) => q,
        };
        let args: Vec<String> = [
            "-f", "rawvideo", "-pix_fmt", "gray", "-s", &format!("{width}x{height}"), "-r", "30",
            "-i", "pipe:0", "-c:v", "libx264", "-preset", &self.preset, "-qp", &qp.to_string(),
            "-g", &n, "-keyint_min", &n, "-sc_threshold", "0", "-bf", "0", "-pix_fmt", "gray",
            "-f", "h264", "pipe:1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let input = frames.concat();
        if input.len() != width * height * frames.len() {
            return Err(Error::PlaneShape("frame size does not match dimensions".into()));
        }
        self.run(&args, input)
    }

    fn decode_stream(
        &self,
        width: usize,
        height: usize,
        num_frames: usize,
        data: &[u8],
    ) -> Result<Vec<Vec<u8>>> {
        let args: Vec<String> = [
            "-f", "h264", "-i", "pipe:0", "-f", "rawvideo", "-pix_fmt", "gray", "pipe:1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let raw = self
            .run(&args, data.to_vec())
            .map_err(|e| Error::Bitstream(e.to_string()))?;
        let pixels = width * height;
        if raw.len() != pixels * num_frames {
            return Err(Error::Bitstream(format!(
                "decoded {} bytes, expected {} ({num_frames} frames of {width}x{height})",
                raw.len(),
                pixels * num_frames
            )));
        }
        Ok(raw.chunks(pixels).map(<[u8]>::to_vec).collect())
    }
}
