//! Splat-cloud files.
//!
//! `.ply` files use the 3DGS vertex layout, binary little-endian or ASCII:
//!
//! ```text
//! x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 f_rest_0 .. f_rest_{K-1} opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3
//! ```
//!
//! Normals are ignored. `f_rest` is channel-major (all R coefficients, then G, then B), `opacity`
//! is a logit, `scale_*` are natural logs and `rot_*` is a `(w, x, y, z)` quaternion. Base colour
//! is `0.5 + C0 * f_dc`. Plain point clouds load too: missing fields fall back to grey
//! (or `red`/`green`/`blue` bytes), scale 0.01, opacity logit 2 and the identity rotation.
//!
//! `.txt` files are the debug format: a `gvv-splats 1 <sh_degree>` line, then one splat per line
//! as `x y z qw qx qy qz log_sx log_sy log_sz opacity_logit r g b sh...`. `#` starts a comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::splat::{sh_coeff_count, GaussianFrame, GaussianSplat, MAX_SH_DEGREE};

/// Zeroth-order spherical-harmonic constant.
pub const SH_C0: f32 = 0.282_094_8;

const DEFAULT_LOG_SCALE: f32 = -4.605_170_2; // ln 0.01
const DEFAULT_OPACITY_LOGIT: f32 = 2.0;

fn file_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::SplatFile {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct PlyHeader {
    ascii: bool,
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn read_ply_header(path: &Path, r: &mut impl BufRead) -> Result<PlyHeader> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(file_err(path, "unexpected end of header"));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim() != "ply" {
        return Err(file_err(path, "missing `ply` magic"));
    }
    let mut ascii = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        next(&mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = Some(true),
            ["format", "binary_little_endian", _] => ascii = Some(false),
            ["format", other, _] => return Err(file_err(path, format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if count.is_some() && *name != "vertex" {
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(file_err(path, format!("element `{name}` before vertex data")));
                }
                in_vertex = true;
                count = Some(n.parse::<usize>().map_err(|_| file_err(path, "bad vertex count"))?);
            }
            ["property", "list", ..] if in_vertex => return Err(file_err(path, "list properties on vertices")),
            ["property", ty, name] if in_vertex => {
                let ty = Scalar::parse(ty).ok_or_else(|| file_err(path, format!("unknown type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            _ => return Err(file_err(path, format!("bad header line `{}`", line.trim()))),
        }
    }
    Ok(PlyHeader {
        ascii: ascii.ok_or_else(|| file_err(path, "missing format line"))?,
        count: count.ok_or_else(|| file_err(path, "missing vertex element"))?,
        props,
    })
}

struct FieldMap {
    pos: [usize; 3],
    dc: Option<[usize; 3]>,
    rgb: Option<[usize; 3]>,
    rest: Vec<usize>,
    opacity: Option<usize>,
    scale: Option<[usize; 3]>,
    rot: Option<[usize; 4]>,
    sh_degree: u32,
}

fn map_fields(path: &Path, props: &[(String, Scalar)]) -> Result<FieldMap> {
    let find = |n: &str| props.iter().position(|(p, _)| p == n);
    let all = |names: &[&str]| -> Option<Vec<usize>> { names.iter().map(|n| find(n)).collect() };
    let pos = all(&["x", "y", "z"]).ok_or_else(|| file_err(path, "missing x/y/z"))?;
    let mut rest = Vec::new();
    while let Some(i) = find(&format!("f_rest_{}", rest.len())) {
        rest.push(i);
    }
    let per_channel = rest.len() / 3;
    let sh_degree = (0..=MAX_SH_DEGREE)
        .find(|d| sh_coeff_count(*d) == rest.len())
        .ok_or_else(|| file_err(path, format!("{} f_rest fields is not a valid SH layout", rest.len())))?;
    debug_assert_eq!(per_channel * 3, rest.len());
    let arr3 = |v: Vec<usize>| [v[0], v[1], v[2]];
    Ok(FieldMap {
        pos: arr3(pos),
        dc: all(&["f_dc_0", "f_dc_1", "f_dc_2"]).map(arr3),
        rgb: all(&["red", "green", "blue"]).map(arr3),
        rest,
        opacity: find("opacity"),
        scale: all(&["scale_0", "scale_1", "scale_2"]).map(arr3),
        rot: all(&["rot_0", "rot_1", "rot_2", "rot_3"]).map(|v| [v[0], v[1], v[2], v[3]]),
        sh_degree,
    })
}

fn splat_from_record(m: &FieldMap, v: &[f64], rgb_scale: f64) -> GaussianSplat {
    let g = |i: usize| v[i] as f32;
    let color = match (m.dc, m.rgb) {
        (Some(dc), _) => dc.map(|i| 0.5 + SH_C0 * g(i)),
        (None, Some(rgb)) => rgb.map(|i| (v[i] / rgb_scale) as f32),
        _ => [0.5; 3],
    };
    GaussianSplat {
        position: m.pos.map(g),
        rotation: m.rot.map_or([1.0, 0.0, 0.0, 0.0], |r| r.map(g)),
        log_scale: m.scale.map_or([DEFAULT_LOG_SCALE; 3], |s| s.map(g)),
        opacity_logit: m.opacity.map_or(DEFAULT_OPACITY_LOGIT, g),
        color,
        sh: m.rest.iter().map(|i| g(*i)).collect(),
    }
}

pub fn read_ply(path: &Path, frame_index: usize) -> Result<GaussianFrame> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_ply_header(path, &mut r)?;
    let m = map_fields(path, &header.props)?;
    let rgb_scale = match m.rgb.map(|c| header.props[c[0]].1) {
        Some(Scalar::U8) => 255.0,
        Some(Scalar::U16) => 65535.0,
        _ => 1.0,
    };
    let nprops = header.props.len();
    let mut splats = Vec::with_capacity(header.count);
    let mut values = vec![0.0f64; nprops];
    if header.ascii {
        let mut line = String::new();
        for i in 0..header.count {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(file_err(path, format!("only {i} of {} vertices", header.count)));
            }
            let mut it = line.split_whitespace();
            for v in values.iter_mut() {
                *v = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| file_err(path, format!("bad vertex line {}", i + 1)))?;
            }
            splats.push(splat_from_record(&m, &values, rgb_scale));
        }
    } else {
        let stride: usize = header.props.iter().map(|(_, t)| t.size()).sum();
        let mut buf = vec![0u8; stride * header.count];
        r.read_exact(&mut buf)
            .map_err(|_| file_err(path, format!("truncated vertex data (want {} vertices)", header.count)))?;
        for rec in buf.chunks_exact(stride) {
            let mut off = 0;
            for (v, (_, t)) in values.iter_mut().zip(&header.props) {
                *v = t.read_le(&rec[off..]);
                off += t.size();
            }
            splats.push(splat_from_record(&m, &values, rgb_scale));
        }
    }
    debug_assert!(splats.iter().all(|s| s.sh.len() == sh_coeff_count(m.sh_degree)));
    GaussianFrame::new(frame_index, splats).map_err(|e| file_err(path, e.to_string()))
}

pub fn write_ply(path: &Path, frame: &GaussianFrame) -> Result<()> {
    let k = sh_coeff_count(frame.sh_degree as u32);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", frame.len())?;
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..k).map(|i| format!("f_rest_{i}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );
    for n in &names {
        writeln!(w, "property float {n}")?;
    }
    writeln!(w, "end_header")?;
    for s in frame.splats() {
        let mut rec: Vec<f32> = Vec::with_capacity(names.len());
        rec.extend_from_slice(&s.position);
        rec.extend_from_slice(&[0.0; 3]);
        rec.extend(s.color.iter().map(|c| (c - 0.5) / SH_C0));
        rec.extend_from_slice(&s.sh);
        rec.push(s.opacity_logit);
        rec.extend_from_slice(&s.log_scale);
        rec.extend_from_slice(&s.rotation);
        for v in rec {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_text(path: &Path, frame_index: usize) -> Result<GaussianFrame> {
    let r = BufReader::new(File::open(path)?);
    let mut degree = None;
    let mut splats = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some(d) = degree else {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["gvv-splats", "1", d] => {
                    degree = Some(d.parse::<u32>().map_err(|_| file_err(path, "bad SH degree"))?);
                    continue;
                }
                _ => return Err(file_err(path, "missing `gvv-splats 1 <sh_degree>` header")),
            }
        };
        let v: Vec<f32> = line
            .split_whitespace()
            .map(|s| s.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| file_err(path, format!("line {}: {e}", lineno + 1)))?;
        let k = sh_coeff_count(d);
        if v.len() != 14 + k {
            return Err(file_err(path, format!("line {}: expected {} numbers, got {}", lineno + 1, 14 + k, v.len())));
        }
        splats.push(GaussianSplat {
            position: [v[0], v[1], v[2]],
            rotation: [v[3], v[4], v[5], v[6]],
            log_scale: [v[7], v[8], v[9]],
            opacity_logit: v[10],
            color: [v[11], v[12], v[13]],
            sh: v[14..].to_vec(),
        });
    }
    if degree.is_none() {
        return Err(file_err(path, "empty file"));
    }
    GaussianFrame::new(frame_index, splats).map_err(|e| file_err(path, e.to_string()))
}

pub fn write_text(path: &Path, frame: &GaussianFrame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "gvv-splats 1 {}", frame.sh_degree)?;
    for s in frame.splats() {
        let vals = s
            .position
            .iter()
            .chain(&s.rotation)
            .chain(&s.log_scale)
            .chain([&s.opacity_logit])
            .chain(&s.color)
            .chain(&s.sh);
        let line: Vec<String> = vals.map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

fn is_splat_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("ply" | "txt"))
}

/// Reads a `.ply` or `.txt` splat file.
pub fn read_splats(path: &Path, frame_index: usize) -> Result<GaussianFrame> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path, frame_index),
        Some("txt") => read_text(path, frame_index),
        _ => Err(file_err(path, "expected a .ply or .txt file")),
    }
}

pub fn write_splats(path: &Path, frame: &GaussianFrame) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => write_ply(path, frame),
        Some("txt") => write_text(path, frame),
        _ => Err(file_err(path, "expected a .ply or .txt file")),
    }
}

/// Splat files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_splat_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(file_err(dir, "no .ply or .txt frames"));
    }
    Ok(files)
}

pub fn read_sequence(dir: &Path) -> Result<Vec<GaussianFrame>> {
    list_frames(dir)?
        .iter()
        .enumerate()
        .map(|(i, p)| read_splats(p, i))
        .collect()
}

/// Writes `frames` as `frame_00000.<ext>`, ... into `dir`.
pub fn write_sequence(dir: &Path, frames: &[GaussianFrame], ext: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_splats(&dir.join(format!("frame_{i:05}.{ext}")), f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_frame;

    fn close(a: &GaussianFrame, b: &GaussianFrame, tol: f32) {
        assert_eq!(a.len(), b.len());
        assert_eq!(a.sh_degree, b.sh_degree);
        for (x, y) in a.splats().iter().zip(b.splats()) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.rotation, y.rotation);
            assert_eq!(x.log_scale, y.log_scale);
            assert_eq!(x.opacity_logit, y.opacity_logit);
            assert_eq!(x.sh, y.sh);
            for k in 0..3 {
                assert!((x.color[k] - y.color[k]).abs() <= tol);
            }
        }
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for d in 0..=3 {
            let f = random_frame(57, d, d as u64);
            let p = dir.path().join(format!("f{d}.ply"));
            write_ply(&p, &f).unwrap();
            close(&read_splats(&p, 0).unwrap(), &f, 1e-6);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let f = random_frame(40, 2, 5);
        let p = dir.path().join("f.txt");
        write_text(&p, &f).unwrap();
        close(&read_splats(&p, 3).unwrap(), &f, 0.0);
        assert_eq!(read_splats(&p, 3).unwrap().frame_index, 3);
    }

    #[test]
    fn ascii_point_cloud_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pc.ply");
        std::fs::write(
            &p,
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\n\
             property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
             element face 0\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0 255 0 0\n1 2 3 0 51 255\n",
        )
        .unwrap();
        let f = read_splats(&p, 0).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.sh_degree, 0);
        assert_eq!(f.splats()[1].position, [1.0, 2.0, 3.0]);
        assert_eq!(f.splats()[1].color, [0.0, 0.2, 1.0]);
        assert_eq!(f.splats()[0].rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ply");
        std::fs::write(&p, "ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n").unwrap();
        assert!(read_splats(&p, 0).is_err());
        std::fs::write(
            &p,
            "ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        )
        .unwrap();
        assert!(matches!(read_splats(&p, 0), Err(Error::SplatFile { .. })));
        let t = dir.path().join("bad.txt");
        std::fs::write(&t, "gvv-splats 1 0\n1 2 3\n").unwrap();
        assert!(read_splats(&t, 0).is_err());
        assert!(read_splats(&dir.path().join("x.obj"), 0).is_err());
    }

    #[test]
    fn sequence_listing_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3).map(|i| random_frame(10, 0, i)).collect();
        write_sequence(dir.path(), &frames, "ply").unwrap();
        std::fs::write(dir.path().join("notes.md"), "x").unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].frame_index, 2);
        assert_eq!(back[1].splats()[0].position, frames[1].splats()[0].position);
        assert!(list_frames(&dir.path().join("missing")).is_err());
    }
}
