//! Raw `.cfvr` clip container and PPM (P6) frame sequences.
//!
//! `.cfvr` layout: `b"CFVR"`, then little-endian `u32` width, height and frame
//! count, then `frames × height × width × 3` interleaved RGB bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{Clip, GeometryError};

pub const CFVR_MAGIC: &[u8; 4] = b"CFVR";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected CFVR")]
    BadMagic([u8; 4]),
    #[error("truncated clip payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{path}: {reason}")]
    Ppm { path: PathBuf, reason: String },
    #[error("no PPM frames found in {0}")]
    NoFrames(PathBuf),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn write_cfvr<W: Write>(mut w: W, clip: &Clip) -> Result<(), ContainerError> {
    w.write_all(CFVR_MAGIC)?;
    for v in [clip.width(), clip.height(), clip.frames()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(clip.data())?;
    Ok(())
}

pub fn read_cfvr<R: Read>(mut r: R) -> Result<Clip, ContainerError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CFVR_MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [width, height, frames] = dims;
    let expected = frames * height * width * 3;
    let mut data = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut data)?;
    if data.len() != expected {
        return Err(ContainerError::Truncated {
            expected,
            found: data.len(),
        });
    }
    Ok(Clip::new(frames, height, width, data)?)
}

pub fn save_cfvr(path: impl AsRef<Path>, clip: &Clip) -> Result<(), ContainerError> {
    let mut buf = Vec::with_capacity(16 + clip.data().len());
    write_cfvr(&mut buf, clip)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_cfvr(path: impl AsRef<Path>) -> Result<Clip, ContainerError> {
    let bytes = fs::read(path)?;
    read_cfvr(bytes.as_slice())
}

/// Encodes one frame as binary PPM.
pub fn encode_ppm(height: usize, width: usize, frame: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(frame);
    out
}

/// Parses a binary PPM with maxval 255, returning `(height, width, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, only 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(format!("raster truncated: need {need} bytes"));
    }
    Ok((height, width, bytes[pos..pos + need].to_vec()))
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, … into `dir`.
pub fn export_ppm_sequence(dir: impl AsRef<Path>, clip: &Clip) -> Result<Vec<PathBuf>, ContainerError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(clip.frames());
    for (i, frame) in clip.frames_iter().enumerate() {
        let p = dir.join(format!("frame_{i:05}.ppm"));
        fs::write(&p, encode_ppm(clip.height(), clip.width(), frame))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads every `*.ppm` in `dir` in lexicographic file-name order.
pub fn import_ppm_sequence(dir: impl AsRef<Path>) -> Result<Clip, ContainerError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ContainerError::NoFrames(dir.to_path_buf()));
    }
    let mut dims = None;
    let mut data = Vec::new();
    for p in &paths {
        let bytes = fs::read(p)?;
        let (h, w, rgb) = decode_ppm(&bytes).map_err(|reason| ContainerError::Ppm {
            path: p.clone(),
            reason,
        })?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(ContainerError::Ppm {
                    path: p.clone(),
                    reason: format!("frame is {h}x{w}, sequence is {}x{}", d.0, d.1),
                })
            }
            _ => {}
        }
        data.extend_from_slice(&rgb);
    }
    let (h, w) = dims.unwrap();
    Ok(Clip::new(paths.len(), h, w, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Clip {
        let data = (0..2 * 3 * 5 * 3).map(|i| (i * 7 % 256) as u8).collect();
        Clip::new(2, 3, 5, data).unwrap()
    }

    #[test]
    fn cfvr_header_layout() {
        let mut buf = Vec::new();
        write_cfvr(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"CFVR");
        assert_eq!(&buf[4..8], &5u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 90);
        assert_eq!(read_cfvr(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn cfvr_rejects_garbage() {
        assert!(matches!(read_cfvr(&b"RIFF\0\0\0\0"[..]), Err(ContainerError::BadMagic(_))));
        let mut buf = Vec::new();
        write_cfvr(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_cfvr(buf.as_slice()), Err(ContainerError::Truncated { .. })));
    }

    #[test]
    fn ppm_sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = sample();
        let paths = export_ppm_sequence(dir.path(), &clip).unwrap();
        assert_eq!(paths[1].file_name().unwrap(), "frame_00001.ppm");
        assert_eq!(import_ppm_sequence(dir.path()).unwrap(), clip);
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_ppm(&bytes).unwrap(), (1, 1, vec![1, 2, 3]));
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
    }
}
