//! Toy intra-frame codec for desk-scale compression experiments, plus an
//! adapter that round-trips clips through an external encoder/decoder.
//!
//! Each RGB channel is coded independently (no colour conversion, no chroma
//! subsampling) in 8×8 blocks: level shift by −128, orthonormal 2-D DCT-II,
//! division by the JPEG luminance table scaled for the requested quality,
//! round-half-to-even, zigzag scan, and run-length symbols. DC values are
//! coded as differences to the previous block of the same channel and frame.
//!
//! The coded size is the order-0 Shannon entropy of the whole symbol stream
//! plus the fixed header, so bit rates are deterministic without an actual
//! entropy coder.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Clip, GeometryError, CHANNELS};

pub const BLOCK: usize = 8;
pub const CFCS_MAGIC: &[u8; 4] = b"CFCS";
pub const CFCS_VERSION: u32 = 1;
/// Magic, version, width, height, frames, quality.
pub const HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 4 + 1;

/// JPEG Annex K luminance quantization table, row-major.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Zigzag scan: `ZIGZAG[i]` is the row-major index of the `i`-th coefficient.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61,
    54, 47, 55, 62, 63,
];

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame {height}x{width} is not a multiple of 8")]
    Unaligned { height: usize, width: usize },
    #[error("quality {0} outside 1..=100")]
    Quality(u32),
    #[error("malformed stream at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("external codec unavailable: {0}")]
    ExternalUnavailable(String),
    #[error("external codec failed: {0}")]
    ExternalFailed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Quantizer step sizes for `quality` in `1..=100`, row-major.
pub fn quant_table(quality: u32) -> Result<[u16; 64], CodecError> {
    if !(1..=100).contains(&quality) {
        return Err(CodecError::Quality(quality));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut t = [0u16; 64];
    for (o, &b) in t.iter_mut().zip(LUMA_BASE.iter()) {
        *o = ((b as u32 * scale + 50) / 100).max(1) as u16;
    }
    Ok(t)
}

fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / (2 * BLOCK) as f64).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D DCT-II of a row-major 8×8 block.
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|x| m[u][x] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v * BLOCK + u] = (0..BLOCK).map(|y| m[v][y] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Inverse of [`fdct`].
pub fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for v in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[v * BLOCK + x] = (0..BLOCK).map(|u| m[u][x] * coef[v * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|v| m[v][y] * tmp[v * BLOCK + x]).sum();
        }
    }
    out
}

/// Quantized coefficients (row-major) of one 8×8 block of samples.
pub fn quantize_block(samples: &[u8; 64], table: &[u16; 64]) -> [i32; 64] {
    let mut shifted = [0.0; 64];
    for (s, &p) in shifted.iter_mut().zip(samples) {
        *s = p as f64 - 128.0;
    }
    let coef = fdct(&shifted);
    let mut q = [0i32; 64];
    for i in 0..64 {
        q[i] = (coef[i] / table[i] as f64).round_ties_even() as i32;
    }
    q
}

pub fn dequantize_block(q: &[i32; 64], table: &[u16; 64]) -> [u8; 64] {
    let mut coef = [0.0; 64];
    for i in 0..64 {
        coef[i] = q[i] as f64 * table[i] as f64;
    }
    let px = idct(&coef);
    let mut out = [0u8; 64];
    for (o, v) in out.iter_mut().zip(px.iter()) {
        *o = (v + 128.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Run-length code of one block: DC difference and `(zero run, level)` AC
/// pairs in zigzag order. An end-of-block is implied after the last pair when
/// trailing coefficients are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCode {
    pub dc_diff: i32,
    pub ac: Vec<(u8, i32)>,
}

impl BlockCode {
    fn from_quantized(q: &[i32; 64], prev_dc: i32) -> BlockCode {
        let mut ac = Vec::new();
        let mut run = 0u8;
        for &idx in &ZIGZAG[1..] {
            let v = q[idx];
            if v == 0 {
                run += 1;
            } else {
                ac.push((run, v));
                run = 0;
            }
        }
        BlockCode {
            dc_diff: q[0] - prev_dc,
            ac,
        }
    }

    fn to_quantized(&self, prev_dc: i32) -> Result<[i32; 64], String> {
        let mut q = [0i32; 64];
        q[0] = prev_dc + self.dc_diff;
        let mut k = 1usize;
        for &(run, level) in &self.ac {
            k += run as usize;
            if k >= 64 {
                return Err("AC run overflows the block".into());
            }
            q[ZIGZAG[k]] = level;
            k += 1;
        }
        Ok(q)
    }

    /// True when the last AC coefficient is zero, so an EOB symbol is emitted.
    fn has_eob(&self) -> bool {
        let used: usize = self.ac.iter().map(|(r, _)| *r as usize + 1).sum();
        used < 63
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Symbol {
    Dc(i32),
    Ac(u8, i32),
    Eob,
}

/// Coded clip: header plus block codes in frame → channel → block-raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedStream {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub quality: u32,
    pub blocks: Vec<BlockCode>,
}

impl CodedStream {
    fn symbol_counts(&self) -> BTreeMap<Symbol, u64> {
        let mut counts = BTreeMap::new();
        for b in &self.blocks {
            *counts.entry(Symbol::Dc(b.dc_diff)).or_insert(0) += 1;
            for &(r, l) in &b.ac {
                *counts.entry(Symbol::Ac(r, l)).or_insert(0) += 1;
            }
            if b.has_eob() {
                *counts.entry(Symbol::Eob).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Order-0 entropy of the symbol stream in bits.
    pub fn entropy_bits(&self) -> f64 {
        let counts = self.symbol_counts();
        let total: u64 = counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let total = total as f64;
        counts
            .values()
            .map(|&c| {
                let c = c as f64;
                -c * (c / total).log2()
            })
            .sum()
    }

    /// Entropy of the symbols plus the fixed header.
    pub fn size_bits(&self) -> f64 {
        self.entropy_bits() + (HEADER_BYTES * 8) as f64
    }

    pub fn pixels(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn bpp(&self) -> f64 {
        self.size_bits() / self.pixels() as f64
    }

    /// Serializes to the `.cfcs` layout: header, then per block `i16` DC
    /// difference, `u8` pair count and `(u8 run, i16 level)` pairs, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.blocks.len() * 4);
        out.extend_from_slice(CFCS_MAGIC);
        out.extend_from_slice(&CFCS_VERSION.to_le_bytes());
        for v in [self.width, self.height, self.frames] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(self.quality as u8);
        for b in &self.blocks {
            out.extend_from_slice(&(b.dc_diff as i16).to_le_bytes());
            out.push(b.ac.len() as u8);
            for &(r, l) in &b.ac {
                out.push(r);
                out.extend_from_slice(&(l as i16).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CodedStream, CodecError> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CFCS_MAGIC {
            return Err(r.error(0, "bad magic, expected CFCS"));
        }
        let version = r.u32()?;
        if version != CFCS_VERSION {
            return Err(r.error(4, &format!("unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let quality = r.u8()? as u32;
        if !(1..=100).contains(&quality) {
            return Err(r.error(20, &format!("quality {quality} outside 1..=100")));
        }
        if width % BLOCK != 0 || height % BLOCK != 0 || width == 0 || height == 0 || frames == 0 {
            return Err(r.error(8, &format!("bad dimensions {frames}x{height}x{width}")));
        }
        let n = frames * CHANNELS * (height / BLOCK) * (width / BLOCK);
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            let start = r.pos;
            let dc_diff = r.i16()? as i32;
            let pairs = r.u8()? as usize;
            if pairs > 63 {
                return Err(r.error(start, &format!("{pairs} AC pairs in one block")));
            }
            let mut ac = Vec::with_capacity(pairs);
            let mut used = 0usize;
            for _ in 0..pairs {
                let run = r.u8()?;
                let level = r.i16()? as i32;
                used += run as usize + 1;
                if used > 63 || level == 0 {
                    return Err(r.error(start, "invalid run-length pair"));
                }
                ac.push((run, level));
            }
            blocks.push(BlockCode { dc_diff, ac });
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos, "trailing bytes after last block"));
        }
        Ok(CodedStream {
            width,
            height,
            frames,
            quality,
            blocks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CodedStream, CodecError> {
        CodedStream::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn error(&self, offset: usize, reason: &str) -> CodecError {
        CodecError::Malformed {
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.error(self.pos, "unexpected end of stream"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16, CodecError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

fn read_block(frame: &[u8], width: usize, by: usize, bx: usize, c: usize) -> [u8; 64] {
    let mut b = [0u8; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            b[y * BLOCK + x] = frame[((by * BLOCK + y) * width + bx * BLOCK + x) * CHANNELS + c];
        }
    }
    b
}

pub fn encode_intra(clip: &Clip, quality: u32) -> Result<CodedStream, CodecError> {
    let (frames, height, width) = clip.shape();
    if height % BLOCK != 0 || width % BLOCK != 0 {
        return Err(CodecError::Unaligned { height, width });
    }
    let table = quant_table(quality)?;
    let (bh, bw) = (height / BLOCK, width / BLOCK);
    let per_frame: Vec<Vec<BlockCode>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let frame = clip.frame(f);
            let mut out = Vec::with_capacity(CHANNELS * bh * bw);
            for c in 0..CHANNELS {
                let mut prev_dc = 0;
                for by in 0..bh {
                    for bx in 0..bw {
                        let q = quantize_block(&read_block(frame, width, by, bx, c), &table);
                        out.push(BlockCode::from_quantized(&q, prev_dc));
                        prev_dc = q[0];
                    }
                }
            }
            out
        })
        .collect();
    Ok(CodedStream {
        width,
        height,
        frames,
        quality,
        blocks: per_frame.into_iter().flatten().collect(),
    })
}

pub fn decode_intra(s: &CodedStream) -> Result<Clip, CodecError> {
    let table = quant_table(s.quality)?;
    let (bh, bw) = (s.height / BLOCK, s.width / BLOCK);
    let per = CHANNELS * bh * bw;
    if s.blocks.len() != s.frames * per {
        return Err(CodecError::Malformed {
            offset: HEADER_BYTES,
            reason: format!("{} blocks, expected {}", s.blocks.len(), s.frames * per),
        });
    }
    let frames: Vec<Vec<u8>> = s
        .blocks
        .par_chunks(per)
        .map(|codes| {
            let mut frame = vec![0u8; s.height * s.width * CHANNELS];
            for c in 0..CHANNELS {
                let mut prev_dc = 0;
                for by in 0..bh {
                    for bx in 0..bw {
                        let code = &codes[(c * bh + by) * bw + bx];
                        let q = code.to_quantized(prev_dc).map_err(|reason| CodecError::Malformed {
                            offset: HEADER_BYTES,
                            reason,
                        })?;
                        prev_dc = q[0];
                        let px = dequantize_block(&q, &table);
                        for y in 0..BLOCK {
                            for x in 0..BLOCK {
                                frame[((by * BLOCK + y) * s.width + bx * BLOCK + x) * CHANNELS + c] = px[y * BLOCK + x];
                            }
                        }
                    }
                }
            }
            Ok(frame)
        })
        .collect::<Result<_, CodecError>>()?;
    let refs: Vec<&[u8]> = frames.iter().map(|f| f.as_slice()).collect();
    Ok(Clip::from_frames(s.height, s.width, &refs)?)
}

/// Outcome of a quality search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateChoice {
    pub quality: u32,
    pub bpp: f64,
    /// Set when no quality lands within ±5% of the target.
    pub out_of_tolerance: bool,
}

pub const RATE_TOLERANCE: f64 = 0.05;

/// Binary search over quality for the coded rate closest to `target_bpp`.
///
/// Finds the lowest quality whose rate reaches the target, then keeps it or
/// its predecessor, whichever is closer. Targets above the quality-100 rate
/// return 100; targets below the quality-1 rate return 1.
pub fn rate_search(clip: &Clip, target_bpp: f64) -> Result<RateChoice, CodecError> {
    let bpp_at = |q: u32| -> Result<f64, CodecError> { Ok(encode_intra(clip, q)?.bpp()) };
    let choice = |quality: u32, bpp: f64| RateChoice {
        quality,
        bpp,
        out_of_tolerance: (bpp - target_bpp).abs() > RATE_TOLERANCE * target_bpp,
    };
    let top = bpp_at(100)?;
    if target_bpp >= top {
        return Ok(choice(100, top));
    }
    let bottom = bpp_at(1)?;
    if target_bpp <= bottom {
        return Ok(choice(1, bottom));
    }
    // invariant: bpp(lo) < target <= bpp(hi)
    let (mut lo, mut hi) = (1u32, 100u32);
    let mut hi_bpp = top;
    let mut lo_bpp = bottom;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let b = bpp_at(mid)?;
        if b >= target_bpp {
            hi = mid;
            hi_bpp = b;
        } else {
            lo = mid;
            lo_bpp = b;
        }
    }
    if (hi_bpp - target_bpp).abs() <= (target_bpp - lo_bpp).abs() {
        Ok(choice(hi, hi_bpp))
    } else {
        Ok(choice(lo, lo_bpp))
    }
}

/// Interleaved RGB to per-frame planar `R, G, B` planes.
pub fn to_planar(clip: &Clip) -> Vec<u8> {
    let n = clip.pixels_per_frame();
    let mut out = vec![0u8; clip.data().len()];
    for (f, frame) in clip.frames_iter().enumerate() {
        let base = f * n * CHANNELS;
        for (i, px) in frame.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[base + c * n + i] = px[c];
            }
        }
    }
    out
}

pub fn from_planar(frames: usize, height: usize, width: usize, planar: &[u8]) -> Result<Clip, GeometryError> {
    let n = height * width;
    if planar.len() != frames * n * CHANNELS {
        return Clip::new(frames, height, width, planar.to_vec());
    }
    let mut data = vec![0u8; planar.len()];
    for f in 0..frames {
        let base = f * n * CHANNELS;
        for i in 0..n {
            for c in 0..CHANNELS {
                data[base + i * CHANNELS + c] = planar[base + c * n + i];
            }
        }
    }
    Clip::new(frames, height, width, data)
}

/// Result of a round trip through an external codec.
#[derive(Clone, Debug)]
pub struct ExternalOutput {
    pub clip: Clip,
    /// Size of the file written to `{bitstream}`, if the command wrote one.
    pub bitstream_bytes: Option<u64>,
    pub bpp: Option<f64>,
    /// The command line after placeholder substitution.
    pub command: Vec<String>,
}

/// Splits a shell-style command template into argv.
pub fn parse_template(template: &str) -> Result<Vec<String>, CodecError> {
    match shlex::split(template) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CodecError::ExternalFailed(format!("cannot parse command template {template:?}"))),
    }
}

/// Round-trips `clip` through an external program.
///
/// Contract: the program receives every frame on stdin as planar 8-bit
/// `R, G, B` planes and must write the same number of planar frames of the
/// same size to stdout. Placeholders `{width}`, `{height}`, `{frames}`,
/// `{fourcc}` and `{bitstream}` are substituted in every argument;
/// `{bitstream}` is a scratch path whose size, if the program writes it, is
/// taken as the compressed container size.
pub fn external_codec(clip: &Clip, argv_template: &[String], fourcc: &str) -> Result<ExternalOutput, CodecError> {
    if argv_template.is_empty() {
        return Err(CodecError::ExternalFailed("empty command template".into()));
    }
    let scratch = tempfile::tempdir()?;
    let bitstream = scratch.path().join(format!("stream.{}", fourcc.to_ascii_lowercase()));
    let command: Vec<String> = argv_template
        .iter()
        .map(|a| {
            a.replace("{width}", &clip.width().to_string())
                .replace("{height}", &clip.height().to_string())
                .replace("{frames}", &clip.frames().to_string())
                .replace("{fourcc}", fourcc)
                .replace("{bitstream}", &bitstream.to_string_lossy())
        })
        .collect();
    let mut child = match Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CodecError::ExternalUnavailable(format!("{}: not found on PATH", command[0])))
        }
        Err(e) => return Err(e.into()),
    };
    let input = to_planar(clip);
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || {
        // a decoder that stops reading early closes the pipe; that is reported via the exit status
        let _ = stdin.write_all(&input);
    });
    let mut raw = Vec::with_capacity(clip.data().len());
    child.stdout.take().expect("piped stdout").read_to_end(&mut raw)?;
    let mut stderr = String::new();
    child.stderr.take().expect("piped stderr").read_to_string(&mut stderr)?;
    let status = child.wait()?;
    let _ = writer.join();
    if !status.success() {
        return Err(CodecError::ExternalFailed(format!("{} exited with {status}: {}", command[0], stderr.trim())));
    }
    if raw.len() != clip.data().len() {
        return Err(CodecError::ExternalFailed(format!(
            "decoder produced {} bytes, expected {}",
            raw.len(),
            clip.data().len()
        )));
    }
    let out = from_planar(clip.frames(), clip.height(), clip.width(), &raw)?;
    let bitstream_bytes = std::fs::metadata(&bitstream).ok().map(|m| m.len());
    let pixels = (clip.frames() * clip.pixels_per_frame()) as f64;
    Ok(ExternalOutput {
        clip: out,
        bitstream_bytes,
        bpp: bitstream_bytes.map(|b| b as f64 * 8.0 / pixels),
        command,
    })
}
