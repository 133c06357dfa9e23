//! Clips, block grids and the partition arithmetic shared by every other module.
//!
//! A [`Clip`] is a stack of RGB frames stored row-major, frame after frame, with
//! interleaved channels. A [`BlockGrid`] describes how each frame is cut into
//! main-blocks (MBs, the transformer patch size) and each MB into sub-blocks
//! (SBs). MB and SB indices are row-major; every permutation in the crate is
//! expressed relative to that order.

use thiserror::Error;

/// Number of colour channels; clips are always RGB.
pub const CHANNELS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("sample buffer holds {got} bytes, expected {expected} for {frames}x{height}x{width}x3")]
    BufferLength {
        frames: usize,
        height: usize,
        width: usize,
        expected: usize,
        got: usize,
    },
    #[error("{what} must be at least 1")]
    Empty { what: &'static str },
    #[error("main-block {mb_h}x{mb_w} is not divisible into {sb_h}x{sb_w} sub-blocks")]
    SubBlockMismatch {
        mb_h: usize,
        mb_w: usize,
        sb_h: usize,
        sb_w: usize,
    },
    #[error("frame {height}x{width} is not divisible into {mb_h}x{mb_w} main-blocks; resize first")]
    DimensionMismatch {
        height: usize,
        width: usize,
        mb_h: usize,
        mb_w: usize,
    },
    #[error("clips differ in shape: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
}

/// Decoded video: `frames × height × width × 3` unsigned 8-bit samples.
#[derive(Clone, PartialEq, Eq)]
pub struct Clip {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Clip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Clip")
            .field("frames", &self.frames)
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl Clip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self, GeometryError> {
        if frames == 0 {
            return Err(GeometryError::Empty { what: "frame count" });
        }
        if height == 0 || width == 0 {
            return Err(GeometryError::Empty { what: "frame size" });
        }
        let expected = frames * height * width * CHANNELS;
        if data.len() != expected {
            return Err(GeometryError::BufferLength {
                frames,
                height,
                width,
                expected,
                got: data.len(),
            });
        }
        Ok(Clip {
            frames,
            height,
            width,
            data,
        })
    }

    /// A clip with every sample set to `value`.
    pub fn filled(frames: usize, height: usize, width: usize, value: u8) -> Result<Self, GeometryError> {
        Clip::new(frames, height, width, vec![value; frames * height * width * CHANNELS])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(frames, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [u8] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn frames_iter(&self) -> std::slice::ChunksExact<'_, u8> {
        self.data.chunks_exact(self.frame_len())
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.height + y) * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn get(&self, f: usize, y: usize, x: usize, c: usize) -> u8 {
        self.data[self.index(f, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, y: usize, x: usize, c: usize, v: u8) {
        let i = self.index(f, y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Clip) -> Result<(), GeometryError> {
        if self.shape() != other.shape() {
            return Err(GeometryError::ShapeMismatch {
                a: self.shape(),
                b: other.shape(),
            });
        }
        Ok(())
    }

    /// Builds a clip from a list of frames of identical size.
    pub fn from_frames(height: usize, width: usize, frames: &[&[u8]]) -> Result<Self, GeometryError> {
        let mut data = Vec::with_capacity(frames.len() * height * width * CHANNELS);
        for f in frames {
            data.extend_from_slice(f);
        }
        Clip::new(frames.len(), height, width, data)
    }
}

/// MB / SB layout of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub mb_h: usize,
    pub mb_w: usize,
    pub sb_h: usize,
    pub sb_w: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

pub const DEFAULT_MB: usize = 16;
pub const DEFAULT_SB: usize = 8;

impl BlockGrid {
    pub fn new(
        mb_h: usize,
        mb_w: usize,
        sb_h: usize,
        sb_w: usize,
        grid_rows: usize,
        grid_cols: usize,
    ) -> Result<Self, GeometryError> {
        if mb_h == 0 || mb_w == 0 || sb_h == 0 || sb_w == 0 {
            return Err(GeometryError::Empty { what: "block size" });
        }
        if grid_rows == 0 || grid_cols == 0 {
            return Err(GeometryError::Empty { what: "grid size" });
        }
        if mb_h % sb_h != 0 || mb_w % sb_w != 0 {
            return Err(GeometryError::SubBlockMismatch { mb_h, mb_w, sb_h, sb_w });
        }
        Ok(BlockGrid {
            mb_h,
            mb_w,
            sb_h,
            sb_w,
            grid_rows,
            grid_cols,
        })
    }

    /// Square MBs of side `mb` and square SBs of side `sb` covering a `height × width` frame.
    pub fn for_frame(height: usize, width: usize, mb: usize, sb: usize) -> Result<Self, GeometryError> {
        if mb == 0 {
            return Err(GeometryError::Empty { what: "block size" });
        }
        if height % mb != 0 || width % mb != 0 {
            return Err(GeometryError::DimensionMismatch {
                height,
                width,
                mb_h: mb,
                mb_w: mb,
            });
        }
        BlockGrid::new(mb, mb, sb, sb, height / mb, width / mb)
    }

    /// 16×16 MBs with 8×8 SBs.
    pub fn default_for(height: usize, width: usize) -> Result<Self, GeometryError> {
        BlockGrid::for_frame(height, width, DEFAULT_MB, DEFAULT_SB)
    }

    pub fn mb_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn sb_rows(&self) -> usize {
        self.mb_h / self.sb_h
    }

    pub fn sb_cols(&self) -> usize {
        self.mb_w / self.sb_w
    }

    pub fn sbs_per_mb(&self) -> usize {
        self.sb_rows() * self.sb_cols()
    }

    pub fn frame_height(&self) -> usize {
        self.grid_rows * self.mb_h
    }

    pub fn frame_width(&self) -> usize {
        self.grid_cols * self.mb_w
    }

    /// Fails unless `clip` frames are exactly covered by this grid.
    pub fn check_clip(&self, clip: &Clip) -> Result<(), GeometryError> {
        if clip.height() != self.frame_height() || clip.width() != self.frame_width() {
            return Err(GeometryError::DimensionMismatch {
                height: clip.height(),
                width: clip.width(),
                mb_h: self.mb_h,
                mb_w: self.mb_w,
            });
        }
        Ok(())
    }

    /// Top-left pixel of MB `mb`.
    #[inline]
    pub fn mb_origin(&self, mb: usize) -> (usize, usize) {
        ((mb / self.grid_cols) * self.mb_h, (mb % self.grid_cols) * self.mb_w)
    }

    /// Top-left pixel of SB `sb` relative to its MB.
    #[inline]
    pub fn sb_offset(&self, sb: usize) -> (usize, usize) {
        let cols = self.sb_cols();
        ((sb / cols) * self.sb_h, (sb % cols) * self.sb_w)
    }
}

/// One SB-sized pixel region of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub frame: usize,
    pub mb: usize,
    pub sb: usize,
    /// Top-left pixel in frame coordinates.
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// Iterates over every `(frame, mb, sb)` region of `clip` in frame, MB, SB order.
pub fn partition(clip: &Clip, grid: &BlockGrid) -> Result<impl Iterator<Item = Region>, GeometryError> {
    grid.check_clip(clip)?;
    let grid = *grid;
    let per_frame = grid.mb_count() * grid.sbs_per_mb();
    Ok((0..clip.frames() * per_frame).map(move |i| {
        let frame = i / per_frame;
        let rem = i % per_frame;
        let mb = rem / grid.sbs_per_mb();
        let sb = rem % grid.sbs_per_mb();
        let (my, mx) = grid.mb_origin(mb);
        let (sy, sx) = grid.sb_offset(sb);
        Region {
            frame,
            mb,
            sb,
            y: my + sy,
            x: mx + sx,
            h: grid.sb_h,
            w: grid.sb_w,
        }
    }))
}

/// Copies a region out as an `h × w × 3` block.
pub fn read_region(clip: &Clip, r: &Region) -> Vec<u8> {
    let mut out = Vec::with_capacity(r.h * r.w * CHANNELS);
    for y in r.y..r.y + r.h {
        let start = clip.index(r.frame, y, r.x, 0);
        out.extend_from_slice(&clip.data()[start..start + r.w * CHANNELS]);
    }
    out
}

/// Writes an `h × w × 3` block into a region.
pub fn write_region(clip: &mut Clip, r: &Region, block: &[u8]) {
    let row = r.w * CHANNELS;
    for (dy, src) in block.chunks_exact(row).enumerate() {
        let start = clip.index(r.frame, r.y + dy, r.x, 0);
        clip.data_mut()[start..start + row].copy_from_slice(src);
    }
}

/// Catmull-Rom cubic kernel (a = -0.5).
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps: (first source index before clamping, four weights).
fn cubic_taps(src_len: usize, dst_len: usize) -> Vec<(isize, [f64; 4])> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = (d as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let frac = s - base;
            let w = [
                cubic_weight(1.0 + frac),
                cubic_weight(frac),
                cubic_weight(1.0 - frac),
                cubic_weight(2.0 - frac),
            ];
            (base as isize - 1, w)
        })
        .collect()
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Bicubic resize with the Catmull-Rom kernel, edge clamping and per-channel
/// separable filtering; the intermediate pass keeps full precision.
pub fn resize_bicubic(clip: &Clip, out_h: usize, out_w: usize) -> Result<Clip, GeometryError> {
    if out_h == 0 || out_w == 0 {
        return Err(GeometryError::Empty { what: "output size" });
    }
    if out_h == clip.height() && out_w == clip.width() {
        return Ok(clip.clone());
    }
    let (in_h, in_w) = (clip.height(), clip.width());
    let xt = cubic_taps(in_w, out_w);
    let yt = cubic_taps(in_h, out_h);
    let mut data = Vec::with_capacity(clip.frames() * out_h * out_w * CHANNELS);
    let mut tmp = vec![0f64; in_h * out_w * CHANNELS];
    for f in 0..clip.frames() {
        let src = clip.frame(f);
        for y in 0..in_h {
            for (ox, (base, w)) in xt.iter().enumerate() {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        let sx = clamp_index(base + k as isize, in_w);
                        acc += wk * src[(y * in_w + sx) * CHANNELS + c] as f64;
                    }
                    tmp[(y * out_w + ox) * CHANNELS + c] = acc;
                }
            }
        }
        for (base, w) in &yt {
            for ox in 0..out_w {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        let sy = clamp_index(base + k as isize, in_h);
                        acc += wk * tmp[(sy * out_w + ox) * CHANNELS + c];
                    }
                    data.push(acc.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Clip::new(clip.frames(), out_h, out_w, data)
}

/// Frame indices picked by uniform sampling: `floor(i * frames / n)`.
pub fn uniform_indices(frames: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * frames / n).collect()
}

pub fn sample_frames_uniform(clip: &Clip, n: usize) -> Result<Clip, GeometryError> {
    if n == 0 {
        return Err(GeometryError::Empty { what: "sample count" });
    }
    let picked: Vec<&[u8]> = uniform_indices(clip.frames(), n)
        .into_iter()
        .map(|i| clip.frame(i))
        .collect();
    Clip::from_frames(clip.height(), clip.width(), &picked)
}
