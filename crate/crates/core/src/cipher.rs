//! Block-wise compression-friendly encryption and the pixel-shuffle baseline.
//!
//! Per frame, each MB has its SBs transformed (rotate, flip, invert, permute
//! channels), its SBs permuted, and is then moved to its scrambled grid
//! position. The same plan applies to every frame.
//!
//! Internally a plan is compiled to a per-pixel routing table so encryption and
//! decryption are single gather/scatter passes over each frame.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{BlockGrid, Clip, GeometryError, CHANNELS};
use crate::keyschedule::{fisher_yates, invert_permutation, SbParams, SplitMix64, TransformPlan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CipherError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("quarter rotation requested on a non-square {h}x{w} sub-block")]
    NonSquareRotation { h: usize, w: usize },
    #[error("block holds {got} bytes, expected {expected}")]
    BlockSize { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn check_block(block: &[u8], h: usize, w: usize, p: &SbParams) -> Result<(), CipherError> {
    if block.len() != h * w * CHANNELS {
        return Err(CipherError::BlockSize {
            expected: h * w * CHANNELS,
            got: block.len(),
        });
    }
    if p.rotation.is_quarter() && h != w {
        return Err(CipherError::NonSquareRotation { h, w });
    }
    Ok(())
}

fn rotate(block: &[u8], n: usize, quarters: u32) -> Vec<u8> {
    let mut cur = block.to_vec();
    for _ in 0..quarters {
        let mut next = vec![0u8; cur.len()];
        // clockwise: out[y][x] = in[n-1-x][y]
        for y in 0..n {
            for x in 0..n {
                let s = ((n - 1 - x) * n + y) * CHANNELS;
                let d = (y * n + x) * CHANNELS;
                next[d..d + CHANNELS].copy_from_slice(&cur[s..s + CHANNELS]);
            }
        }
        cur = next;
    }
    cur
}

fn rotate_180(block: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; block.len()];
    for y in 0..h {
        for x in 0..w {
            let s = ((h - 1 - y) * w + (w - 1 - x)) * CHANNELS;
            let d = (y * w + x) * CHANNELS;
            out[d..d + CHANNELS].copy_from_slice(&block[s..s + CHANNELS]);
        }
    }
    out
}

fn flip(block: &[u8], h: usize, w: usize, f: crate::keyschedule::Flip) -> Vec<u8> {
    use crate::keyschedule::Flip;
    let mut out = vec![0u8; block.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match f {
                Flip::None => (y, x),
                Flip::Horizontal => (y, w - 1 - x),
                Flip::Vertical => (h - 1 - y, x),
            };
            let s = (sy * w + sx) * CHANNELS;
            let d = (y * w + x) * CHANNELS;
            out[d..d + CHANNELS].copy_from_slice(&block[s..s + CHANNELS]);
        }
    }
    out
}

fn spatial(block: &[u8], h: usize, w: usize, quarters: u32) -> Vec<u8> {
    match quarters % 4 {
        0 => block.to_vec(),
        2 => rotate_180(block, h, w),
        q => rotate(block, h, q),
    }
}

/// Applies one SB's transformations to an `h × w × 3` block.
///
/// Forward order is rotate → flip → invert → permute channels; the inverse
/// undoes them in reverse.
pub fn transform_sb(
    block: &[u8],
    h: usize,
    w: usize,
    p: &SbParams,
    direction: Direction,
) -> Result<Vec<u8>, CipherError> {
    check_block(block, h, w, p)?;
    let quarters = p.rotation.degrees() / 90;
    match direction {
        Direction::Forward => {
            let mut out = flip(&spatial(block, h, w, quarters), h, w, p.flip);
            for px in out.chunks_exact_mut(CHANNELS) {
                let src = [px[0], px[1], px[2]];
                for c in 0..CHANNELS {
                    let v = src[p.channel_perm[c] as usize];
                    px[c] = if p.invert { 255 - v } else { v };
                }
            }
            Ok(out)
        }
        Direction::Inverse => {
            let mut tmp = block.to_vec();
            for px in tmp.chunks_exact_mut(CHANNELS) {
                let src = [px[0], px[1], px[2]];
                for c in 0..CHANNELS {
                    let v = if p.invert { 255 - src[c] } else { src[c] };
                    px[p.channel_perm[c] as usize] = v;
                }
            }
            let tmp = flip(&tmp, h, w, p.flip);
            Ok(spatial(&tmp, h, w, (4 - quarters) % 4))
        }
    }
}

/// Where one ciphertext pixel's samples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Route {
    /// Source pixel index (frame- or MB-local, row-major).
    pub src: u32,
    /// Ciphertext channel `c` holds source channel `perm[c]`.
    pub perm: [u8; 3],
    pub invert: bool,
}

impl Route {
    #[inline]
    fn gather(&self, src: &[u8], dst: &mut [u8]) {
        let s = self.src as usize * CHANNELS;
        for c in 0..CHANNELS {
            let v = src[s + self.perm[c] as usize];
            dst[c] = if self.invert { 255 - v } else { v };
        }
    }

    #[inline]
    fn scatter(&self, src: &[u8], dst: &mut [u8]) {
        let d = self.src as usize * CHANNELS;
        for c in 0..CHANNELS {
            let v = if self.invert { 255 - src[c] } else { src[c] };
            dst[d + self.perm[c] as usize] = v;
        }
    }
}

fn check_plan(plan: &TransformPlan) -> Result<(), CipherError> {
    let g = &plan.grid;
    if plan.has_quarter_rotation() && g.sb_h != g.sb_w {
        return Err(CipherError::NonSquareRotation { h: g.sb_h, w: g.sb_w });
    }
    Ok(())
}

/// MB-local routing for plaintext MB `mb`: entry `i` describes ciphertext MB
/// pixel `i` (row-major within the `mb_h × mb_w` block) before the MB moves.
pub fn mb_routes(plan: &TransformPlan, mb: usize) -> Result<Vec<Route>, CipherError> {
    check_plan(plan)?;
    let g = &plan.grid;
    let params = plan.params_for(mb);
    let perm = plan.sb_perm_for(mb);
    let mut routes = vec![
        Route {
            src: 0,
            perm: [0, 1, 2],
            invert: false
        };
        g.mb_h * g.mb_w
    ];
    for s in 0..g.sbs_per_mb() {
        let p = &params[s];
        let (sy, sx) = g.sb_offset(s);
        let (dy, dx) = g.sb_offset(perm[s]);
        for r in 0..g.sb_h {
            for c in 0..g.sb_w {
                let (tr, tc) = p.map_coord(r, c, g.sb_h, g.sb_w);
                let dst = (dy + tr) * g.mb_w + dx + tc;
                routes[dst] = Route {
                    src: ((sy + r) * g.mb_w + sx + c) as u32,
                    perm: p.channel_perm,
                    invert: p.invert,
                };
            }
        }
    }
    Ok(routes)
}

/// Frame-level routing table: entry `i` describes ciphertext pixel `i`.
pub fn frame_routes(plan: &TransformPlan) -> Result<Vec<Route>, CipherError> {
    let g = &plan.grid;
    let width = g.frame_width();
    let mut routes = vec![
        Route {
            src: 0,
            perm: [0, 1, 2],
            invert: false
        };
        g.frame_height() * width
    ];
    let shared = match plan.mode {
        crate::keyschedule::Mode::V1 => Some(mb_routes(plan, 0)?),
        crate::keyschedule::Mode::V2 => None,
    };
    for m in 0..g.mb_count() {
        let owned;
        let local = match &shared {
            Some(r) => r,
            None => {
                owned = mb_routes(plan, m)?;
                &owned
            }
        };
        let (sy, sx) = g.mb_origin(m);
        let (dy, dx) = g.mb_origin(plan.mb_perm[m]);
        for (i, r) in local.iter().enumerate() {
            let (ly, lx) = (i / g.mb_w, i % g.mb_w);
            let (ry, rx) = (r.src as usize / g.mb_w, r.src as usize % g.mb_w);
            routes[(dy + ly) * width + dx + lx] = Route {
                src: ((sy + ry) * width + sx + rx) as u32,
                ..*r
            };
        }
    }
    Ok(routes)
}

fn apply_routes(clip: &Clip, routes: &[Route], direction: Direction) -> Clip {
    let mut out = clip.clone();
    let n = clip.frame_len();
    out.data_mut()
        .par_chunks_mut(n)
        .zip(clip.data().par_chunks(n))
        .for_each(|(dst, src)| match direction {
            Direction::Forward => {
                for (px, r) in dst.chunks_exact_mut(CHANNELS).zip(routes) {
                    r.gather(src, px);
                }
            }
            Direction::Inverse => {
                for (px, r) in src.chunks_exact(CHANNELS).zip(routes) {
                    r.scatter(px, dst);
                }
            }
        });
    out
}

pub fn encrypt(clip: &Clip, plan: &TransformPlan) -> Result<Clip, CipherError> {
    plan.grid.check_clip(clip)?;
    Ok(apply_routes(clip, &frame_routes(plan)?, Direction::Forward))
}

pub fn decrypt(clip: &Clip, plan: &TransformPlan) -> Result<Clip, CipherError> {
    plan.grid.check_clip(clip)?;
    Ok(apply_routes(clip, &frame_routes(plan)?, Direction::Inverse))
}

/// Permutation of the `height × width` pixel positions used by the
/// pixel-shuffle baseline: pixel `i` moves to position `perm[i]`.
pub fn pixel_shuffle_permutation(height: usize, width: usize, seed: u64) -> Vec<usize> {
    fisher_yates(height * width, &mut SplitMix64::new(seed))
}

fn shuffle_with(clip: &Clip, dest: &[usize]) -> Clip {
    let mut out = clip.clone();
    let n = clip.frame_len();
    out.data_mut()
        .par_chunks_mut(n)
        .zip(clip.data().par_chunks(n))
        .for_each(|(dst, src)| {
            for (i, &d) in dest.iter().enumerate() {
                dst[d * CHANNELS..(d + 1) * CHANNELS].copy_from_slice(&src[i * CHANNELS..(i + 1) * CHANNELS]);
            }
        });
    out
}

/// Frame-wide keyed pixel shuffle (channels travel together), identical for every frame.
pub fn pixel_shuffle(clip: &Clip, seed: u64) -> Clip {
    shuffle_with(clip, &pixel_shuffle_permutation(clip.height(), clip.width(), seed))
}

pub fn pixel_unshuffle(clip: &Clip, seed: u64) -> Clip {
    let perm = pixel_shuffle_permutation(clip.height(), clip.width(), seed);
    shuffle_with(clip, &invert_permutation(&perm))
}

/// True when `grid` can host this plan's SB transforms.
pub fn plan_fits(plan: &TransformPlan, grid: &BlockGrid) -> bool {
    plan.grid == *grid && check_plan(plan).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{partition, read_region, write_region};
    use crate::keyschedule::{expand, Flip, KeyMaterial, Mode, Rotation};

    fn noise_clip(frames: usize, h: usize, w: usize, seed: u64) -> Clip {
        let mut g = SplitMix64::new(seed);
        let data = (0..frames * h * w * 3).map(|_| g.next_u64() as u8).collect();
        Clip::new(frames, h, w, data).unwrap()
    }

    #[test]
    fn identity_params_leave_block() {
        let block: Vec<u8> = (0..8 * 8 * 3).map(|i| i as u8).collect();
        let out = transform_sb(&block, 8, 8, &SbParams::IDENTITY, Direction::Forward).unwrap();
        assert_eq!(out, block);
    }

    #[test]
    fn double_inversion_is_identity() {
        let block: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 11) as u8).collect();
        let p = SbParams {
            invert: true,
            ..SbParams::IDENTITY
        };
        let once = transform_sb(&block, 4, 4, &p, Direction::Forward).unwrap();
        assert_ne!(once, block);
        assert_eq!(transform_sb(&once, 4, 4, &p, Direction::Forward).unwrap(), block);
    }

    #[test]
    fn composite_transform_on_2x2_block() {
        // Element-wise oracle: rot90 cw sends (r,c) to (c, 1-r); horizontal
        // flip then sends (r,c) to (r, 1-c); invert; output channel c takes
        // input channel perm[c] with perm = (G,B,R).
        let block: Vec<u8> = (0..12).map(|i| (i * 20 + 3) as u8).collect();
        let p = SbParams {
            rotation: Rotation::R90,
            flip: Flip::Horizontal,
            invert: true,
            channel_perm: [1, 2, 0],
        };
        let mut expect = vec![0u8; 12];
        for r in 0..2 {
            for c in 0..2 {
                let (r1, c1) = (c, 1 - r);
                let (r2, c2) = (r1, 1 - c1);
                for ch in 0..3 {
                    let v = block[(r * 2 + c) * 3 + [1, 2, 0][ch]];
                    expect[(r2 * 2 + c2) * 3 + ch] = 255 - v;
                }
            }
        }
        let got = transform_sb(&block, 2, 2, &p, Direction::Forward).unwrap();
        assert_eq!(got, expect);
        assert_eq!(transform_sb(&got, 2, 2, &p, Direction::Inverse).unwrap(), block);
    }

    #[test]
    fn quarter_rotation_needs_square_sb() {
        let p = SbParams {
            rotation: Rotation::R270,
            ..SbParams::IDENTITY
        };
        let block = vec![0u8; 4 * 8 * 3];
        assert_eq!(
            transform_sb(&block, 4, 8, &p, Direction::Forward),
            Err(CipherError::NonSquareRotation { h: 4, w: 8 })
        );
        let half = SbParams {
            rotation: Rotation::R180,
            flip: Flip::Vertical,
            ..SbParams::IDENTITY
        };
        let block: Vec<u8> = (0..4 * 8 * 3).map(|i| i as u8).collect();
        let f = transform_sb(&block, 4, 8, &half, Direction::Forward).unwrap();
        assert_eq!(transform_sb(&f, 4, 8, &half, Direction::Inverse).unwrap(), block);
    }

    #[test]
    fn identity_plan_is_noop() {
        let clip = noise_clip(2, 32, 48, 1);
        let plan = TransformPlan::identity(BlockGrid::default_for(32, 48).unwrap());
        assert_eq!(encrypt(&clip, &plan).unwrap(), clip);
        assert_eq!(decrypt(&clip, &plan).unwrap(), clip);
    }

    #[test]
    fn mb_swap_exchanges_regions() {
        let clip = noise_clip(1, 16, 32, 2);
        let mut plan = TransformPlan::identity(BlockGrid::default_for(16, 32).unwrap());
        plan.mb_perm = vec![1, 0];
        let enc = encrypt(&clip, &plan).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    assert_eq!(enc.get(0, y, x, c), clip.get(0, y, x + 16, c));
                    assert_eq!(enc.get(0, y, x + 16, c), clip.get(0, y, x, c));
                }
            }
        }
        let mut a = enc.data().to_vec();
        let mut b = clip.data().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    /// Replays the three encryption steps region by region with `transform_sb`.
    fn region_replay(clip: &Clip, plan: &TransformPlan) -> Clip {
        let g = plan.grid;
        let mut stage = clip.clone();
        for r in partition(clip, &g).unwrap() {
            let block = read_region(clip, &r);
            let p = &plan.params_for(r.mb)[r.sb];
            let t = transform_sb(&block, g.sb_h, g.sb_w, p, Direction::Forward).unwrap();
            write_region(&mut stage, &r, &t);
        }
        let mut sb_moved = stage.clone();
        for r in partition(&stage, &g).unwrap() {
            let block = read_region(&stage, &r);
            let dst_sb = plan.sb_perm_for(r.mb)[r.sb];
            let (my, mx) = g.mb_origin(r.mb);
            let (oy, ox) = g.sb_offset(dst_sb);
            let dst = crate::geometry::Region {
                sb: dst_sb,
                y: my + oy,
                x: mx + ox,
                ..r
            };
            write_region(&mut sb_moved, &dst, &block);
        }
        let mut out = sb_moved.clone();
        for r in partition(&sb_moved, &g).unwrap() {
            let block = read_region(&sb_moved, &r);
            let dst_mb = plan.mb_perm[r.mb];
            let (my, mx) = g.mb_origin(dst_mb);
            let (oy, ox) = g.sb_offset(r.sb);
            let dst = crate::geometry::Region {
                mb: dst_mb,
                y: my + oy,
                x: mx + ox,
                ..r
            };
            write_region(&mut out, &dst, &block);
        }
        out
    }

    #[test]
    fn encrypt_matches_region_replay() {
        let grid = BlockGrid::default_for(32, 32).unwrap();
        for seed in 0..20u64 {
            let clip = noise_clip(1, 32, 32, 100 + seed);
            for mode in [Mode::V1, Mode::V2] {
                let plan = expand(&KeyMaterial::new(mode, seed * 3 + 1, seed * 5 + 2), &grid);
                assert_eq!(encrypt(&clip, &plan).unwrap(), region_replay(&clip, &plan));
            }
        }
    }

    #[test]
    fn inverse_plan_encrypt_equals_decrypt() {
        let grid = BlockGrid::default_for(48, 64).unwrap();
        let clip = noise_clip(2, 48, 64, 9);
        for mode in [Mode::V1, Mode::V2] {
            let plan = expand(&KeyMaterial::new(mode, 77, 78), &grid);
            let enc = encrypt(&clip, &plan).unwrap();
            assert_eq!(encrypt(&enc, &plan.inverse()).unwrap(), decrypt(&enc, &plan).unwrap());
            assert_eq!(decrypt(&enc, &plan).unwrap(), clip);
        }
    }

    #[test]
    fn v1_frames_with_equal_content_encrypt_equally() {
        let one = noise_clip(1, 32, 32, 4);
        let clip = Clip::from_frames(32, 32, &[one.data(), one.data()]).unwrap();
        let plan = expand(&KeyMaterial::new(Mode::V1, 1, 2), &BlockGrid::default_for(32, 32).unwrap());
        let enc = encrypt(&clip, &plan).unwrap();
        assert_eq!(enc.frame(0), enc.frame(1));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let clip = noise_clip(1, 32, 32, 5);
        let plan = TransformPlan::identity(BlockGrid::default_for(64, 64).unwrap());
        assert!(matches!(encrypt(&clip, &plan), Err(CipherError::Geometry(_))));
        assert!(matches!(decrypt(&clip, &plan), Err(CipherError::Geometry(_))));
    }

    #[test]
    fn pixel_shuffle_round_trip_and_constant() {
        let clip = noise_clip(3, 16, 24, 6);
        let s = pixel_shuffle(&clip, 42);
        assert_ne!(s, clip);
        assert_eq!(pixel_unshuffle(&s, 42), clip);
        let flat = Clip::filled(2, 8, 8, 200).unwrap();
        assert_eq!(pixel_shuffle(&flat, 1), flat);
    }
}
