//! Ciphertext-only jigsaw attack on the MB permutation.
//!
//! Ciphertext MBs are treated as puzzle pieces with fixed orientation. Border
//! dissimilarity is the sum of squared differences between the two abutting
//! one-pixel lines; a greedy placer grows the puzzle from the cheapest pair.

use rayon::prelude::*;

use crate::cipher::{transform_sb, Direction};
use crate::geometry::{BlockGrid, CHANNELS};
use crate::keyschedule::{invert_permutation, Flip, Rotation, SbParams, TransformPlan, CHANNEL_PERMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `b` sits to the right of `a`.
    Right,
    /// `b` sits below `a`.
    Below,
}

/// SSD across the shared border of two `h × w × 3` blocks.
pub fn pairwise_cost(a: &[u8], b: &[u8], h: usize, w: usize, side: Side) -> f64 {
    let mut sum = 0u64;
    match side {
        Side::Right => {
            for y in 0..h {
                let pa = (y * w + w - 1) * CHANNELS;
                let pb = (y * w) * CHANNELS;
                for c in 0..CHANNELS {
                    let d = a[pa + c] as i64 - b[pb + c] as i64;
                    sum += (d * d) as u64;
                }
            }
        }
        Side::Below => {
            for x in 0..w {
                let pa = ((h - 1) * w + x) * CHANNELS;
                let pb = x * CHANNELS;
                for c in 0..CHANNELS {
                    let d = a[pa + c] as i64 - b[pb + c] as i64;
                    sum += (d * d) as u64;
                }
            }
        }
    }
    sum as f64
}

/// Cuts a frame into its MBs in row-major grid order.
pub fn frame_blocks(frame: &[u8], grid: &BlockGrid) -> Vec<Vec<u8>> {
    let w = grid.frame_width();
    (0..grid.mb_count())
        .map(|m| {
            let (oy, ox) = grid.mb_origin(m);
            let mut b = Vec::with_capacity(grid.mb_h * grid.mb_w * CHANNELS);
            for y in oy..oy + grid.mb_h {
                b.extend_from_slice(&frame[(y * w + ox) * CHANNELS..(y * w + ox + grid.mb_w) * CHANNELS]);
            }
            b
        })
        .collect()
}

/// Reassembles a frame from blocks; `placement[cell]` is the block drawn at `cell`.
pub fn render_placement(blocks: &[Vec<u8>], placement: &[usize], grid: &BlockGrid) -> Vec<u8> {
    let w = grid.frame_width();
    let mut frame = vec![0u8; grid.frame_height() * w * CHANNELS];
    let row = grid.mb_w * CHANNELS;
    for (cell, &b) in placement.iter().enumerate() {
        let (oy, ox) = grid.mb_origin(cell);
        for (dy, src) in blocks[b].chunks_exact(row).enumerate() {
            let start = ((oy + dy) * w + ox) * CHANNELS;
            frame[start..start + row].copy_from_slice(src);
        }
    }
    frame
}

/// Greedy placement of `rows × cols` blocks.
///
/// Seeds with the globally cheapest (pair, side), then repeatedly fills the
/// free cell / unplaced block combination with the lowest mean border cost
/// against already placed neighbours, keeping the occupied bounding box
/// within `rows × cols`. Ties go to the lower cell (row-major) and then the
/// lower block index. Returns `placement[cell] = block`.
pub fn greedy_assemble(blocks: &[Vec<u8>], h: usize, w: usize, rows: usize, cols: usize) -> Vec<usize> {
    let n = blocks.len();
    assert_eq!(n, rows * cols, "block count must equal grid size");
    if n == 1 {
        return vec![0];
    }
    let costs = |side: Side| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                (0..n).map(move |j| if i == j { f64::INFINITY } else { pairwise_cost(&blocks[i], &blocks[j], h, w, side) })
            })
            .collect()
    };
    let right = costs(Side::Right);
    let below = costs(Side::Below);

    // canvas big enough to grow in any direction from the centre
    let (ch, cw) = (2 * rows + 1, 2 * cols + 1);
    let mut canvas: Vec<Option<usize>> = vec![None; ch * cw];
    let mut placed = vec![false; n];
    let (mut top, mut bottom, mut left, mut rightmost) = (rows, rows, cols, cols);

    let mut best = (f64::INFINITY, 0, 0, Side::Right);
    for i in 0..n {
        for j in 0..n {
            for (side, m) in [(Side::Right, &right), (Side::Below, &below)] {
                let c = m[i * n + j];
                if c < best.0 {
                    best = (c, i, j, side);
                }
            }
        }
    }
    let (_, i, j, side) = best;
    canvas[rows * cw + cols] = Some(i);
    placed[i] = true;
    match side {
        Side::Right => {
            canvas[rows * cw + cols + 1] = Some(j);
            rightmost += 1;
        }
        Side::Below => {
            canvas[(rows + 1) * cw + cols] = Some(j);
            bottom += 1;
        }
    }
    placed[j] = true;

    for _ in 2..n {
        // (cost, cell, block)
        let mut choice: Option<(f64, usize, usize)> = None;
        for r in 1..ch - 1 {
            for c in 1..cw - 1 {
                if canvas[r * cw + c].is_some() {
                    continue;
                }
                let (t, b) = (top.min(r), bottom.max(r));
                let (l, rr) = (left.min(c), rightmost.max(c));
                if b - t + 1 > rows || rr - l + 1 > cols {
                    continue;
                }
                let up = canvas[(r - 1) * cw + c];
                let down = canvas[(r + 1) * cw + c];
                let lft = canvas[r * cw + c - 1];
                let rgt = canvas[r * cw + c + 1];
                let k = [up, down, lft, rgt].iter().filter(|x| x.is_some()).count();
                if k == 0 {
                    continue;
                }
                for blk in (0..n).filter(|&b| !placed[b]) {
                    let mut s = 0.0;
                    if let Some(u) = up {
                        s += below[u * n + blk];
                    }
                    if let Some(d) = down {
                        s += below[blk * n + d];
                    }
                    if let Some(l) = lft {
                        s += right[l * n + blk];
                    }
                    if let Some(rg) = rgt {
                        s += right[blk * n + rg];
                    }
                    let s = s / k as f64;
                    if choice.is_none_or(|(bc, _, _)| s < bc) {
                        choice = Some((s, r * cw + c, blk));
                    }
                }
            }
        }
        let (_, cell, blk) = choice.expect("a free cell always borders the placed region");
        canvas[cell] = Some(blk);
        placed[blk] = true;
        let (r, c) = (cell / cw, cell % cw);
        top = top.min(r);
        bottom = bottom.max(r);
        left = left.min(c);
        rightmost = rightmost.max(c);
    }

    let mut placement = Vec::with_capacity(n);
    for r in top..=bottom {
        for c in left..=rightmost {
            placement.push(canvas[r * cw + c].expect("bounding box is full"));
        }
    }
    placement
}

/// Fraction of adjacent cell pairs in a reconstruction whose pieces were
/// adjacent with the same orientation originally. `origins[cell]` is the
/// original grid cell of the piece placed at `cell`.
pub fn attack_score(origins: &[usize], rows: usize, cols: usize) -> f64 {
    let mut good = 0usize;
    let mut total = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let a = origins[r * cols + c];
            if c + 1 < cols {
                let b = origins[r * cols + c + 1];
                total += 1;
                if b == a + 1 && a % cols + 1 < cols {
                    good += 1;
                }
            }
            if r + 1 < rows {
                let b = origins[(r + 1) * cols + c];
                total += 1;
                if b == a + cols {
                    good += 1;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        good as f64 / total as f64
    }
}

/// Expected [`attack_score`] of a uniformly random placement.
pub fn chance_level(rows: usize, cols: usize) -> f64 {
    let n = (rows * cols) as f64;
    let h = (rows * (cols - 1)) as f64;
    let v = ((rows - 1) * cols) as f64;
    if h + v == 0.0 {
        return 1.0;
    }
    (h * h + v * v) / ((h + v) * n * (n - 1.0))
}

/// The eight symmetries of a square as rotate-then-mirror parameters.
pub fn dihedral_group() -> Vec<SbParams> {
    let mut out = Vec::with_capacity(8);
    for flip in [Flip::None, Flip::Horizontal] {
        for rotation in Rotation::ALL {
            out.push(SbParams {
                rotation,
                flip,
                ..SbParams::IDENTITY
            });
        }
    }
    out
}

fn candidate_transforms(square: bool) -> Vec<SbParams> {
    let mut out = Vec::new();
    for d in dihedral_group().into_iter().filter(|d| square || !d.rotation.is_quarter()) {
        for invert in [false, true] {
            for channel_perm in CHANNEL_PERMS {
                out.push(SbParams {
                    invert,
                    channel_perm,
                    ..d
                });
            }
        }
    }
    out
}

/// Estimated undoing of a key-wide SB transform: ciphertext SB slot `j` is
/// mapped forward by `slots[j].1` and put at SB position `slots[j].0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedEstimate {
    pub slots: Vec<(usize, SbParams)>,
    /// Total internal SB-border cost of the estimate over all MBs.
    pub cost: f64,
}

impl SharedEstimate {
    pub fn identity(sbs: usize) -> SharedEstimate {
        SharedEstimate {
            slots: (0..sbs).map(|s| (s, SbParams::IDENTITY)).collect(),
            cost: 0.0,
        }
    }
}

fn sb_of(mb: &[u8], grid: &BlockGrid, s: usize) -> Vec<u8> {
    let (oy, ox) = grid.sb_offset(s);
    let mut out = Vec::with_capacity(grid.sb_h * grid.sb_w * CHANNELS);
    for y in oy..oy + grid.sb_h {
        out.extend_from_slice(&mb[(y * grid.mb_w + ox) * CHANNELS..(y * grid.mb_w + ox + grid.sb_w) * CHANNELS]);
    }
    out
}

/// Estimates the SB rearrangement shared by every MB, as produced by a key
/// that applies one SB plan to all MBs.
///
/// Each ciphertext SB slot is tried under every orientation, inversion and
/// channel order; positions are filled in raster order, always taking the
/// (slot, transform) whose borders with already filled neighbours are
/// smoothest summed over all MBs. The result is only defined up to one
/// symmetry applied to the whole MB, so every slot and orientation is tried
/// as the anchor of position 0.
pub fn estimate_shared_transform(blocks: &[Vec<u8>], grid: &BlockGrid) -> SharedEstimate {
    let n_sb = grid.sbs_per_mb();
    let (sh, sw) = (grid.sb_h, grid.sb_w);
    if n_sb == 1 {
        return SharedEstimate::identity(1);
    }
    let cands = candidate_transforms(sh == sw);
    // variants[slot][cand][mb]
    let variants: Vec<Vec<Vec<Vec<u8>>>> = (0..n_sb)
        .into_par_iter()
        .map(|j| {
            cands
                .iter()
                .map(|u| {
                    blocks
                        .iter()
                        .map(|mb| {
                            transform_sb(&sb_of(mb, grid, j), sh, sw, u, Direction::Forward)
                                .expect("candidate set respects SB shape")
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let pair = |a: (usize, usize), b: (usize, usize), side: Side| -> f64 {
        variants[a.0][a.1]
            .iter()
            .zip(&variants[b.0][b.1])
            .map(|(x, y)| pairwise_cost(x, y, sh, sw, side))
            .sum()
    };
    let (rows, cols) = (grid.sb_rows(), grid.sb_cols());
    let anchors: Vec<(usize, usize)> = (0..n_sb)
        .flat_map(|j| {
            cands
                .iter()
                .enumerate()
                .filter(|(_, u)| !u.invert && u.channel_perm == [0, 1, 2])
                .map(move |(k, _)| (j, k))
        })
        .collect();
    let runs: Vec<(f64, Vec<(usize, usize)>)> = anchors
        .par_iter()
        .map(|&anchor| {
            // at[pos] = (slot, cand)
            let mut at = vec![anchor];
            let mut used = vec![false; n_sb];
            used[anchor.0] = true;
            let mut total = 0.0;
            for pos in 1..n_sb {
                let (r, c) = (pos / cols, pos % cols);
                let mut best: Option<(f64, (usize, usize))> = None;
                for j in (0..n_sb).filter(|&j| !used[j]) {
                    for k in 0..cands.len() {
                        let mut cost = 0.0;
                        if c > 0 {
                            cost += pair(at[pos - 1], (j, k), Side::Right);
                        }
                        if r > 0 {
                            cost += pair(at[pos - cols], (j, k), Side::Below);
                        }
                        if best.is_none_or(|(b, _)| cost < b) {
                            best = Some((cost, (j, k)));
                        }
                    }
                }
                let (cost, choice) = best.expect("an unused slot remains");
                total += cost;
                used[choice.0] = true;
                at.push(choice);
            }
            debug_assert_eq!(at.len(), rows * cols);
            (total, at)
        })
        .collect();
    // first minimum in anchor order keeps the result deterministic
    let (cost, at) = runs
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one anchor");
    let mut slots = vec![(0, SbParams::IDENTITY); n_sb];
    for (pos, (j, k)) in at.into_iter().enumerate() {
        slots[j] = (pos, cands[k]);
    }
    SharedEstimate { slots, cost }
}

/// Applies an estimate to every MB.
pub fn apply_estimate(blocks: &[Vec<u8>], grid: &BlockGrid, est: &SharedEstimate) -> Vec<Vec<u8>> {
    let (sh, sw) = (grid.sb_h, grid.sb_w);
    blocks
        .par_iter()
        .map(|mb| {
            let mut out = vec![0u8; mb.len()];
            for (j, (pos, u)) in est.slots.iter().enumerate() {
                let sb = transform_sb(&sb_of(mb, grid, j), sh, sw, u, Direction::Forward)
                    .expect("estimate respects SB shape");
                let (oy, ox) = grid.sb_offset(*pos);
                for (dy, row) in sb.chunks_exact(sw * CHANNELS).enumerate() {
                    let start = ((oy + dy) * grid.mb_w + ox) * CHANNELS;
                    out[start..start + sw * CHANNELS].copy_from_slice(row);
                }
            }
            out
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub estimate: SharedEstimate,
    /// `placement[cell]` is the ciphertext MB index drawn at `cell`.
    pub placement: Vec<usize>,
    pub reconstructed: Vec<u8>,
}

/// Ciphertext-only attack on one frame: estimate a key-wide SB transform,
/// undo it, then reassemble the MBs.
pub fn attack_frame(frame: &[u8], grid: &BlockGrid) -> AttackOutcome {
    let blocks = frame_blocks(frame, grid);
    let estimate = estimate_shared_transform(&blocks, grid);
    let decoded = apply_estimate(&blocks, grid, &estimate);
    let placement = greedy_assemble(&decoded, grid.mb_h, grid.mb_w, grid.grid_rows, grid.grid_cols);
    AttackOutcome {
        reconstructed: render_placement(&decoded, &placement, grid),
        estimate,
        placement,
    }
}

/// The MB-wide symmetry `d` with decoded = d(original) for plaintext MB 0,
/// if the estimate undoes the key that far.
pub fn residual_symmetry(est: &SharedEstimate, plan: &TransformPlan) -> Option<SbParams> {
    let grid = &plan.grid;
    let (mh, mw, sh, sw) = (grid.mb_h, grid.mb_w, grid.sb_h, grid.sb_w);
    let params = plan.params_for(0);
    let sb_perm = plan.sb_perm_for(0);
    dihedral_group()
        .into_iter()
        .filter(|d| mh == mw || !d.rotation.is_quarter())
        .find(|d| {
            (0..grid.sbs_per_mb()).all(|s| {
                let (oy, ox) = grid.sb_offset(s);
                let j = sb_perm[s];
                let (pos, u) = est.slots[j];
                let (py, px) = grid.sb_offset(pos);
                (0..sh).all(|r| {
                    (0..sw).all(|c| {
                        let (er, ec) = params[s].map_coord(r, c, sh, sw);
                        let (ur, uc) = u.map_coord(er, ec, sh, sw);
                        d.map_coord(oy + r, ox + c, mh, mw) == (py + ur, px + uc)
                    })
                })
            })
        })
}

/// Neighbour accuracy of an attack, judged with the key: placements are
/// first brought back to the upright frame when the attack recovered the SB
/// arrangement up to a whole-MB symmetry.
pub fn score_outcome(outcome: &AttackOutcome, plan: &TransformPlan) -> f64 {
    let grid = &plan.grid;
    let (rows, cols) = (grid.grid_rows, grid.grid_cols);
    let inv = invert_permutation(&plan.mb_perm);
    let d = residual_symmetry(&outcome.estimate, plan)
        .filter(|d| rows == cols || !d.rotation.is_quarter())
        .unwrap_or(SbParams::IDENTITY);
    let origins: Vec<usize> = (0..rows * cols)
        .map(|cell| {
            let (r, c) = d.map_coord(cell / cols, cell % cols, rows, cols);
            inv[outcome.placement[r * cols + c]]
        })
        .collect();
    attack_score(&origins, rows, cols)
}
