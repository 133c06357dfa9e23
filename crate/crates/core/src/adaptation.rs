//! Key-dependent adaptation of the cube embedding.
//!
//! Samples enter the model as `v = (2p - 255) / 255`, so pixel inversion is a
//! sign flip. The embedding kernel is then transformed exactly like an image
//! block: the same spatial routing, the same channel permutation and a
//! negation where the pixels were inverted. For every cube `x`,
//! `<E'_g, encrypt(x)> = <E, x>`. Positional rows follow the MB permutation so
//! the adapted model sees the plain model's token set in a different order.

use thiserror::Error;

use crate::cipher::{mb_routes, CipherError};
use crate::geometry::CHANNELS;
use crate::keyschedule::{invert_permutation, Mode, TransformPlan};
use crate::model::{EmbedKernel, ModelWeights, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum AdaptError {
    #[error("plan grid is {plan_rows}x{plan_cols} MBs of {plan_mb}px, model expects {rows}x{cols} patches of {patch}px")]
    GridMismatch {
        plan_rows: usize,
        plan_cols: usize,
        plan_mb: usize,
        rows: usize,
        cols: usize,
        patch: usize,
    },
    #[error("positional table has {got} rows, expected {expected}")]
    PosLength { expected: usize, got: usize },
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

fn check_grid(w: &ModelWeights, plan: &TransformPlan) -> Result<(), AdaptError> {
    let c = &w.config;
    let g = &plan.grid;
    if g.mb_h != c.patch || g.mb_w != c.patch || g.grid_rows != c.grid_rows() || g.grid_cols != c.grid_cols() {
        return Err(AdaptError::GridMismatch {
            plan_rows: g.grid_rows,
            plan_cols: g.grid_cols,
            plan_mb: g.mb_h,
            rows: c.grid_rows(),
            cols: c.grid_cols(),
            patch: c.patch,
        });
    }
    Ok(())
}

/// Encrypts one kernel `(D, 3, T, P, P)` with MB-local routing.
fn transform_kernel(kernel: &[f32], dims: (usize, usize, usize), routes: &[crate::cipher::Route]) -> Vec<f32> {
    let (d, t, area) = dims;
    let mut out = vec![0f32; kernel.len()];
    let chan = t * area;
    let per_out = CHANNELS * chan;
    for k in 0..d {
        let src = &kernel[k * per_out..(k + 1) * per_out];
        let dst = &mut out[k * per_out..(k + 1) * per_out];
        for (i, r) in routes.iter().enumerate() {
            for c in 0..CHANNELS {
                let sc = r.perm[c] as usize;
                for tt in 0..t {
                    let v = src[sc * chan + tt * area + r.src as usize];
                    dst[c * chan + tt * area + i] = if r.invert { -v } else { v };
                }
            }
        }
    }
    out
}

/// Adapts the embedding kernel: the kernel at grid position `g` is the
/// transformed kernel of plaintext MB `π⁻¹(g)`. V1 plans on a shared kernel
/// yield a shared kernel; anything else is unrolled per position.
pub fn adapt_kernel(w: &ModelWeights, plan: &TransformPlan) -> Result<EmbedKernel, AdaptError> {
    check_grid(w, plan)?;
    let c = &w.config;
    let dims = (c.embed_dim, c.tubelet, c.patch * c.patch);
    if let (Mode::V1, EmbedKernel::Shared(t)) = (plan.mode, &w.embed_kernel) {
        let routes = mb_routes(plan, 0)?;
        return Ok(EmbedKernel::Shared(Tensor::new(
            t.shape.clone(),
            transform_kernel(&t.data, dims, &routes),
        )));
    }
    let positions = c.positions();
    let inv = invert_permutation(&plan.mb_perm);
    let per = c.embed_dim * c.cube_len();
    let mut data = Vec::with_capacity(positions * per);
    for &m in inv.iter() {
        let routes = mb_routes(plan, m)?;
        data.extend(transform_kernel(w.embed_kernel.at(m), dims, &routes));
    }
    let mut shape = vec![positions];
    shape.extend(c.kernel_shape());
    Ok(EmbedKernel::PerPosition(Tensor::new(shape, data)))
}

/// Moves positional rows with their MBs: row `(t, g)` takes row `(t, π⁻¹(g))`.
/// The class-token row stays put.
pub fn adapt_pos_embed(w: &ModelWeights, plan: &TransformPlan) -> Result<Tensor, AdaptError> {
    let c = &w.config;
    let positions = plan.mb_perm.len();
    let expected = 1 + c.time_tokens() * positions;
    if w.pos.shape[0] != expected || positions != c.positions() {
        return Err(AdaptError::PosLength {
            expected: 1 + c.tokens(),
            got: w.pos.shape[0],
        });
    }
    let d = c.embed_dim;
    let inv = invert_permutation(&plan.mb_perm);
    let mut out = w.pos.clone();
    for t in 0..c.time_tokens() {
        for (g, &m) in inv.iter().enumerate() {
            let dst = 1 + t * positions + g;
            let src = 1 + t * positions + m;
            out.data[dst * d..(dst + 1) * d].copy_from_slice(&w.pos.data[src * d..(src + 1) * d]);
        }
    }
    Ok(out)
}

/// Full adapted model for clips encrypted with `plan`.
pub fn adapt(w: &ModelWeights, plan: &TransformPlan) -> Result<ModelWeights, AdaptError> {
    let embed_kernel = adapt_kernel(w, plan)?;
    let pos = adapt_pos_embed(w, plan)?;
    Ok(ModelWeights {
        embed_kernel,
        pos,
        ..w.clone()
    })
}
