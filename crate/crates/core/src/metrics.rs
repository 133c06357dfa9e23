//! Reconstruction quality and block-correlation measurements.

use thiserror::Error;

use crate::geometry::{BlockGrid, Clip, GeometryError, CHANNELS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn mse(a: &Clip, b: &Clip) -> Result<f64, MetricsError> {
    a.same_shape(b)?;
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data().len() as f64)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// PSNR in dB over every sample of every frame. Identical clips give `f64::INFINITY`.
pub fn psnr(a: &Clip, b: &Clip) -> Result<f64, MetricsError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Per-frame PSNR values.
pub fn frame_psnr(a: &Clip, b: &Clip) -> Result<Vec<f64>, MetricsError> {
    a.same_shape(b)?;
    Ok(a
        .frames_iter()
        .zip(b.frames_iter())
        .map(|(fa, fb)| {
            let sum: f64 = fa.iter().zip(fb).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
            psnr_from_mse(sum / fa.len() as f64)
        })
        .collect())
}

/// Mean of per-frame PSNR values; infinite frames (exact matches) are left out
/// unless every frame is exact.
pub fn mean_frame_psnr(a: &Clip, b: &Clip) -> Result<f64, MetricsError> {
    Ok(mean_finite(&frame_psnr(a, b)?))
}

/// Mean over finite values, `INFINITY` if all are infinite, `NAN` if empty.
pub fn mean_finite(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return f64::INFINITY;
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

/// Mean cross-boundary correlation of a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub score: f64,
    /// False when no boundary line had any variance (score is then 0).
    pub defined: bool,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Mean Pearson correlation between the two pixel lines on either side of
/// every interior MB boundary (all channels pooled per line).
pub fn neighbor_correlation(frame: &[u8], grid: &BlockGrid) -> Correlation {
    let (h, w) = (grid.frame_height(), grid.frame_width());
    let at = |y: usize, x: usize, c: usize| frame[(y * w + x) * CHANNELS + c] as f64;
    let mut scores = Vec::new();
    for k in 1..grid.grid_cols {
        let x = k * grid.mb_w;
        let mut a = Vec::with_capacity(h * CHANNELS);
        let mut b = Vec::with_capacity(h * CHANNELS);
        for y in 0..h {
            for c in 0..CHANNELS {
                a.push(at(y, x - 1, c));
                b.push(at(y, x, c));
            }
        }
        scores.extend(pearson(&a, &b));
    }
    for k in 1..grid.grid_rows {
        let y = k * grid.mb_h;
        let mut a = Vec::with_capacity(w * CHANNELS);
        let mut b = Vec::with_capacity(w * CHANNELS);
        for x in 0..w {
            for c in 0..CHANNELS {
                a.push(at(y - 1, x, c));
                b.push(at(y, x, c));
            }
        }
        scores.extend(pearson(&a, &b));
    }
    if scores.is_empty() {
        return Correlation {
            score: 0.0,
            defined: false,
        };
    }
    Correlation {
        score: scores.iter().sum::<f64>() / scores.len() as f64,
        defined: true,
    }
}

/// Shannon entropy (bits) of horizontal neighbour differences over all frames and channels.
pub fn adjacent_difference_entropy(clip: &Clip) -> f64 {
    let mut hist = [0u64; 511];
    let w = clip.width();
    for f in 0..clip.frames() {
        for y in 0..clip.height() {
            for x in 1..w {
                for c in 0..CHANNELS {
                    let d = clip.get(f, y, x, c) as i32 - clip.get(f, y, x - 1, c) as i32;
                    hist[(d + 255) as usize] += 1;
                }
            }
        }
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}
