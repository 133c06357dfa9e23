//! A small deterministic video transformer: cube embedding, pre-norm encoder
//! blocks and a class-token head. Inference only.
//!
//! Token layout is `[class, (t=0, g=0), (t=0, g=1), …, (t=T'-1, g=G-1)]` where
//! `t` indexes groups of `tubelet` consecutive frames and `g` indexes MB grid
//! positions row-major. Positional row `1 + t·G + g` belongs to token `(t, g)`.
//!
//! All arithmetic is `f32` with fixed, sequential reduction order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Clip, CHANNELS};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("clip {got:?} does not match model input {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor {name} contains a non-finite value at flat index {index}")]
    NonFinite { name: String, index: usize },
}

/// Dense row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VtConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Cube depth in frames.
    pub tubelet: usize,
    /// Spatial patch size (equals the MB size).
    pub patch: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for VtConfig {
    /// Desk-scale configuration: 8 frames of 64×64, 2×16×16 cubes.
    fn default() -> Self {
        VtConfig {
            frames: 8,
            height: 64,
            width: 64,
            tubelet: 2,
            patch: 16,
            embed_dim: 32,
            n_layers: 2,
            n_heads: 4,
            mlp_ratio: 2,
            n_classes: 10,
            seed: 0,
        }
    }
}

impl VtConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if [
            self.frames,
            self.height,
            self.width,
            self.tubelet,
            self.patch,
            self.embed_dim,
            self.n_layers,
            self.n_heads,
            self.mlp_ratio,
            self.n_classes,
        ]
        .contains(&0)
        {
            return bad("all dimensions must be positive");
        }
        if self.frames % self.tubelet != 0 {
            return bad("frames must be a multiple of the tubelet depth");
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad("frame size must be a multiple of the patch size");
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad("embed_dim must be divisible by n_heads");
        }
        Ok(())
    }

    pub fn grid_rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_cols(&self) -> usize {
        self.width / self.patch
    }

    /// Spatial positions per frame group.
    pub fn positions(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn time_tokens(&self) -> usize {
        self.frames / self.tubelet
    }

    /// Patch tokens, excluding the class token.
    pub fn tokens(&self) -> usize {
        self.time_tokens() * self.positions()
    }

    /// Flattened cube length `3 · T · P · P`.
    pub fn cube_len(&self) -> usize {
        CHANNELS * self.tubelet * self.patch * self.patch
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.embed_dim, CHANNELS, self.tubelet, self.patch, self.patch]
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }
}

/// Cube-embedding kernel, either one shared convolution kernel
/// `(D, 3, T, P, P)` or one kernel per grid position `(G, D, 3, T, P, P)`.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbedKernel {
    Shared(Tensor),
    PerPosition(Tensor),
}

impl EmbedKernel {
    pub fn tensor(&self) -> &Tensor {
        match self {
            EmbedKernel::Shared(t) | EmbedKernel::PerPosition(t) => t,
        }
    }

    /// Kernel rows `(D × cube_len)` used at grid position `g`.
    pub fn at(&self, g: usize) -> &[f32] {
        match self {
            EmbedKernel::Shared(t) => &t.data,
            EmbedKernel::PerPosition(t) => {
                let n = t.shape[1..].iter().product::<usize>();
                &t.data[g * n..(g + 1) * n]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `(out, in)` row-major.
    pub w: Tensor,
    pub b: Vec<f32>,
}

impl Linear {
    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    fn apply(&self, x: &[f32], out: &mut [f32]) {
        let n = self.in_dim();
        for (o, (row, b)) in out.iter_mut().zip(self.w.data.chunks_exact(n).zip(&self.b)) {
            *o = dot(row, x) + b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

const LN_EPS: f32 = 1e-6;

impl LayerNorm {
    fn ones(d: usize) -> LayerNorm {
        LayerNorm {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    fn apply(&self, x: &[f32], out: &mut [f32]) {
        let n = x.len() as f32;
        let mean = x.iter().sum::<f32>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..x.len() {
            out[i] = (x[i] - mean) * inv * self.gamma[i] + self.beta[i];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    /// Fused query/key/value projection `(3D, D)`.
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Named weights of a plain or key-adapted model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: VtConfig,
    pub embed_kernel: EmbedKernel,
    pub embed_bias: Vec<f32>,
    pub cls: Vec<f32>,
    /// `(1 + tokens, D)`; row 0 belongs to the class token.
    pub pos: Tensor,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub head: Linear,
}

/// Weights whose embedding has been adapted to a key; same layout as [`ModelWeights`].
pub type AdaptedWeights = ModelWeights;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Symmetric sample normalization `(2p - 255) / 255`, so `255 - p` maps to `-v`.
pub fn normalize_sample(p: u8) -> f32 {
    (2.0 * p as f32 - 255.0) / 255.0
}

fn gelu(x: f32) -> f32 {
    // tanh approximation
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

struct TruncNormal {
    rng: ChaCha8Rng,
    normal: Normal<f32>,
}

impl TruncNormal {
    fn new(seed: u64) -> Self {
        TruncNormal {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).unwrap(),
        }
    }

    /// Standard normal resampled until it falls within ±2, scaled by `std`.
    fn sample(&mut self, std: f32) -> f32 {
        loop {
            let z = self.normal.sample(&mut self.rng);
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    fn tensor(&mut self, shape: Vec<usize>, std: f32) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.sample(std)).collect();
        Tensor::new(shape, data)
    }

    fn vec(&mut self, n: usize, std: f32) -> Vec<f32> {
        (0..n).map(|_| self.sample(std)).collect()
    }

    fn linear(&mut self, out: usize, inp: usize) -> Linear {
        Linear {
            w: self.tensor(vec![out, inp], 1.0 / (inp as f32).sqrt()),
            b: self.vec(out, 0.02),
        }
    }
}

/// Deterministic random weights.
///
/// Every value is drawn from a standard normal truncated at ±2σ (rejection
/// sampling on a ChaCha8 stream seeded with `cfg.seed`) and scaled: linear and
/// embedding weights by `1/sqrt(fan_in)`, biases by 0.02, class token and
/// positional rows by 0.5. Layer norms start at unit gain and zero shift.
pub fn init_weights(cfg: &VtConfig) -> Result<ModelWeights, ModelError> {
    cfg.validate()?;
    let mut g = TruncNormal::new(cfg.seed);
    let d = cfg.embed_dim;
    let embed_kernel = EmbedKernel::Shared(g.tensor(cfg.kernel_shape(), 1.0 / (cfg.cube_len() as f32).sqrt()));
    let embed_bias = g.vec(d, 0.02);
    let cls = g.vec(d, 0.5);
    let pos = g.tensor(vec![1 + cfg.tokens(), d], 0.5);
    let blocks = (0..cfg.n_layers)
        .map(|_| EncoderBlock {
            ln1: LayerNorm::ones(d),
            qkv: g.linear(3 * d, d),
            proj: g.linear(d, d),
            ln2: LayerNorm::ones(d),
            fc1: g.linear(cfg.hidden_dim(), d),
            fc2: g.linear(d, cfg.hidden_dim()),
        })
        .collect();
    let head = g.linear(cfg.n_classes, d);
    Ok(ModelWeights {
        config: *cfg,
        embed_kernel,
        embed_bias,
        cls,
        pos,
        blocks,
        norm: LayerNorm::ones(d),
        head,
    })
}

impl ModelWeights {
    /// Every named tensor, flattened, in canonical order.
    pub fn named_values(&self) -> Vec<(String, &[f32])> {
        let mut v: Vec<(String, &[f32])> = vec![
            ("embed.kernel".into(), &self.embed_kernel.tensor().data),
            ("embed.bias".into(), &self.embed_bias),
            ("cls".into(), &self.cls),
            ("pos".into(), &self.pos.data),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("enc.{i}.ln1.g"), &b.ln1.gamma));
            v.push((format!("enc.{i}.ln1.b"), &b.ln1.beta));
            v.push((format!("enc.{i}.attn.qkv.w"), &b.qkv.w.data));
            v.push((format!("enc.{i}.attn.qkv.b"), &b.qkv.b));
            v.push((format!("enc.{i}.attn.proj.w"), &b.proj.w.data));
            v.push((format!("enc.{i}.attn.proj.b"), &b.proj.b));
            v.push((format!("enc.{i}.ln2.g"), &b.ln2.gamma));
            v.push((format!("enc.{i}.ln2.b"), &b.ln2.beta));
            v.push((format!("enc.{i}.mlp.fc1.w"), &b.fc1.w.data));
            v.push((format!("enc.{i}.mlp.fc1.b"), &b.fc1.b));
            v.push((format!("enc.{i}.mlp.fc2.w"), &b.fc2.w.data));
            v.push((format!("enc.{i}.mlp.fc2.b"), &b.fc2.b));
        }
        v.push(("norm.g".into(), &self.norm.gamma));
        v.push(("norm.b".into(), &self.norm.beta));
        v.push(("head.w".into(), &self.head.w.data));
        v.push(("head.b".into(), &self.head.b));
        v
    }

    /// Fails on the first NaN or infinity.
    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (name, values) in self.named_values() {
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { name, index });
            }
        }
        Ok(())
    }

    /// Checks tensor shapes against the config.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let c = &self.config;
        c.validate()?;
        let d = c.embed_dim;
        let expect = |name: &str, got: &[usize], expected: Vec<usize>| {
            if got != expected.as_slice() {
                Err(ModelError::Shape {
                    name: name.to_string(),
                    expected,
                    got: got.to_vec(),
                })
            } else {
                Ok(())
            }
        };
        let kshape = match &self.embed_kernel {
            EmbedKernel::Shared(_) => c.kernel_shape(),
            EmbedKernel::PerPosition(_) => {
                let mut s = vec![c.positions()];
                s.extend(c.kernel_shape());
                s
            }
        };
        expect("embed.kernel", &self.embed_kernel.tensor().shape, kshape)?;
        expect("embed.bias", &[self.embed_bias.len()], vec![d])?;
        expect("cls", &[self.cls.len()], vec![d])?;
        expect("pos", &self.pos.shape, vec![1 + c.tokens(), d])?;
        expect("enc", &[self.blocks.len()], vec![c.n_layers])?;
        for (i, b) in self.blocks.iter().enumerate() {
            expect(&format!("enc.{i}.attn.qkv.w"), &b.qkv.w.shape, vec![3 * d, d])?;
            expect(&format!("enc.{i}.attn.proj.w"), &b.proj.w.shape, vec![d, d])?;
            expect(&format!("enc.{i}.mlp.fc1.w"), &b.fc1.w.shape, vec![c.hidden_dim(), d])?;
            expect(&format!("enc.{i}.mlp.fc2.w"), &b.fc2.w.shape, vec![d, c.hidden_dim()])?;
        }
        expect("head.w", &self.head.w.shape, vec![c.n_classes, d])?;
        Ok(())
    }
}

/// Flattened cube at time slot `t`, grid position `g`, in kernel order `[c][t][y][x]`.
pub fn extract_cube(clip: &Clip, cfg: &VtConfig, t: usize, g: usize) -> Vec<f32> {
    let p = cfg.patch;
    let (gy, gx) = ((g / cfg.grid_cols()) * p, (g % cfg.grid_cols()) * p);
    let mut cube = Vec::with_capacity(cfg.cube_len());
    for c in 0..CHANNELS {
        for dt in 0..cfg.tubelet {
            let f = t * cfg.tubelet + dt;
            for y in 0..p {
                for x in 0..p {
                    cube.push(normalize_sample(clip.get(f, gy + y, gx + x, c)));
                }
            }
        }
    }
    cube
}

/// Token matrix `(1 + tokens) × D`, class token first.
pub fn embed(clip: &Clip, w: &ModelWeights) -> Result<Vec<f32>, ModelError> {
    let cfg = &w.config;
    let expected = (cfg.frames, cfg.height, cfg.width);
    if clip.shape() != expected {
        return Err(ModelError::InputShape {
            expected,
            got: clip.shape(),
        });
    }
    let d = cfg.embed_dim;
    let n = cfg.cube_len();
    let mut tokens = vec![0f32; (1 + cfg.tokens()) * d];
    for i in 0..d {
        tokens[i] = w.cls[i] + w.pos.data[i];
    }
    let positions = cfg.positions();
    for t in 0..cfg.time_tokens() {
        for g in 0..positions {
            let cube = extract_cube(clip, cfg, t, g);
            let kernel = w.embed_kernel.at(g);
            let row = 1 + t * positions + g;
            let pos = &w.pos.data[row * d..(row + 1) * d];
            let out = &mut tokens[row * d..(row + 1) * d];
            for (k, o) in out.iter_mut().enumerate() {
                *o = dot(&kernel[k * n..(k + 1) * n], &cube) + w.embed_bias[k] + pos[k];
            }
        }
    }
    Ok(tokens)
}

fn attention(block: &EncoderBlock, x: &[f32], n_heads: usize, d: usize) -> Vec<f32> {
    let n = x.len() / d;
    let hd = d / n_heads;
    let mut qkv = vec![0f32; n * 3 * d];
    for i in 0..n {
        block.qkv.apply(&x[i * d..(i + 1) * d], &mut qkv[i * 3 * d..(i + 1) * 3 * d]);
    }
    let scale = 1.0 / (hd as f32).sqrt();
    let mut ctx = vec![0f32; n * d];
    let mut scores = vec![0f32; n];
    for h in 0..n_heads {
        for i in 0..n {
            let q = &qkv[i * 3 * d + h * hd..i * 3 * d + (h + 1) * hd];
            let mut max = f32::NEG_INFINITY;
            for j in 0..n {
                let k = &qkv[j * 3 * d + d + h * hd..j * 3 * d + d + (h + 1) * hd];
                scores[j] = dot(q, k) * scale;
                max = max.max(scores[j]);
            }
            let mut sum = 0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let out = &mut ctx[i * d + h * hd..i * d + (h + 1) * hd];
            for (j, s) in scores.iter().enumerate() {
                let v = &qkv[j * 3 * d + 2 * d + h * hd..j * 3 * d + 2 * d + (h + 1) * hd];
                let p = s / sum;
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += p * vv;
                }
            }
        }
    }
    let mut out = vec![0f32; n * d];
    for i in 0..n {
        block.proj.apply(&ctx[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
    }
    out
}

/// Runs the encoder on a token matrix and returns class logits.
pub fn forward_tokens(mut x: Vec<f32>, w: &ModelWeights) -> Vec<f32> {
    let cfg = &w.config;
    let d = cfg.embed_dim;
    let n = x.len() / d;
    let mut normed = vec![0f32; n * d];
    let hidden = cfg.hidden_dim();
    let mut h = vec![0f32; hidden];
    let mut m = vec![0f32; d];
    for block in &w.blocks {
        for i in 0..n {
            block.ln1.apply(&x[i * d..(i + 1) * d], &mut normed[i * d..(i + 1) * d]);
        }
        let a = attention(block, &normed, cfg.n_heads, d);
        for (xi, ai) in x.iter_mut().zip(&a) {
            *xi += ai;
        }
        for i in 0..n {
            let row = &mut x[i * d..(i + 1) * d];
            block.ln2.apply(row, &mut normed[..d]);
            block.fc1.apply(&normed[..d], &mut h);
            for v in h.iter_mut() {
                *v = gelu(*v);
            }
            block.fc2.apply(&h, &mut m);
            for (r, mv) in row.iter_mut().zip(&m) {
                *r += mv;
            }
        }
    }
    let mut cls = vec![0f32; d];
    w.norm.apply(&x[..d], &mut cls);
    let mut logits = vec![0f32; cfg.n_classes];
    w.head.apply(&cls, &mut logits);
    logits
}

/// Class logits for `clip`.
pub fn forward(clip: &Clip, w: &ModelWeights) -> Result<Vec<f32>, ModelError> {
    w.check_shapes()?;
    w.check_finite()?;
    let tokens = embed(clip, w)?;
    Ok(forward_tokens(tokens, w))
}

/// Index of the largest logit (first on ties).
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyschedule::SplitMix64;

    fn random_clip(cfg: &VtConfig, seed: u64) -> Clip {
        let mut g = SplitMix64::new(seed);
        let n = cfg.frames * cfg.height * cfg.width * 3;
        Clip::new(cfg.frames, cfg.height, cfg.width, (0..n).map(|_| g.next_u64() as u8).collect()).unwrap()
    }

    fn small() -> VtConfig {
        VtConfig {
            frames: 4,
            height: 32,
            width: 32,
            ..VtConfig::default()
        }
    }

    #[test]
    fn desk_default_shapes() {
        let cfg = VtConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.kernel_shape(), vec![32, 3, 2, 16, 16]);
        assert_eq!(cfg.tokens(), 64);
        let w = init_weights(&cfg).unwrap();
        assert_eq!(w.embed_kernel.tensor().shape, vec![32, 3, 2, 16, 16]);
        assert_eq!(w.pos.shape, vec![65, 32]);
        w.check_shapes().unwrap();
        let clip = random_clip(&cfg, 1);
        assert_eq!(embed(&clip, &w).unwrap().len(), 65 * 32);
    }

    #[test]
    fn config_validation() {
        let mut c = VtConfig::default();
        c.frames = 7;
        assert!(c.validate().is_err());
        let mut c = VtConfig::default();
        c.n_heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = init_weights(&VtConfig::default()).unwrap();
        let b = init_weights(&VtConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = init_weights(&VtConfig {
            seed: 1,
            ..VtConfig::default()
        })
        .unwrap();
        assert_ne!(a.embed_kernel, c.embed_kernel);
        assert!(a.embed_kernel.tensor().data.iter().all(|v| v.abs() <= 2.0 / (1536f32).sqrt()));
    }

    #[test]
    fn zero_clip_gives_constant_tokens() {
        let cfg = small();
        let mut w = init_weights(&cfg).unwrap();
        w.embed_bias.iter_mut().for_each(|b| *b = 0.0);
        w.pos.data.iter_mut().for_each(|p| *p = 0.0);
        let clip = Clip::filled(cfg.frames, cfg.height, cfg.width, 0).unwrap();
        let tokens = embed(&clip, &w).unwrap();
        let d = cfg.embed_dim;
        let n = cfg.cube_len();
        let kernel = &w.embed_kernel.tensor().data;
        for k in 0..d {
            let expect: f32 = -kernel[k * n..(k + 1) * n].iter().sum::<f32>();
            for row in 1..=cfg.tokens() {
                let v = tokens[row * d + k];
                assert!((v - expect).abs() < 1e-5, "{v} vs {expect}");
                assert_eq!(v, tokens[d + k]);
            }
        }
    }

    #[test]
    fn cube_equal_to_kernel_row_gives_squared_norm() {
        // Use a kernel row with entries on the normalized sample lattice so the
        // cube can be built from 8-bit samples exactly.
        let cfg = small();
        let mut w = init_weights(&cfg).unwrap();
        w.embed_bias.iter_mut().for_each(|b| *b = 0.0);
        w.pos.data.iter_mut().for_each(|p| *p = 0.0);
        let n = cfg.cube_len();
        let target = 5;
        let mut samples = vec![0u8; n];
        let mut g = SplitMix64::new(3);
        for (i, s) in samples.iter_mut().enumerate() {
            *s = g.next_u64() as u8;
            if let EmbedKernel::Shared(t) = &mut w.embed_kernel {
                t.data[target * n + i] = normalize_sample(*s);
            }
        }
        // Clip: zeros except cube (t=1, g=2) which carries `samples`.
        let mut clip = Clip::filled(cfg.frames, cfg.height, cfg.width, 0).unwrap();
        let (tt, gg) = (1, 2);
        let p = cfg.patch;
        let (gy, gx) = ((gg / cfg.grid_cols()) * p, (gg % cfg.grid_cols()) * p);
        let mut i = 0;
        for c in 0..3 {
            for dt in 0..cfg.tubelet {
                for y in 0..p {
                    for x in 0..p {
                        clip.set(tt * cfg.tubelet + dt, gy + y, gx + x, c, samples[i]);
                        i += 1;
                    }
                }
            }
        }
        let tokens = embed(&clip, &w).unwrap();
        let row = 1 + tt * cfg.positions() + gg;
        let got = tokens[row * cfg.embed_dim + target] as f64;
        let expect: f64 = samples.iter().map(|&s| (normalize_sample(s) as f64).powi(2)).sum();
        assert!((got - expect).abs() < 1e-3 * expect, "{got} vs {expect}");
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small();
        let w = init_weights(&cfg).unwrap();
        let clip = random_clip(&cfg, 9);
        let a = forward(&clip, &w).unwrap();
        let b = forward(&clip, &w).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.len(), cfg.n_classes);
    }

    #[test]
    fn token_permutation_leaves_logits() {
        let cfg = small();
        let w = init_weights(&cfg).unwrap();
        let clip = random_clip(&cfg, 10);
        let tokens = embed(&clip, &w).unwrap();
        let d = cfg.embed_dim;
        let n = cfg.tokens();
        let perm = crate::keyschedule::fisher_yates(n, &mut SplitMix64::new(77));
        let mut shuffled = tokens.clone();
        for (i, &p) in perm.iter().enumerate() {
            shuffled[(1 + p) * d..(2 + p) * d].copy_from_slice(&tokens[(1 + i) * d..(2 + i) * d]);
        }
        let a = forward_tokens(tokens, &w);
        let b = forward_tokens(shuffled, &w);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn nan_weights_fail_fast() {
        let cfg = small();
        let mut w = init_weights(&cfg).unwrap();
        w.blocks[1].fc1.b[3] = f32::NAN;
        let clip = random_clip(&cfg, 1);
        assert_eq!(
            forward(&clip, &w),
            Err(ModelError::NonFinite {
                name: "enc.1.mlp.fc1.b".into(),
                index: 3
            })
        );
    }

    #[test]
    fn wrong_input_shape() {
        let cfg = small();
        let w = init_weights(&cfg).unwrap();
        let clip = Clip::filled(2, 32, 32, 0).unwrap();
        assert!(matches!(forward(&clip, &w), Err(ModelError::InputShape { .. })));
    }
}
