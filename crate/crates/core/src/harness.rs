//! Experiment grid: clips × methods × codecs × rate points, one report row per cell.
//!
//! Config (TOML):
//!
//! ```toml
//! clips = ["synthetic:0", "synthetic:1", "clips/walk.cfvr"]
//! methods = ["plain", "cfe-v1", "cfe-v2", "pixel-shuffle"]
//! codecs = ["none", "toy"]          # "external" needs [external]
//! qualities = [90]                  # fixed toy-codec qualities
//! target_bpp = [0.8, 0.6, 0.4]      # resolved to a quality on the plain clip
//! seed = 7                          # keys, shuffle seed and model init
//! jobs = 4
//!
//! [synthetic]                       # size of synthetic:N clips
//! frames = 8
//! height = 64
//! width = 64
//!
//! [external]
//! cmd = "mycodec --q {quality} -s {width}x{height} -o {bitstream}"
//! fourcc = "MJPG"
//! ```
//!
//! Relative clip paths resolve against `$CFEVID_CLIP_DIR` when set, else
//! against the config file's directory.
//!
//! Every cell encrypts, compresses, decompresses, then (a) decrypts and
//! measures PSNR against the original and (b) runs the key-adapted model on
//! the decoded ciphertext and compares its logits with the plain model on the
//! original clip. Rows come out in config order regardless of `jobs`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::adapt;
use crate::cipher::{decrypt, encrypt, pixel_shuffle, pixel_unshuffle};
use crate::codec::{decode_intra, encode_intra, external_codec, parse_template, rate_search};
use crate::container::load_cfvr;
use crate::geometry::{BlockGrid, Clip};
use crate::keyschedule::{expand, KeyMaterial, Mode, SplitMix64, TransformPlan};
use crate::metrics::{mean_finite, psnr};
use crate::model::{argmax, forward, init_weights, ModelWeights, VtConfig};
use crate::synth::synthetic_clip;

/// Max-abs logit difference accepted as equivalent.
pub const LOGIT_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid grid config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("report input line {line}: {reason}")]
    Report { line: u64, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "plain")]
    Plain,
    #[serde(rename = "cfe-v1")]
    CfeV1,
    #[serde(rename = "cfe-v2")]
    CfeV2,
    #[serde(rename = "pixel-shuffle")]
    PixelShuffle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::CfeV1 => "cfe-v1",
            Method::CfeV2 => "cfe-v2",
            Method::PixelShuffle => "pixel-shuffle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    None,
    Toy,
    External,
}

impl CodecKind {
    pub fn name(self) -> &'static str {
        match self {
            CodecKind::None => "none",
            CodecKind::Toy => "toy",
            CodecKind::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSize {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SyntheticSize {
    fn default() -> Self {
        SyntheticSize {
            frames: 8,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub cmd: String,
    #[serde(default = "default_fourcc")]
    pub fourcc: String,
}

fn default_fourcc() -> String {
    "MJPG".into()
}

fn default_codecs() -> Vec<CodecKind> {
    vec![CodecKind::Toy]
}

fn default_jobs() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub clips: Vec<String>,
    pub methods: Vec<Method>,
    #[serde(default = "default_codecs")]
    pub codecs: Vec<CodecKind>,
    #[serde(default)]
    pub qualities: Vec<u32>,
    #[serde(default)]
    pub target_bpp: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub synthetic: SyntheticSize,
    pub external: Option<ExternalConfig>,
    /// Directory relative clip paths resolve against; filled in by [`GridConfig::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl GridConfig {
    pub fn parse(text: &str) -> Result<GridConfig, GridError> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| GridError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GridConfig, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = GridConfig::parse(&text)?;
        cfg.base_dir = match std::env::var_os("CFEVID_CLIP_DIR") {
            Some(dir) => Some(PathBuf::from(dir)),
            None => path.parent().map(Path::to_path_buf),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.methods.is_empty() {
            return Err(GridError::Config("method list is empty".into()));
        }
        if self.clips.is_empty() {
            return Err(GridError::Config("clip list is empty".into()));
        }
        if self.codecs.is_empty() {
            return Err(GridError::Config("codec list is empty".into()));
        }
        let lossy = self.codecs.iter().any(|c| *c != CodecKind::None);
        if lossy && self.qualities.is_empty() && self.target_bpp.is_empty() {
            return Err(GridError::Config("a lossy codec needs qualities or target_bpp".into()));
        }
        if let Some(q) = self.qualities.iter().find(|q| !(1..=100).contains(*q)) {
            return Err(GridError::Config(format!("quality {q} outside 1..=100")));
        }
        if let Some(b) = self.target_bpp.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(GridError::Config(format!("target_bpp {b} must be positive")));
        }
        if self.codecs.contains(&CodecKind::External) && self.external.is_none() {
            return Err(GridError::Config("codec \"external\" needs an [external] table".into()));
        }
        if self.jobs == 0 {
            return Err(GridError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    fn rate_points(&self, codec: CodecKind) -> Vec<RatePoint> {
        if codec == CodecKind::None {
            return vec![RatePoint::Lossless];
        }
        let mut v: Vec<RatePoint> = self.qualities.iter().map(|&q| RatePoint::Quality(q)).collect();
        v.extend(self.target_bpp.iter().map(|&b| RatePoint::Target(b)));
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum RatePoint {
    Lossless,
    Quality(u32),
    Target(f64),
}

/// One grid cell's measurements. PSNR is `inf` for exact reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub clip: String,
    pub method: String,
    pub codec: String,
    pub quality: Option<u32>,
    pub target_bpp: Option<f64>,
    pub bpp: Option<f64>,
    pub psnr_decrypted: Option<f64>,
    pub psnr_compressed: Option<f64>,
    pub logit_delta: Option<f64>,
    pub argmax_agree: Option<bool>,
    pub logit_pass: Option<bool>,
    pub error: String,
}

impl ReportRow {
    fn empty(clip: &str, method: Method, codec: CodecKind, rate: RatePoint) -> ReportRow {
        ReportRow {
            clip: clip.to_string(),
            method: method.name().into(),
            codec: codec.name().into(),
            quality: match rate {
                RatePoint::Quality(q) => Some(q),
                _ => None,
            },
            target_bpp: match rate {
                RatePoint::Target(b) => Some(b),
                _ => None,
            },
            bpp: None,
            psnr_decrypted: None,
            psnr_compressed: None,
            logit_delta: None,
            argmax_agree: None,
            logit_pass: None,
            error: String::new(),
        }
    }
}

/// Everything derived once per clip and shared by its cells.
struct ClipContext {
    clip: Clip,
    keys: [KeyMaterial; 2],
    shuffle_seed: u64,
    /// Plain model and its logits on the original clip, if the clip fits a model.
    model: Result<(ModelWeights, Vec<f32>), String>,
}

/// Keys and shuffle seed of clip number `index` under grid seed `seed`.
pub fn clip_secrets(seed: u64, index: usize) -> (u64, u64, u64) {
    let mut rng = SplitMix64::new(seed ^ (index as u64).wrapping_mul(0xD605_BBB5_8C8A_BBEF));
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

fn load_clip(cfg: &GridConfig, source: &str) -> Result<Clip, String> {
    if let Some(n) = source.strip_prefix("synthetic:") {
        let seed: u64 = n.parse().map_err(|_| format!("bad synthetic clip source {source:?}"))?;
        let s = &cfg.synthetic;
        return Ok(synthetic_clip(seed, s.frames, s.height, s.width));
    }
    let mut path = PathBuf::from(source);
    if path.is_relative() {
        if let Some(base) = &cfg.base_dir {
            path = base.join(path);
        }
    }
    load_cfvr(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn model_for(clip: &Clip, seed: u64) -> Result<(ModelWeights, Vec<f32>), String> {
    let cfg = VtConfig {
        frames: clip.frames(),
        height: clip.height(),
        width: clip.width(),
        seed,
        ..VtConfig::default()
    };
    let w = init_weights(&cfg).map_err(|e| e.to_string())?;
    let logits = forward(clip, &w).map_err(|e| e.to_string())?;
    Ok((w, logits))
}

fn context(cfg: &GridConfig, index: usize, source: &str) -> Result<ClipContext, String> {
    let clip = load_clip(cfg, source)?;
    let (k_st, k_ms, shuffle_seed) = clip_secrets(cfg.seed, index);
    let model = model_for(&clip, cfg.seed);
    Ok(ClipContext {
        clip,
        keys: [KeyMaterial::new(Mode::V1, k_st, k_ms), KeyMaterial::new(Mode::V2, k_st, k_ms)],
        shuffle_seed,
        model,
    })
}

fn plan_for(ctx: &ClipContext, method: Method) -> Result<Option<TransformPlan>, String> {
    let keys = match method {
        Method::CfeV1 => &ctx.keys[0],
        Method::CfeV2 => &ctx.keys[1],
        _ => return Ok(None),
    };
    let grid = BlockGrid::default_for(ctx.clip.height(), ctx.clip.width()).map_err(|e| e.to_string())?;
    Ok(Some(expand(keys, &grid)))
}

fn run_cell(cfg: &GridConfig, ctx: &ClipContext, method: Method, codec: CodecKind, rate: RatePoint, row: &mut ReportRow) -> Result<(), String> {
    let plan = plan_for(ctx, method)?;
    let protected = match (method, &plan) {
        (Method::PixelShuffle, _) => pixel_shuffle(&ctx.clip, ctx.shuffle_seed),
        (_, Some(p)) => encrypt(&ctx.clip, p).map_err(|e| e.to_string())?,
        _ => ctx.clip.clone(),
    };
    let quality = match rate {
        RatePoint::Lossless => None,
        RatePoint::Quality(q) => Some(q),
        RatePoint::Target(b) => {
            if codec != CodecKind::Toy {
                return Err("target_bpp needs the toy codec".into());
            }
            // matched quality: resolved on the unprotected clip
            let choice = rate_search(&ctx.clip, b).map_err(|e| e.to_string())?;
            if choice.out_of_tolerance {
                row.error = format!("target {b} bpp unreachable, nearest {:.4}", choice.bpp);
            }
            Some(choice.quality)
        }
    };
    row.quality = quality;
    let (decoded, bpp) = match codec {
        CodecKind::None => (protected.clone(), Some(24.0)),
        CodecKind::Toy => {
            let q = quality.expect("lossy cells carry a quality");
            let s = encode_intra(&protected, q).map_err(|e| e.to_string())?;
            (decode_intra(&s).map_err(|e| e.to_string())?, Some(s.bpp()))
        }
        CodecKind::External => {
            let ext = cfg.external.as_ref().expect("validated");
            let q = quality.expect("lossy cells carry a quality").to_string();
            let argv: Vec<String> = parse_template(&ext.cmd)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|a| a.replace("{quality}", &q))
                .collect();
            let out = external_codec(&protected, &argv, &ext.fourcc).map_err(|e| e.to_string())?;
            (out.clip, out.bpp)
        }
    };
    row.bpp = bpp;
    row.psnr_compressed = Some(psnr(&protected, &decoded).map_err(|e| e.to_string())?);
    let restored = match (method, &plan) {
        (Method::PixelShuffle, _) => pixel_unshuffle(&decoded, ctx.shuffle_seed),
        (_, Some(p)) => decrypt(&decoded, p).map_err(|e| e.to_string())?,
        _ => decoded.clone(),
    };
    row.psnr_decrypted = Some(psnr(&ctx.clip, &restored).map_err(|e| e.to_string())?);

    let (plain_w, plain_logits) = ctx.model.as_ref().map_err(|e| format!("model: {e}"))?;
    // the shuffle baseline has no key-derived adaptation; it meets the plain model as is
    let logits = match &plan {
        Some(p) => forward(&decoded, &adapt(plain_w, p).map_err(|e| e.to_string())?),
        None => forward(&decoded, plain_w),
    }
    .map_err(|e| e.to_string())?;
    let delta = logits
        .iter()
        .zip(plain_logits)
        .map(|(a, b)| (a - b).abs())
        .fold(0f32, f32::max);
    row.logit_delta = Some(delta as f64);
    row.argmax_agree = Some(argmax(&logits) == argmax(plain_logits));
    row.logit_pass = Some(delta <= LOGIT_TOLERANCE);
    Ok(())
}

/// Runs every cell; failures land in the row's `error` field.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<ReportRow>, GridError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| GridError::Config(e.to_string()))?;
    pool.install(|| {
        let contexts: Vec<Result<ClipContext, String>> = cfg
            .clips
            .par_iter()
            .enumerate()
            .map(|(i, source)| context(cfg, i, source))
            .collect();
        let mut cells = Vec::new();
        for (ci, source) in cfg.clips.iter().enumerate() {
            for &method in &cfg.methods {
                for &codec in &cfg.codecs {
                    for rate in cfg.rate_points(codec) {
                        cells.push((ci, source.as_str(), method, codec, rate));
                    }
                }
            }
        }
        Ok(cells
            .par_iter()
            .map(|&(ci, source, method, codec, rate)| {
                let mut row = ReportRow::empty(source, method, codec, rate);
                let outcome = match &contexts[ci] {
                    Ok(ctx) => run_cell(cfg, ctx, method, codec, rate, &mut row),
                    Err(e) => Err(e.clone()),
                };
                if let Err(e) = outcome {
                    row.error = if row.error.is_empty() { e } else { format!("{}; {e}", row.error) };
                }
                row
            })
            .collect())
    })
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, GridError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| GridError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| GridError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// JSON array of rows; infinite PSNR becomes `null`.
pub fn rows_to_json(rows: &[ReportRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("cannot parse {s:?}"))
    }
}

/// Reads report rows back from CSV. Only `method`, `codec` and
/// `psnr_decrypted` are required; other known columns are optional.
pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, GridError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| GridError::Report {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for required in ["method", "codec", "psnr_decrypted"] {
        if col(required).is_none() {
            return Err(GridError::Report {
                line: 1,
                reason: format!("missing column {required}"),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GridError::Report {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |name: &str| col(name).and_then(|i| rec.get(i)).unwrap_or("");
        let bad = |reason: String| GridError::Report { line, reason };
        rows.push(ReportRow {
            clip: get("clip").to_string(),
            method: get("method").to_string(),
            codec: get("codec").to_string(),
            quality: parse_opt(get("quality")).map_err(bad)?,
            target_bpp: parse_opt(get("target_bpp")).map_err(bad)?,
            bpp: parse_opt(get("bpp")).map_err(bad)?,
            psnr_decrypted: parse_opt(get("psnr_decrypted")).map_err(bad)?,
            psnr_compressed: parse_opt(get("psnr_compressed")).map_err(bad)?,
            logit_delta: parse_opt(get("logit_delta")).map_err(bad)?,
            argmax_agree: parse_opt(get("argmax_agree")).map_err(bad)?,
            logit_pass: parse_opt(get("logit_pass")).map_err(bad)?,
            error: get("error").to_string(),
        });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        None => "-".into(),
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.digits$}"),
    }
}

/// Mean over clips; exact (infinite-PSNR) clips are skipped unless all are exact.
fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(mean_finite(values))
    }
}

fn rate(values: &[bool]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(100.0 * values.iter().filter(|&&b| b).count() as f64 / values.len() as f64)
    }
}

/// Markdown summary: one line per method × codec × rate point, in order of
/// first appearance, averaging over clips (each clip's PSNR is per-clip first).
///
/// "Logit pass" is the share of clips whose adapted-model logits stay within
/// [`LOGIT_TOLERANCE`] of the plain model on the original clip, and "Argmax"
/// the share with the same top class. They stand in for task accuracy.
pub fn report_render(csv_text: &str) -> Result<String, GridError> {
    let rows = rows_from_csv(csv_text)?;
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in &rows {
        let rate = match (r.target_bpp, r.quality) {
            (Some(b), _) => format!("{b} bpp"),
            (None, Some(q)) => format!("q{q}"),
            (None, None) => "-".into(),
        };
        let key = (r.method.clone(), r.codec.clone(), rate);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = String::new();
    out.push_str("| Method | Codec | Rate | Clips | bpp | PSNR dec (dB) | PSNR comp (dB) | Logit pass (%) | Argmax (%) | Errors |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for key in &order {
        let g = &groups[key];
        let ok: Vec<&&ReportRow> = g.iter().filter(|r| r.psnr_decrypted.is_some()).collect();
        let bpp: Vec<f64> = ok.iter().filter_map(|r| r.bpp).collect();
        let pd: Vec<f64> = ok.iter().filter_map(|r| r.psnr_decrypted).collect();
        let pc: Vec<f64> = ok.iter().filter_map(|r| r.psnr_compressed).collect();
        let lp: Vec<bool> = ok.iter().filter_map(|r| r.logit_pass).collect();
        let am: Vec<bool> = ok.iter().filter_map(|r| r.argmax_agree).collect();
        let errors = g.iter().filter(|r| !r.error.is_empty()).count();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            key.0,
            key.1,
            key.2,
            g.len(),
            fmt_opt(mean(&bpp), 3),
            fmt_opt(mean(&pd), 2),
            fmt_opt(mean(&pc), 2),
            fmt_opt(rate(&lp), 1),
            fmt_opt(rate(&am), 1),
            errors
        );
    }
    Ok(out)
}
