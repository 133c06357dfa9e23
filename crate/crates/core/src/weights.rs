//! `.cfew` weight files.
//!
//! Layout (little-endian): `"CFEW"`, `u32` version = 1, `u32` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u32` rank, `u32` dims,
//! raw `f32` values. Besides the canonical model tensors the file carries a
//! `meta.config` vector holding the model config; the 64-bit init seed is
//! split into four 16-bit pieces so every entry is exact in `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{EmbedKernel, EncoderBlock, LayerNorm, Linear, ModelError, ModelWeights, Tensor, VtConfig};

pub const CFEW_MAGIC: &[u8; 4] = b"CFEW";
pub const CFEW_VERSION: u32 = 1;
pub const META_CONFIG: &str = "meta.config";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed weight file at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("weight file lacks tensor {0}")]
    Missing(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn config_values(c: &VtConfig) -> Vec<f32> {
    let mut v: Vec<f32> = [
        c.frames,
        c.height,
        c.width,
        c.tubelet,
        c.patch,
        c.embed_dim,
        c.n_layers,
        c.n_heads,
        c.mlp_ratio,
        c.n_classes,
    ]
    .iter()
    .map(|&x| x as f32)
    .collect();
    for k in 0..4 {
        v.push(((c.seed >> (16 * k)) & 0xFFFF) as f32);
    }
    v
}

fn config_from_values(v: &[f32]) -> Result<VtConfig, String> {
    if v.len() != 14 {
        return Err(format!("{META_CONFIG} has {} entries, expected 14", v.len()));
    }
    let int = |x: f32| -> Result<usize, String> {
        if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
            Ok(x as usize)
        } else {
            Err(format!("{META_CONFIG} entry {x} is not a small non-negative integer"))
        }
    };
    let mut seed = 0u64;
    for k in 0..4 {
        let piece = int(v[10 + k])? as u64;
        if piece > 0xFFFF {
            return Err(format!("{META_CONFIG} seed piece {piece} exceeds 16 bits"));
        }
        seed |= piece << (16 * k);
    }
    Ok(VtConfig {
        frames: int(v[0])?,
        height: int(v[1])?,
        width: int(v[2])?,
        tubelet: int(v[3])?,
        patch: int(v[4])?,
        embed_dim: int(v[5])?,
        n_layers: int(v[6])?,
        n_heads: int(v[7])?,
        mlp_ratio: int(v[8])?,
        n_classes: int(v[9])?,
        seed,
    })
}

/// Named tensors of a model in file order, config first.
pub fn to_tensors(w: &ModelWeights) -> Vec<(String, Tensor)> {
    let cfgv = config_values(&w.config);
    let mut out = vec![(META_CONFIG.to_string(), Tensor::new(vec![cfgv.len()], cfgv))];
    let shape_of = |name: &str| -> Option<Vec<usize>> {
        match name {
            "embed.kernel" => Some(w.embed_kernel.tensor().shape.clone()),
            "pos" => Some(w.pos.shape.clone()),
            "head.w" => Some(w.head.w.shape.clone()),
            _ => None,
        }
    };
    let mut linear_shapes = BTreeMap::new();
    for (i, b) in w.blocks.iter().enumerate() {
        linear_shapes.insert(format!("enc.{i}.attn.qkv.w"), b.qkv.w.shape.clone());
        linear_shapes.insert(format!("enc.{i}.attn.proj.w"), b.proj.w.shape.clone());
        linear_shapes.insert(format!("enc.{i}.mlp.fc1.w"), b.fc1.w.shape.clone());
        linear_shapes.insert(format!("enc.{i}.mlp.fc2.w"), b.fc2.w.shape.clone());
    }
    for (name, values) in w.named_values() {
        let shape = shape_of(&name)
            .or_else(|| linear_shapes.get(&name).cloned())
            .unwrap_or_else(|| vec![values.len()]);
        out.push((name, Tensor::new(shape, values.to_vec())));
    }
    out
}

pub fn write_cfew<W: Write>(mut out: W, w: &ModelWeights) -> Result<(), WeightsError> {
    let tensors = to_tensors(w);
    out.write_all(CFEW_MAGIC)?;
    out.write_all(&CFEW_VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, WeightsError> {
        Err(WeightsError::Format {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("need {n} more bytes, {} left", self.bytes.len() - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses all tensors of a `.cfew` image, in file order.
pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, WeightsError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CFEW_MAGIC {
        cur.pos = 0;
        return cur.fail("bad magic");
    }
    let version = cur.u32()?;
    if version != CFEW_VERSION {
        cur.pos -= 4;
        return cur.fail(format!("unsupported version {version}"));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let start = cur.pos;
        let name = match std::str::from_utf8(cur.take(len)?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                cur.pos = start;
                return cur.fail("tensor name is not UTF-8");
            }
        };
        let rank = cur.u32()? as usize;
        if rank > 8 {
            cur.pos -= 4;
            return cur.fail(format!("rank {rank} of {name} is implausible"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some());
        let Some(n) = n else {
            return cur.fail(format!("shape {shape:?} of {name} overflows"));
        };
        let raw = cur.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)));
    }
    if cur.pos != bytes.len() {
        return cur.fail("trailing bytes after the last tensor");
    }
    Ok(out)
}

fn take(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor, WeightsError> {
    map.remove(name).ok_or_else(|| WeightsError::Missing(name.to_string()))
}

fn take_vec(map: &mut BTreeMap<String, Tensor>, name: &str, n: usize) -> Result<Vec<f32>, WeightsError> {
    let t = take(map, name)?;
    if t.shape != [n] {
        return Err(WeightsError::Shape {
            name: name.to_string(),
            expected: vec![n],
            got: t.shape,
        });
    }
    Ok(t.data)
}

fn take_linear(map: &mut BTreeMap<String, Tensor>, prefix: &str, out: usize) -> Result<Linear, WeightsError> {
    Ok(Linear {
        w: take(map, &format!("{prefix}.w"))?,
        b: take_vec(map, &format!("{prefix}.b"), out)?,
    })
}

fn take_norm(map: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize) -> Result<LayerNorm, WeightsError> {
    Ok(LayerNorm {
        gamma: take_vec(map, &format!("{prefix}.g"), d)?,
        beta: take_vec(map, &format!("{prefix}.b"), d)?,
    })
}

/// Rebuilds a model from named tensors and checks shapes against the stored config.
pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<ModelWeights, WeightsError> {
    let mut map: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    let meta = take(&mut map, META_CONFIG)?;
    let config = config_from_values(&meta.data).map_err(|reason| WeightsError::Format { offset: 0, reason })?;
    config.validate()?;
    let d = config.embed_dim;
    let kernel = take(&mut map, "embed.kernel")?;
    let embed_kernel = if kernel.shape == config.kernel_shape() {
        EmbedKernel::Shared(kernel)
    } else {
        EmbedKernel::PerPosition(kernel)
    };
    let embed_bias = take_vec(&mut map, "embed.bias", d)?;
    let cls = take_vec(&mut map, "cls", d)?;
    let pos = take(&mut map, "pos")?;
    let blocks = (0..config.n_layers)
        .map(|i| {
            Ok(EncoderBlock {
                ln1: take_norm(&mut map, &format!("enc.{i}.ln1"), d)?,
                qkv: take_linear(&mut map, &format!("enc.{i}.attn.qkv"), 3 * d)?,
                proj: take_linear(&mut map, &format!("enc.{i}.attn.proj"), d)?,
                ln2: take_norm(&mut map, &format!("enc.{i}.ln2"), d)?,
                fc1: take_linear(&mut map, &format!("enc.{i}.mlp.fc1"), config.hidden_dim())?,
                fc2: take_linear(&mut map, &format!("enc.{i}.mlp.fc2"), d)?,
            })
        })
        .collect::<Result<Vec<_>, WeightsError>>()?;
    let norm = take_norm(&mut map, "norm", d)?;
    let head = take_linear(&mut map, "head", config.n_classes)?;
    if let Some(extra) = map.keys().next() {
        return Err(WeightsError::Format {
            offset: 0,
            reason: format!("unexpected tensor {extra}"),
        });
    }
    let w = ModelWeights {
        config,
        embed_kernel,
        embed_bias,
        cls,
        pos,
        blocks,
        norm,
        head,
    };
    w.check_shapes()?;
    Ok(w)
}

pub fn read_cfew<R: Read>(mut r: R) -> Result<ModelWeights, WeightsError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_tensors(parse_tensors(&bytes)?)
}

pub fn save_cfew(path: impl AsRef<Path>, w: &ModelWeights) -> Result<(), WeightsError> {
    let mut buf = Vec::new();
    write_cfew(&mut buf, w)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_cfew(path: impl AsRef<Path>) -> Result<ModelWeights, WeightsError> {
    read_cfew(std::fs::File::open(path)?)
}
