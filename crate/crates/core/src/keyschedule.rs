//! Expansion of the two secret seeds into a fully specified [`TransformPlan`].
//!
//! The generator, draw order and parameter encodings are pinned so that
//! ciphertexts and adapted weights produced by different implementations agree
//! bit for bit:
//!
//! * `k_st` seeds a SplitMix64 stream. For each MB (only once in V1), every SB
//!   draws `rotation = next % 4`, `flip = next % 3`, `invert = next % 2` and
//!   `channel_perm = next % 6`, after which the MB's SB permutation is drawn by
//!   a descending Fisher–Yates shuffle from the same stream.
//! * `k_ms` seeds a fresh stream that draws the MB permutation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BlockGrid, GeometryError};

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// `next % bound`; the modulo bias is accepted.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }
}

/// Descending Fisher–Yates over `0..n`: for `i = n-1 ..= 1`, swap `i` with `next % (i+1)`.
pub fn fisher_yates(n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        p.swap(i, j);
    }
    p
}

pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    inv
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// One SB-parameter set shared by every MB.
    V1,
    /// An independent SB-parameter set per MB.
    V2,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::V1 => "V1",
            Mode::V2 => "V2",
        })
    }
}

impl FromStr for Mode {
    type Err = KeyError;
    fn from_str(s: &str) -> Result<Self, KeyError> {
        match s {
            "V1" | "v1" => Ok(Mode::V1),
            "V2" | "v2" => Ok(Mode::V2),
            other => Err(KeyError::BadMode(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("unknown mode {0:?}, expected V1 or V2")]
    BadMode(String),
    #[error("key file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("key file field {field}: {value:?} is not a decimal u64")]
    BadSeed { field: &'static str, value: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Secret key material: the variant plus the two 64-bit seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KeyMaterial {
    pub mode: Mode,
    pub k_st: u64,
    pub k_ms: u64,
}

impl KeyMaterial {
    pub fn new(mode: Mode, k_st: u64, k_ms: u64) -> Self {
        KeyMaterial { mode, k_st, k_ms }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        self as u32 * 90
    }

    pub fn inverse(self) -> Rotation {
        Rotation::ALL[(4 - self as usize) % 4]
    }

    pub fn is_quarter(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flip {
    None,
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

impl Flip {
    pub const ALL: [Flip; 3] = [Flip::None, Flip::Horizontal, Flip::Vertical];
}

/// The six permutations of `(R, G, B)` in lexicographic order. Output channel
/// `c` takes input channel `perm[c]`.
pub const CHANNEL_PERMS: [[u8; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Keyed parameters of the four pixel-level SB transformations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SbParams {
    pub rotation: Rotation,
    pub flip: Flip,
    pub invert: bool,
    pub channel_perm: [u8; 3],
}

impl SbParams {
    pub const IDENTITY: SbParams = SbParams {
        rotation: Rotation::R0,
        flip: Flip::None,
        invert: false,
        channel_perm: [0, 1, 2],
    };

    fn draw(rng: &mut SplitMix64) -> SbParams {
        let rotation = Rotation::ALL[rng.below(4) as usize];
        let flip = Flip::ALL[rng.below(3) as usize];
        let invert = rng.below(2) == 1;
        let channel_perm = CHANNEL_PERMS[rng.below(6) as usize];
        SbParams {
            rotation,
            flip,
            invert,
            channel_perm,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == SbParams::IDENTITY
    }

    /// Parameters of the inverse transform, in the same rotate→flip→invert→permute form.
    pub fn inverse(&self) -> SbParams {
        // A rotation followed by a mirror is itself a mirror, hence an involution.
        let rotation = match self.flip {
            Flip::None => self.rotation.inverse(),
            _ => self.rotation,
        };
        let mut channel_perm = [0u8; 3];
        for (c, &src) in self.channel_perm.iter().enumerate() {
            channel_perm[src as usize] = c as u8;
        }
        SbParams {
            rotation,
            flip: self.flip,
            invert: self.invert,
            channel_perm,
        }
    }

    /// Where SB-local pixel `(r, c)` lands after rotation (clockwise) and flip,
    /// for an `h × w` block. Quarter rotations require `h == w`.
    #[inline]
    pub fn map_coord(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let (r, c) = match self.rotation {
            Rotation::R0 => (r, c),
            Rotation::R90 => (c, h - 1 - r),
            Rotation::R180 => (h - 1 - r, w - 1 - c),
            Rotation::R270 => (w - 1 - c, r),
        };
        let (h, w) = if self.rotation.is_quarter() { (w, h) } else { (h, w) };
        match self.flip {
            Flip::None => (r, c),
            Flip::Horizontal => (r, w - 1 - c),
            Flip::Vertical => (h - 1 - r, c),
        }
    }
}

/// Fully expanded encryption parameters for one clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformPlan {
    pub grid: BlockGrid,
    pub mode: Mode,
    /// One entry (V1) or one entry per MB (V2); each entry has one `SbParams` per SB.
    pub sb_params: Vec<Vec<SbParams>>,
    /// SB `s` of an MB moves to SB position `sb_perm[s]`; shaped like `sb_params`.
    pub sb_perms: Vec<Vec<usize>>,
    /// MB `m` moves to grid position `mb_perm[m]`.
    pub mb_perm: Vec<usize>,
}

impl TransformPlan {
    /// The plan that leaves every clip untouched.
    pub fn identity(grid: BlockGrid) -> TransformPlan {
        TransformPlan {
            grid,
            mode: Mode::V1,
            sb_params: vec![vec![SbParams::IDENTITY; grid.sbs_per_mb()]],
            sb_perms: vec![(0..grid.sbs_per_mb()).collect()],
            mb_perm: (0..grid.mb_count()).collect(),
        }
    }

    /// SB parameters used for plaintext MB `mb`.
    pub fn params_for(&self, mb: usize) -> &[SbParams] {
        match self.mode {
            Mode::V1 => &self.sb_params[0],
            Mode::V2 => &self.sb_params[mb],
        }
    }

    /// SB permutation used for plaintext MB `mb`.
    pub fn sb_perm_for(&self, mb: usize) -> &[usize] {
        match self.mode {
            Mode::V1 => &self.sb_perms[0],
            Mode::V2 => &self.sb_perms[mb],
        }
    }

    pub fn has_quarter_rotation(&self) -> bool {
        self.sb_params.iter().flatten().any(|p| p.rotation.is_quarter())
    }

    /// The plan whose encryption equals this plan's decryption.
    ///
    /// SB transforms act in place and permutations only move SBs around, so the
    /// inverse is again "transform, then permute SBs, then permute MBs" with
    /// parameters indexed by ciphertext position.
    pub fn inverse(&self) -> TransformPlan {
        let mb_inv = invert_permutation(&self.mb_perm);
        let entry = |m: usize| -> (Vec<SbParams>, Vec<usize>) {
            let params = self.params_for(m);
            let perm = self.sb_perm_for(m);
            let perm_inv = invert_permutation(perm);
            let inv_params = perm_inv.iter().map(|&s| params[s].inverse()).collect();
            (inv_params, perm_inv)
        };
        let (sb_params, sb_perms) = match self.mode {
            Mode::V1 => {
                let (p, s) = entry(0);
                (vec![p], vec![s])
            }
            Mode::V2 => mb_inv.iter().map(|&m| entry(m)).unzip(),
        };
        TransformPlan {
            grid: self.grid,
            mode: self.mode,
            sb_params,
            sb_perms,
            mb_perm: mb_inv,
        }
    }
}

/// Expands key material into a plan for `grid`.
pub fn expand(keys: &KeyMaterial, grid: &BlockGrid) -> TransformPlan {
    let sbs = grid.sbs_per_mb();
    let entries = match keys.mode {
        Mode::V1 => 1,
        Mode::V2 => grid.mb_count(),
    };
    let mut st = SplitMix64::new(keys.k_st);
    let mut sb_params = Vec::with_capacity(entries);
    let mut sb_perms = Vec::with_capacity(entries);
    for _ in 0..entries {
        sb_params.push((0..sbs).map(|_| SbParams::draw(&mut st)).collect());
        sb_perms.push(fisher_yates(sbs, &mut st));
    }
    let mut ms = SplitMix64::new(keys.k_ms);
    let mb_perm = fisher_yates(grid.mb_count(), &mut ms);
    TransformPlan {
        grid: *grid,
        mode: keys.mode,
        sb_params,
        sb_perms,
        mb_perm,
    }
}

/// On-disk key file. Seeds are decimal strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub mode: Mode,
    pub k_st: String,
    pub k_ms: String,
    pub mb: usize,
    pub sb: usize,
}

impl KeyFile {
    pub fn new(keys: &KeyMaterial, mb: usize, sb: usize) -> KeyFile {
        KeyFile {
            mode: keys.mode,
            k_st: keys.k_st.to_string(),
            k_ms: keys.k_ms.to_string(),
            mb,
            sb,
        }
    }

    pub fn keys(&self) -> Result<KeyMaterial, KeyError> {
        let parse = |field: &'static str, v: &str| {
            v.parse::<u64>().map_err(|_| KeyError::BadSeed {
                field,
                value: v.to_string(),
            })
        };
        Ok(KeyMaterial {
            mode: self.mode,
            k_st: parse("k_st", &self.k_st)?,
            k_ms: parse("k_ms", &self.k_ms)?,
        })
    }

    pub fn grid_for(&self, height: usize, width: usize) -> Result<BlockGrid, KeyError> {
        Ok(BlockGrid::for_frame(height, width, self.mb, self.sb)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("key file serializes")
    }

    pub fn from_json(s: &str) -> Result<KeyFile, KeyError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent split-mix evaluation using u128 arithmetic truncated by hand.
    fn splitmix_oracle(seed: u64, n: usize) -> Vec<u64> {
        let mask = (1u128 << 64) - 1;
        let mut s = seed as u128;
        (0..n)
            .map(|_| {
                s = (s + 0x9E3779B97F4A7C15) & mask;
                let mut z = s;
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask;
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask;
                (z ^ (z >> 31)) as u64
            })
            .collect()
    }

    #[test]
    fn splitmix_matches_oracle() {
        for seed in [0u64, 1, 2, 7, u64::MAX] {
            let mut g = SplitMix64::new(seed);
            let got: Vec<u64> = (0..8).map(|_| g.next_u64()).collect();
            assert_eq!(got, splitmix_oracle(seed, 8), "seed {seed}");
        }
        // Frozen first outputs.
        assert_eq!(SplitMix64::new(0).next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_ne!(SplitMix64::new(1).next_u64(), SplitMix64::new(2).next_u64());
    }

    #[test]
    fn fisher_yates_is_a_permutation() {
        let mut g = SplitMix64::new(42);
        for n in [0, 1, 2, 5, 196] {
            let p = fisher_yates(n, &mut g);
            assert!(is_permutation(&p));
            assert_eq!(p.len(), n);
        }
    }

    #[test]
    fn v1_on_2x2_grid_counts() {
        let grid = BlockGrid::default_for(32, 32).unwrap();
        let plan = expand(&KeyMaterial::new(Mode::V1, 3, 4), &grid);
        assert_eq!(plan.sb_params.len(), 1);
        assert_eq!(plan.sb_params[0].len(), 4);
        assert_eq!(plan.sb_perms.len(), 1);
        assert_eq!(plan.sb_perms[0].len(), 4);
        assert_eq!(plan.mb_perm.len(), 4);
    }

    #[test]
    fn expand_is_deterministic() {
        let grid = BlockGrid::default_for(64, 64).unwrap();
        let k = KeyMaterial::new(Mode::V2, 11, 12);
        assert_eq!(expand(&k, &grid), expand(&k, &grid));
    }

    #[test]
    fn mb_perm_ignores_k_st() {
        let grid = BlockGrid::default_for(64, 64).unwrap();
        let a = expand(&KeyMaterial::new(Mode::V2, 1, 99), &grid);
        let b = expand(&KeyMaterial::new(Mode::V2, 2, 99), &grid);
        assert_eq!(a.mb_perm, b.mb_perm);
        assert_ne!(a.sb_params, b.sb_params);
    }

    #[test]
    fn inverse_params_compose_to_identity() {
        for r in Rotation::ALL {
            for f in Flip::ALL {
                for perm in CHANNEL_PERMS {
                    let p = SbParams {
                        rotation: r,
                        flip: f,
                        invert: true,
                        channel_perm: perm,
                    };
                    let q = p.inverse();
                    for y in 0..4 {
                        for x in 0..4 {
                            let (a, b) = p.map_coord(y, x, 4, 4);
                            assert_eq!(q.map_coord(a, b, 4, 4), (y, x), "{p:?}");
                        }
                    }
                    for c in 0..3 {
                        assert_eq!(perm[q.channel_perm[c] as usize] as usize, c);
                    }
                }
            }
        }
    }

    #[test]
    fn plan_inverse_is_involutive() {
        let grid = BlockGrid::default_for(48, 64).unwrap();
        for mode in [Mode::V1, Mode::V2] {
            let plan = expand(&KeyMaterial::new(mode, 5, 6), &grid);
            assert_eq!(plan.inverse().inverse(), plan);
        }
    }

    #[test]
    fn key_file_json_shape() {
        let k = KeyMaterial::new(Mode::V2, u64::MAX, 7);
        let json = KeyFile::new(&k, 16, 8).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["mode"], "V2");
        assert_eq!(v["k_st"], "18446744073709551615");
        assert_eq!(v["k_ms"], "7");
        assert_eq!(v["mb"], 16);
        assert_eq!(v["sb"], 8);
        assert_eq!(KeyFile::from_json(&json).unwrap().keys().unwrap(), k);
        let bad = json.replace("\"7\"", "\"seven\"");
        assert!(matches!(
            KeyFile::from_json(&bad).unwrap().keys(),
            Err(KeyError::BadSeed { field: "k_ms", .. })
        ));
    }
}
