//! Unit-cell data model, synthetic generator and the `.lmd` dataset file.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic        8 bytes   "LMDSET01"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON
//!              {format_version, count, material:{E0,nu,Emin}, generator_seed,
//!               resolution (optional, 50), stiffness_dtype (optional, "f32"|"f64")}
//! pixels       count × 2500 u8   (0 = void, 255 = material; v/255 otherwise)
//! stiffness    count × 9 floats, row-major, f32 (or f64 for the external variant)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::homogenize::{homogenize_cell, MaterialModel, StiffnessTensor};

pub const CELL_SIZE: usize = 50;
pub const CELL_PIXELS: usize = CELL_SIZE * CELL_SIZE;
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LMDSET01";

/// 50×50 density grid in `[0, 1]`, row-major. 0 is void, 1 is material.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCell {
    pixels: Vec<f32>,
}

impl UnitCell {
    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != CELL_PIXELS {
            return Err(Error::invalid(format!(
                "unit cell needs {CELL_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn filled(value: f32) -> Self {
        Self::new(vec![value; CELL_PIXELS]).expect("value in [0, 1]")
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(CELL_PIXELS);
        for r in 0..CELL_SIZE {
            for c in 0..CELL_SIZE {
                pixels.push(f(r, c));
            }
        }
        Self::new(pixels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * CELL_SIZE + col]
    }

    pub fn volume_fraction(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / CELL_PIXELS as f64
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Binary copy: values `>= level` become 1.
    pub fn threshold(&self, level: f32) -> Self {
        Self {
            pixels: self
                .pixels
                .iter()
                .map(|&p| if p >= level { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Inverts material convention (`1 − p`).
    pub fn inverted(&self) -> Self {
        Self {
            pixels: self.pixels.iter().map(|&p| 1.0 - p).collect(),
        }
    }

    /// 90° counter-clockwise rotation.
    pub fn rotated90(&self) -> Self {
        let n = CELL_SIZE;
        let mut pixels = vec![0.0; CELL_PIXELS];
        for r in 0..n {
            for c in 0..n {
                pixels[(n - 1 - c) * n + r] = self.pixels[r * n + c];
            }
        }
        Self { pixels }
    }

    /// Opposite edges carry the same pattern (left column = right column,
    /// top row = bottom row).
    pub fn is_tileable(&self) -> bool {
        let n = CELL_SIZE;
        (0..n).all(|i| self.get(i, 0) == self.get(i, n - 1) && self.get(0, i) == self.get(n - 1, i))
    }
}

/// One dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: u64,
    pub cell: UnitCell,
    pub stiffness: StiffnessTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<CellRecord>,
    pub material: MaterialModel,
    pub generator_seed: Option<u64>,
    pub format_version: u32,
}

impl Dataset {
    pub fn new(
        records: Vec<CellRecord>,
        material: MaterialModel,
        generator_seed: Option<u64>,
    ) -> Result<Self> {
        let d = Self {
            records,
            material,
            generator_seed,
            format_version: FORMAT_VERSION,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Non-empty with ids `0..len` in order.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.id != i as u64 {
                return Err(Error::invalid(format!(
                    "record {i} has id {}, ids must be contiguous",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// Re-labels ids to `0..len` (used after splitting).
    fn renumbered(mut records: Vec<CellRecord>, template: &Dataset) -> Self {
        for (i, r) in records.iter_mut().enumerate() {
            r.id = i as u64;
        }
        Self {
            records,
            material: template.material,
            generator_seed: template.generator_seed,
            format_version: template.format_version,
        }
    }

    /// Fraction of records whose pixel array repeats an earlier record.
    pub fn duplicate_rate(&self) -> f64 {
        let mut seen = HashSet::new();
        let mut dups = 0usize;
        for r in &self.records {
            let key: Vec<u32> = r.cell.pixels.iter().map(|p| p.to_bits()).collect();
            if !seen.insert(key) {
                dups += 1;
            }
        }
        dups as f64 / self.records.len().max(1) as f64
    }

    /// SHA-256 of the canonical `.lmd` encoding.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(encode_dataset(
            self,
            StiffnessPrecision::F32,
        )))
    }
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.85,
            seed: 0,
        }
    }
}

/// Seeded disjoint partition with `round(fraction · len)` training records.
/// Both halves are re-numbered from 0 in permutation order.
pub fn split_dataset(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if d.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train_fraction * d.len() as f64).round() as usize;
    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| d.records[i].clone())
            .collect::<Vec<_>>()
    };
    Ok((
        Dataset::renumbered(pick(&order[..n_train]), d),
        Dataset::renumbered(pick(&order[n_train..]), d),
    ))
}

/// Parametric cell families of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Orthogonal,
    Diagonal,
    Frame,
    Ring,
    Trig,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Orthogonal,
        Family::Diagonal,
        Family::Frame,
        Family::Ring,
        Family::Trig,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Orthogonal => "orthogonal",
            Family::Diagonal => "diagonal",
            Family::Frame => "frame",
            Family::Ring => "ring",
            Family::Trig => "trig",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cell family `{s}`")))
    }
}

pub type FamilyWeights = BTreeMap<Family, f64>;

pub fn default_family_weights() -> FamilyWeights {
    Family::ALL.iter().map(|&f| (f, 1.0)).collect()
}

const MIN_VOLUME_FRACTION: f64 = 0.05;
const MAX_VOLUME_FRACTION: f64 = 0.95;

/// Generates `count` binary, tileable cells with default material.
pub fn generate_synthetic_dataset(
    count: usize,
    seed: u64,
    weights: &FamilyWeights,
) -> Result<Dataset> {
    generate_synthetic_dataset_with(count, seed, weights, MaterialModel::default())
}

pub fn generate_synthetic_dataset_with(
    count: usize,
    seed: u64,
    weights: &FamilyWeights,
    material: MaterialModel,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    if weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(
            "family weights must be finite and non-negative",
        ));
    }
    let total: f64 = weights.values().sum();
    if total <= 0.0 {
        return Err(Error::invalid("family weights are all zero"));
    }
    material.validate()?;
    let table: Vec<(Family, f64)> = weights.iter().map(|(f, w)| (*f, *w)).collect();

    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let cell = sample_cell(&mut rng, &table, total);
            let stiffness = homogenize_cell(&cell, &material)?.to_f32_precision();
            Ok(CellRecord {
                id: i as u64,
                cell,
                stiffness,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let d = Dataset::new(records, material, Some(seed))?;
    let dup = d.duplicate_rate();
    if dup > 0.05 {
        warn!("synthetic dataset has {:.1}% duplicate cells", dup * 100.0);
    }
    Ok(d)
}

fn pick_family(rng: &mut ChaCha8Rng, table: &[(Family, f64)], total: f64) -> Family {
    let mut x = rng.random::<f64>() * total;
    for &(f, w) in table {
        if x < w {
            return f;
        }
        x -= w;
    }
    table
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(f, _)| *f)
        .unwrap()
}

fn sample_cell(rng: &mut ChaCha8Rng, table: &[(Family, f64)], total: f64) -> UnitCell {
    let family = pick_family(rng, table, total);
    for _ in 0..64 {
        let cell = rasterize_family(family, rng);
        let vf = cell.volume_fraction();
        if (MIN_VOLUME_FRACTION..=MAX_VOLUME_FRACTION).contains(&vf) {
            return cell;
        }
    }
    // The trig family sets its level from a volume-fraction quantile.
    rasterize_family(Family::Trig, rng)
}

/// Pixel-centre coordinates mirrored about the cell centre: `|x|, |y|` in
/// `[0.01, 0.49]`. Every shape is a predicate of `(|x|, |y|)`, which makes
/// opposite edges identical.
fn rasterize(solid: impl Fn(f64, f64) -> bool) -> UnitCell {
    UnitCell::from_fn(|r, c| {
        let ax = ((c as f64 + 0.5) / CELL_SIZE as f64 - 0.5).abs();
        let ay = ((r as f64 + 0.5) / CELL_SIZE as f64 - 0.5).abs();
        if solid(ax, ay) {
            1.0
        } else {
            0.0
        }
    })
    .expect("binary pixels")
}

/// Strut positions along one axis: centred, mirrored pair, or at the edge.
#[derive(Clone, Copy)]
enum StrutSet {
    None,
    Center(f64),
    Pair(f64, f64),
    Edge(f64),
}

impl StrutSet {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let w = rng.random_range(0.04..0.28);
        match rng.random_range(0..4) {
            0 => StrutSet::None,
            1 => StrutSet::Center(w),
            2 => StrutSet::Pair(rng.random_range(0.12..0.38), w * 0.7),
            _ => StrutSet::Edge(w),
        }
    }

    fn hit(&self, a: f64) -> bool {
        match *self {
            StrutSet::None => false,
            StrutSet::Center(w) => a < w / 2.0,
            StrutSet::Pair(p, w) => (a - p).abs() < w / 2.0,
            StrutSet::Edge(w) => a > 0.5 - w / 2.0,
        }
    }
}

type Shape = Box<dyn Fn(f64, f64) -> bool>;

fn rasterize_family(family: Family, rng: &mut ChaCha8Rng) -> UnitCell {
    let shape: Shape = match family {
        Family::Orthogonal => {
            let vertical = StrutSet::sample(rng);
            let horizontal = StrutSet::sample(rng);
            let node = if rng.random_bool(0.3) {
                rng.random_range(0.05..0.3)
            } else {
                0.0
            };
            Box::new(move |ax, ay| vertical.hit(ax) || horizontal.hit(ay) || ax.max(ay) < node)
        }
        Family::Diagonal => {
            let w = rng.random_range(0.04..0.2);
            let cross = rng.random_bool(0.7);
            let diamond = if !cross || rng.random_bool(0.4) {
                Some(rng.random_range(0.2..0.6))
            } else {
                None
            };
            let hub = if rng.random_bool(0.3) {
                rng.random_range(0.05..0.2)
            } else {
                0.0
            };
            let frame = if rng.random_bool(0.25) {
                rng.random_range(0.02..0.1)
            } else {
                0.0
            };
            let s2 = std::f64::consts::SQRT_2;
            Box::new(move |ax, ay| {
                (cross && (ax - ay).abs() / s2 < w / 2.0)
                    || diamond.is_some_and(|c| (ax + ay - c).abs() / s2 < w / 2.0)
                    || (ax * ax + ay * ay).sqrt() < hub
                    || ax.max(ay) > 0.5 - frame
            })
        }
        Family::Frame => {
            let t = rng.random_range(0.03..0.2);
            let sx = rng.random_range(0.75..1.25);
            let inner = if rng.random_bool(0.5) {
                Some((rng.random_range(0.1..0.3), rng.random_range(0.03..0.12)))
            } else {
                None
            };
            let fillet = if rng.random_bool(0.4) {
                rng.random_range(0.6..0.9)
            } else {
                2.0
            };
            let core = if rng.random_bool(0.25) {
                rng.random_range(0.05..0.15)
            } else {
                0.0
            };
            Box::new(move |ax, ay| {
                let m = (ax * sx).max(ay);
                m > 0.5 - t
                    || ax + ay > fillet
                    || inner.is_some_and(|(r, w)| (m - r).abs() < w / 2.0)
                    || m < core
            })
        }
        Family::Ring => {
            let r = rng.random_range(0.12..0.42);
            let w = rng.random_range(0.04..0.18);
            let ex = rng.random_range(0.8..1.25);
            let spokes = StrutSet::sample(rng);
            let hole = rng.random_bool(0.35);
            Box::new(move |ax, ay| {
                let rho = ((ax * ex).powi(2) + ay * ay).sqrt();
                if hole {
                    rho > r
                } else {
                    (rho - r).abs() < w / 2.0 || (rho > r && (spokes.hit(ax) || spokes.hit(ay)))
                }
            })
        }
        Family::Trig => return trig_cell(rng),
    };
    // per-cell anisotropy and an optional node at the centre or the corners
    let stretch = rng.random_range(0.8..1.25);
    let node = rng
        .random_bool(0.4)
        .then(|| (rng.random_bool(0.5), rng.random_range(0.04..0.22)));
    rasterize(move |ax, ay| {
        let (wx, wy) = if stretch >= 1.0 {
            (ax, ay / stretch)
        } else {
            (ax * stretch, ay)
        };
        shape(wx, wy)
            || node.is_some_and(|(corner, r)| {
                let (dx, dy) = if corner {
                    (0.5 - ax, 0.5 - ay)
                } else {
                    (ax, ay)
                };
                dx * dx + dy * dy < r * r
            })
    })
}

/// Thresholded sum of even cosine modes with integer frequencies.
fn trig_cell(rng: &mut ChaCha8Rng) -> UnitCell {
    let terms = rng.random_range(2..=4);
    let modes: Vec<(f64, f64, f64)> = (0..terms)
        .map(|_| {
            let p = rng.random_range(0..=3) as f64;
            let q = rng.random_range(0..=3) as f64;
            (rng.random_range(-1.0..1.0), p, q)
        })
        .collect();
    let tau = std::f64::consts::TAU;
    let field: Vec<f64> = (0..CELL_PIXELS)
        .map(|i| {
            let x = ((i % CELL_SIZE) as f64 + 0.5) / CELL_SIZE as f64 - 0.5;
            let y = ((i / CELL_SIZE) as f64 + 0.5) / CELL_SIZE as f64 - 0.5;
            modes
                .iter()
                .map(|&(a, p, q)| a * (tau * p * x).cos() * (tau * q * y).cos())
                .sum()
        })
        .collect();
    let target = rng.random_range(0.2..0.8);
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = ((1.0 - target) * CELL_PIXELS as f64) as usize;
    let level = sorted[k.min(CELL_PIXELS - 1)];
    let pixels: Vec<f32> = field
        .iter()
        .map(|&v| if v >= level { 1.0 } else { 0.0 })
        .collect();
    let cell = UnitCell::new(pixels).expect("binary pixels");
    let vf = cell.volume_fraction();
    if (MIN_VOLUME_FRACTION..=MAX_VOLUME_FRACTION).contains(&vf) {
        cell
    } else {
        // degenerate field (e.g. constant): fall back to a plain cross
        rasterize(|ax, ay| ax < 0.1 || ay < 0.1)
    }
}

/// Float width of the stiffness block in a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StiffnessPrecision {
    F32,
    F64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    count: u64,
    material: MaterialModel,
    generator_seed: Option<u64>,
    #[serde(default = "default_resolution")]
    resolution: usize,
    #[serde(default = "default_precision")]
    stiffness_dtype: StiffnessPrecision,
}

fn default_resolution() -> usize {
    CELL_SIZE
}

fn default_precision() -> StiffnessPrecision {
    StiffnessPrecision::F32
}

pub fn encode_dataset(d: &Dataset, precision: StiffnessPrecision) -> Vec<u8> {
    let header = Header {
        format_version: d.format_version,
        count: d.len() as u64,
        material: d.material,
        generator_seed: d.generator_seed,
        resolution: CELL_SIZE,
        stiffness_dtype: precision,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let width = match precision {
        StiffnessPrecision::F32 => 4,
        StiffnessPrecision::F64 => 8,
    };
    let mut out = Vec::with_capacity(12 + json.len() + d.len() * (CELL_PIXELS + 9 * width));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for r in &d.records {
        out.extend(r.cell.pixels.iter().map(|&p| (p * 255.0).round() as u8));
    }
    for r in &d.records {
        for v in r.stiffness.flat() {
            match precision {
                StiffnessPrecision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                StiffnessPrecision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 12 {
        return Err(Error::format(
            bytes.len() as u64,
            "file shorter than the fixed preamble",
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(0, "bad magic, expected LMDSET01"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12 + hlen;
    if bytes.len() < hend {
        return Err(Error::format(
            12,
            format!("header length {hlen} exceeds file size"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[12..hend])
        .map_err(|e| Error::format(12 + e.column() as u64, format!("malformed header: {e}")))?;
    if header.resolution != CELL_SIZE {
        return Err(Error::format(
            12,
            format!("unsupported resolution {}", header.resolution),
        ));
    }
    if header.count == 0 {
        return Err(Error::format(12, "dataset header declares zero records"));
    }
    header
        .material
        .validate()
        .map_err(|e| Error::format(12, e.to_string()))?;
    let count = header.count as usize;
    let width = match header.stiffness_dtype {
        StiffnessPrecision::F32 => 4,
        StiffnessPrecision::F64 => 8,
    };
    let pix_end = count
        .checked_mul(CELL_PIXELS)
        .and_then(|p| p.checked_add(hend))
        .ok_or_else(|| Error::format(12, "record count overflows"))?;
    let total = count
        .checked_mul(9 * width)
        .and_then(|s| s.checked_add(pix_end))
        .ok_or_else(|| Error::format(12, "record count overflows"))?;
    if bytes.len() < total {
        let offset = bytes.len() as u64;
        let what = if bytes.len() < pix_end {
            "pixel"
        } else {
            "stiffness"
        };
        return Err(Error::format(
            offset,
            format!("truncated {what} payload (expected {total} bytes)"),
        ));
    }
    if bytes.len() > total {
        return Err(Error::format(
            total as u64,
            "trailing bytes after stiffness payload",
        ));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let px = &bytes[hend + i * CELL_PIXELS..hend + (i + 1) * CELL_PIXELS];
        let cell = UnitCell {
            pixels: px.iter().map(|&b| b as f32 / 255.0).collect(),
        };
        let base = pix_end + i * 9 * width;
        let flat: [f64; 9] = std::array::from_fn(|k| {
            let at = base + k * width;
            match header.stiffness_dtype {
                StiffnessPrecision::F32 => {
                    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
                }
                StiffnessPrecision::F64 => {
                    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
                }
            }
        });
        records.push(CellRecord {
            id: i as u64,
            cell,
            stiffness: StiffnessTensor::from_flat(flat),
        });
    }
    Ok(Dataset {
        records,
        material: header.material,
        generator_seed: header.generator_seed,
        format_version: header.format_version,
    })
}

/// Writes `d` with 32-bit stiffness floats, atomically (temp file + rename).
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    save_dataset_with(d, path, StiffnessPrecision::F32)
}

pub fn save_dataset_with(d: &Dataset, path: &Path, precision: StiffnessPrecision) -> Result<()> {
    d.validate()?;
    write_atomic(path, &encode_dataset(d, precision))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// Temp file in the target directory followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
