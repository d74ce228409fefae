//! Latent-space statistics, interpolation, standard-deviation sweeps and
//! k-means clustering of encodings.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, UnitCell, CELL_PIXELS};
use crate::error::{Error, Result};
use crate::homogenize::{homogenize_cell, normalize_stiffness, StiffnessTensor};
pub use crate::metrics::PairAveraging;
use crate::metrics::{geometric_smoothness, stiffness_continuity_with, transition_stiffness};
use crate::vae::{Architecture, ModelCheckpoint, Prepared, Vae};

/// Floor applied to per-dimension standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Per-dimension mean and population standard deviation of encoded training means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Dimensions whose sigma was floored.
    #[serde(default)]
    pub collapsed: Vec<usize>,
}

impl LatentStats {
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("no latent points"))?;
        let d = first.len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("latent points have mixed dimensions"));
        }
        let n = points.len() as f64;
        let mut mu = vec![0.0; d];
        for p in points {
            for (m, v) in mu.iter_mut().zip(p) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut sigma = vec![0.0; d];
        for p in points {
            for ((s, v), m) in sigma.iter_mut().zip(p).zip(&mu) {
                *s += (v - m) * (v - m);
            }
        }
        let mut collapsed = Vec::new();
        for (j, s) in sigma.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s >= SIGMA_FLOOR) {
                collapsed.push(j);
                *s = SIGMA_FLOOR;
            }
        }
        if !collapsed.is_empty() {
            warn!("latent dimensions {collapsed:?} collapsed; sigma floored at {SIGMA_FLOOR:e}");
        }
        Ok(Self {
            mu,
            sigma,
            collapsed,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub(crate) fn encode_prepared(model: &Vae<f32>, data: &Prepared) -> Result<Vec<Vec<f64>>> {
    let d = model.latent_dim();
    let chunk = 64;
    let starts: Vec<usize> = (0..data.len).step_by(chunk).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk).min(data.len);
            let b = end - start;
            let images = &data.images[start * CELL_PIXELS..end * CELL_PIXELS];
            let stiffness = data.stiffness.as_ref().map(|s| &s[start * 9..end * 9]);
            let (mu, _) = model.encode(images, stiffness, b)?;
            Ok(mu
                .chunks(d)
                .map(|r| r.iter().map(|v| *v as f64).collect())
                .collect::<Vec<Vec<f64>>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub(crate) fn latent_stats_for_model(model: &Vae<f32>, data: &Prepared) -> Result<LatentStats> {
    LatentStats::from_points(&encode_prepared(model, data)?)
}

/// Encoder means of every cell in `data`.
pub fn encode_dataset(checkpoint: &ModelCheckpoint, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let prepared = Prepared::new(data, checkpoint.architecture(), &checkpoint.stiffness_stats);
    encode_prepared(&checkpoint.model, &prepared)
}

pub fn latent_stats(checkpoint: &ModelCheckpoint, train: &Dataset) -> Result<LatentStats> {
    LatentStats::from_points(&encode_dataset(checkpoint, train)?)
}

/// Deterministic encoding (encoder mean) of one cell. Hybrid checkpoints
/// homogenize the thresholded cell when no stiffness is given.
pub fn encode_cell(
    checkpoint: &ModelCheckpoint,
    cell: &UnitCell,
    stiffness: Option<&StiffnessTensor>,
) -> Result<Vec<f64>> {
    let model = &checkpoint.model;
    let stiffness_in = match model.architecture {
        Architecture::Geometry => {
            if stiffness.is_some() {
                warn!("geometry model ignores the stiffness input");
            }
            None
        }
        Architecture::Hybrid => {
            let tensor = match stiffness {
                Some(t) => *t,
                None => homogenize_cell(&cell.threshold(0.5), &checkpoint.material)?,
            };
            Some(
                normalize_stiffness(&tensor, &checkpoint.stiffness_stats)
                    .map(|v| v as f32)
                    .to_vec(),
            )
        }
    };
    let (mu, _) = model.encode(cell.pixels(), stiffness_in.as_deref(), 1)?;
    Ok(mu.into_iter().map(|v| v as f64).collect())
}

/// `n` evenly spaced points from `z_a` to `z_b`, endpoints included.
pub fn interpolate_linear(z_a: &[f64], z_b: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "interpolation needs n ≥ 2, got {n}"
        )));
    }
    if z_a.len() != z_b.len() {
        return Err(Error::invalid("endpoints have different dimensions"));
    }
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                return z_b.to_vec();
            }
            let t = k as f64 / (n - 1) as f64;
            z_a.iter().zip(z_b).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub distance_std: f64,
    pub length: usize,
    /// Entries in {−1, +1}.
    pub direction: Vec<f64>,
    pub origin: f64,
}

impl TransitionSpec {
    pub fn new(distance_std: f64, length: usize, direction: Vec<f64>) -> Self {
        Self {
            distance_std,
            length,
            direction,
            origin: -3.0,
        }
    }
}

/// `z(t) = mu + t·(sigma ⊙ u)`; returns `(z(t0), z(t0 + d))`.
pub fn sweep_endpoints(stats: &LatentStats, spec: &TransitionSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.direction.len() != stats.dim() {
        return Err(Error::invalid(
            "direction dimension differs from the latent size",
        ));
    }
    let at = |t: f64| -> Vec<f64> {
        stats
            .mu
            .iter()
            .zip(&stats.sigma)
            .zip(&spec.direction)
            .map(|((m, s), u)| m + t * (s * u))
            .collect()
    };
    Ok((at(spec.origin), at(spec.origin + spec.distance_std)))
}

/// Ordered cells of a transition and the latent points they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRegion {
    pub cells: Vec<UnitCell>,
    pub latents: Vec<Vec<f64>>,
    pub stiffnesses: Option<Vec<StiffnessTensor>>,
}

impl TransitionRegion {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn decode_points(model: &Vae<f32>, latents: &[Vec<f64>]) -> Result<Vec<UnitCell>> {
    let d = model.latent_dim();
    if latents.iter().any(|z| z.len() != d) {
        return Err(Error::invalid(format!(
            "latent points must have {d} entries"
        )));
    }
    let z: Vec<f32> = latents.iter().flatten().map(|v| *v as f32).collect();
    let images = model.decode(&z, latents.len())?;
    images
        .chunks(CELL_PIXELS)
        .map(|c| UnitCell::new(c.to_vec()))
        .collect()
}

/// Decodes each latent point, preserving order; cells stay grayscale.
pub fn decode_transition(
    checkpoint: &ModelCheckpoint,
    latents: &[Vec<f64>],
) -> Result<TransitionRegion> {
    if latents.is_empty() {
        return Err(Error::invalid("no latent points to decode"));
    }
    Ok(TransitionRegion {
        cells: decode_points(&checkpoint.model, latents)?,
        latents: latents.to_vec(),
        stiffnesses: None,
    })
}

/// Bilinear latent blend of four corners (top-left, top-right, bottom-left,
/// bottom-right) decoded on a `rows × cols` grid, row-major.
pub fn mesh_interpolate(
    checkpoint: &ModelCheckpoint,
    corners: &[Vec<f64>; 4],
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<UnitCell>>> {
    let latents = mesh_latents(corners, rows, cols)?;
    let flat: Vec<Vec<f64>> = latents.into_iter().flatten().collect();
    let cells = decode_points(&checkpoint.model, &flat)?;
    Ok(cells.chunks(cols).map(|r| r.to_vec()).collect())
}

/// Latent points of [`mesh_interpolate`]. Row weight `a = r/(rows−1)` blends
/// top to bottom, column weight `b = c/(cols−1)` left to right.
pub fn mesh_latents(
    corners: &[Vec<f64>; 4],
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid("mesh needs at least 2 rows and 2 columns"));
    }
    let d = corners[0].len();
    if corners.iter().any(|c| c.len() != d) {
        return Err(Error::invalid("corners have different dimensions"));
    }
    let [tl, tr, bl, br] = corners;
    Ok((0..rows)
        .map(|r| {
            let a = r as f64 / (rows - 1) as f64;
            (0..cols)
                .map(|c| {
                    let b = c as f64 / (cols - 1) as f64;
                    let w = [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b];
                    (0..d)
                        .map(|j| w[0] * tl[j] + w[1] * tr[j] + w[2] * bl[j] + w[3] * br[j])
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// Which cells the two metrics see. Smoothness defaults to the grayscale
/// decodes; stiffness always needs a material layout, so it defaults to
/// cells thresholded at 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub threshold_smoothness: bool,
    pub threshold_stiffness: bool,
    #[serde(default)]
    pub pair_averaging: PairAveraging,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            threshold_smoothness: false,
            threshold_stiffness: true,
            pair_averaging: PairAveraging::AllPairs,
        }
    }
}

/// Grid of a standard-deviation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub distances: Vec<f64>,
    pub lengths: Vec<usize>,
    pub directions_per_config: usize,
    pub origin: f64,
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            distances: (1..=6).map(f64::from).collect(),
            lengths: vec![5, 10, 15],
            directions_per_config: 20,
            origin: -3.0,
            seed: 0,
            metrics: MetricOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distances.is_empty() || self.lengths.is_empty() || self.directions_per_config == 0 {
            return Err(Error::invalid(
                "sweep needs at least one distance, length and direction",
            ));
        }
        if let Some(d) = self.distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::invalid(format!(
                "distance {d} must be finite and non-negative"
            )));
        }
        if let Some(n) = self.lengths.iter().find(|n| **n < 4) {
            return Err(Error::invalid(format!(
                "transition length {n} is too short: geometric smoothness needs at least 4 cells"
            )));
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.distances.len() * self.lengths.len() * self.directions_per_config
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of direction `index`; shared across all (d, n) configurations.
pub fn direction_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// Random sign vector in {−1, +1}^dim.
pub fn sign_direction(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub model: String,
    pub distance_std: f64,
    pub length: usize,
    pub direction_seed: u64,
    pub c_s_percent: f64,
    pub c_k_percent: f64,
}

/// Builds, decodes and scores one transition.
pub fn score_transition(
    checkpoint: &ModelCheckpoint,
    latents: &[Vec<f64>],
    options: MetricOptions,
) -> Result<(TransitionRegion, f64, f64)> {
    let mut region = decode_transition(checkpoint, latents)?;
    let c_s = if options.threshold_smoothness {
        let binary: Vec<UnitCell> = region.cells.iter().map(|c| c.threshold(0.5)).collect();
        geometric_smoothness(&binary)?.c_s
    } else {
        geometric_smoothness(&region.cells)?.c_s
    };
    let tensors = transition_stiffness(
        &mut region,
        &checkpoint.material,
        options.threshold_stiffness,
    )?;
    let c_k = stiffness_continuity_with(
        &tensors,
        &checkpoint.stiffness_stats,
        options.pair_averaging,
    )?
    .c_k;
    Ok((region, c_s, c_k))
}

/// Runs the full sweep; records come back in (distance, length, direction) order.
pub fn run_sweep(
    checkpoint: &ModelCheckpoint,
    stats: &LatentStats,
    config: &SweepConfig,
) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let model_name = checkpoint.architecture().name().to_string();
    let mut jobs = Vec::with_capacity(config.record_count());
    for &d in &config.distances {
        for &n in &config.lengths {
            for idx in 0..config.directions_per_config {
                jobs.push((d, n, direction_seed(config.seed, idx)));
            }
        }
    }
    jobs.par_iter()
        .map(|&(d, n, dir_seed)| {
            let spec = TransitionSpec {
                distance_std: d,
                length: n,
                direction: sign_direction(dir_seed, stats.dim()),
                origin: config.origin,
            };
            let (z_a, z_b) = sweep_endpoints(stats, &spec)?;
            let latents = interpolate_linear(&z_a, &z_b, n)?;
            let (_, c_s, c_k) = score_transition(checkpoint, &latents, config.metrics)?;
            Ok(SweepRecord {
                model: model_name.clone(),
                distance_std: d,
                length: n,
                direction_seed: dir_seed,
                c_s_percent: c_s,
                c_k_percent: c_k,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "model,distance_std,length,direction_seed,c_s_percent,c_k_percent";

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{},{},{:.6},{:.6}\n",
            r.model, r.distance_std, r.length, r.direction_seed, r.c_s_percent, r.c_k_percent
        ));
    }
    out
}

/// Parses a sweep CSV; errors name the 1-based line.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines().enumerate();
    let mut offset = 0u64;
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == SWEEP_CSV_HEADER => {
            offset += h.len() as u64 + 1
        }
        Some(_) => return Err(Error::format(0, "line 1: unexpected sweep CSV header")),
        None => return Err(Error::format(0, "line 1: empty sweep CSV")),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let bad = |what: &str| Error::format(offset, format!("line {line_no}: {what}"));
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            offset += 1;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(&format!("`{s}` is not a finite number")))
        };
        records.push(SweepRecord {
            model: fields[0].to_string(),
            distance_std: num(fields[1])?,
            length: fields[2]
                .parse()
                .map_err(|_| bad("length is not an integer"))?,
            direction_seed: fields[3]
                .parse()
                .map_err(|_| bad("direction seed is not an integer"))?,
            c_s_percent: num(fields[4])?,
            c_k_percent: num(fields[5])?,
        });
        offset += line.len() as u64 + 1;
    }
    if records.is_empty() {
        return Err(Error::format(offset, "sweep CSV has no records"));
    }
    Ok(records)
}

/// k-means labels, centroids and per-iteration inertia of the best restart.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    /// Random pair of point indices in the same (`intra`) or different clusters.
    pub fn endpoint_pair(&self, intra: bool, seed: u64) -> Result<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.labels.len();
        if n < 2 {
            return Err(Error::Clustering("need at least two points".into()));
        }
        for _ in 0..10_000 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b && (self.labels[a] == self.labels[b]) == intra {
                return Ok((a, b));
            }
        }
        Err(Error::Clustering(format!(
            "no {} pair found",
            if intra {
                "intra-cluster"
            } else {
                "inter-cluster"
            }
        )))
    }
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_RESEEDS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// One Lloyd run; `None` if a cluster is empty at convergence.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Option<Clustering> {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut inertia = 0.0;
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                );
            changed |= *l != best;
            *l = best;
            inertia += d;
        }
        history.push(inertia);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, v) in sums[*l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed && history.len() > 1 {
            if counts.contains(&0) {
                return None;
            }
            let inertia = labels
                .iter()
                .zip(points)
                .map(|(l, p)| sq_dist(p, &centroids[*l]))
                .sum();
            return Some(Clustering {
                labels,
                centroids,
                inertia,
                inertia_history: history,
            });
        }
    }
    let counts = (0..k).map(|j| labels.iter().filter(|l| **l == j).count());
    if counts.clone().any(|c| c == 0) {
        return None;
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(l, p)| sq_dist(p, &centroids[*l]))
        .sum();
    Some(Clustering {
        labels,
        centroids,
        inertia,
        inertia_history: history,
    })
}

/// k-means with k-means++ seeding; best inertia over 10 restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::Clustering(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have mixed dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..KMEANS_RESTARTS {
        let mut result = None;
        for _ in 0..KMEANS_RESEEDS {
            result = lloyd(points, kmeans_plus_plus(points, k, &mut rng));
            if result.is_some() {
                break;
            }
        }
        let result = result.ok_or_else(|| {
            Error::Clustering(format!(
                "empty cluster persisted after {KMEANS_RESEEDS} re-seeds"
            ))
        })?;
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}

/// Clusters the encoded training means.
pub fn cluster_latent(
    checkpoint: &ModelCheckpoint,
    train: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Clustering> {
    kmeans(&encode_dataset(checkpoint, train)?, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_symmetric_pair() {
        let s = LatentStats::from_points(&[vec![2.0, -0.5], vec![-2.0, 0.5]]).unwrap();
        assert_eq!(s.mu, vec![0.0, 0.0]);
        assert_eq!(s.sigma, vec![2.0, 0.5]);
        assert!(s.collapsed.is_empty());
    }

    #[test]
    fn single_point_is_floored() {
        let s = LatentStats::from_points(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(s.sigma, vec![SIGMA_FLOOR; 2]);
        assert_eq!(s.collapsed, vec![0, 1]);
    }

    #[test]
    fn linear_examples() {
        let a = vec![0.0; 16];
        let b: Vec<f64> = (0..16).map(|j| if j == 0 { 9.0 } else { 0.0 }).collect();
        assert_eq!(
            interpolate_linear(&a, &b, 2).unwrap(),
            vec![a.clone(), b.clone()]
        );
        let mid = &interpolate_linear(&a, &b, 3).unwrap()[1];
        assert_eq!(mid[0], 4.5);
        let pts = interpolate_linear(&a, &b, 10).unwrap();
        for (k, p) in pts.iter().enumerate() {
            assert_eq!(p[0], k as f64);
            assert!(p[1..].iter().all(|v| *v == 0.0));
        }
        assert!(interpolate_linear(&a, &b, 1).is_err());
    }

    #[test]
    fn endpoints_at_plus_three() {
        let stats = LatentStats {
            mu: vec![0.5; 16],
            sigma: vec![2.0; 16],
            collapsed: vec![],
        };
        let spec = TransitionSpec::new(6.0, 5, vec![1.0; 16]);
        let (a, b) = sweep_endpoints(&stats, &spec).unwrap();
        assert!(a.iter().all(|v| *v == 0.5 - 6.0));
        assert!(b.iter().all(|v| *v == 0.5 + 6.0));
        let zero = TransitionSpec::new(0.0, 5, vec![1.0; 16]);
        let (a, b) = sweep_endpoints(&stats, &zero).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_validation_rejects_short_lengths() {
        let cfg = SweepConfig {
            lengths: vec![3],
            ..SweepConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        assert_eq!(SweepConfig::default().record_count(), 360);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let recs = vec![SweepRecord {
            model: "geometry".into(),
            distance_std: 1.0,
            length: 5,
            direction_seed: 42,
            c_s_percent: 97.123456789,
            c_k_percent: 88.0,
        }];
        let text = sweep_csv(&recs);
        assert_eq!(
            text,
            "model,distance_std,length,direction_seed,c_s_percent,c_k_percent\ngeometry,1.000000,5,42,97.123457,88.000000\n"
        );
        let back = parse_sweep_csv(&text).unwrap();
        assert_eq!(back[0].length, 5);
        assert_eq!(back[0].c_s_percent, 97.123457);
        assert!(parse_sweep_csv("").is_err());
        assert!(parse_sweep_csv(&format!("{SWEEP_CSV_HEADER}\n")).is_err());
        let err =
            parse_sweep_csv(&format!("{SWEEP_CSV_HEADER}\ngeometry,1,5,1,x,2\n")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = i as f64 * 0.01;
            pts.push(vec![e, -e]);
            pts.push(vec![10.0 + e, 10.0 - e]);
        }
        let c = kmeans(&pts, 2, 3).unwrap();
        for pair in c.labels.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert!(c.labels.iter().step_by(2).all(|l| *l == c.labels[0]));
        assert!(c.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let c = kmeans(&pts, 1, 0).unwrap();
        assert!((c.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((c.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_corners_and_center() {
        let corners = [
            vec![0.0, 0.0],
            vec![4.0, 0.0],
            vec![0.0, 8.0],
            vec![4.0, 8.0],
        ];
        let grid = mesh_latents(&corners, 3, 3).unwrap();
        assert_eq!(grid[0][0], corners[0]);
        assert_eq!(grid[0][2], corners[1]);
        assert_eq!(grid[2][0], corners[2]);
        assert_eq!(grid[2][2], corners[3]);
        assert_eq!(grid[1][1], vec![2.0, 4.0]);
    }
}
