//! Geometric smoothness (C_s) and stiffness continuity (C_K) of a transition
//! region.
//!
//! C_s stacks the n cells into an n×50×50 volume (stack axis z), takes 3D
//! Sobel gradients with VALID boundaries (n−2 slices of 48×48), and averages
//! the normalized RMSE between consecutive gradient slices over the n−3 pairs.
//! C_K averages the RMSE between consecutive min-max normalized stiffness
//! tensors over the n−1 pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{UnitCell, CELL_SIZE};
use crate::error::{Error, Result};
use crate::homogenize::{
    homogenize_cell, normalize_stiffness, MaterialModel, StiffnessStats, StiffnessTensor,
};
use crate::latent::TransitionRegion;

/// Side length of a gradient slice after VALID filtering.
pub const GRADIENT_SIZE: usize = CELL_SIZE - 2;

/// Separable 3×3×3 gradient filter: derivative taps along the gradient axis,
/// smoothing taps along the two transverse axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientKernel {
    pub derivative: [f64; 3],
    pub smoothing: [f64; 3],
}

impl Default for GradientKernel {
    fn default() -> Self {
        Self::sobel()
    }
}

impl GradientKernel {
    pub fn sobel() -> Self {
        Self {
            derivative: [-1.0, 0.0, 1.0],
            smoothing: [1.0, 2.0, 1.0],
        }
    }

    /// Dense kernel for `axis` (0 = x, 1 = y, 2 = z), indexed `[dz][dy][dx]`.
    pub fn dense(&self, axis: usize) -> [[[f64; 3]; 3]; 3] {
        let mut k = [[[0.0; 3]; 3]; 3];
        for (z, plane) in k.iter_mut().enumerate() {
            for (y, row) in plane.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    let taps = [x, y, z];
                    *v = (0..3)
                        .map(|a| {
                            if a == axis {
                                self.derivative[taps[a]]
                            } else {
                                self.smoothing[taps[a]]
                            }
                        })
                        .product();
                }
            }
        }
        k
    }

    /// Largest possible difference between two gradient values for inputs in
    /// `[0, 1]`: twice the sum of the positive coefficients.
    pub fn rmse_max(&self) -> f64 {
        let k = self.dense(0);
        2.0 * k
            .iter()
            .flatten()
            .flatten()
            .filter(|v| **v > 0.0)
            .sum::<f64>()
    }
}

/// The three gradient volumes, each `slices × 48 × 48`, row-major per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVolumes {
    pub slices: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub gz: Vec<f64>,
}

pub fn gradient_volumes(cells: &[UnitCell], kernel: &GradientKernel) -> Result<GradientVolumes> {
    let n = cells.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "gradient volumes need at least 3 cells, got {n}"
        )));
    }
    let s = CELL_SIZE;
    let g = GRADIENT_SIZE;
    let vol: Vec<f64> = cells
        .iter()
        .flat_map(|c| c.pixels().iter().map(|&p| p as f64))
        .collect();

    // Separable passes: filter x, then y, then z, each shrinking by 2.
    let pass_x = |taps: &[f64; 3]| -> Vec<f64> {
        let mut out = vec![0.0; n * s * g];
        for z in 0..n {
            for y in 0..s {
                let row = &vol[(z * s + y) * s..(z * s + y + 1) * s];
                let dst = &mut out[(z * s + y) * g..(z * s + y + 1) * g];
                for x in 0..g {
                    dst[x] = taps[0] * row[x] + taps[1] * row[x + 1] + taps[2] * row[x + 2];
                }
            }
        }
        out
    };
    let pass_y = |src: &[f64], taps: &[f64; 3]| -> Vec<f64> {
        let mut out = vec![0.0; n * g * g];
        for z in 0..n {
            for y in 0..g {
                for x in 0..g {
                    let at = |dy: usize| src[(z * s + y + dy) * g + x];
                    out[(z * g + y) * g + x] = taps[0] * at(0) + taps[1] * at(1) + taps[2] * at(2);
                }
            }
        }
        out
    };
    let pass_z = |src: &[f64], taps: &[f64; 3]| -> Vec<f64> {
        let plane = g * g;
        let mut out = vec![0.0; (n - 2) * plane];
        for z in 0..n - 2 {
            for i in 0..plane {
                out[z * plane + i] = taps[0] * src[z * plane + i]
                    + taps[1] * src[(z + 1) * plane + i]
                    + taps[2] * src[(z + 2) * plane + i];
            }
        }
        out
    };

    let (d, sm) = (&kernel.derivative, &kernel.smoothing);
    let x_d = pass_x(d);
    let x_s = pass_x(sm);
    let gx = pass_z(&pass_y(&x_d, sm), sm);
    let xs_ys = pass_y(&x_s, sm);
    let gy = pass_z(&pass_y(&x_s, d), sm);
    let gz = pass_z(&xs_ys, d);
    Ok(GradientVolumes {
        slices: n - 2,
        gx,
        gy,
        gz,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessResult {
    /// Normalized RMSE for each of the n−3 consecutive gradient-slice pairs.
    pub pair_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// Percentage in `[0, 100]`.
    pub c_s: f64,
}

pub fn geometric_smoothness(cells: &[UnitCell]) -> Result<SmoothnessResult> {
    geometric_smoothness_with(cells, &GradientKernel::sobel())
}

pub fn geometric_smoothness_with(
    cells: &[UnitCell],
    kernel: &GradientKernel,
) -> Result<SmoothnessResult> {
    let n = cells.len();
    if n < 4 {
        return Err(Error::invalid(format!(
            "geometric smoothness needs at least 4 cells, got {n}"
        )));
    }
    let vols = gradient_volumes(cells, kernel)?;
    let plane = GRADIENT_SIZE * GRADIENT_SIZE;
    let rmse = |v: &[f64], i: usize| -> f64 {
        let a = &v[i * plane..(i + 1) * plane];
        let b = &v[(i + 1) * plane..(i + 2) * plane];
        let ss: f64 = a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum();
        (ss / plane as f64).sqrt()
    };
    let denom = 3.0 * kernel.rmse_max();
    let pair_rmse: Vec<f64> = (0..vols.slices - 1)
        .map(|i| (rmse(&vols.gx, i) + rmse(&vols.gy, i) + rmse(&vols.gz, i)) / denom)
        .collect();
    let mean_rmse = pair_rmse.iter().sum::<f64>() / pair_rmse.len() as f64;
    Ok(SmoothnessResult {
        pair_rmse,
        mean_rmse,
        c_s: (1.0 - mean_rmse) * 100.0,
    })
}

/// Which consecutive stiffness pairs enter the C_K average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAveraging {
    /// Mean over all n−1 pairs.
    #[default]
    AllPairs,
    /// Mean over the first n−3 pairs, as for C_s (needs n ≥ 4).
    FirstNMinus3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityResult {
    pub pair_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub c_k: f64,
}

pub fn stiffness_continuity(
    tensors: &[StiffnessTensor],
    stats: &StiffnessStats,
) -> Result<ContinuityResult> {
    stiffness_continuity_with(tensors, stats, PairAveraging::AllPairs)
}

pub fn stiffness_continuity_with(
    tensors: &[StiffnessTensor],
    stats: &StiffnessStats,
    averaging: PairAveraging,
) -> Result<ContinuityResult> {
    let n = tensors.len();
    let min_n = match averaging {
        PairAveraging::AllPairs => 2,
        PairAveraging::FirstNMinus3 => 4,
    };
    if n < min_n {
        return Err(Error::invalid(format!(
            "stiffness continuity needs at least {min_n} tensors, got {n}"
        )));
    }
    let normalized: Vec<[f64; 9]> = tensors
        .iter()
        .map(|t| normalize_stiffness(t, stats))
        .collect();
    let pair_rmse: Vec<f64> = normalized
        .windows(2)
        .map(|w| {
            let ss: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum();
            (ss / 9.0).sqrt()
        })
        .collect();
    let used = match averaging {
        PairAveraging::AllPairs => &pair_rmse[..],
        PairAveraging::FirstNMinus3 => &pair_rmse[..n - 3],
    };
    let mean_rmse = used.iter().sum::<f64>() / used.len() as f64;
    Ok(ContinuityResult {
        pair_rmse,
        mean_rmse,
        c_k: (1.0 - mean_rmse) * 100.0,
    })
}

/// Homogenizes every cell of `region` (thresholded at 0.5 unless `threshold`
/// is false), caches the tensors on the region and returns them.
pub fn transition_stiffness(
    region: &mut TransitionRegion,
    material: &MaterialModel,
    threshold: bool,
) -> Result<Vec<StiffnessTensor>> {
    if region.cells.is_empty() {
        return Err(Error::invalid("transition region is empty"));
    }
    let tensors = region
        .cells
        .par_iter()
        .enumerate()
        .map(|(index, cell)| {
            let input = if threshold {
                cell.threshold(0.5)
            } else {
                cell.clone()
            };
            homogenize_cell(&input, material).map_err(|e| Error::CellFailure {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    region.stiffnesses = Some(tensors.clone());
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobel_kernel_shape() {
        let k = GradientKernel::sobel();
        assert_eq!(k.rmse_max(), 32.0);
        for axis in 0..3 {
            let d = k.dense(axis);
            let sum: f64 = d.iter().flatten().flatten().sum();
            assert_eq!(sum, 0.0);
            // antisymmetric along its own axis
            for a in 0..3 {
                for b in 0..3 {
                    let (lo, hi) = match axis {
                        0 => (d[a][b][0], d[a][b][2]),
                        1 => (d[a][0][b], d[a][2][b]),
                        _ => (d[0][a][b], d[2][a][b]),
                    };
                    assert_eq!(lo, -hi);
                }
            }
        }
    }

    #[test]
    fn constant_volume_has_zero_gradients() {
        let cells = vec![UnitCell::filled(0.7); 5];
        let g = gradient_volumes(&cells, &GradientKernel::sobel()).unwrap();
        assert_eq!(g.slices, 3);
        assert!(g
            .gx
            .iter()
            .chain(&g.gy)
            .chain(&g.gz)
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_ramp_in_x() {
        // value = s·col; Sobel x-moment is Σ d(dx)·dx · 16 = 2 · 16 = 32
        let s = 0.01;
        let cell = UnitCell::from_fn(|_, c| (s * c as f64) as f32).unwrap();
        let g = gradient_volumes(&vec![cell; 3], &GradientKernel::sobel()).unwrap();
        assert_eq!(g.slices, 1);
        for v in &g.gx {
            assert!((v - 32.0 * s).abs() < 1e-5, "{v}");
        }
        assert!(g.gy.iter().chain(&g.gz).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn too_few_cells_rejected() {
        let cells = vec![UnitCell::filled(0.0); 3];
        assert!(gradient_volumes(&cells[..2], &GradientKernel::sobel()).is_err());
        assert!(geometric_smoothness(&cells).is_err());
    }

    #[test]
    fn identical_cells_score_100() {
        let cell = UnitCell::from_fn(|r, c| ((r * 7 + c * 3) % 2) as f32).unwrap();
        let r = geometric_smoothness(&vec![cell; 6]).unwrap();
        assert_eq!(r.c_s, 100.0);
        assert_eq!(r.pair_rmse.len(), 3);
    }

    #[test]
    fn continuity_examples() {
        let lo = StiffnessTensor::from_flat([0.0; 9]);
        let hi = StiffnessTensor::from_flat([1.0; 9]);
        let mid = StiffnessTensor::from_flat([0.5; 9]);
        let stats = StiffnessStats::from_tensors([&lo, &hi]).unwrap();
        assert_eq!(
            stiffness_continuity(&[mid, mid, mid], &stats).unwrap().c_k,
            100.0
        );
        let r = stiffness_continuity(&[lo, hi], &stats).unwrap();
        assert_eq!(r.pair_rmse, vec![1.0]);
        assert_eq!(r.c_k, 0.0);
        let r = stiffness_continuity(&[lo, mid, hi], &stats).unwrap();
        assert_eq!(r.pair_rmse, vec![0.5, 0.5]);
        assert_eq!(r.c_k, 50.0);
        assert!(stiffness_continuity(&[lo], &stats).is_err());
    }

    #[test]
    fn legacy_divisor_uses_first_pairs() {
        let lo = StiffnessTensor::from_flat([0.0; 9]);
        let hi = StiffnessTensor::from_flat([1.0; 9]);
        let stats = StiffnessStats::from_tensors([&lo, &hi]).unwrap();
        let seq = [lo, lo, hi, hi, hi];
        let all = stiffness_continuity_with(&seq, &stats, PairAveraging::AllPairs).unwrap();
        let legacy = stiffness_continuity_with(&seq, &stats, PairAveraging::FirstNMinus3).unwrap();
        assert_eq!(all.c_k, 75.0);
        assert_eq!(legacy.c_k, 50.0);
        assert!(stiffness_continuity_with(&seq[..3], &stats, PairAveraging::FirstNMinus3).is_err());
    }
}
