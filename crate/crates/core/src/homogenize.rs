//! Periodic finite-element homogenization of pixel unit cells.
//!
//! Each pixel is one bilinear quadrilateral element on a periodic square grid.
//! Three unit macroscopic strains (εxx, εyy, γxy) are applied; the periodic
//! fluctuation fields are solved with a sparse Cholesky factorization and the
//! effective plane-stress matrix is assembled from averaged strain-energy
//! cross terms. Axis convention: x runs along pixel columns, y along pixel rows.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, UnitCell};
use crate::error::{Error, Result};

/// Linear-elastic base material with SIMP-style density interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    #[serde(rename = "E0")]
    pub e0: f64,
    pub nu: f64,
    #[serde(rename = "Emin")]
    pub emin: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            e0: 1.0,
            nu: 0.3,
            emin: 1e-6,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.emin > 0.0 && self.emin < self.e0) {
            return Err(Error::invalid(format!(
                "material requires 0 < Emin < E0 (got Emin={}, E0={})",
                self.emin, self.e0
            )));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::invalid(format!(
                "Poisson ratio {} outside [0, 0.5)",
                self.nu
            )));
        }
        Ok(())
    }

    /// Young's modulus for a density in `[0, 1]`: `Emin + ρ³ (E0 − Emin)`.
    pub fn modulus(&self, density: f64) -> f64 {
        let rho = density.clamp(0.0, 1.0);
        self.emin + rho * rho * rho * (self.e0 - self.emin)
    }

    /// Isotropic plane-stress matrix for Young's modulus `e`.
    pub fn plane_stress(&self, e: f64) -> StiffnessTensor {
        let f = e / (1.0 - self.nu * self.nu);
        StiffnessTensor::new([
            [f, f * self.nu, 0.0],
            [f * self.nu, f, 0.0],
            [0.0, 0.0, f * (1.0 - self.nu) / 2.0],
        ])
    }
}

/// Symmetric 3×3 Voigt stiffness matrix (11, 22, 12).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessTensor {
    pub c: [[f64; 3]; 3],
}

impl StiffnessTensor {
    pub fn new(c: [[f64; 3]; 3]) -> Self {
        Self { c }
    }

    pub fn from_flat(v: [f64; 9]) -> Self {
        let mut c = [[0.0; 3]; 3];
        for (k, x) in v.iter().enumerate() {
            c[k / 3][k % 3] = *x;
        }
        Self { c }
    }

    /// Row-major flattening.
    pub fn flat(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = self.c[i][j];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Every entry rounded through `f32`, the precision of the dataset file.
    pub fn to_f32_precision(&self) -> Self {
        let mut v = self.flat();
        for x in &mut v {
            *x = *x as f32 as f64;
        }
        Self::from_flat(v)
    }

    pub fn symmetry_error(&self) -> f64 {
        let mut e = 0.0_f64;
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((self.c[i][j] - self.c[j][i]).abs());
            }
        }
        e
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = nalgebra::Matrix3::from_fn(|i, j| 0.5 * (self.c[i][j] + self.c[j][i]));
        let ev = m.symmetric_eigenvalues();
        [ev[0], ev[1], ev[2]]
    }

    /// Checks symmetry and positive semidefiniteness at `1e-9·max|c|`.
    pub fn is_valid(&self) -> bool {
        let tol = 1e-9 * self.max_abs().max(f64::MIN_POSITIVE);
        self.symmetry_error() <= tol && self.eigenvalues().iter().all(|&l| l >= -tol)
    }
}

/// Per-component extrema of the training stiffness tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessStats {
    pub min: [f64; 9],
    pub max: [f64; 9],
}

impl StiffnessStats {
    pub fn from_tensors<'a>(
        tensors: impl IntoIterator<Item = &'a StiffnessTensor>,
    ) -> Result<Self> {
        let mut min = [f64::INFINITY; 9];
        let mut max = [f64::NEG_INFINITY; 9];
        let mut any = false;
        for t in tensors {
            any = true;
            for (k, v) in t.flat().iter().enumerate() {
                min[k] = min[k].min(*v);
                max[k] = max[k].max(*v);
            }
        }
        if !any {
            return Err(Error::invalid(
                "stiffness statistics need at least one tensor",
            ));
        }
        Ok(Self { min, max })
    }
}

/// Componentwise min/max over all stiffness tensors of `train`.
pub fn stiffness_stats(train: &Dataset) -> Result<StiffnessStats> {
    StiffnessStats::from_tensors(train.records.iter().map(|r| &r.stiffness))
}

/// Min-max normalization of a tensor into `[0, 1]^9` (row-major).
///
/// Degenerate components (`max == min`) map to 0; values outside the training
/// range are clamped.
pub fn normalize_stiffness(t: &StiffnessTensor, stats: &StiffnessStats) -> [f64; 9] {
    let mut out = [0.0; 9];
    for (k, v) in t.flat().iter().enumerate() {
        let span = stats.max[k] - stats.min[k];
        out[k] = if span > 0.0 {
            ((v - stats.min[k]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    out
}

/// Homogenized stiffness of a 50×50 cell. Density values are used as-is
/// through the ρ³ interpolation; threshold beforehand for binary behaviour.
pub fn homogenize_cell(cell: &UnitCell, material: &MaterialModel) -> Result<StiffnessTensor> {
    let densities: Vec<f64> = cell.pixels().iter().map(|&p| p as f64).collect();
    Homogenizer::shared(crate::dataset::CELL_SIZE).homogenize(&densities, material)
}

/// Unit-size bilinear quad stiffness for E = 1 (2×2 Gauss, exact for squares),
/// node order (0,0), (1,0), (1,1), (0,1) with dofs interleaved (u, v).
fn element_stiffness(nu: f64) -> [[f64; 8]; 8] {
    let f = 1.0 / (1.0 - nu * nu);
    let d = [
        [f, f * nu, 0.0],
        [f * nu, f, 0.0],
        [0.0, 0.0, f * (1.0 - nu) / 2.0],
    ];
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let g = 1.0 / 3.0_f64.sqrt();
    let mut ke = [[0.0; 8]; 8];
    for &(xi, eta) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
        // dN/dx = 2 dN/dξ for a unit element mapped from [-1, 1]².
        let mut b = [[0.0; 8]; 3];
        for (a, &(xa, ya)) in corners.iter().enumerate() {
            let dx = 2.0 * 0.25 * xa * (1.0 + ya * eta);
            let dy = 2.0 * 0.25 * ya * (1.0 + xa * xi);
            b[0][2 * a] = dx;
            b[1][2 * a + 1] = dy;
            b[2][2 * a] = dy;
            b[2][2 * a + 1] = dx;
        }
        let w = 0.25; // det J with unit weights
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        s += b[p][i] * d[p][q] * b[q][j];
                    }
                }
                ke[i][j] += w * s;
            }
        }
    }
    ke
}

/// Nodal displacements of a uniform unit strain on the unit element.
fn strain_displacements(case: usize) -> [f64; 8] {
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let (exx, eyy, gxy) = match case {
        0 => (1.0, 0.0, 0.0),
        1 => (0.0, 1.0, 0.0),
        _ => (0.0, 0.0, 1.0),
    };
    let mut u = [0.0; 8];
    for (a, &(x, y)) in corners.iter().enumerate() {
        u[2 * a] = exx * x + 0.5 * gxy * y;
        u[2 * a + 1] = 0.5 * gxy * x + eyy * y;
    }
    u
}

/// Precomputed mesh topology and symbolic factorization for an `n × n` grid.
pub struct Homogenizer {
    n: usize,
    /// Global (unpinned) dof of each element's 8 local dofs.
    element_dofs: Vec<[usize; 8]>,
    /// Local (a, b) pair and element for each lower-triangle triplet.
    triplets: Vec<(u32, u8, u8)>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    llt_symbolic: SymbolicLlt<usize>,
}

const PINNED: usize = 2;

impl Homogenizer {
    /// Builds the topology and symbolic factorization for an `n × n` grid.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("homogenization grid must be at least 2×2"));
        }
        let node = |r: usize, c: usize| (r % n) * n + (c % n);
        let mut element_dofs = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let nodes = [
                    node(r, c),
                    node(r, c + 1),
                    node(r + 1, c + 1),
                    node(r + 1, c),
                ];
                let mut dofs = [0usize; 8];
                for (a, &nd) in nodes.iter().enumerate() {
                    dofs[2 * a] = 2 * nd;
                    dofs[2 * a + 1] = 2 * nd + 1;
                }
                element_dofs.push(dofs);
            }
        }
        let nfree = 2 * n * n - PINNED;
        let mut triplets = Vec::new();
        let mut indices = Vec::new();
        for (e, dofs) in element_dofs.iter().enumerate() {
            for a in 0..8 {
                for b in 0..8 {
                    let (ra, cb) = (dofs[a], dofs[b]);
                    if ra < PINNED || cb < PINNED || ra < cb {
                        continue;
                    }
                    triplets.push((e as u32, a as u8, b as u8));
                    indices.push(Pair::new(ra - PINNED, cb - PINNED));
                }
            }
        }
        let (symbolic, argsort) =
            SymbolicSparseColMat::try_new_from_indices(nfree, nfree, &indices)
                .map_err(|e| Error::invalid(format!("sparse structure: {e:?}")))?;
        let llt_symbolic = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| Error::invalid(format!("symbolic factorization: {e:?}")))?;
        Ok(Self {
            n,
            element_dofs,
            triplets,
            symbolic,
            argsort,
            llt_symbolic,
        })
    }

    /// Process-wide cached instance for grid size `n`.
    pub fn shared(n: usize) -> Arc<Homogenizer> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Homogenizer>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("homogenizer cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(Homogenizer::new(n).expect("valid grid size")))
            .clone()
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    /// Homogenizes a row-major `n × n` density field.
    pub fn homogenize(
        &self,
        densities: &[f64],
        material: &MaterialModel,
    ) -> Result<StiffnessTensor> {
        let n = self.n;
        if densities.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} densities, got {}",
                n * n,
                densities.len()
            )));
        }
        if densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::invalid("densities must lie in [0, 1]"));
        }
        material.validate()?;

        let ke = element_stiffness(material.nu);
        let moduli: Vec<f64> = densities.iter().map(|&d| material.modulus(d)).collect();
        let values: Vec<f64> = self
            .triplets
            .iter()
            .map(|&(e, a, b)| moduli[e as usize] * ke[a as usize][b as usize])
            .collect();
        let k = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &values)
            .map_err(|e| Error::invalid(format!("assembly: {e:?}")))?;

        let ndof = 2 * n * n;
        let nfree = ndof - PINNED;
        let u0: Vec<[f64; 8]> = (0..3).map(strain_displacements).collect();
        let mut rhs = Mat::<f64>::zeros(nfree, 3);
        for (e, dofs) in self.element_dofs.iter().enumerate() {
            for (case, u) in u0.iter().enumerate() {
                for a in 0..8 {
                    if dofs[a] < PINNED {
                        continue;
                    }
                    let mut f = 0.0;
                    for b in 0..8 {
                        f += ke[a][b] * u[b];
                    }
                    rhs[(dofs[a] - PINNED, case)] -= moduli[e] * f;
                }
            }
        }

        let llt = Llt::try_new_with_symbolic(self.llt_symbolic.clone(), k.as_ref(), Side::Lower)
            .map_err(|_| Error::NumericalFailure { residual: f64::NAN })?;
        let mut sol = rhs.clone();
        llt.solve_in_place(sol.as_mut());

        let residual = self.relative_residual(&values, &sol, &rhs);
        if !(residual <= 1e-8) {
            return Err(Error::NumericalFailure { residual });
        }

        let mut c = [[0.0; 3]; 3];
        let mut ue = [[0.0; 8]; 3];
        for (e, dofs) in self.element_dofs.iter().enumerate() {
            for case in 0..3 {
                for a in 0..8 {
                    let fluct = if dofs[a] < PINNED {
                        0.0
                    } else {
                        sol[(dofs[a] - PINNED, case)]
                    };
                    ue[case][a] = u0[case][a] + fluct;
                }
            }
            let mut kue = [[0.0; 8]; 3];
            for case in 0..3 {
                for a in 0..8 {
                    kue[case][a] = (0..8).map(|b| ke[a][b] * ue[case][b]).sum();
                }
            }
            for i in 0..3 {
                for j in i..3 {
                    let energy: f64 = (0..8).map(|a| ue[i][a] * kue[j][a]).sum();
                    c[i][j] += moduli[e] * energy;
                }
            }
        }
        let area = (n * n) as f64;
        for i in 0..3 {
            for j in i..3 {
                c[i][j] /= area;
                c[j][i] = c[i][j];
            }
        }
        Ok(StiffnessTensor::new(c))
    }

    /// `‖K x − f‖ / ‖f‖` over all load cases, from the lower-triangle triplets.
    fn relative_residual(&self, values: &[f64], x: &Mat<f64>, f: &Mat<f64>) -> f64 {
        let nfree = x.nrows();
        let mut r = Mat::<f64>::zeros(nfree, 3);
        for (t, &(e, a, b)) in self.triplets.iter().enumerate() {
            let dofs = &self.element_dofs[e as usize];
            let (i, j) = (dofs[a as usize] - PINNED, dofs[b as usize] - PINNED);
            let v = values[t];
            for case in 0..3 {
                r[(i, case)] += v * x[(j, case)];
                if i != j {
                    r[(j, case)] += v * x[(i, case)];
                }
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for case in 0..3 {
            for i in 0..nfree {
                let d = r[(i, case)] - f[(i, case)];
                num += d * d;
                den += f[(i, case)] * f[(i, case)];
            }
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_stiffness_is_symmetric_with_rigid_modes() {
        let ke = element_stiffness(0.3);
        for i in 0..8 {
            for j in 0..8 {
                assert!((ke[i][j] - ke[j][i]).abs() < 1e-14);
            }
        }
        // translation in x carries no force
        for row in ke.iter() {
            let f: f64 = (0..4).map(|a| row[2 * a]).sum();
            assert!(f.abs() < 1e-14);
        }
    }

    #[test]
    fn solid_cell_recovers_plane_stress_matrix() {
        let m = MaterialModel::default();
        let h = Homogenizer::new(6).unwrap();
        let c = h.homogenize(&vec![1.0; 36], &m).unwrap();
        let expected = m.plane_stress(1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.c[i][j] - expected.c[i][j]).abs() < 1e-9, "{i}{j}");
            }
        }
        // printed values are 6-decimal roundings
        assert!((c.c[0][0] - 1.098901).abs() <= 5e-7);
        assert!((c.c[0][1] - 0.329670).abs() <= 5e-7);
        assert!((c.c[2][2] - 0.384615).abs() <= 5e-7);
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let lo = StiffnessTensor::from_flat([0.0, 1.0, 2.0, 1.0, 0.5, 0.0, 2.0, 0.0, 0.1]);
        let hi = StiffnessTensor::from_flat([1.0, 3.0, 2.0, 3.0, 1.5, 0.2, 2.0, 0.2, 0.3]);
        let stats = StiffnessStats::from_tensors([&lo, &hi]).unwrap();
        assert_eq!(normalize_stiffness(&lo, &stats), [0.0; 9]);
        let top = normalize_stiffness(&hi, &stats);
        // component 2 and 6 are degenerate (max == min) and map to zero
        for (k, v) in top.iter().enumerate() {
            let want = if k == 2 || k == 6 { 0.0 } else { 1.0 };
            assert_eq!(*v, want);
        }
        let mid = StiffnessTensor::from_flat(std::array::from_fn(|k| {
            0.5 * (lo.flat()[k] + hi.flat()[k])
        }));
        for (k, v) in normalize_stiffness(&mid, &stats).iter().enumerate() {
            if k != 2 && k != 6 {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn out_of_range_values_clamp() {
        let lo = StiffnessTensor::from_flat([0.0; 9]);
        let hi = StiffnessTensor::from_flat([1.0; 9]);
        let stats = StiffnessStats::from_tensors([&lo, &hi]).unwrap();
        let big = StiffnessTensor::from_flat([2.0; 9]);
        let small = StiffnessTensor::from_flat([-1.0; 9]);
        assert_eq!(normalize_stiffness(&big, &stats), [1.0; 9]);
        assert_eq!(normalize_stiffness(&small, &stats), [0.0; 9]);
    }

    #[test]
    fn invalid_material_rejected() {
        let m = MaterialModel {
            e0: 1.0,
            nu: 0.5,
            emin: 1e-6,
        };
        assert!(m.validate().is_err());
        let m = MaterialModel {
            e0: 1.0,
            nu: 0.3,
            emin: 0.0,
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn wrong_length_rejected() {
        let h = Homogenizer::new(4).unwrap();
        assert!(h.homogenize(&[1.0; 15], &MaterialModel::default()).is_err());
    }
}
