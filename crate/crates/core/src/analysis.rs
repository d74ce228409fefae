//! OLS regression of a metric on latent distance, transition length and their
//! interaction, plus a PCA projection for latent-space plots.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const TERM_NAMES: [&str; 4] = ["constant", "distance", "length", "interaction"];

/// Rows of `(distance_std, transition_length, response)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub rows: Vec<(f64, f64, f64)>,
}

impl RegressionDesign {
    pub fn new(rows: Vec<(f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 5 {
            return Err(Error::invalid(format!(
                "regression needs at least 5 rows, got {}",
                rows.len()
            )));
        }
        Ok(Self { rows })
    }

    /// Design matrix with columns `[1, d, n, d·n]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), 4, |i, j| {
            let (d, n, _) = self.rows[i];
            match j {
                0 => 1.0,
                1 => d,
                2 => n,
                _ => d * n,
            }
        })
    }

    pub fn response(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.2))
    }

    /// One row per distinct `(d, n)` holding the mean response.
    pub fn aggregated(&self) -> Result<Self> {
        let mut groups: Vec<((f64, f64), f64, usize)> = Vec::new();
        for &(d, n, y) in &self.rows {
            match groups.iter_mut().find(|g| g.0 == (d, n)) {
                Some(g) => {
                    g.1 += y;
                    g.2 += 1;
                }
                None => groups.push(((d, n), y, 1)),
            }
        }
        Self::new(
            groups
                .into_iter()
                .map(|((d, n), s, c)| (d, n, s / c as f64))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermEstimate {
    pub coefficient: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    /// In [`TERM_NAMES`] order.
    pub terms: [TermEstimate; 4],
    pub r_squared: f64,
    pub n_rows: usize,
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn constant(&self) -> &TermEstimate {
        &self.terms[0]
    }
    pub fn distance(&self) -> &TermEstimate {
        &self.terms[1]
    }
    pub fn length(&self) -> &TermEstimate {
        &self.terms[2]
    }
    pub fn interaction(&self) -> &TermEstimate {
        &self.terms[3]
    }

    pub fn dof(&self) -> usize {
        self.n_rows - 4
    }

    /// Two-sided `1 − alpha` confidence interval of a term.
    pub fn confidence_interval(&self, term: usize, alpha: f64) -> (f64, f64) {
        let t = &self.terms[term];
        let q = StudentsT::new(0.0, 1.0, self.dof() as f64)
            .map(|dist| dist.inverse_cdf(1.0 - alpha / 2.0))
            .unwrap_or(f64::INFINITY);
        (
            t.coefficient - q * t.std_error,
            t.coefficient + q * t.std_error,
        )
    }
}

/// Two-sided p-value of a t statistic with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

/// Least squares via Householder QR of the design matrix.
pub fn ols_fit(design: &RegressionDesign) -> Result<RegressionResult> {
    let rows = design.rows.len();
    if rows < 5 {
        return Err(Error::invalid(format!(
            "regression needs at least 5 rows, got {rows}"
        )));
    }
    let x = design.matrix();
    let y = design.response();

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..4).map(|j| x.column(j).norm()).fold(0.0_f64, f64::max);
    for j in 0..4 {
        if r[(j, j)].abs() <= 1e-10 * scale.max(1.0) {
            return Err(Error::SingularDesign {
                column: TERM_NAMES[j].to_string(),
                others: TERM_NAMES[..j].iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            column: "unknown".into(),
            others: vec![],
        })?;

    let fitted = &x * &beta;
    let residuals: Vec<f64> = (0..rows).map(|i| y[i] - fitted[i]).collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let dof = (rows - 4) as f64;
    let sigma2 = ssr / dof;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(4, 4))
        .expect("non-singular R");
    let cov = &r_inv * r_inv.transpose();

    let terms = std::array::from_fn(|j| {
        let coefficient = beta[j];
        let std_error = (sigma2 * cov[(j, j)]).sqrt();
        let t = if std_error > 0.0 {
            coefficient / std_error
        } else if coefficient.abs() <= 1e-12 * scale.max(1.0) {
            0.0
        } else {
            coefficient.signum() * f64::INFINITY
        };
        TermEstimate {
            coefficient,
            std_error,
            t,
            p: t_two_sided_p(t, dof),
        }
    });
    Ok(RegressionResult {
        terms,
        r_squared,
        n_rows: rows,
        residuals,
    })
}

fn star(p: f64, alpha: f64) -> &'static str {
    if p < alpha {
        "*"
    } else {
        ""
    }
}

const ROW_LABELS: [&str; 4] = [
    "Constant",
    "Number of Standard Deviations (Distance)",
    "Transition Length",
    "Interaction Term",
];

/// Text table: one column per fit, `coefficient±std_error` starred when
/// `p < alpha`.
pub fn significance_table(columns: &[(&str, &RegressionResult)], alpha: f64) -> String {
    let label_w = ROW_LABELS.iter().map(|s| s.len()).max().unwrap() + 2;
    let cell = |s: &str| format!("{s:>24}");
    let mut out = String::new();
    out.push_str(&format!("{:label_w$}", ""));
    for (name, _) in columns {
        out.push_str(&cell(name));
    }
    out.push('\n');
    out.push_str(&format!("{:label_w$}", "R-Squared:"));
    for (_, r) in columns {
        out.push_str(&cell(&format!("{:.3}", r.r_squared)));
    }
    out.push('\n');
    for (k, label) in ROW_LABELS.iter().enumerate() {
        out.push_str(&format!("{:label_w$}", format!("{label}:")));
        for (_, r) in columns {
            let t = &r.terms[k];
            out.push_str(&cell(&format!(
                "{:.4}±{:.3}{}",
                t.coefficient,
                t.std_error,
                star(t.p, alpha)
            )));
        }
        out.push('\n');
    }
    out.push_str(&format!("* p-value less than {alpha}\n"));
    out
}

/// CSV with header `term,coefficient,std_error,t,p,starred`.
pub fn regression_csv(result: &RegressionResult, alpha: f64) -> String {
    let mut out = String::from("term,coefficient,std_error,t,p,starred\n");
    for (name, t) in TERM_NAMES.iter().zip(&result.terms) {
        out.push_str(&format!(
            "{name},{:.10e},{:.10e},{:.10e},{:.10e},{}\n",
            t.coefficient,
            t.std_error,
            t.t,
            t.p,
            t.p < alpha
        ));
    }
    out
}

/// Mean-centred projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub coords: Vec<Vec<f64>>,
    /// Orthonormal axes, one per output dimension.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
}

/// PCA through the SVD of the centred data matrix. Each axis is signed so
/// that its largest-magnitude component is positive.
pub fn pca_project(points: &[Vec<f64>], dims: usize) -> Result<PcaProjection> {
    if points.len() < 2 {
        return Err(Error::invalid("PCA needs at least 2 points"));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("PCA points must share a non-zero dimension"));
    }
    if dims == 0 || dims > d {
        return Err(Error::invalid(format!(
            "cannot project {d}-dimensional points to {dims} dimensions"
        )));
    }
    let n = points.len();
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let svd = centred.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();

    let mut axes = Vec::with_capacity(dims);
    let mut ratios = Vec::with_capacity(dims);
    for k in 0..dims {
        let (axis, sv) = match order.get(k) {
            Some(&idx) => (
                v_t.row(idx).iter().copied().collect::<Vec<f64>>(),
                svd.singular_values[idx],
            ),
            None => (vec![0.0; d], 0.0),
        };
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        axes.push(axis.into_iter().map(|v| v * sign).collect::<Vec<_>>());
        ratios.push(if total > 0.0 { sv * sv / total } else { 0.0 });
    }
    let coords = (0..n)
        .map(|i| {
            axes.iter()
                .map(|a| (0..d).map(|j| centred[(i, j)] * a[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaProjection {
        coords,
        axes,
        explained_variance_ratio: ratios,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_rows(f: impl Fn(f64, f64) -> f64) -> Vec<(f64, f64, f64)> {
        let mut rows = Vec::new();
        for d in 1..=6 {
            for n in [5.0, 10.0, 15.0] {
                rows.push((d as f64, n, f(d as f64, n)));
            }
        }
        rows
    }

    #[test]
    fn exact_linear_response() {
        let design = RegressionDesign::new(grid_rows(|d, _| 10.0 - 2.0 * d)).unwrap();
        let r = ols_fit(&design).unwrap();
        let want = [10.0, -2.0, 0.0, 0.0];
        for (t, w) in r.terms.iter().zip(want) {
            assert!(
                (t.coefficient - w).abs() < 1e-10,
                "{} vs {w}",
                t.coefficient
            );
        }
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_response_has_zero_slopes() {
        let design = RegressionDesign::new(grid_rows(|_, _| 7.5)).unwrap();
        let r = ols_fit(&design).unwrap();
        for t in &r.terms[1..] {
            assert!(t.coefficient.abs() < 1e-10);
        }
        assert_eq!(r.r_squared, 0.0);
    }

    #[test]
    fn singular_design_names_column() {
        // length is constant → collinear with the intercept
        let rows: Vec<_> = (0..8).map(|i| (i as f64, 5.0, i as f64)).collect();
        match ols_fit(&RegressionDesign::new(rows).unwrap()) {
            Err(Error::SingularDesign { column, .. }) => assert_eq!(column, "length"),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        assert!(RegressionDesign::new(vec![(1.0, 5.0, 1.0); 4]).is_err());
    }

    fn fake(p: [f64; 4]) -> RegressionResult {
        RegressionResult {
            terms: p.map(|p| TermEstimate {
                coefficient: 1.0,
                std_error: 0.1,
                t: 10.0,
                p,
            }),
            r_squared: 0.9,
            n_rows: 10,
            residuals: vec![],
        }
    }

    #[test]
    fn star_uses_strict_inequality() {
        let r = fake([0.049, 0.05, 0.5, 0.0]);
        let csv = regression_csv(&r, 0.05);
        let flags: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap())
            .collect();
        assert_eq!(flags, ["true", "false", "false", "true"]);
        let table = significance_table(&[("C_s", &r)], 0.05);
        assert!(table.contains("1.0000±0.100*"));
        let length_line = table
            .lines()
            .find(|l| l.starts_with("Transition Length"))
            .unwrap();
        assert!(!length_line.contains('*'));
    }

    #[test]
    fn pca_line_explains_everything() {
        let dir: Vec<f64> = (0..16).map(|j| (j as f64 + 1.0).sin()).collect();
        let points: Vec<Vec<f64>> = (0..20)
            .map(|i| dir.iter().map(|v| v * i as f64 + 3.0).collect())
            .collect();
        let p = pca_project(&points, 2).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_variance_ratio[1] < 1e-12);
        for axis in 0..2 {
            let m: f64 = p.coords.iter().map(|c| c[axis]).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-10);
        }
    }
}
