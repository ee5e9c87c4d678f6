//! Unperturbed symbols `A0(ξ)`, periodic perturbations `B(x, ξ)` given by
//! their Fourier coefficients, and checks of the standing hypotheses
//! (microhyperbolicity, strong convexity, the second-order separation at
//! antipodal points) on concrete models.

mod expr;
pub(crate) mod levelset;
mod perturbation;

pub use expr::{parse_coefficient, Polynomial};
pub use levelset::{
    antipodal_points, check_condition_1_14, check_microhyperbolicity, check_strong_convexity,
    default_samples, graph_hessian, AntipodalPoint, Chart, ConvexityCheck, FormGapCheck, HypothesisCheck,
    LevelSet,
};
pub use perturbation::Perturbation;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Catalog of built-in unperturbed symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    /// `|ξ|^m`.
    Power { m: f64 },
    /// `⟨Mξ, ξ⟩` with `M` symmetric positive definite.
    Quadratic { matrix: DMatrix<f64> },
    /// `c (|ξ|² − a²)² + b`; its level sets are one or two concentric spheres.
    DoubleWell { a: f64, b: f64, c: f64 },
    /// `(|ξ − p|² − r²)(|ξ + p|² − r²)`; for `|p| > r` the zero level set is
    /// two translated copies of one sphere.
    TwinWell { center: Vec<f64>, radius: f64 },
    /// `Σ ξⱼ⁴`, convex but with degenerate tangential curvature on the axes.
    QuarticSum,
}

/// An unperturbed symbol `A0(ξ)` on `ℝᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolModel {
    dim: usize,
    kind: SymbolKind,
}

/// Constants of the lower bound `A0(ξ) ≥ c0 |ξ|^m − C0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coercivity {
    pub c0: f64,
    pub big_c0: f64,
    pub m: f64,
}

impl Coercivity {
    /// Radius outside of which `A0 > level` is guaranteed.
    pub fn radius_for(&self, level: f64) -> f64 {
        ((level + self.big_c0).max(0.0) / self.c0).powf(1.0 / self.m)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return Err(Error::arg("dim", format!("dimension {dim} not in 1..=3")));
    }
    Ok(())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl SymbolModel {
    pub fn power(dim: usize, m: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(m >= 2.0) {
            return Err(Error::arg("m", format!("power order {m} must be >= 2 (smooth at the origin)")));
        }
        Ok(Self { dim, kind: SymbolKind::Power { m } })
    }

    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        check_dim(dim)?;
        if matrix.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: matrix.ncols() });
        }
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + matrix.abs().max()) {
            return Err(Error::arg("M", "matrix is not symmetric"));
        }
        let min_eig = SymmetricEigen::new(matrix.clone()).eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::arg("M", format!("matrix is not positive definite (min eigenvalue {min_eig})")));
        }
        Ok(Self { dim, kind: SymbolKind::Quadratic { matrix } })
    }

    pub fn double_well(dim: usize, a: f64, b: f64, c: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(c > 0.0) || !(a > 0.0) {
            return Err(Error::arg("double_well", "requires a > 0 and c > 0"));
        }
        Ok(Self { dim, kind: SymbolKind::DoubleWell { a, b, c } })
    }

    pub fn twin_well(center: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = center.len();
        check_dim(dim)?;
        if !(radius > 0.0) {
            return Err(Error::arg("radius", "must be positive"));
        }
        Ok(Self { dim, kind: SymbolKind::TwinWell { center, radius } })
    }

    pub fn quartic_sum(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { dim, kind: SymbolKind::QuarticSum })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.kind
    }

    pub fn model_id(&self) -> &'static str {
        match self.kind {
            SymbolKind::Power { .. } => "power",
            SymbolKind::Quadratic { .. } => "quadratic",
            SymbolKind::DoubleWell { .. } => "double_well",
            SymbolKind::TwinWell { .. } => "twin_well",
            SymbolKind::QuarticSum => "quartic_sum",
        }
    }

    /// Growth order `m` in `(|ξ| + 1)^m`.
    pub fn order(&self) -> f64 {
        match self.kind {
            SymbolKind::Power { m } => m,
            SymbolKind::Quadratic { .. } => 2.0,
            _ => 4.0,
        }
    }

    /// True when `A0(−ξ) = A0(ξ)` for all `ξ`.
    pub fn is_centrally_symmetric(&self) -> bool {
        true
    }

    pub fn coercivity(&self) -> Coercivity {
        match &self.kind {
            SymbolKind::Power { m } => Coercivity { c0: 1.0, big_c0: 0.0, m: *m },
            SymbolKind::Quadratic { matrix } => {
                let min_eig = SymmetricEigen::new(matrix.clone()).eigenvalues.min();
                Coercivity { c0: min_eig, big_c0: 0.0, m: 2.0 }
            }
            // (s − a²)² ≥ s²/2 − a⁴
            SymbolKind::DoubleWell { a, b, c } => Coercivity {
                c0: c / 2.0,
                big_c0: (c * a.powi(4) - b).max(0.0),
                m: 4.0,
            },
            // u² − v² with u = |ξ|² + |p|² − r², |v| ≤ 2|ξ||p|
            SymbolKind::TwinWell { center, radius } => {
                let p2 = norm_sq(center);
                let r2 = radius * radius;
                Coercivity { c0: 0.5, big_c0: 2.0 * (p2 + r2).powi(2) + 8.0 * p2 * p2, m: 4.0 }
            }
            SymbolKind::QuarticSum => Coercivity { c0: 1.0 / self.dim as f64, big_c0: 0.0, m: 4.0 },
        }
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        match &self.kind {
            SymbolKind::Power { m } => {
                let r2 = norm_sq(xi);
                if *m == 2.0 {
                    r2
                } else {
                    r2.powf(m / 2.0)
                }
            }
            SymbolKind::Quadratic { matrix } => {
                let v = DVector::from_column_slice(xi);
                v.dot(&(matrix * &v))
            }
            SymbolKind::DoubleWell { a, b, c } => {
                let s = norm_sq(xi) - a * a;
                c * s * s + b
            }
            SymbolKind::TwinWell { center, radius } => {
                let (u, w) = twin_factors(xi, center, *radius);
                u * w
            }
            SymbolKind::QuarticSum => xi.iter().map(|v| v.powi(4)).sum(),
        }
    }

    pub fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        match &self.kind {
            SymbolKind::Power { m } => {
                let r2 = norm_sq(xi);
                if r2 == 0.0 {
                    return vec![0.0; self.dim];
                }
                let f = m * r2.powf(m / 2.0 - 1.0);
                xi.iter().map(|v| f * v).collect()
            }
            SymbolKind::Quadratic { matrix } => {
                let v = DVector::from_column_slice(xi);
                (matrix * v * 2.0).iter().copied().collect()
            }
            SymbolKind::DoubleWell { a, c, .. } => {
                let s = norm_sq(xi) - a * a;
                xi.iter().map(|v| 4.0 * c * s * v).collect()
            }
            SymbolKind::TwinWell { center, radius } => {
                let (u, w) = twin_factors(xi, center, *radius);
                xi.iter()
                    .zip(center)
                    .map(|(x, p)| 2.0 * (x - p) * w + 2.0 * (x + p) * u)
                    .collect()
            }
            SymbolKind::QuarticSum => xi.iter().map(|v| 4.0 * v.powi(3)).collect(),
        }
    }

    pub fn hessian(&self, xi: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        match &self.kind {
            SymbolKind::Power { m } => {
                let r2 = norm_sq(xi);
                if r2 == 0.0 {
                    return if *m == 2.0 {
                        DMatrix::identity(d, d) * 2.0
                    } else {
                        DMatrix::zeros(d, d)
                    };
                }
                let base = m * r2.powf(m / 2.0 - 1.0);
                let radial = m * (m - 2.0) * r2.powf(m / 2.0 - 2.0);
                DMatrix::from_fn(d, d, |i, j| {
                    radial * xi[i] * xi[j] + if i == j { base } else { 0.0 }
                })
            }
            SymbolKind::Quadratic { matrix } => matrix * 2.0,
            SymbolKind::DoubleWell { a, c, .. } => {
                let s = norm_sq(xi) - a * a;
                DMatrix::from_fn(d, d, |i, j| {
                    8.0 * c * xi[i] * xi[j] + if i == j { 4.0 * c * s } else { 0.0 }
                })
            }
            SymbolKind::TwinWell { center, radius } => {
                let (u, w) = twin_factors(xi, center, *radius);
                let gu: Vec<f64> = xi.iter().zip(center).map(|(x, p)| 2.0 * (x - p)).collect();
                let gw: Vec<f64> = xi.iter().zip(center).map(|(x, p)| 2.0 * (x + p)).collect();
                DMatrix::from_fn(d, d, |i, j| {
                    gu[i] * gw[j] + gw[i] * gu[j] + if i == j { 2.0 * (u + w) } else { 0.0 }
                })
            }
            SymbolKind::QuarticSum => {
                DMatrix::from_fn(d, d, |i, j| if i == j { 12.0 * xi[i] * xi[i] } else { 0.0 })
            }
        }
    }

    /// Interior reference points from which every component of a level set
    /// is star-shaped, paired with the rank of the root to take along each
    /// ray. Used by the level-set sampler.
    pub(crate) fn charts(&self, tau: f64) -> Result<Vec<Chart>> {
        let origin = vec![0.0; self.dim];
        match &self.kind {
            SymbolKind::Power { .. } | SymbolKind::Quadratic { .. } | SymbolKind::QuarticSum => {
                if tau < 0.0 {
                    return Err(Error::EmptyLevelSet { tau, min: 0.0 });
                }
                Ok(vec![Chart { center: origin, rank: 0 }])
            }
            SymbolKind::DoubleWell { a, b, c } => {
                if tau < *b {
                    return Err(Error::EmptyLevelSet { tau, min: *b });
                }
                let top = c * a.powi(4) + b;
                if tau < top {
                    Ok(vec![
                        Chart { center: origin.clone(), rank: 0 },
                        Chart { center: origin, rank: 1 },
                    ])
                } else {
                    Ok(vec![Chart { center: origin, rank: 0 }])
                }
            }
            SymbolKind::TwinWell { center, radius } => {
                let neg: Vec<f64> = center.iter().map(|v| -v).collect();
                let min = self.local_min(center);
                if tau < min {
                    return Err(Error::EmptyLevelSet { tau, min });
                }
                if norm_sq(center).sqrt() <= *radius {
                    return Err(Error::arg("twin_well", "components overlap; |center| must exceed radius"));
                }
                Ok(vec![Chart { center: center.clone(), rank: 0 }, Chart { center: neg, rank: 0 }])
            }
        }
    }
}

impl SymbolModel {
    /// Value at the local minimum reached by Newton's method from `start`.
    fn local_min(&self, start: &[f64]) -> f64 {
        let mut x = DVector::from_column_slice(start);
        for _ in 0..50 {
            let g = DVector::from_vec(self.gradient(x.as_slice()));
            if g.norm() < 1e-14 {
                break;
            }
            let Some(step) = self.hessian(x.as_slice()).lu().solve(&g) else { break };
            let next = &x - step;
            if self.value(next.as_slice()) > self.value(x.as_slice()) {
                break;
            }
            x = next;
        }
        self.value(x.as_slice())
    }
}

fn twin_factors(xi: &[f64], center: &[f64], radius: f64) -> (f64, f64) {
    let r2 = radius * radius;
    let u: f64 = xi.iter().zip(center).map(|(x, p)| (x - p) * (x - p)).sum::<f64>() - r2;
    let w: f64 = xi.iter().zip(center).map(|(x, p)| (x + p) * (x + p)).sum::<f64>() - r2;
    (u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn catalog() -> Vec<SymbolModel> {
        vec![
            SymbolModel::power(2, 2.0).unwrap(),
            SymbolModel::power(3, 3.0).unwrap(),
            SymbolModel::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 4.0])).unwrap(),
            SymbolModel::double_well(2, 1.0, 0.0, 1.0).unwrap(),
            SymbolModel::double_well(3, 1.2, 0.1, 0.7).unwrap(),
            SymbolModel::twin_well(vec![2.0, 0.5], 1.0).unwrap(),
            SymbolModel::quartic_sum(3).unwrap(),
        ]
    }

    fn central_gradient(s: &SymbolModel, x: &[f64], step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[k] += step;
                m[k] -= step;
                (s.value(&p) - s.value(&m)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradients_and_hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for s in catalog() {
            for _ in 0..100 {
                let x: Vec<f64> = (0..s.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let g = s.gradient(&x);
                let fd = central_gradient(&s, &x, 1e-5);
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err / (1.0 + gn) <= 1e-6, "{} gradient err {err:e}", s.model_id());

                let h = s.hessian(&x);
                let step = 1e-5;
                for k in 0..s.dim() {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[k] += step;
                    m[k] -= step;
                    let gp = s.gradient(&p);
                    let gm = s.gradient(&m);
                    for i in 0..s.dim() {
                        let fd = (gp[i] - gm[i]) / (2.0 * step);
                        let err = (h[(i, k)] - fd).abs() / (1.0 + h.abs().max());
                        assert!(err <= 1e-5, "{} hessian err {err:e}", s.model_id());
                    }
                }
            }
        }
    }

    #[test]
    fn coercivity_holds_on_grid() {
        for s in catalog() {
            let c = s.coercivity();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..2000 {
                let x: Vec<f64> = (0..s.dim()).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let r = norm_sq(&x).sqrt();
                assert!(
                    s.value(&x) >= c.c0 * r.powf(c.m) - c.big_c0 - 1e-9,
                    "{} fails coercivity at {x:?}",
                    s.model_id()
                );
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SymbolModel::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(SymbolModel::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(SymbolModel::power(4, 2.0).is_err());
        assert!(SymbolModel::power(2, 1.0).is_err());
    }
}
