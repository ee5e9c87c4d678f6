use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

use super::expr::Polynomial;
use crate::error::{Error, Result};
use crate::lattice::{Coord, LatticePair};

/// Periodic perturbation `B(x, ξ) = Σ_θ b_θ(ξ) e^{i⟨θ, x⟩}` with finitely
/// many modes. Modes are keyed by integer coordinates in the dual basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    dim: usize,
    modes: BTreeMap<Coord, Polynomial>,
}

impl Perturbation {
    /// Validates Hermitian symmetry `b_{−θ} = conj(b_θ)` and drops zero modes.
    pub fn new(dim: usize, modes: Vec<(Vec<i64>, Polynomial)>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::arg("dim", format!("dimension {dim} not in 1..=3")));
        }
        let mut map: BTreeMap<Coord, Polynomial> = BTreeMap::new();
        for (theta, p) in modes {
            if theta.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: theta.len() });
            }
            if p.variables_used() > dim {
                return Err(Error::arg("perturbation", format!("coefficient uses xi{} in dimension {dim}", p.variables_used())));
            }
            let mut c = [0i64; 3];
            c[..dim].copy_from_slice(&theta);
            if map.insert(c, p).is_some() {
                return Err(Error::arg("perturbation", format!("duplicate mode {theta:?}")));
            }
        }
        map.retain(|_, p| p.max_coefficient() > 0.0);
        for (theta, p) in &map {
            let neg = [-theta[0], -theta[1], -theta[2]];
            let scale = 1.0 + p.max_coefficient();
            let ok = match map.get(&neg) {
                Some(q) => q.distance(&p.conj()) <= 1e-12 * scale,
                None => false,
            };
            if !ok {
                return Err(Error::NonHermitianPerturbation { theta: theta[..dim].to_vec() });
            }
        }
        Ok(Self { dim, modes: map })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, modes: BTreeMap::new() }
    }

    /// `amplitude · Σⱼ 2cos(xⱼ)` written on the dual basis directions.
    pub fn cosines(dim: usize, amplitude: f64) -> Result<Self> {
        let mut modes = Vec::new();
        for j in 0..dim {
            for s in [-1, 1] {
                let mut t = vec![0; dim];
                t[j] = s;
                modes.push((t, Polynomial::constant(C64::new(amplitude, 0.0))));
            }
        }
        Self::new(dim, modes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    /// Modes in ascending coordinate order.
    pub fn modes(&self) -> impl Iterator<Item = (&Coord, &Polynomial)> {
        self.modes.iter()
    }

    /// Nonzero modes other than `θ = 0`.
    pub fn off_diagonal_modes(&self) -> impl Iterator<Item = (&Coord, &Polynomial)> {
        self.modes.iter().filter(|(t, _)| **t != [0, 0, 0])
    }

    /// `b_θ(ξ)`, zero outside the support.
    pub fn coefficient(&self, theta: &Coord, xi: &[f64]) -> C64 {
        self.modes.get(theta).map_or(C64::new(0.0, 0.0), |p| p.eval(xi))
    }

    /// Mean part `b_0(ξ)`, real by Hermitian symmetry.
    pub fn mean(&self, xi: &[f64]) -> f64 {
        self.coefficient(&[0, 0, 0], xi).re
    }

    /// True when no coefficient depends on `ξ`.
    pub fn is_constant(&self) -> bool {
        self.modes.values().all(|p| p.degree() == 0)
    }

    /// Largest `|θ|` in the support (Cartesian length).
    pub fn support_radius(&self, lattice: &LatticePair) -> f64 {
        self.modes.keys().map(|t| lattice.norm(t)).fold(0.0, f64::max)
    }

    /// Upper bound on `max_θ |b_θ(ξ)|` over `|ξ| ≤ r`.
    pub fn max_abs_on_ball(&self, r: f64) -> f64 {
        self.modes.values().map(|p| p.bound_on_ball(r)).fold(0.0, f64::max)
    }

    /// Upper bound on `Σ_θ |b_θ(ξ)|` over `|ξ| ≤ r`; bounds the operator
    /// norm of the quantized perturbation.
    pub fn sum_abs_on_ball(&self, r: f64) -> f64 {
        self.modes.values().map(|p| p.bound_on_ball(r)).sum()
    }

    /// Constant `C_L` with `|b_θ(ξ)| ≤ C_L (|θ|+1)^{−L} (|ξ|+1)^m` for all
    /// `θ, ξ`; `None` if a coefficient grows faster than `(|ξ|+1)^m`.
    pub fn decay_constant(&self, lattice: &LatticePair, m: f64, l: f64) -> Option<f64> {
        let mut c = 0.0f64;
        for (theta, p) in &self.modes {
            if (p.degree() as f64) > m {
                return None;
            }
            // Σ|c_α| |ξ|^{|α|} ≤ (Σ|c_α|) (|ξ|+1)^m when |α| ≤ m
            let s = p.bound_on_ball(1.0);
            c = c.max(s * (lattice.norm(theta) + 1.0).powf(l));
        }
        Some(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::parse_coefficient;
    use std::f64::consts::PI;

    fn one() -> Polynomial {
        Polynomial::constant(C64::new(1.0, 0.0))
    }

    #[test]
    fn cosine_coefficients() {
        let b = Perturbation::new(2, vec![(vec![1, 0], one()), (vec![-1, 0], one())]).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(b.coefficient(&[1, 0, 0], &x), C64::new(1.0, 0.0));
        assert_eq!(b.coefficient(&[-1, 0, 0], &x), C64::new(1.0, 0.0));
        assert_eq!(b.coefficient(&[0, 1, 0], &x), C64::new(0.0, 0.0));
        assert_eq!(b.coefficient(&[0, 0, 0], &x), C64::new(0.0, 0.0));

        let b = Perturbation::cosines(2, 1.0).unwrap();
        for t in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]] {
            assert_eq!(b.coefficient(&t, &x), C64::new(1.0, 0.0));
        }
        let l = LatticePair::cubic(2, 2.0 * PI).unwrap();
        assert!((b.support_radius(&l) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hermitian_symmetry_enforced() {
        let i = Polynomial::constant(C64::new(0.0, 1.0));
        let mi = Polynomial::constant(C64::new(0.0, -1.0));
        assert!(Perturbation::new(2, vec![(vec![1, 0], i), (vec![-1, 0], mi)]).is_ok());
        assert!(matches!(
            Perturbation::new(2, vec![(vec![1, 0], i), (vec![-1, 0], i)]),
            Err(Error::NonHermitianPerturbation { .. })
        ));
        assert!(Perturbation::new(2, vec![(vec![1, 0], one())]).is_err());
        // the mean must be real
        assert!(Perturbation::new(1, vec![(vec![0], i)]).is_err());
        let p = parse_coefficient("1 + 2i*xi1").unwrap();
        assert!(Perturbation::new(2, vec![(vec![0, 1], p), (vec![0, -1], p.conj())]).is_ok());
        assert!(Perturbation::new(1, vec![(vec![1], p), (vec![-1], p.conj())]).is_ok());
        let q = parse_coefficient("xi2").unwrap();
        assert!(Perturbation::new(1, vec![(vec![0], q)]).is_err());
    }

    #[test]
    fn decay_constant_bounds_coefficients() {
        let l = LatticePair::cubic(2, 2.0 * PI).unwrap();
        let p = parse_coefficient("1 + 0.5*xi1*xi2").unwrap();
        let b = Perturbation::new(2, vec![(vec![2, 1], p), (vec![-2, -1], p.conj())]).unwrap();
        let c = b.decay_constant(&l, 2.0, 3.0).unwrap();
        for x in [[0.0, 0.0], [1.0, 2.0], [-5.0, 7.0]] {
            let n: f64 = x[0] * x[0] + x[1] * x[1];
            let rhs = c * (5f64.sqrt() + 1.0).powf(-3.0) * (n.sqrt() + 1.0).powi(2);
            assert!(b.coefficient(&[2, 1, 0], &x).norm() <= rhs);
        }
        assert!(b.decay_constant(&l, 1.0, 3.0).is_none());
    }
}
