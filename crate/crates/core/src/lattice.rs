//! Period lattice `Γ`, its dual `Γ*`, enumeration of dual points, lattice
//! subspaces and thin-shell counting.
//!
//! Dual points are stored as integer coordinates with respect to the dual
//! basis (`Coord`, unused trailing entries are zero); Cartesian positions
//! are recovered with [`LatticePair::point`].

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::symbols::SymbolModel;

/// Integer coordinates of a dual-lattice point.
pub type Coord = [i64; 3];

/// Default cap on the number of candidate generators scanned by
/// [`LatticePair::lattice_subspaces`].
pub const DEFAULT_GENERATOR_CAP: usize = 10_000;

/// A lattice `Γ` together with its dual `Γ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePair {
    dim: usize,
    primal: DMatrix<f64>,
    dual: DMatrix<f64>,
    dual_inv: DMatrix<f64>,
}

/// Generators of `Γ*` from the columns of a primal basis: `2π (Pᵀ)⁻¹`.
pub fn dual_lattice(primal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = primal.nrows();
    if d == 0 || primal.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: primal.ncols() });
    }
    let det = primal.determinant();
    let scale = primal.column_iter().map(|c| c.norm()).product::<f64>();
    if !det.is_finite() || det.abs() <= 1e-12 * scale || scale == 0.0 {
        return Err(Error::DegenerateLattice { det });
    }
    let inv = primal
        .clone()
        .try_inverse()
        .ok_or(Error::DegenerateLattice { det })?;
    Ok(inv.transpose() * (2.0 * PI))
}

impl LatticePair {
    /// Builds the pair from primal basis vectors given as matrix columns.
    pub fn from_primal(primal: DMatrix<f64>) -> Result<Self> {
        let dim = primal.nrows();
        if !(1..=3).contains(&dim) {
            return Err(Error::arg("lattice", format!("dimension {dim} not in 1..=3")));
        }
        let dual = dual_lattice(&primal)?;
        let dual_inv = dual.clone().try_inverse().ok_or(Error::DegenerateLattice { det: 0.0 })?;
        Ok(Self { dim, primal, dual, dual_inv })
    }

    /// Builds the pair from dual basis vectors given as matrix columns.
    pub fn from_dual(dual: DMatrix<f64>) -> Result<Self> {
        // the pairing is symmetric: Γ = 2π (Dᵀ)⁻¹
        let primal = dual_lattice(&dual)?;
        Self::from_primal(primal)
    }

    /// `Γ = scale·ℤᵈ`, so that `Γ* = (2π/scale)·ℤᵈ`.
    pub fn cubic(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::arg("scale", "must be positive and finite"));
        }
        Self::from_primal(DMatrix::identity(dim, dim) * scale)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn primal_basis(&self) -> &DMatrix<f64> {
        &self.primal
    }

    pub fn dual_basis(&self) -> &DMatrix<f64> {
        &self.dual
    }

    /// Largest deviation of `⟨Dⱼ, Pₖ⟩ / 2π` from `δⱼₖ`.
    pub fn pairing_defect(&self) -> f64 {
        let g = self.dual.transpose() * &self.primal / (2.0 * PI);
        (g - DMatrix::identity(self.dim, self.dim)).abs().max()
    }

    /// Cartesian position of a dual point.
    pub fn point(&self, c: &Coord) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.dual[(i, j)] * c[j] as f64).sum())
            .collect()
    }

    pub fn norm(&self, c: &Coord) -> f64 {
        self.point(c).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Coordinates of a Cartesian point with respect to the dual basis.
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (&self.dual_inv * v).iter().copied().collect()
    }

    /// Upper bound on the diameter of the fundamental cell of `Γ*`.
    pub fn cell_diameter(&self) -> f64 {
        self.dual.column_iter().map(|c| c.norm()).sum()
    }

    /// Calls `f` for every dual point with `|γ − center| ≤ r`, in box order.
    pub fn for_each_in_ball(&self, center: &[f64], r: f64, mut f: impl FnMut(Coord)) {
        if !(r >= 0.0) || !r.is_finite() {
            return;
        }
        let c = self.coords(center);
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for j in 0..self.dim {
            let row = self.dual_inv.row(j).norm();
            lo[j] = (c[j] - r * row).floor() as i64;
            hi[j] = (c[j] + r * row).ceil() as i64;
        }
        let r2 = r * r * (1.0 + 1e-12) + 1e-300;
        let mut k = [0i64; 3];
        let (l1, h1) = if self.dim > 1 { (lo[1], hi[1]) } else { (0, 0) };
        let (l2, h2) = if self.dim > 2 { (lo[2], hi[2]) } else { (0, 0) };
        for a in lo[0]..=hi[0] {
            k[0] = a;
            for b in l1..=h1 {
                k[1] = b;
                for e in l2..=h2 {
                    k[2] = e;
                    let p = self.point(&k);
                    let d2: f64 = p.iter().zip(center).map(|(x, y)| (x - y) * (x - y)).sum();
                    if d2 <= r2 {
                        f(k);
                    }
                }
            }
        }
    }

    /// All `γ ∈ Γ*` with `|γ| ≤ r`, sorted by norm then lexicographically.
    pub fn enumerate_ball(&self, r: f64) -> Vec<Coord> {
        let origin = vec![0.0; self.dim];
        let mut pts = Vec::new();
        self.for_each_in_ball(&origin, r, |c| pts.push(c));
        self.sort_points(&mut pts);
        pts
    }

    /// Sorts points by ascending norm, ties broken lexicographically.
    pub fn sort_points(&self, pts: &mut [Coord]) {
        pts.sort_by_cached_key(|c| {
            let n2: f64 = self.point(c).iter().map(|v| v * v).sum();
            ((n2 * 1e9).round() as i64, *c)
        });
    }

    /// Splits `ξ = γ + ξ_frac` with `ξ_frac` in the half-open cell spanned
    /// by the dual basis.
    pub fn fold_to_fundamental(&self, xi: &[f64]) -> (Coord, Vec<f64>) {
        let c = self.coords(xi);
        let mut g = [0i64; 3];
        let mut f = vec![0.0; self.dim];
        for j in 0..self.dim {
            let mut k = c[j].floor();
            let mut r = c[j] - k;
            if r >= 1.0 - 1e-12 {
                k += 1.0;
                r = 0.0;
            } else if r < 1e-14 {
                r = 0.0;
            }
            g[j] = k as i64;
            f[j] = r;
        }
        let frac = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.dual[(i, j)] * f[j]).sum())
            .collect();
        (g, frac)
    }

    /// Fractional coordinates of a point of the fundamental cell; used to
    /// measure distance to the cell boundary.
    pub fn cell_margin(&self, xi_frac: &[f64]) -> f64 {
        let c = self.coords(xi_frac);
        let mut m = f64::INFINITY;
        for j in 0..self.dim {
            // distance to the facets c_j = 0 and c_j = 1
            let facet = self.dual_inv.row(j).norm();
            m = m.min(c[j] / facet).min((1.0 - c[j]) / facet);
        }
        m
    }

    /// All distinct `n`-dimensional spans of dual points in `B(0, r)`.
    pub fn lattice_subspaces(&self, n: usize, r: f64, cap: usize) -> Result<SubspaceList> {
        if n < 1 || n + 1 > self.dim {
            return Err(Error::arg("n", format!("subspace dimension {n} must be in 1..={}", self.dim as i64 - 1)));
        }
        let mut radius = r;
        let mut pts = self.enumerate_ball(radius);
        let mut notice = None;
        if pts.len() > cap {
            while pts.len() > cap {
                radius *= 0.9;
                pts = self.enumerate_ball(radius);
            }
            notice = Some(format!(
                "generator count capped at {cap}: radius reduced from {r} to {radius:.6}"
            ));
            log::warn!("lattice_subspaces: {}", notice.as_deref().unwrap_or_default());
        }
        // primitive directions, shortest representative first
        let mut dirs: Vec<Coord> = Vec::new();
        let mut seen = HashSet::new();
        for c in pts.iter().filter(|c| **c != [0, 0, 0]) {
            let key = primitive_direction(c);
            if seen.insert(key) {
                dirs.push(*c);
            }
        }
        let mut subspaces = Vec::new();
        if n == 1 {
            for c in dirs {
                subspaces.push(self.make_subspace(vec![c], primitive_direction(&c).to_vec()));
            }
        } else {
            let mut keys: HashMap<Coord, usize> = HashMap::new();
            for i in 0..dirs.len() {
                for j in i + 1..dirs.len() {
                    let nrm = cross(&dirs[i], &dirs[j]);
                    if nrm == [0, 0, 0] {
                        continue;
                    }
                    let key = primitive_direction(&nrm);
                    keys.entry(key).or_insert_with(|| {
                        subspaces.push(self.make_subspace(vec![dirs[i], dirs[j]], key.to_vec()));
                        subspaces.len() - 1
                    });
                }
            }
        }
        Ok(SubspaceList { subspaces, radius, truncation_notice: notice })
    }

    fn make_subspace(&self, generators: Vec<Coord>, key: Vec<i64>) -> LatticeSubspace {
        let cols: Vec<DVector<f64>> =
            generators.iter().map(|g| DVector::from_vec(self.point(g))).collect();
        LatticeSubspace { dim: generators.len(), generators, frame: orthonormalize(&cols), key }
    }

    /// Number of `γ` with `|A0(h(γ + ξ_frac)) − τ| ≤ w`.
    pub fn shell_count(
        &self,
        symbol: &SymbolModel,
        tau: f64,
        w: f64,
        h: f64,
        xi_frac: &[f64],
    ) -> Result<usize> {
        Ok(self.shell_points(symbol, tau, w, h, xi_frac)?.len())
    }

    /// The points counted by [`LatticePair::shell_count`], in sorted order.
    pub fn shell_points(
        &self,
        symbol: &SymbolModel,
        tau: f64,
        w: f64,
        h: f64,
        xi_frac: &[f64],
    ) -> Result<Vec<Coord>> {
        if !(h > 0.0) || !(w >= 0.0) {
            return Err(Error::arg("shell_count", "requires h > 0 and w >= 0"));
        }
        if symbol.dim() != self.dim || xi_frac.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: symbol.dim() });
        }
        let radius = symbol.coercivity().radius_for(tau + w) / h + self.cell_diameter();
        let origin = vec![0.0; self.dim];
        let mut out = Vec::new();
        let mut x = vec![0.0; self.dim];
        self.for_each_in_ball(&origin, radius, |c| {
            let p = self.point(&c);
            for j in 0..self.dim {
                x[j] = h * (p[j] + xi_frac[j]);
            }
            if (symbol.value(&x) - tau).abs() <= w {
                out.push(c);
            }
        });
        self.sort_points(&mut out);
        Ok(out)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Primitive integer vector on the same line, first nonzero entry positive.
fn primitive_direction(c: &Coord) -> Coord {
    let g = gcd(gcd(c[0], c[1]), c[2]).max(1);
    let mut p = [c[0] / g, c[1] / g, c[2] / g];
    if p.iter().find(|v| **v != 0).is_some_and(|v| *v < 0) {
        p = [-p[0], -p[1], -p[2]];
    }
    p
}

fn cross(a: &Coord, b: &Coord) -> Coord {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn orthonormalize(cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for _ in 0..2 {
            for q in &out {
                v -= q * q.dot(&v);
            }
        }
        out.push(v.normalize());
    }
    DMatrix::from_columns(&out)
}

/// Result of [`LatticePair::lattice_subspaces`].
#[derive(Debug, Clone)]
pub struct SubspaceList {
    pub subspaces: Vec<LatticeSubspace>,
    /// Radius actually used (smaller than requested when capped).
    pub radius: f64,
    pub truncation_notice: Option<String>,
}

/// Span of `n` linearly independent dual points.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSubspace {
    dim: usize,
    generators: Vec<Coord>,
    frame: DMatrix<f64>,
    key: Vec<i64>,
}

impl LatticeSubspace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[Coord] {
        &self.generators
    }

    /// `d × n` matrix with orthonormal columns.
    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// Integer key identifying the subspace: the primitive direction for
    /// lines, the primitive normal for planes in three dimensions.
    pub fn key(&self) -> &[i64] {
        &self.key
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.frame * self.frame.transpose()
    }

    /// Orthogonal projection of `v` onto the subspace.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        (&self.frame * (self.frame.transpose() * x)).iter().copied().collect()
    }

    /// Largest entry of the difference of orthogonal projectors.
    pub fn projector_distance(&self, other: &Self) -> f64 {
        (self.projector() - other.projector()).abs().max()
    }
}

/// Relative position of two subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SubspaceRelation {
    /// One subspace contains the other.
    Nested,
    /// Smallest angle between the parts orthogonal to the intersection.
    Angle(f64),
}

/// Angle between two subspaces after removing their intersection.
pub fn subspace_angle(v: &LatticeSubspace, w: &LatticeSubspace) -> SubspaceRelation {
    let m = v.frame.transpose() * &w.frame;
    let sv = m.svd(false, false).singular_values;
    let ones = sv.iter().filter(|s| **s > 1.0 - 1e-10).count();
    if ones >= v.dim.min(w.dim) {
        return SubspaceRelation::Nested;
    }
    let cos = sv.iter().filter(|s| **s <= 1.0 - 1e-10).fold(0.0f64, |a, s| a.max(*s));
    SubspaceRelation::Angle(cos.clamp(0.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z(d: usize) -> LatticePair {
        LatticePair::cubic(d, 2.0 * PI).unwrap()
    }

    #[test]
    fn dual_of_standard_bases() {
        let d = dual_lattice(&(DMatrix::identity(2, 2) * (2.0 * PI))).unwrap();
        assert!((d - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let d = dual_lattice(&DMatrix::identity(2, 2)).unwrap();
        assert!((d - DMatrix::identity(2, 2) * (2.0 * PI)).abs().max() < 1e-15);
        let skew = DMatrix::from_columns(&[
            DVector::from_vec(vec![2.0 * PI, 2.0 * PI]),
            DVector::from_vec(vec![0.0, 2.0 * PI]),
        ]);
        let pair = LatticePair::from_primal(skew.clone()).unwrap();
        assert!(pair.pairing_defect() < 1e-12);
        let back = dual_lattice(pair.dual_basis()).unwrap();
        assert!((back - skew).abs().max() < 1e-12);
        assert!(matches!(
            dual_lattice(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])),
            Err(Error::DegenerateLattice { .. })
        ));
    }

    #[test]
    fn ball_enumeration() {
        let l = z(2);
        assert_eq!(l.enumerate_ball(10.0).len(), 317);
        assert_eq!(l.enumerate_ball(0.5), vec![[0, 0, 0]]);
        assert_eq!(
            l.enumerate_ball(1.0),
            vec![[0, 0, 0], [-1, 0, 0], [0, -1, 0], [0, 1, 0], [1, 0, 0]]
        );
        let brute = (-10i64..=10)
            .flat_map(|a| (-10i64..=10).map(move |b| (a, b)))
            .filter(|(a, b)| a * a + b * b <= 100)
            .count();
        assert_eq!(brute, 317);
    }

    #[test]
    fn folding() {
        let l = z(2);
        let (g, f) = l.fold_to_fundamental(&[2.3, -0.4]);
        assert_eq!(g, [2, -1, 0]);
        assert!((f[0] - 0.3).abs() < 1e-12 && (f[1] - 0.6).abs() < 1e-12);
        let (g, f) = l.fold_to_fundamental(&[0.0, 0.0]);
        assert_eq!(g, [0, 0, 0]);
        assert_eq!(f, vec![0.0, 0.0]);

        let skew = LatticePair::from_dual(DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ]))
        .unwrap();
        let x = [1.5, 2.25];
        let (g, f) = skew.fold_to_fundamental(&x);
        // coordinates: a = 1.5, b = 0.75
        assert_eq!(g, [1, 0, 0]);
        let c = skew.coords(&f);
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.75).abs() < 1e-12);
        let p = skew.point(&g);
        assert!((p[0] + f[0] - x[0]).abs() < 1e-12 && (p[1] + f[1] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn subspaces_of_small_balls() {
        let l = z(2);
        assert_eq!(l.lattice_subspaces(1, 1.0, DEFAULT_GENERATOR_CAP).unwrap().subspaces.len(), 2);
        assert_eq!(l.lattice_subspaces(1, 1.5, DEFAULT_GENERATOR_CAP).unwrap().subspaces.len(), 4);
        assert_eq!(z(3).lattice_subspaces(2, 1.0, DEFAULT_GENERATOR_CAP).unwrap().subspaces.len(), 3);
        assert!(l.lattice_subspaces(2, 1.0, DEFAULT_GENERATOR_CAP).is_err());
        assert!(l.lattice_subspaces(0, 1.0, DEFAULT_GENERATOR_CAP).is_err());
        let capped = l.lattice_subspaces(1, 100.0, 500).unwrap();
        assert!(capped.truncation_notice.is_some());
        assert!(capped.radius < 100.0);
    }

    /// Integer keys must agree with the projector-distance test.
    #[test]
    fn subspace_keys_match_projector_distance() {
        for (d, n, r) in [(2, 1, 3.5), (3, 1, 2.5), (3, 2, 2.0)] {
            let subs = z(d).lattice_subspaces(n, r, DEFAULT_GENERATOR_CAP).unwrap().subspaces;
            for (i, a) in subs.iter().enumerate() {
                let p = a.projector();
                let f = a.frame();
                assert!((f.transpose() * f - DMatrix::identity(n, n)).abs().max() < 1e-12);
                for g in a.generators() {
                    let v = DVector::from_vec(z(d).point(g));
                    assert!((&p * &v - &v).norm() < 1e-10);
                }
                for b in &subs[i + 1..] {
                    assert!(a.projector_distance(b) > 1e-10);
                }
            }
        }
    }

    #[test]
    fn angles() {
        let l = z(2);
        let subs = l.lattice_subspaces(1, 1.5, DEFAULT_GENERATOR_CAP).unwrap().subspaces;
        let by_key = |k: &[i64]| subs.iter().find(|s| s.key() == k).unwrap();
        let x = by_key(&[1, 0, 0]);
        let y = by_key(&[0, 1, 0]);
        let diag = by_key(&[1, 1, 0]);
        assert_eq!(subspace_angle(x, y), SubspaceRelation::Angle(PI / 2.0));
        match subspace_angle(x, diag) {
            SubspaceRelation::Angle(a) => assert!((a - PI / 4.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(subspace_angle(x, x), SubspaceRelation::Nested);

        // minimum over all pairs at r = 3 is the angle between (1,0) and (3,1)
        let subs = l.lattice_subspaces(1, 3.0, DEFAULT_GENERATOR_CAP).unwrap().subspaces;
        let mut min = f64::INFINITY;
        for (i, a) in subs.iter().enumerate() {
            for b in &subs[i + 1..] {
                if let SubspaceRelation::Angle(t) = subspace_angle(a, b) {
                    min = min.min(t);
                }
            }
        }
        let expect = (1.0f64).atan2(3.0);
        assert!(min >= expect - 1e-12, "{min} < {expect}");
    }

    #[test]
    fn plane_and_line_in_three_dimensions() {
        let l = z(3);
        let planes = l.lattice_subspaces(2, 1.5, DEFAULT_GENERATOR_CAP).unwrap().subspaces;
        let lines = l.lattice_subspaces(1, 1.5, DEFAULT_GENERATOR_CAP).unwrap().subspaces;
        let xy = planes.iter().find(|s| s.key() == [0, 0, 1]).unwrap();
        let x = lines.iter().find(|s| s.key() == [1, 0, 0]).unwrap();
        let z_axis = lines.iter().find(|s| s.key() == [0, 0, 1]).unwrap();
        assert_eq!(subspace_angle(x, xy), SubspaceRelation::Nested);
        assert_eq!(subspace_angle(z_axis, xy), SubspaceRelation::Angle(PI / 2.0));
        let xz = planes.iter().find(|s| s.key() == [0, 1, 0]).unwrap();
        match subspace_angle(xy, xz) {
            SubspaceRelation::Angle(a) => assert!((a - PI / 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    fn brute_shell(s: &SymbolModel, tau: f64, w: f64, h: f64, f: &[f64]) -> usize {
        let n = (((tau + w).max(0.0)).sqrt() / h) as i64 + 3;
        let mut count = 0;
        for a in -n..=n {
            for b in -n..=n {
                let x = [h * (a as f64 + f[0]), h * (b as f64 + f[1])];
                if (s.value(&x) - tau).abs() <= w {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn shell_counts() {
        let l = z(2);
        let s = SymbolModel::power(2, 2.0).unwrap();
        assert_eq!(l.shell_count(&s, 1.0, 0.0, 1.0, &[0.0, 0.0]).unwrap(), 4);
        let f = [0.5, 0.5];
        assert_eq!(
            l.shell_count(&s, 1.0, 0.05, 0.1, &f).unwrap(),
            brute_shell(&s, 1.0, 0.05, 0.1, &f)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let h = rng.gen_range(0.05..0.3);
            let tau = rng.gen_range(0.5..2.0);
            let w = rng.gen_range(0.0..0.3) * h;
            let f = [rng.gen::<f64>(), rng.gen::<f64>()];
            assert_eq!(l.shell_count(&s, tau, w, h, &f).unwrap(), brute_shell(&s, tau, w, h, &f));
        }
    }
}
