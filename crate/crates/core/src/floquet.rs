//! Truncated Floquet matrices in the plane-wave basis, band values,
//! quasimomentum sweeps and gap detection.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Coord, LatticePair};
use crate::linalg::{self, c64, CMat};
use crate::symbols::{LevelSet, Perturbation, SymbolModel};

/// The operator `A0(hD) + εB(x, hD)` on a lattice.
#[derive(Debug, Clone)]
pub struct Operator {
    pub lattice: LatticePair,
    pub symbol: SymbolModel,
    pub perturbation: Perturbation,
    pub h: f64,
    pub eps: f64,
}

/// Energy range of the basis: plane waves with `e_min ≤ A0 ≤ e_max` are
/// kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisWindow {
    pub e_min: f64,
    pub e_max: f64,
}

/// Knobs for sizing the basis around an energy window `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowConfig {
    /// Front constant of the `C1 h^{1−δ}` slack.
    pub c1: f64,
    pub delta: f64,
    /// Extra margin in units of one coupling shell (`h · max|∇A0| · |θ|max`).
    pub margin_shells: f64,
    /// Keep every plane wave below `e_max` instead of an annulus.
    pub full_below: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { c1: 1.0, delta: 0.05, margin_shells: 3.0, full_below: false }
    }
}

impl Operator {
    pub fn new(
        lattice: LatticePair,
        symbol: SymbolModel,
        perturbation: Perturbation,
        h: f64,
        eps: f64,
    ) -> Result<Self> {
        let d = lattice.dim();
        if symbol.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: symbol.dim() });
        }
        if perturbation.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: perturbation.dim() });
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::arg("h", "must be positive"));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::arg("eps", "must be non-negative"));
        }
        Ok(Self { lattice, symbol, perturbation, h, eps })
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// Same operator with another coupling strength.
    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    /// Momentum `h(γ + ξ_frac)` in symbol space.
    pub fn momentum(&self, gamma: &Coord, xi_frac: &[f64]) -> Vec<f64> {
        let p = self.lattice.point(gamma);
        p.iter().zip(xi_frac).map(|(a, b)| self.h * (a + b)).collect()
    }

    /// Unperturbed eigenvalue `A0(h(γ + ξ_frac))`.
    pub fn free_value(&self, gamma: &Coord, xi_frac: &[f64]) -> f64 {
        self.symbol.value(&self.momentum(gamma, xi_frac))
    }

    /// Largest `|∇A0|` over `{lo ≤ A0 ≤ hi}`, from level-set samples.
    pub fn max_gradient(&self, lo: f64, hi: f64) -> f64 {
        let mut g = 0.0f64;
        let levels = 12;
        for k in 0..=levels {
            let e = lo + (hi - lo) * k as f64 / levels as f64;
            if let Ok(set) = LevelSet::sample(&self.symbol, e, 64) {
                for p in set.points() {
                    g = g.max(self.symbol.gradient(p).iter().map(|v| v * v).sum::<f64>().sqrt());
                }
            }
        }
        g
    }

    /// Energy spread of one coupling step near `[lo, hi]`.
    pub fn shell_energy(&self, lo: f64, hi: f64) -> f64 {
        self.h * self.max_gradient(lo, hi) * self.perturbation.support_radius(&self.lattice)
    }

    /// Basis energy range for eigenvalues in `[lo, hi]`: slack
    /// `max(C1 h^{1−δ}, 10ε)` plus `margin_shells` coupling shells on each
    /// side.
    pub fn basis_window(&self, lo: f64, hi: f64, cfg: &WindowConfig) -> BasisWindow {
        let slack = (cfg.c1 * self.h.powf(1.0 - cfg.delta)).max(10.0 * self.eps);
        let shell = self.shell_energy(lo - slack, hi + slack);
        let pad = slack + cfg.margin_shells * shell;
        let e_min = if cfg.full_below { f64::NEG_INFINITY } else { lo - pad };
        BasisWindow { e_min, e_max: hi + pad }
    }

    /// Plane waves `γ` with `A0(h(γ + ξ_frac))` inside the window, in the
    /// lattice enumeration order.
    pub fn basis(&self, xi_frac: &[f64], window: BasisWindow) -> Result<PlaneWaveBasis> {
        if xi_frac.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xi_frac.len() });
        }
        let radius = self.symbol.coercivity().radius_for(window.e_max) / self.h;
        let center: Vec<f64> = xi_frac.iter().map(|v| -v).collect();
        let mut points = Vec::new();
        let mut below = 0usize;
        self.lattice.for_each_in_ball(&center, radius, |c| {
            let e = self.free_value(&c, xi_frac);
            if e <= window.e_max {
                if e >= window.e_min {
                    points.push(c);
                } else {
                    below += 1;
                }
            }
        });
        if points.is_empty() {
            return Err(Error::EmptyBasis);
        }
        self.lattice.sort_points(&mut points);
        let free: Vec<f64> = points.iter().map(|c| self.free_value(c, xi_frac)).collect();
        let index = points.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(PlaneWaveBasis {
            points,
            free,
            index,
            xi_frac: xi_frac.to_vec(),
            h: self.h,
            window,
            below,
        })
    }

    /// Floquet matrix on `basis`. Off-diagonal entries use the Weyl
    /// midpoint: `entry(γ′, γ) = ε b_{γ′−γ}(h((γ + γ′)/2 + ξ))`.
    pub fn assemble(&self, basis: &PlaneWaveBasis) -> FloquetMatrix {
        let n = basis.len();
        let mut m = linalg::zeros(n);
        let xi = &basis.xi_frac;
        for (i, g) in basis.points.iter().enumerate() {
            let p = self.momentum(g, xi);
            let mean = if self.eps == 0.0 { 0.0 } else { self.perturbation.mean(&p) };
            m[(i, i)] = c64::new(basis.free[i] + self.eps * mean, 0.0);
        }
        if self.eps != 0.0 {
            let half = |a: i64, b: i64| 0.5 * (a + b) as f64;
            for (i, g) in basis.points.iter().enumerate() {
                for (theta, coef) in self.perturbation.off_diagonal_modes() {
                    let gp = [g[0] + theta[0], g[1] + theta[1], g[2] + theta[2]];
                    let Some(&j) = basis.index.get(&gp) else { continue };
                    let mid_lat: Vec<f64> = {
                        let c = [half(g[0], gp[0]), half(g[1], gp[1]), half(g[2], gp[2])];
                        let d = self.lattice.dual_basis();
                        (0..self.dim())
                            .map(|r| (0..self.dim()).map(|s| d[(r, s)] * c[s]).sum::<f64>())
                            .collect()
                    };
                    let zeta: Vec<f64> =
                        mid_lat.iter().zip(xi).map(|(a, b)| self.h * (a + b)).collect();
                    m[(j, i)] = coef.eval(&zeta) * self.eps;
                }
            }
        }
        FloquetMatrix { basis: basis.clone(), entries: m, h: self.h, eps: self.eps }
    }

    /// Bound on `|∂λ/∂ξ_frac|` for eigenvalues of matrices assembled on
    /// bases within `window`.
    pub fn lipschitz_bound(&self, window: BasisWindow) -> f64 {
        let lo = window.e_min.max(self.symbol_floor());
        let g = self.max_gradient(lo, window.e_max);
        let r = self.symbol.coercivity().radius_for(window.e_max);
        let b = self.perturbation.max_abs_on_ball(r);
        self.h * g + self.eps * self.perturbation.support_radius(&self.lattice) * b
    }

    /// Lower bound for `A0` used to clip energy ranges.
    fn symbol_floor(&self) -> f64 {
        let c = self.symbol.coercivity();
        -c.big_c0
    }
}

/// Ordered plane-wave labels `γ` at a fixed quasimomentum.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis {
    pub points: Vec<Coord>,
    /// `A0(h(γ + ξ_frac))` per point.
    pub free: Vec<f64>,
    index: HashMap<Coord, usize>,
    pub xi_frac: Vec<f64>,
    pub h: f64,
    pub window: BasisWindow,
    /// Plane waves below `e_min` left out of the basis.
    pub below: usize,
}

impl PlaneWaveBasis {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        self.index.get(c).copied()
    }

    /// Same labels at another quasimomentum.
    pub fn rebase(&self, op: &Operator, xi_frac: &[f64]) -> PlaneWaveBasis {
        let free = self.points.iter().map(|c| op.free_value(c, xi_frac)).collect();
        PlaneWaveBasis { free, xi_frac: xi_frac.to_vec(), ..self.clone() }
    }
}

/// Hermitian matrix of the fiber operator on a plane-wave basis.
#[derive(Debug, Clone)]
pub struct FloquetMatrix {
    pub basis: PlaneWaveBasis,
    pub entries: CMat,
    pub h: f64,
    pub eps: f64,
}

impl FloquetMatrix {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Sorted eigenvalues in `[lo, hi]`.
    pub fn band_values(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        let all = linalg::eigenvalues(&self.entries)?;
        Ok(all.into_iter().filter(|v| *v >= lo && *v <= hi).collect())
    }

    /// All eigenvalues, ascending.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        linalg::eigenvalues(&self.entries)
    }
}

/// Quasimomentum grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GridSpec {
    /// `n₁ × … × n_d` points `Σ (kⱼ/nⱼ) Dⱼ`.
    Regular(Vec<usize>),
    /// Explicit Cartesian points of the fundamental cell.
    Points(Vec<Vec<f64>>),
}

impl GridSpec {
    pub fn points(&self, lattice: &LatticePair) -> Result<Vec<Vec<f64>>> {
        let d = lattice.dim();
        match self {
            GridSpec::Points(p) => {
                if let Some(bad) = p.iter().find(|x| x.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
                }
                Ok(p.clone())
            }
            GridSpec::Regular(n) => {
                if n.len() != d || n.contains(&0) {
                    return Err(Error::arg("grid", format!("need {d} positive resolutions, got {n:?}")));
                }
                let total: usize = n.iter().product();
                let dual = lattice.dual_basis();
                let mut out = Vec::with_capacity(total);
                for flat in 0..total {
                    let mut rem = flat;
                    let mut frac = vec![0.0; d];
                    // last axis varies fastest
                    for j in (0..d).rev() {
                        frac[j] = (rem % n[j]) as f64 / n[j] as f64;
                        rem /= n[j];
                    }
                    out.push((0..d).map(|r| (0..d).map(|s| dual[(r, s)] * frac[s]).sum()).collect());
                }
                Ok(out)
            }
        }
    }

    /// Largest distance from a point of the cell to the nearest grid point
    /// (zero for explicit lists, which carry no covering guarantee).
    pub fn covering_radius(&self, lattice: &LatticePair) -> f64 {
        match self {
            GridSpec::Points(_) => 0.0,
            GridSpec::Regular(n) => {
                let d = lattice.dim();
                let dual = lattice.dual_basis();
                // half the longest diagonal of one grid cell
                let mut best = 0.0f64;
                for signs in 0..(1usize << d) {
                    let v: Vec<f64> = (0..d)
                        .map(|r| {
                            (0..d)
                                .map(|s| {
                                    let sg = if signs >> s & 1 == 1 { -1.0 } else { 1.0 };
                                    sg * dual[(r, s)] / n[s] as f64
                                })
                                .sum()
                        })
                        .collect();
                    best = best.max(0.5 * v.iter().map(|x| x * x).sum::<f64>().sqrt());
                }
                best
            }
        }
    }
}

/// Sweep request.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub grid: GridSpec,
    /// Eigenvalues kept in the table.
    pub lo: f64,
    pub hi: f64,
    pub window: BasisWindow,
    /// Energy at which the counting function is evaluated.
    pub tau: f64,
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

/// Band values over a quasimomentum grid.
#[derive(Debug, Clone, Serialize)]
pub struct BandTable {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Number of eigenvalues below `tau` per grid point (plane waves
    /// excluded below the basis window count as eigenvalues below).
    pub counting: Vec<usize>,
    pub tau: f64,
    pub lo: f64,
    pub hi: f64,
    /// Smallest eigenvalue over the grid, when the basis contained every
    /// plane wave below the window.
    pub spectrum_floor: Option<f64>,
    pub lipschitz: f64,
    pub covering_radius: f64,
    pub failures: Vec<(usize, String)>,
    pub basis_sizes: Vec<usize>,
    /// Number of lattice symmetries used to fold the grid (1 = none).
    pub symmetry_order: usize,
    /// Grid points actually diagonalized.
    pub solved_points: usize,
}

/// Eigensolver accuracy assumed when reporting gaps.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

impl BandTable {
    /// Uncertainty of band edges inferred from the grid.
    pub fn resolution(&self) -> f64 {
        (self.lipschitz * self.covering_radius).max(EIGEN_TOLERANCE)
    }
}

struct PointResult {
    values: Vec<f64>,
    counting: usize,
    floor: Option<f64>,
    size: usize,
}

fn sweep_point(op: &Operator, xi: &[f64], spec: &SweepSpec) -> Result<PointResult> {
    let basis = op.basis(xi, spec.window)?;
    let m = op.assemble(&basis);
    let all = m.spectrum()?;
    let counting = basis.below + all.iter().filter(|v| **v < spec.tau).count();
    let floor = if basis.below == 0 && spec.window.e_min == f64::NEG_INFINITY {
        all.first().copied()
    } else {
        None
    };
    let values = all.into_iter().filter(|v| *v >= spec.lo && *v <= spec.hi).collect();
    Ok(PointResult { values, counting, floor, size: basis.len() })
}

/// Signed permutation of dual-lattice coordinates,
/// `(Gγ)ⱼ = sⱼ γ_{π(j)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LatticeSymmetry {
    perm: [usize; 3],
    sign: [i64; 3],
}

impl LatticeSymmetry {
    fn on_coord(&self, d: usize, c: &Coord) -> Coord {
        let mut out = [0i64; 3];
        for j in 0..d {
            out[j] = self.sign[j] * c[self.perm[j]];
        }
        out
    }

    fn on_point(&self, lattice: &LatticePair, x: &[f64]) -> Vec<f64> {
        let d = lattice.dim();
        let c = lattice.coords(x);
        let g: Vec<f64> = (0..d).map(|j| self.sign[j] as f64 * c[self.perm[j]]).collect();
        let dual = lattice.dual_basis();
        (0..d).map(|r| (0..d).map(|s| dual[(r, s)] * g[s]).sum()).collect()
    }
}

fn signed_permutations(d: usize) -> Vec<LatticeSymmetry> {
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        perms = perms
            .into_iter()
            .flat_map(|p| {
                (0..d).filter(|k| !p.contains(k)).map(|k| [p.clone(), vec![k]].concat()).collect::<Vec<_>>()
            })
            .collect();
    }
    let mut out = Vec::new();
    for p in perms {
        for signs in 0..(1u32 << d) {
            let mut perm = [0, 1, 2];
            let mut sign = [1i64; 3];
            for j in 0..d {
                perm[j] = p[j];
                sign[j] = if signs >> j & 1 == 1 { -1 } else { 1 };
            }
            out.push(LatticeSymmetry { perm, sign });
        }
    }
    out
}

/// Signed permutations of the dual basis that are isometries and leave
/// `A0` and every coefficient of `B` invariant: `b_{Gθ}(Gζ) = b_θ(ζ)`.
/// The fibers at `ξ` and `Gξ` are then unitarily equivalent. Invariance is
/// tested on a fixed set of sample points.
fn operator_symmetries(op: &Operator) -> Vec<LatticeSymmetry> {
    let d = op.dim();
    let dual = op.lattice.dual_basis();
    let gram = dual.transpose() * dual;
    let scale = gram.abs().max();
    let samples: Vec<Vec<f64>> = (0..12)
        .map(|k| {
            let r = 0.2 + 0.15 * k as f64;
            (0..d).map(|j| r * (1.7 * k as f64 + 2.3 * j as f64 + 0.4).sin()).collect()
        })
        .collect();
    let modes: Vec<Coord> = std::iter::once([0i64; 3]).chain(op.perturbation.modes().map(|(c, _)| *c)).collect();
    signed_permutations(d)
        .into_iter()
        .filter(|g| {
            let isometric = (0..d).all(|a| {
                (0..d).all(|b| {
                    let lhs = (g.sign[a] * g.sign[b]) as f64 * gram[(g.perm[a], g.perm[b])];
                    (lhs - gram[(a, b)]).abs() <= 1e-12 * scale
                })
            });
            isometric
                && samples.iter().all(|x| {
                    let gx = g.on_point(&op.lattice, x);
                    let a = op.symbol.value(x);
                    if (op.symbol.value(&gx) - a).abs() > 1e-12 * (1.0 + a.abs()) {
                        return false;
                    }
                    modes.iter().all(|t| {
                        let u = op.perturbation.coefficient(t, x);
                        let v = op.perturbation.coefficient(&g.on_coord(d, t), &gx);
                        (u - v).norm() <= 1e-12 * (1.0 + u.norm())
                    })
                })
        })
        .collect()
}

/// Orbit representative (smallest flat index) of every point of a regular
/// grid under the symmetries that map the grid to itself.
fn grid_orbits(n: &[usize], syms: &[LatticeSymmetry]) -> (Vec<usize>, usize) {
    let d = n.len();
    let usable: Vec<&LatticeSymmetry> = syms.iter().filter(|g| (0..d).all(|j| n[j] == n[g.perm[j]])).collect();
    let total: usize = n.iter().product();
    let mut stride = vec![1usize; d];
    for j in (0..d.saturating_sub(1)).rev() {
        stride[j] = stride[j + 1] * n[j + 1];
    }
    let rep = (0..total)
        .map(|flat| {
            let k: Vec<i64> = (0..d).map(|j| ((flat / stride[j]) % n[j]) as i64).collect();
            usable
                .iter()
                .map(|g| {
                    (0..d)
                        .map(|j| (g.sign[j] * k[g.perm[j]]).rem_euclid(n[j] as i64) as usize * stride[j])
                        .sum::<usize>()
                })
                .min()
                .unwrap_or(flat)
                .min(flat)
        })
        .collect();
    (rep, usable.len().max(1))
}

/// Evaluates band values on every grid point. Points are processed in
/// parallel and merged by grid index, so the table does not depend on the
/// worker count. On regular grids only one point per symmetry orbit is
/// solved and its values are copied to the rest of the orbit.
pub fn sweep(op: &Operator, spec: &SweepSpec) -> Result<BandTable> {
    let grid = spec.grid.points(&op.lattice)?;
    let (rep, order) = match &spec.grid {
        GridSpec::Regular(n) => grid_orbits(n, &operator_symmetries(op)),
        GridSpec::Points(_) => ((0..grid.len()).collect(), 1),
    };
    let solve: Vec<usize> = (0..grid.len()).filter(|i| rep[*i] == *i).collect();
    let run = || -> Vec<Result<PointResult>> {
        solve.par_iter().map(|i| sweep_point(op, &grid[*i], spec)).collect()
    };
    let solved = match spec.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::arg("workers", e.to_string()))?
            .install(run),
        None => run(),
    };
    let slot: HashMap<usize, usize> = solve.iter().enumerate().map(|(k, i)| (*i, k)).collect();
    let mut table = BandTable {
        grid: grid.clone(),
        values: Vec::with_capacity(grid.len()),
        counting: Vec::with_capacity(grid.len()),
        tau: spec.tau,
        lo: spec.lo,
        hi: spec.hi,
        spectrum_floor: None,
        lipschitz: op.lipschitz_bound(spec.window),
        covering_radius: spec.grid.covering_radius(&op.lattice),
        failures: Vec::new(),
        basis_sizes: Vec::with_capacity(grid.len()),
        symmetry_order: order,
        solved_points: solve.len(),
    };
    let mut floor = Some(f64::INFINITY);
    for i in 0..grid.len() {
        match &solved[slot[&rep[i]]] {
            Ok(p) => {
                table.values.push(p.values.clone());
                table.counting.push(p.counting);
                table.basis_sizes.push(p.size);
                floor = match (floor, p.floor) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    _ => None,
                };
            }
            Err(e) => {
                table.values.push(Vec::new());
                table.counting.push(0);
                table.basis_sizes.push(0);
                table.failures.push((i, e.to_string()));
            }
        }
    }
    table.spectrum_floor = floor.filter(|v| v.is_finite());
    Ok(table)
}

/// One uncovered interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub gap_start: f64,
    pub gap_end: f64,
    pub resolution: f64,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.gap_end - self.gap_start
    }
}

/// Maximal subintervals of `[τ − w, τ + w]` at distance more than the
/// table resolution from every band value. The part below the bottom of
/// the spectrum (when known) is not a gap and is skipped.
pub fn gap_report(table: &BandTable, tau: f64, half_width: f64) -> Vec<Gap> {
    gap_report_at(table, tau, half_width, table.resolution())
}

/// [`gap_report`] with an explicit resolution.
pub fn gap_report_at(table: &BandTable, tau: f64, half_width: f64, resolution: f64) -> Vec<Gap> {
    if !(half_width > 0.0) {
        return Vec::new();
    }
    let mut lo = tau - half_width;
    let hi = tau + half_width;
    if let Some(f) = table.spectrum_floor {
        lo = lo.max(f);
    }
    if lo >= hi {
        return Vec::new();
    }
    let mut vals: Vec<f64> = table
        .values
        .iter()
        .flatten()
        .copied()
        .filter(|v| *v >= lo - resolution && *v <= hi + resolution)
        .collect();
    vals.sort_by(f64::total_cmp);
    let mut gaps = Vec::new();
    let mut cursor = lo;
    for v in vals {
        let start = v - resolution;
        if start > cursor {
            gaps.push(Gap { gap_start: cursor, gap_end: start.min(hi), resolution });
        }
        cursor = cursor.max(v + resolution);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        gaps.push(Gap { gap_start: cursor, gap_end: hi, resolution });
    }
    gaps.retain(|g| g.gap_end > g.gap_start);
    gaps
}

/// Writes the table as CSV (`xi1..xid, band_index, value`) after a
/// comment header.
pub fn write_bands_csv(table: &BandTable, header: &str, mut w: impl Write) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    let d = table.grid.first().map_or(0, Vec::len);
    let cols: Vec<String> = (1..=d).map(|j| format!("xi{j}")).collect();
    writeln!(w, "{},band_index,value", cols.join(","))?;
    for (xi, vals) in table.grid.iter().zip(&table.values) {
        let coords: Vec<String> = xi.iter().map(|v| format!("{v:.12e}")).collect();
        for (k, v) in vals.iter().enumerate() {
            writeln!(w, "{},{k},{v:.15e}", coords.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{parse_coefficient, Polynomial};
    use std::f64::consts::PI;

    fn cos_op(d: usize, h: f64, eps: f64) -> Operator {
        Operator::new(
            LatticePair::cubic(d, 2.0 * PI).unwrap(),
            SymbolModel::power(d, 2.0).unwrap(),
            Perturbation::cosines(d, 1.0).unwrap(),
            h,
            eps,
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_crossing() {
        let (h, eps) = (0.2, 0.01);
        let op = cos_op(1, h, eps);
        let e = h * h / 4.0;
        // only γ = 0 and γ = −1 lie in this narrow window at ξ = 1/2
        let basis = op.basis(&[0.5], BasisWindow { e_min: 0.0, e_max: e + 1e-9 }).unwrap();
        let mut pts = basis.points.clone();
        pts.sort();
        assert_eq!(pts, vec![[-1, 0, 0], [0, 0, 0]]);
        let m = op.assemble(&basis);
        for (i, j, v) in [(0, 0, e), (1, 1, e), (0, 1, eps), (1, 0, eps)] {
            assert!((m.entries[(i, j)] - c64::new(v, 0.0)).norm() < 1e-16);
        }
        let vals = m.band_values(-1.0, 1.0).unwrap();
        assert!((vals[0] - (e - eps)).abs() < 1e-15 && (vals[1] - (e + eps)).abs() < 1e-15);
    }

    #[test]
    fn unperturbed_matrix_is_diagonal() {
        let op = cos_op(2, 0.1, 0.0);
        let xi = [0.3, 0.7];
        let basis = op.basis(&xi, BasisWindow { e_min: 0.8, e_max: 1.2 }).unwrap();
        let m = op.assemble(&basis);
        let mut expect: Vec<f64> = basis.points.iter().map(|g| op.free_value(g, &xi)).collect();
        for (i, g) in basis.points.iter().enumerate() {
            let p = op.lattice.point(g);
            let direct = 0.01 * ((p[0] + 0.3).powi(2) + (p[1] + 0.7).powi(2));
            assert!((m.entries[(i, i)].re - direct).abs() < 1e-14);
        }
        assert!(linalg::max_abs(&m.entries) > 0.0);
        for i in 0..m.len() {
            for j in 0..m.len() {
                if i != j {
                    assert_eq!(m.entries[(i, j)], c64::new(0.0, 0.0));
                }
            }
        }
        expect.sort_by(f64::total_cmp);
        let vals = m.band_values(0.8, 1.2).unwrap();
        assert_eq!(vals.len(), expect.len());
        for (a, b) in vals.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_coupling_pattern() {
        let b = Perturbation::new(
            2,
            vec![
                (vec![1, 0], Polynomial::constant(c64::new(1.0, 0.0))),
                (vec![-1, 0], Polynomial::constant(c64::new(1.0, 0.0))),
            ],
        )
        .unwrap();
        let op = Operator::new(
            LatticePair::cubic(2, 2.0 * PI).unwrap(),
            SymbolModel::power(2, 2.0).unwrap(),
            b,
            0.1,
            0.02,
        )
        .unwrap();
        let basis = op.basis(&[0.1, 0.2], BasisWindow { e_min: 0.5, e_max: 1.5 }).unwrap();
        let m = op.assemble(&basis);
        for (i, g) in basis.points.iter().enumerate() {
            for (j, q) in basis.points.iter().enumerate() {
                let diff = [q[0] - g[0], q[1] - g[1]];
                let expect = if diff == [1, 0] || diff == [-1, 0] { 0.02 } else { 0.0 };
                if i != j {
                    assert!((m.entries[(j, i)] - c64::new(expect, 0.0)).norm() < 1e-16);
                }
            }
        }
    }

    #[test]
    fn weyl_midpoint_and_hermiticity() {
        let p = parse_coefficient("0.5 + 0.3i*xi1 + xi2^2").unwrap();
        let b = Perturbation::new(2, vec![(vec![1, 1], p), (vec![-1, -1], p.conj())]).unwrap();
        let op = Operator::new(
            LatticePair::cubic(2, 2.0 * PI).unwrap(),
            SymbolModel::power(2, 2.0).unwrap(),
            b,
            0.1,
            0.05,
        )
        .unwrap();
        let xi = [0.25, 0.6];
        let basis = op.basis(&xi, BasisWindow { e_min: 0.5, e_max: 1.5 }).unwrap();
        let m = op.assemble(&basis);
        assert!(linalg::hermitian_defect(&m.entries) <= 1e-13 * linalg::max_abs(&m.entries));
        let g = basis.points.iter().find(|g| basis.index_of(&[g[0] + 1, g[1] + 1, 0]).is_some()).unwrap();
        let i = basis.index_of(g).unwrap();
        let j = basis.index_of(&[g[0] + 1, g[1] + 1, 0]).unwrap();
        let zeta = [0.1 * (g[0] as f64 + 0.5 + xi[0]), 0.1 * (g[1] as f64 + 0.5 + xi[1])];
        assert!((m.entries[(j, i)] - p.eval(&zeta) * 0.05).norm() < 1e-15);
    }

    #[test]
    fn periodic_in_quasimomentum() {
        let op = cos_op(2, 0.15, 0.02);
        let w = BasisWindow { e_min: 0.5, e_max: 1.6 };
        let a = op.assemble(&op.basis(&[0.2, 0.4], w).unwrap()).band_values(0.8, 1.2).unwrap();
        let b = op.assemble(&op.basis(&[1.2, -0.6], w).unwrap()).band_values(0.8, 1.2).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_bound() {
        let op0 = cos_op(2, 0.1, 0.0);
        let op = cos_op(2, 0.1, 0.01);
        let w = BasisWindow { e_min: f64::NEG_INFINITY, e_max: 2.0 };
        for xi in [[0.0, 0.0], [0.3, 0.1], [0.5, 0.5]] {
            let a = op0.assemble(&op0.basis(&xi, w).unwrap()).spectrum().unwrap();
            let b = op.assemble(&op.basis(&xi, w).unwrap()).spectrum().unwrap();
            for (x, y) in a.iter().zip(&b) {
                // ‖B‖ ≤ Σ|b_θ| = 4
                assert!((x - y).abs() <= 0.01 * 4.0 + 1e-12);
            }
        }
    }

    #[test]
    fn sweep_is_deterministic_and_matches_direct_values() {
        let op = cos_op(2, 0.2, 0.0);
        let spec = SweepSpec {
            grid: GridSpec::Regular(vec![4, 4]),
            lo: 0.9,
            hi: 1.1,
            window: BasisWindow { e_min: 0.5, e_max: 1.5 },
            tau: 1.0,
            workers: Some(1),
        };
        let t1 = sweep(&op, &spec).unwrap();
        let t8 = sweep(&op, &SweepSpec { workers: Some(8), ..spec.clone() }).unwrap();
        assert_eq!(t1.values, t8.values);
        for (xi, vals) in t1.grid.iter().zip(&t1.values) {
            let mut direct = Vec::new();
            op.lattice.for_each_in_ball(&[0.0, 0.0], 10.0, |g| {
                let v = op.free_value(&g, xi);
                if (0.9..=1.1).contains(&v) {
                    direct.push(v);
                }
            });
            direct.sort_by(f64::total_cmp);
            assert_eq!(vals.len(), direct.len());
            for (a, b) in vals.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gap_merging() {
        let table = BandTable {
            grid: vec![vec![0.0]],
            values: vec![vec![0.0, 0.1, 0.5]],
            counting: vec![0],
            tau: 0.3,
            lo: -1.0,
            hi: 1.0,
            spectrum_floor: None,
            lipschitz: 0.0,
            covering_radius: 0.0,
            failures: Vec::new(),
            basis_sizes: vec![1],
            symmetry_order: 1,
            solved_points: 1,
        };
        let g = gap_report_at(&table, 0.3, 0.3, 0.05);
        assert_eq!(g.len(), 2);
        assert!((g[0].gap_start - 0.15).abs() < 1e-12 && (g[0].gap_end - 0.45).abs() < 1e-12);
        assert!((g[1].gap_start - 0.55).abs() < 1e-12 && (g[1].gap_end - 0.6).abs() < 1e-12);
        assert!(gap_report_at(&table, 0.3, 0.0, 0.05).is_empty());
    }

    #[test]
    fn symmetry_detection() {
        assert_eq!(operator_symmetries(&cos_op(2, 0.1, 0.01)).len(), 8);
        assert_eq!(operator_symmetries(&cos_op(3, 0.3, 0.01)).len(), 48);
        let ellipse = Operator::new(
            LatticePair::cubic(2, 2.0 * PI).unwrap(),
            SymbolModel::quadratic(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])).unwrap(),
            Perturbation::cosines(2, 1.0).unwrap(),
            0.1,
            0.01,
        )
        .unwrap();
        assert_eq!(operator_symmetries(&ellipse).len(), 4);
        // a coefficient odd in ξ₁ breaks the reflection ξ₁ ↦ −ξ₁
        let modes = vec![
            (vec![1, 0], parse_coefficient("1 + 0.5*xi2").unwrap()),
            (vec![-1, 0], parse_coefficient("1 + 0.5*xi2").unwrap()),
        ];
        let skew = Operator::new(
            LatticePair::cubic(2, 2.0 * PI).unwrap(),
            SymbolModel::power(2, 2.0).unwrap(),
            Perturbation::new(2, modes).unwrap(),
            0.1,
            0.01,
        )
        .unwrap();
        assert_eq!(operator_symmetries(&skew).len(), 2);
    }

    #[test]
    fn folded_sweep_matches_full_sweep() {
        let op = cos_op(2, 0.2, 0.2f64.powf(1.5));
        let window = op.basis_window(0.9, 1.1, &WindowConfig::default());
        let regular = GridSpec::Regular(vec![6, 6]);
        let pts = regular.points(&op.lattice).unwrap();
        let mk = |grid| SweepSpec { grid, lo: 0.9, hi: 1.1, window, tau: 1.0, workers: Some(1) };
        let folded = sweep(&op, &mk(regular)).unwrap();
        let full = sweep(&op, &mk(GridSpec::Points(pts))).unwrap();
        assert_eq!(folded.symmetry_order, 8);
        assert!(folded.solved_points < 36 && full.solved_points == 36);
        assert_eq!(folded.counting, full.counting);
        for (a, b) in folded.values.iter().zip(&full.values) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
