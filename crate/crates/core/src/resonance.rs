//! Non-resonance tests, resonant strata of the plane-wave labels near a
//! level set, their equivalence classes, and Monte-Carlo estimates of
//! resonant measure.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Coord, LatticePair, LatticeSubspace};
use crate::symbols::levelset::ray_root;
use crate::symbols::SymbolModel;

/// Thresholds and radii of the resonance analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceConfig {
    pub delta: f64,
    /// Per-stratum exponents `δ₁ < … < δ_{d−1}`; `None` means
    /// `δₙ = δ (1 + n/d)`.
    pub stratum_deltas: Option<Vec<f64>>,
    /// Ball exponent: `ω = h^{−ϰ}`.
    pub kappa: f64,
    /// Multiplier `K` of the ball radius.
    pub k_mult: f64,
    /// Constant `C` of the window `|A0 − τ| ≤ C ε h^{−δ}`.
    pub c_window: f64,
    /// Lower bound on `ω` in lattice units.
    pub omega_abs: f64,
    /// Base threshold `ρ`; `None` means `ε^{1/2} h^{−δ}`.
    pub rho: Option<f64>,
    pub generator_cap: usize,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            stratum_deltas: None,
            kappa: 0.05,
            k_mult: 3.0,
            c_window: 6.0,
            omega_abs: 3.0,
            rho: None,
            generator_cap: crate::lattice::DEFAULT_GENERATOR_CAP,
        }
    }
}

impl ResonanceConfig {
    pub fn omega(&self, h: f64) -> f64 {
        h.powf(-self.kappa).max(self.omega_abs)
    }

    /// Radius of `Θ′_K`, also the radius of the lattice subspace generators.
    pub fn theta_radius(&self, h: f64) -> f64 {
        self.k_mult * self.omega(h)
    }

    pub fn stratum_delta(&self, n: usize, d: usize) -> f64 {
        match &self.stratum_deltas {
            Some(v) if n >= 1 && n <= v.len() => v[n - 1],
            _ => self.delta * (1.0 + n as f64 / d as f64),
        }
    }

    /// `ρₙ = ε^{1/2} h^{−δₙ}`.
    pub fn rho_n(&self, n: usize, d: usize, h: f64, eps: f64) -> f64 {
        eps.sqrt() * h.powf(-self.stratum_delta(n, d))
    }

    pub fn base_rho(&self, h: f64, eps: f64) -> f64 {
        self.rho.unwrap_or_else(|| eps.sqrt() * h.powf(-self.delta))
    }

    /// Half-width of the window `Ω_τ`.
    pub fn window_half_width(&self, h: f64, eps: f64) -> f64 {
        self.c_window * eps * h.powf(-self.delta)
    }

    /// Coupling used for the window and thresholds; `ε = 0` uses the
    /// `ε = h` partition.
    pub fn effective_eps(h: f64, eps: f64) -> f64 {
        if eps > 0.0 {
            eps
        } else {
            h
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.kappa > 0.0 && self.k_mult > 0.0 && self.c_window > 0.0) {
            return Err(Error::arg("resonance", "delta, kappa, K and C must be positive"));
        }
        let mut prev = 0.0;
        for n in 1..d {
            let v = self.stratum_delta(n, d);
            if !(v > prev) {
                return Err(Error::arg("resonance", format!("stratum exponents must increase (δ_{n} = {v})")));
            }
            prev = v;
        }
        Ok(())
    }

    /// Departures from the asymptotic parameter ranges, as readable notes.
    pub fn regime_notes(&self, h: f64, eps: f64) -> Vec<String> {
        let mut notes = Vec::new();
        let rho = self.base_rho(h, eps);
        let lo = eps.sqrt() * h.powf(-self.delta);
        let hi = h.powf(self.delta);
        if rho < lo * (1.0 - 1e-12) || rho > hi * (1.0 + 1e-12) {
            notes.push(format!("rho = {rho} outside [{lo}, {hi}]"));
        }
        if eps < h {
            notes.push(format!("eps = {eps} below h = {h}"));
        }
        notes
    }
}

/// Dual points of `Θ′_K ∖ 0` in Cartesian form, with their labels.
pub fn theta_set(lattice: &LatticePair, radius: f64) -> Vec<(Coord, Vec<f64>)> {
    lattice
        .enumerate_ball(radius)
        .into_iter()
        .filter(|c| *c != [0, 0, 0])
        .map(|c| (c, lattice.point(&c)))
        .collect()
}

/// Outcome of [`is_nonresonant`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonresonanceTest {
    pub nonresonant: bool,
    pub worst_theta: Option<Coord>,
    pub worst_value: f64,
}

/// `|⟨∇A0(ξ), θ⟩| ≥ ρ` for every `θ` of the set.
pub fn is_nonresonant(
    symbol: &SymbolModel,
    xi: &[f64],
    rho: f64,
    thetas: &[(Coord, Vec<f64>)],
) -> NonresonanceTest {
    let g = symbol.gradient(xi);
    let mut worst = None;
    let mut worst_value = f64::INFINITY;
    for (c, t) in thetas {
        let v = g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>().abs();
        if v < worst_value {
            worst_value = v;
            worst = Some(*c);
        }
    }
    NonresonanceTest { nonresonant: worst_value >= rho, worst_theta: worst, worst_value }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bisect(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

const SLICE_GRID: usize = 256;

/// Whether the line `base + s·u` contains a point with
/// `|⟨∇A0, u⟩| ≤ ρ` and `|A0 − τ| ≤ w`.
pub(crate) fn line_slice_meets(
    symbol: &SymbolModel,
    base: &[f64],
    u: &[f64],
    rho: f64,
    tau: f64,
    w: f64,
) -> bool {
    let at = |s: f64| -> Vec<f64> { base.iter().zip(u).map(|(b, v)| b + s * v).collect() };
    let g = |s: f64| dot(&symbol.gradient(&at(s)), u);
    let f = |s: f64| symbol.value(&at(s));
    let span = symbol.coercivity().radius_for(tau + w) + base.iter().map(|v| v * v).sum::<f64>().sqrt();
    let grid: Vec<f64> = (0..=SLICE_GRID).map(|k| -span + 2.0 * span * k as f64 / SLICE_GRID as f64).collect();
    let gv: Vec<f64> = grid.iter().map(|s| g(*s)).collect();
    // breakpoints: crossings of g = ±ρ and zeros of g
    let mut cuts = vec![grid[0], grid[SLICE_GRID]];
    let mut zeros = Vec::new();
    for k in 0..SLICE_GRID {
        for level in [rho, -rho, 0.0] {
            let (a, b) = (gv[k] - level, gv[k + 1] - level);
            if a == 0.0 || a.signum() != b.signum() {
                let s = if a == 0.0 { grid[k] } else { bisect(grid[k], grid[k + 1], |s| g(s) - level) };
                if level == 0.0 {
                    zeros.push(s);
                } else {
                    cuts.push(s);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    for win in cuts.windows(2) {
        let (a, b) = (win[0], win[1]);
        if b <= a {
            continue;
        }
        if g(0.5 * (a + b)).abs() > rho {
            continue;
        }
        let mut lo = f(a).min(f(b));
        let mut hi = f(a).max(f(b));
        for z in zeros.iter().filter(|z| **z >= a && **z <= b) {
            let v = f(*z);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= tau + w && hi >= tau - w {
            return true;
        }
    }
    // single-point intervals at tangential touches
    zeros.iter().any(|z| (f(*z) - tau).abs() <= w)
}

const PLANE_GRID: usize = 96;

/// Plane version of [`line_slice_meets`] with `|P∇A0| ≤ ρ`: grid search
/// plus the critical point of `A0` on the plane.
pub(crate) fn plane_slice_meets(
    symbol: &SymbolModel,
    base: &[f64],
    e1: &[f64],
    e2: &[f64],
    rho: f64,
    tau: f64,
    w: f64,
) -> bool {
    let at = |a: f64, b: f64| -> Vec<f64> {
        (0..base.len()).map(|i| base[i] + a * e1[i] + b * e2[i]).collect()
    };
    let test = |p: &[f64]| {
        let g = symbol.gradient(p);
        let pg = (dot(&g, e1).powi(2) + dot(&g, e2).powi(2)).sqrt();
        pg <= rho && (symbol.value(p) - tau).abs() <= w
    };
    let span = symbol.coercivity().radius_for(tau + w) + base.iter().map(|v| v * v).sum::<f64>().sqrt();
    // critical point by Newton on the restricted gradient
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..50 {
        let p = at(a, b);
        let g = symbol.gradient(&p);
        let h = symbol.hessian(&p);
        let hv = |x: &[f64], y: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..x.len() {
                for j in 0..y.len() {
                    s += x[i] * h[(i, j)] * y[j];
                }
            }
            s
        };
        let (g1, g2) = (dot(&g, e1), dot(&g, e2));
        let (h11, h12, h22) = (hv(e1, e1), hv(e1, e2), hv(e2, e2));
        let det = h11 * h22 - h12 * h12;
        if det.abs() < 1e-14 {
            break;
        }
        let da = (h22 * g1 - h12 * g2) / det;
        let db = (h11 * g2 - h12 * g1) / det;
        a -= da;
        b -= db;
        if da.abs() + db.abs() < 1e-14 || a.abs() > 2.0 * span || b.abs() > 2.0 * span {
            break;
        }
    }
    if a.abs() <= span && b.abs() <= span && test(&at(a, b)) {
        return true;
    }
    for i in 0..=PLANE_GRID {
        let a = -span + 2.0 * span * i as f64 / PLANE_GRID as f64;
        for j in 0..=PLANE_GRID {
            let b = -span + 2.0 * span * j as f64 / PLANE_GRID as f64;
            if test(&at(a, b)) {
                return true;
            }
        }
    }
    false
}

/// Whether the slice `(base + V) ∩ Ω_τ` meets `Λ(V, ρ)`.
pub fn slice_meets(
    symbol: &SymbolModel,
    base: &[f64],
    v: &LatticeSubspace,
    rho: f64,
    tau: f64,
    w: f64,
) -> bool {
    let f = v.frame();
    let col = |j: usize| -> Vec<f64> { f.column(j).iter().copied().collect() };
    match v.dim() {
        1 => line_slice_meets(symbol, base, &col(0), rho, tau, w),
        _ => plane_slice_meets(symbol, base, &col(0), &col(1), rho, tau, w),
    }
}

/// One equivalence class of labels.
#[derive(Debug, Clone, Serialize)]
pub struct ResonanceClass {
    pub stratum: usize,
    /// Index into [`ResonancePartition::subspaces`] (`None` for `Ξ₀`).
    pub subspace: Option<usize>,
    /// Indices into [`ResonancePartition::points`].
    pub members: Vec<usize>,
}

/// Strata and classes of the labels `γ` with `h(γ + ξ_frac) ∈ Ω_τ`.
#[derive(Debug, Clone)]
pub struct ResonancePartition {
    pub dim: usize,
    pub h: f64,
    pub eps: f64,
    pub tau: f64,
    pub xi_frac: Vec<f64>,
    pub window: f64,
    /// `ρₙ` for `n = 1..d−1` (index `n − 1`).
    pub thresholds: Vec<f64>,
    pub points: Vec<Coord>,
    pub stratum: Vec<usize>,
    pub class_of: Vec<usize>,
    pub classes: Vec<ResonanceClass>,
    pub subspaces: Vec<LatticeSubspace>,
    /// Assigned subspace per point (`None` for `Ξ₀`).
    pub assigned: Vec<Option<usize>>,
    pub notices: Vec<String>,
    index: HashMap<Coord, usize>,
}

/// Invariant of `γ` modulo `V ∩ Γ*`: two labels lie on the same translate
/// of `V` exactly when their invariants agree.
fn translate_key(v: &LatticeSubspace, g: &Coord) -> [i64; 3] {
    let k = v.key();
    if v.dim() == 1 {
        let c = [k[0], k[1], k[2]];
        [g[1] * c[2] - g[2] * c[1], g[2] * c[0] - g[0] * c[2], g[0] * c[1] - g[1] * c[0]]
    } else {
        [g[0] * k[0] + g[1] * k[1] + g[2] * k[2], 0, 0]
    }
}

impl ResonancePartition {
    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        self.index.get(c).copied()
    }

    /// Relation from the definition: same assigned subspace and the label
    /// difference lies in it.
    pub fn related(&self, i: usize, j: usize) -> bool {
        if i == j {
            return true;
        }
        match (self.assigned[i], self.assigned[j]) {
            (Some(a), Some(b)) if a == b => {
                let v = &self.subspaces[a];
                translate_key(v, &self.points[i]) == translate_key(v, &self.points[j])
            }
            _ => false,
        }
    }

    /// Exhaustive check that [`Self::related`] is an equivalence relation
    /// whose classes are the stored ones, and that every class lies on one
    /// translate of its subspace.
    pub fn verify_equivalence(&self) -> Result<()> {
        let n = self.points.len();
        let rel_sets: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).filter(|&j| self.related(i, j)).collect()).collect();
        for i in 0..n {
            if !self.related(i, i) {
                return Err(Error::Certification(format!("relation not reflexive at {:?}", self.points[i])));
            }
            for &j in &rel_sets[i] {
                if !self.related(j, i) {
                    return Err(Error::Certification(format!(
                        "relation not symmetric for {:?}, {:?}",
                        self.points[i], self.points[j]
                    )));
                }
                if rel_sets[j] != rel_sets[i] {
                    return Err(Error::Certification(format!(
                        "relation not transitive through {:?}",
                        self.points[j]
                    )));
                }
                if self.class_of[i] != self.class_of[j] {
                    return Err(Error::Certification("stored classes differ from the relation".into()));
                }
            }
            let cls = &self.classes[self.class_of[i]];
            if cls.members.len() != rel_sets[i].len() {
                return Err(Error::Certification("stored class size differs from the relation".into()));
            }
        }
        for cls in &self.classes {
            if cls.stratum == 0 && cls.members.len() != 1 {
                return Err(Error::Certification("non-resonant class is not a singleton".into()));
            }
            if let Some(s) = cls.subspace {
                let v = &self.subspaces[s];
                let k0 = translate_key(v, &self.points[cls.members[0]]);
                if cls.members.iter().any(|m| translate_key(v, &self.points[*m]) != k0) {
                    return Err(Error::Certification("class leaves its subspace translate".into()));
                }
            }
        }
        Ok(())
    }

    /// Largest `|h(γ − γ′)|` within a class.
    pub fn max_class_diameter(&self, lattice: &LatticePair) -> f64 {
        let mut best = 0.0f64;
        for cls in &self.classes {
            for (a, &i) in cls.members.iter().enumerate() {
                for &j in &cls.members[a + 1..] {
                    let (p, q) = (self.points[i], self.points[j]);
                    let diff = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                    best = best.max(self.h * lattice.norm(&diff));
                }
            }
        }
        best
    }
}

/// Assigns every label of the window to a stratum and class.
///
/// Membership of `γ` in `Ξₙ` is decided at `hγ`: `γ` belongs to `V` when
/// the slice `(hγ + V) ∩ Ω_τ` meets `Λ(V, ρₙ)`. Strata are filled from
/// `n = d−1` downwards. A label resonant for several subspaces of its
/// stratum is assigned the one with the shortest generator, then the
/// smallest `|P_V ∇A0(h(γ + ξ_frac))|`, then the smallest key; the number
/// of such choices is reported in the notices.
#[allow(clippy::too_many_arguments)]
pub fn build_partition(
    symbol: &SymbolModel,
    lattice: &LatticePair,
    config: &ResonanceConfig,
    h: f64,
    eps: f64,
    xi_frac: &[f64],
    tau: f64,
) -> Result<ResonancePartition> {
    let d = lattice.dim();
    config.validate(d)?;
    let eps_eff = ResonanceConfig::effective_eps(h, eps);
    let w = config.window_half_width(h, eps_eff);
    let points = lattice.shell_points(symbol, tau, w, h, xi_frac)?;
    if points.is_empty() {
        return Err(Error::arg("tau", format!("window |A0 − {tau}| ≤ {w} contains no lattice points")));
    }
    let mut notices = Vec::new();
    let radius = config.theta_radius(h);
    let thresholds: Vec<f64> = (1..d).map(|n| config.rho_n(n, d, h, eps_eff)).collect();
    let mut subspaces: Vec<LatticeSubspace> = Vec::new();
    let mut per_stratum: Vec<Vec<usize>> = vec![Vec::new(); d];
    for n in 1..d {
        let list = lattice.lattice_subspaces(n, radius, config.generator_cap)?;
        if let Some(note) = list.truncation_notice {
            notices.push(note);
        }
        let start = subspaces.len();
        subspaces.extend(list.subspaces);
        per_stratum[n] = (start..subspaces.len()).collect();
    }
    let tie = 1.0 + 1e-9;
    let results: Vec<(usize, Option<usize>, usize, bool)> = points
        .par_iter()
        .map(|g| {
            let p = lattice.point(g);
            let base: Vec<f64> = p.iter().map(|v| h * v).collect();
            let actual: Vec<f64> = p.iter().zip(xi_frac).map(|(a, b)| h * (a + b)).collect();
            let grad = symbol.gradient(&actual);
            for n in (1..d).rev() {
                let rho = thresholds[n - 1];
                let hits: Vec<usize> = per_stratum[n]
                    .iter()
                    .copied()
                    .filter(|&s| slice_meets(symbol, &base, &subspaces[s], rho * tie, tau, w))
                    .collect();
                if hits.is_empty() {
                    continue;
                }
                let boundary = hits
                    .iter()
                    .all(|&s| !slice_meets(symbol, &base, &subspaces[s], rho / tie, tau, w));
                let score = |s: usize| {
                    let v = &subspaces[s];
                    let gen = v.generators().iter().map(|c| lattice.norm(c)).fold(0.0, f64::max);
                    let pg = v.project(&grad).iter().map(|x| x * x).sum::<f64>().sqrt();
                    (gen, pg, v.key().to_vec())
                };
                let best = hits
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let (ga, pa, ka) = score(a);
                        let (gb, pb, kb) = score(b);
                        ga.total_cmp(&gb).then(pa.total_cmp(&pb)).then(ka.cmp(&kb))
                    })
                    .unwrap_or(hits[0]);
                return (n, Some(best), hits.len(), boundary);
            }
            (0, None, 0, false)
        })
        .collect();
    let mut stratum = Vec::with_capacity(points.len());
    let mut assigned = Vec::with_capacity(points.len());
    let (mut ambiguous, mut boundary) = (0usize, 0usize);
    for (n, s, hits, b) in &results {
        stratum.push(*n);
        assigned.push(*s);
        if *hits > 1 {
            ambiguous += 1;
        }
        if *b {
            boundary += 1;
        }
    }
    if ambiguous > 0 {
        notices.push(format!("{ambiguous} labels resonant for several subspaces; assigned by shortest generator"));
    }
    if boundary > 0 {
        notices.push(format!("{boundary} labels at a stratum boundary within tolerance; placed in the higher stratum"));
        log::info!("build_partition: {boundary} boundary labels moved to the higher stratum");
    }
    // classes: same assigned subspace and same translate
    let mut keyed: BTreeMap<(usize, [i64; 3]), Vec<usize>> = BTreeMap::new();
    let mut classes: Vec<ResonanceClass> = Vec::new();
    let mut class_of = vec![usize::MAX; points.len()];
    for (i, s) in assigned.iter().enumerate() {
        match s {
            Some(s) => keyed.entry((*s, translate_key(&subspaces[*s], &points[i]))).or_default().push(i),
            None => {
                class_of[i] = classes.len();
                classes.push(ResonanceClass { stratum: 0, subspace: None, members: vec![i] });
            }
        }
    }
    for ((s, _), members) in keyed {
        let id = classes.len();
        for m in &members {
            class_of[*m] = id;
        }
        classes.push(ResonanceClass { stratum: stratum[members[0]], subspace: Some(s), members });
    }
    // class ids ordered by first member for readability
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by_key(|&c| classes[c].members[0]);
    let mut remap = vec![0; classes.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let classes: Vec<ResonanceClass> = order.iter().map(|&c| classes[c].clone()).collect();
    let class_of = class_of.iter().map(|c| remap[*c]).collect();
    let index = points.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    Ok(ResonancePartition {
        dim: d,
        h,
        eps,
        tau,
        xi_frac: xi_frac.to_vec(),
        window: w,
        thresholds,
        points,
        stratum,
        class_of,
        classes,
        subspaces,
        assigned,
        notices,
        index,
    })
}

/// Counts used by the search's `R` estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub total: usize,
    pub per_stratum: Vec<usize>,
    /// `Σ #class` over classes in strata `n ≥ 1`.
    pub sum_class_sizes: usize,
    pub classes_per_stratum: Vec<usize>,
}

pub fn class_stats(p: &ResonancePartition) -> ClassStats {
    let mut per_stratum = vec![0; p.dim];
    for s in &p.stratum {
        per_stratum[*s] += 1;
    }
    let mut classes_per_stratum = vec![0; p.dim];
    let mut sum = 0;
    for c in &p.classes {
        classes_per_stratum[c.stratum] += 1;
        if c.stratum >= 1 {
            sum += c.members.len();
        }
    }
    ClassStats { total: p.points.len(), per_stratum, sum_class_sizes: sum, classes_per_stratum }
}

/// Monte-Carlo estimate of a fraction of `Σ_τ` under `μ_τ = dξ : dA0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    pub rho: f64,
    pub theta: Vec<f64>,
}

/// Fraction of `Σ_τ` (weighted by `μ_τ`) where `|⟨∇A0(ξ), θ⟩| < ρ`.
///
/// Surface points are drawn as ray hits from each component's chart
/// center in uniformly random directions `u`; the weight
/// `r^{d−1} / |⟨∇A0, u⟩|` converts the direction measure into `μ_τ`.
pub fn measure_estimate(
    symbol: &SymbolModel,
    tau: f64,
    theta: &[f64],
    rho: f64,
    samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    if samples < 1000 {
        return Err(Error::arg("samples", "at least 10^3 samples required"));
    }
    if theta.len() != symbol.dim() {
        return Err(Error::DimensionMismatch { expected: symbol.dim(), got: theta.len() });
    }
    let charts = symbol.charts(tau)?;
    let d = symbol.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sw, mut swy) = (0.0, 0.0);
    let mut obs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let ci = rng.gen_range(0..charts.len());
        let chart = &charts[ci];
        let u = random_direction(&mut rng, d);
        let p = ray_root(symbol, tau, chart, &u)?;
        let g = symbol.gradient(&p);
        let r: f64 = p.iter().zip(&chart.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let w = r.powi(d as i32 - 1) / dot(&g, &u).abs().max(f64::MIN_POSITIVE);
        let y = if dot(&g, theta).abs() < rho { 1.0 } else { 0.0 };
        sw += w;
        swy += w * y;
        obs.push((w, y));
    }
    let p = swy / sw;
    let var: f64 = obs.iter().map(|(w, y)| (w * (y - p)).powi(2)).sum::<f64>() / (sw * sw);
    Ok(MeasureEstimate { estimate: p, std_error: var.sqrt(), samples, seed, rho, theta: theta.to_vec() })
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-12 && n2 <= 1.0 {
            let n = n2.sqrt();
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Resonance map as CSV: label coordinates, stratum, class and subspace ids.
pub fn write_partition_csv(p: &ResonancePartition, header: &str, mut w: impl Write) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    let cols: Vec<String> = (1..=p.dim).map(|j| format!("gamma{j}")).collect();
    writeln!(w, "{},stratum,class_id,subspace_id", cols.join(","))?;
    for (i, g) in p.points.iter().enumerate() {
        let c: Vec<String> = g[..p.dim].iter().map(|v| v.to_string()).collect();
        let sub = p.assigned[i].map_or(String::new(), |s| s.to_string());
        writeln!(w, "{},{},{},{}", c.join(","), p.stratum[i], p.class_of[i], sub)?;
    }
    Ok(())
}
