//! Constructive search for an isolated band value near a fixed energy:
//! choice of a non-resonant base point on the corrected level set, tangent
//! steps that avoid competing eigenvalues, and certification on a
//! quasimomentum ball by full Floquet eigensolves.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{FloquetMatrix, Operator, PlaneWaveBasis, WindowConfig};
use crate::gauge::{self, BlockOperator, GaugeConfig};
use crate::lattice::Coord;
use crate::linalg;
use crate::resonance::{build_partition, is_nonresonant, theta_set, ResonanceConfig};
use crate::symbols::levelset::{default_samples, ray_root, tangent_basis};
use crate::symbols::{antipodal_points, graph_hessian, AntipodalPoint, Perturbation, SymbolModel};

/// Which closed form gives the target margin `υ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsilonFormula {
    Standard,
    Improved,
}

/// `υ` from the closed-form rate with front constant `front`.
///
/// Standard: `front · h · min(|log h|^{−1}, ε^{−3/2} h^σ)` for `d = 2` and
/// `front · h^{(d−1)²} · min(1, ε^{−3(d−1)/2} h^{(d−1)+σ})` for `d = 3`.
/// Improved (`d = 3` only, `h ≤ ε ≤ h^{2/3−σ}`):
/// `front · ε^{−3(d−2)/2} · h^{d²−d−1−σ}`.
pub fn compute_upsilon(d: usize, h: f64, eps: f64, sigma: f64, formula: UpsilonFormula, front: f64) -> Result<f64> {
    if !(2..=3).contains(&d) {
        return Err(Error::UpsilonFormula(format!("dimension {d} not in 2..=3")));
    }
    if !(h > 0.0 && h < 1.0) || !(eps > 0.0) {
        return Err(Error::UpsilonFormula(format!("needs 0 < h < 1 and ε > 0 (h = {h}, ε = {eps})")));
    }
    let df = d as f64;
    match formula {
        UpsilonFormula::Standard => {
            if d == 2 {
                Ok(front * h * (1.0 / h.ln().abs()).min(eps.powf(-1.5) * h.powf(sigma)))
            } else {
                let m = (df - 1.0).powi(2);
                Ok(front * h.powf(m) * 1f64.min(eps.powf(-1.5 * (df - 1.0)) * h.powf(df - 1.0 + sigma)))
            }
        }
        UpsilonFormula::Improved => {
            if d < 3 {
                return Err(Error::UpsilonFormula("the improved formula needs d ≥ 3".into()));
            }
            let upper = h.powf(2.0 / 3.0 - sigma);
            if eps < h || eps > upper {
                return Err(Error::UpsilonFormula(format!(
                    "the improved formula needs h ≤ ε ≤ h^(2/3−σ) = {upper:.6e}, got ε = {eps:.6e}"
                )));
            }
            Ok(front * eps.powf(-1.5 * (df - 2.0)) * h.powf(df * df - df - 1.0 - sigma))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiSearchConfig {
    pub tau: f64,
    pub sigma: f64,
    /// Separation factor `ϵ`; also the front constant of `υ`.
    pub front: f64,
    /// Half-length of the first step's parameter range.
    pub eps0: f64,
    /// Minimal form gap at antipodal points.
    pub eps1: f64,
    /// Later steps move at most `eps_prime · υ_{k−1}`.
    pub eps_prime: f64,
    pub max_rejection: usize,
    pub formula: UpsilonFormula,
    /// Non-resonance threshold for the base point.
    pub rho_star: f64,
    /// Minimal distance of the folded base point to the cell boundary.
    pub cell_margin: f64,
    /// Shell `|λ − τ| ≤ 2 C h` of the `R` estimate.
    pub shell_c: f64,
    pub t_points: usize,
    pub max_halvings: usize,
    pub seed: u64,
    /// Multiplier on the certified radius (negative controls).
    pub upsilon_scale: f64,
    pub certify_rings: usize,
    pub certify_directions: usize,
    pub certify_random: usize,
    pub diameter_points: usize,
    pub resonance: ResonanceConfig,
    pub gauge: GaugeConfig,
    pub window: WindowConfig,
}

impl Default for XiSearchConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            sigma: 0.01,
            front: 0.1,
            eps0: 0.3,
            eps1: 0.05,
            eps_prime: 0.25,
            max_rejection: 10_000,
            formula: UpsilonFormula::Standard,
            rho_star: 0.1,
            cell_margin: 0.05,
            shell_c: 0.25,
            t_points: 2001,
            max_halvings: 6,
            seed: 1,
            upsilon_scale: 1.0,
            certify_rings: 4,
            certify_directions: 16,
            certify_random: 16,
            diameter_points: 41,
            resonance: ResonanceConfig::default(),
            gauge: GaugeConfig::default(),
            window: WindowConfig::default(),
        }
    }
}

/// `A0 + ε b0`, the symbol whose level set carries the tracked band to
/// first order.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveSymbol<'a> {
    pub symbol: &'a SymbolModel,
    pub perturbation: &'a Perturbation,
    pub eps: f64,
}

impl<'a> EffectiveSymbol<'a> {
    pub fn new(op: &'a Operator) -> Self {
        Self { symbol: &op.symbol, perturbation: &op.perturbation, eps: op.eps }
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        let v = self.symbol.value(xi);
        if self.eps == 0.0 {
            v
        } else {
            v + self.eps * self.perturbation.mean(xi)
        }
    }

    pub fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        let mut g = self.symbol.gradient(xi);
        if self.eps != 0.0 && !self.perturbation.is_constant() {
            // the mean is a polynomial of degree ≤ 2: central differences are exact
            let step = 1e-4;
            let mut x = xi.to_vec();
            for j in 0..g.len() {
                x[j] = xi[j] + step;
                let a = self.perturbation.mean(&x);
                x[j] = xi[j] - step;
                let b = self.perturbation.mean(&x);
                x[j] = xi[j];
                g[j] += self.eps * (a - b) / (2.0 * step);
            }
        }
        g
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sign_normalized(mut v: Vec<f64>) -> Vec<f64> {
    if v.iter().find(|x| x.abs() > 1e-12).is_some_and(|x| *x < 0.0) {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

fn bisect(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
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

/// Root of `eff = τ` along the normal through `p`.
fn normal_root(eff: &EffectiveSymbol, p: &[f64], tau: f64) -> Option<Vec<f64>> {
    let g = eff.gradient(p);
    let gn = norm(&g);
    if gn == 0.0 {
        return None;
    }
    let n: Vec<f64> = g.iter().map(|v| v / gn).collect();
    let f = |s: f64| eff.value(&p.iter().zip(&n).map(|(a, b)| a + s * b).collect::<Vec<_>>()) - tau;
    let f0 = f(0.0);
    if f0 == 0.0 {
        return Some(p.to_vec());
    }
    let mut b = (2.0 * f0.abs() / gn).max(1e-14);
    let s = loop {
        if f(-b).signum() != f(b).signum() {
            break bisect(-b, b, f);
        }
        b *= 2.0;
        if b > 1.0 {
            return None;
        }
    };
    Some(p.iter().zip(&n).map(|(a, c)| a + s * c).collect())
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

/// Rejection counts of [`select_xistar`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Rejections {
    pub resonant: usize,
    pub boundary: usize,
    pub separation: usize,
    pub form_gap: usize,
    pub numerical: usize,
}

/// Selected base point.
#[derive(Debug, Clone, Serialize)]
pub struct XiStar {
    /// On the corrected level set, symbol space.
    pub xi_star: Vec<f64>,
    /// The level-set sample it was projected from.
    pub seed_point: Vec<f64>,
    pub gamma_star: Coord,
    pub xi_frac_star: Vec<f64>,
    pub draws: usize,
    pub rejections: Rejections,
    pub worst_nonresonance: f64,
    pub antipodal: Vec<AntipodalPoint>,
}

const SPIRAL_TRIES: usize = 8;

/// Seeded rejection sampling on `Σ_τ` for a base point that is
/// non-resonant at `ρ_star`, away from the cell boundary, locally
/// separated from its `Θ′_K` neighbours and satisfying the form-gap
/// condition at every antipodal point. A form-gap failure is retried along
/// a fixed spiral of nearby directions before drawing again.
pub fn select_xistar(op: &Operator, config: &XiSearchConfig) -> Result<XiStar> {
    let d = op.dim();
    let h = op.h;
    let tau = config.tau;
    let eff = EffectiveSymbol::new(op);
    let thetas = theta_set(&op.lattice, config.resonance.theta_radius(h));
    let charts = op.symbol.charts(tau)?;
    let sep_floor = config.front * h.powf(1.0 + config.resonance.delta);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rej = Rejections::default();
    let (mut passed_nonres, mut passed_interior) = (0usize, 0usize);
    let mut draws = 0usize;
    while draws < config.max_rejection {
        let chart = &charts[rng.gen_range(0..charts.len())];
        let u0 = random_direction(&mut rng, d);
        let spiral = tangent_basis(&u0);
        for k in 0..=SPIRAL_TRIES {
            draws += 1;
            let u: Vec<f64> = if k == 0 {
                u0.clone()
            } else {
                let a = 0.01 * k as f64;
                let t = &spiral[(k - 1) % spiral.len()];
                let v: Vec<f64> = u0.iter().zip(t).map(|(x, y)| x * a.cos() + y * a.sin()).collect();
                let n = norm(&v);
                v.iter().map(|x| x / n).collect()
            };
            let Ok(p) = ray_root(&op.symbol, tau, chart, &u) else {
                rej.numerical += 1;
                break;
            };
            let Some(q) = normal_root(&eff, &p, tau) else {
                rej.numerical += 1;
                break;
            };
            let nr = is_nonresonant(&op.symbol, &q, config.rho_star, &thetas);
            if !nr.nonresonant {
                rej.resonant += 1;
                break;
            }
            passed_nonres += 1;
            let scaled: Vec<f64> = q.iter().map(|v| v / h).collect();
            let (gamma, frac) = op.lattice.fold_to_fundamental(&scaled);
            if op.lattice.cell_margin(&frac) < config.cell_margin {
                rej.boundary += 1;
                break;
            }
            passed_interior += 1;
            let a0 = op.symbol.value(&q);
            let separated = thetas.iter().all(|(_, t)| {
                let x: Vec<f64> = q.iter().zip(t).map(|(a, b)| a + h * b).collect();
                (op.symbol.value(&x) - a0).abs() >= sep_floor
            });
            if !separated {
                rej.separation += 1;
                break;
            }
            let anti = match antipodal_points(&op.symbol, tau, &p, default_samples(d), config.eps1) {
                Ok(a) => a,
                Err(_) => {
                    rej.numerical += 1;
                    break;
                }
            };
            if anti.iter().any(|a| a.form_gap < config.eps1) {
                rej.form_gap += 1;
                continue;
            }
            return Ok(XiStar {
                xi_star: q,
                seed_point: p,
                gamma_star: gamma,
                xi_frac_star: frac,
                draws,
                rejections: rej,
                worst_nonresonance: nr.worst_value,
                antipodal: anti,
            });
        }
    }
    log::warn!("select_xistar: budget exhausted, rejections {rej:?}");
    Err(Error::SelectionBudget { draws, nonresonant: passed_nonres, interior: passed_interior })
}

/// Second fundamental form value `Q_x(η)` through the graph over the
/// coordinates other than `k`.
fn form_value(symbol: &SymbolModel, x: &[f64], k: usize, eta: &[f64]) -> Result<f64> {
    let f = graph_hessian(symbol, x, k)?;
    let e: Vec<f64> = (0..eta.len()).filter(|j| *j != k).map(|j| eta[j]).collect();
    let mut s = 0.0;
    for a in 0..e.len() {
        for b in 0..e.len() {
            s += e[a] * f[(a, b)] * e[b];
        }
    }
    Ok(s)
}

const FRAME_SAMPLES: usize = 180;

/// Orthonormal tangent directions at `ξ*`: `η₁` maximizes the smallest
/// form difference `|Q_{ξ*}(η) − Q_{ξ*_j}(η)|` over the antipodal points,
/// the rest complete the frame; signs make the first significant entry
/// positive.
pub fn tangent_frame(
    symbol: &SymbolModel,
    xi_star: &[f64],
    normal: &[f64],
    antipodal: &[AntipodalPoint],
) -> Result<Vec<Vec<f64>>> {
    let d = xi_star.len();
    let t = tangent_basis(normal);
    let k = crate::symbols::levelset::graph_coordinate(&symbol.gradient(xi_star));
    let score = |eta: &[f64]| -> Result<f64> {
        if antipodal.is_empty() {
            return Ok(0.0);
        }
        let q0 = form_value(symbol, xi_star, k, eta)?;
        let mut m = f64::INFINITY;
        for a in antipodal {
            m = m.min((q0 - form_value(symbol, &a.location, k, eta)?).abs());
        }
        Ok(m)
    };
    let frame = if d == 2 {
        vec![sign_normalized(t[0].clone())]
    } else {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..FRAME_SAMPLES {
            let phi = std::f64::consts::PI * i as f64 / FRAME_SAMPLES as f64;
            let eta: Vec<f64> = (0..d).map(|j| phi.cos() * t[0][j] + phi.sin() * t[1][j]).collect();
            let s = score(&eta)?;
            if s > best.0 + 1e-12 {
                best = (s, phi);
            }
        }
        let phi = best.1;
        let e1: Vec<f64> = (0..d).map(|j| phi.cos() * t[0][j] + phi.sin() * t[1][j]).collect();
        let e2: Vec<f64> = (0..d).map(|j| -phi.sin() * t[0][j] + phi.cos() * t[1][j]).collect();
        vec![sign_normalized(e1), sign_normalized(e2)]
    };
    if !antipodal.is_empty() && score(&frame[0])? <= 1e-12 {
        return Err(Error::TangentFrame("no tangent direction separates the antipodal forms".into()));
    }
    Ok(frame)
}

/// `δξ(t) = tη + s(t) ν̂` with `s` solving `A_eff(ξ* + tη + sν̂) = A_eff(ξ*)`.
pub fn track_curve(eff: &EffectiveSymbol, xi_star: &[f64], eta: &[f64], t: f64) -> Result<Vec<f64>> {
    let d = xi_star.len();
    if t == 0.0 {
        return Ok(vec![0.0; d]);
    }
    let tau = eff.value(xi_star);
    let g = eff.gradient(xi_star);
    let gn = norm(&g);
    let nu: Vec<f64> = g.iter().map(|v| v / gn).collect();
    let at = |s: f64| -> Vec<f64> { (0..d).map(|j| xi_star[j] + t * eta[j] + s * nu[j]).collect() };
    let f = |s: f64| eff.value(&at(s)) - tau;
    let mut b = (t * t).max(1e-15);
    let limit = 1.0 + t.abs();
    while f(-b).signum() == f(b).signum() {
        b *= 2.0;
        if b > limit {
            return Err(Error::CurveRange { t });
        }
    }
    let s = bisect(-b, b, f);
    Ok((0..d).map(|j| t * eta[j] + s * nu[j]).collect())
}

/// A competitor's model value along the step parameter.
pub struct CandidateCurve<'a> {
    /// Values on the parameter grid.
    pub values: Vec<f64>,
    pub eval: Box<dyn Fn(f64) -> f64 + 'a>,
    pub half_width: f64,
    /// `1/|⟨∇, η⟩|` when the candidate counts toward `R`.
    pub r_weight: Option<f64>,
}

/// Excluded parameter set of one step.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Exclusion {
    pub intervals: Vec<(f64, f64)>,
    pub total: f64,
    pub r_hat: f64,
    /// Largest gap of the complement within the range, if any.
    pub free_gap: Option<(f64, f64)>,
}

/// Union of the sets `{t : |value(t) − τ| ≤ half_width}` over candidates,
/// found on the grid and refined by bisection, and `R̂ = Σ 1/|⟨∇, η⟩|`.
pub fn bad_intervals(grid: &[f64], candidates: &[CandidateCurve], tau: f64) -> Exclusion {
    let refs: Vec<&CandidateCurve> = candidates.iter().collect();
    exclusion_of(grid, &refs, tau)
}

fn exclusion_of(grid: &[f64], candidates: &[&CandidateCurve], tau: f64) -> Exclusion {
    let mut raw: Vec<(f64, f64)> = Vec::new();
    let n = grid.len();
    let mut r_hat = 0.0;
    for c in candidates {
        if let Some(w) = c.r_weight {
            r_hat += w;
        }
        let g = |t: f64| ((c.eval)(t) - tau).abs() - c.half_width;
        let inside: Vec<bool> = (0..n)
            .map(|k| {
                let v = c.values[k] - tau;
                let crosses = k + 1 < n && v.signum() != (c.values[k + 1] - tau).signum();
                let crossed = k > 0 && v.signum() != (c.values[k - 1] - tau).signum();
                v.abs() <= c.half_width || crosses || crossed
            })
            .collect();
        let mut k = 0;
        while k < n {
            if !inside[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k + 1 < n && inside[k + 1] {
                k += 1;
            }
            let lo = if start == 0 { grid[0] } else { bisect(grid[start - 1], grid[start], g) };
            let hi = if k == n - 1 { grid[n - 1] } else { bisect(grid[k], grid[k + 1], g) };
            raw.push((lo.min(grid[start]), hi.max(grid[k])));
            k += 1;
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in raw {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let total = merged.iter().map(|(a, b)| b - a).sum();
    let (lo, hi) = (grid[0], grid[n - 1]);
    let mut best: Option<(f64, f64)> = None;
    let mut cursor = lo;
    let mut consider = |a: f64, b: f64| {
        if b > a && best.is_none_or(|(x, y)| b - a > y - x) {
            best = Some((a, b));
        }
    };
    for (a, b) in &merged {
        consider(cursor, a.min(hi));
        cursor = cursor.max(*b);
    }
    consider(cursor, hi);
    Exclusion { intervals: merged, total, r_hat, free_gap: best }
}

/// One eigenvalue branch of one block.
#[derive(Debug, Clone)]
struct Branch {
    block: usize,
    index: usize,
}

/// Block model evaluated at a symbol-space displacement from the base
/// quasimomentum.
struct BlockModel<'a> {
    op: &'a Operator,
    blocks: &'a BlockOperator,
    /// Momentum `h(γ + ξ_frac)` per basis index.
    momenta: Vec<Vec<f64>>,
    free: Vec<f64>,
}

impl<'a> BlockModel<'a> {
    fn new(op: &'a Operator, basis: &PlaneWaveBasis, blocks: &'a BlockOperator) -> Self {
        let momenta = basis.points.iter().map(|g| op.momentum(g, &basis.xi_frac)).collect();
        Self { op, blocks, momenta, free: basis.free.clone() }
    }

    fn shift(&self, i: usize, disp: &[f64]) -> f64 {
        self.op.symbol.value(&add(&self.momenta[i], disp)) - self.free[i]
    }

    fn values(&self, block: usize, disp: &[f64]) -> Vec<f64> {
        let b = &self.blocks.blocks[block];
        if b.members.len() == 1 {
            return vec![b.eigenvalues[0] + self.shift(b.members[0], disp)];
        }
        let mut m = b.matrix.clone();
        for (a, &i) in b.members.iter().enumerate() {
            m[(a, a)] += linalg::c64::new(self.shift(i, disp), 0.0);
        }
        linalg::eigenvalues(&m).unwrap_or_else(|_| vec![f64::NAN; b.members.len()])
    }

    fn value(&self, br: &Branch, disp: &[f64]) -> f64 {
        self.values(br.block, disp)[br.index]
    }

    /// `⟨∇λ, η⟩` of a branch (Hellmann–Feynman on the block) and the largest
    /// member gradient norm.
    fn slope(&self, br: &Branch, disp: &[f64], eta: &[f64]) -> (f64, f64) {
        let b = &self.blocks.blocks[br.block];
        let grads: Vec<Vec<f64>> =
            b.members.iter().map(|&i| self.op.symbol.gradient(&add(&self.momenta[i], disp))).collect();
        let gmax = grads.iter().map(|g| norm(g)).fold(0.0, f64::max);
        if b.members.len() == 1 {
            return (dot(&grads[0], eta), gmax);
        }
        let mut m = b.matrix.clone();
        for (a, &i) in b.members.iter().enumerate() {
            m[(a, a)] += linalg::c64::new(self.shift(i, disp), 0.0);
        }
        match linalg::eigen(&m) {
            Ok((_, v)) => {
                let s = (0..b.members.len()).map(|a| v[(a, br.index)].norm_sqr() * dot(&grads[a], eta)).sum();
                (s, gmax)
            }
            Err(_) => (f64::NAN, gmax),
        }
    }
}

/// Record of one step.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub eta: Vec<f64>,
    pub upsilon_target: f64,
    pub upsilon: f64,
    pub halvings: usize,
    pub r_hat: f64,
    pub t_range: (f64, f64),
    pub t_star: f64,
    pub excluded_length: f64,
    pub excluded: Vec<(f64, f64)>,
    pub free_gap: Option<(f64, f64)>,
    pub candidates: usize,
    /// Distance of the nearest block-model competitor to `τ` at the final
    /// point, in units of `ϵ υ_k h`; should stay above `1 − ϵ′`.
    pub safety_ratio: Option<f64>,
}

/// How a competitor near an antipodal point was handled.
#[derive(Debug, Clone, Serialize)]
pub struct AntipodalReport {
    pub location: Vec<f64>,
    pub nu: f64,
    pub form_gap: f64,
    pub candidates: usize,
    pub excluded_length: f64,
    /// `h^{−1} (υ₁ h)^{1/2}` per point, for comparison.
    pub sqrt_width: f64,
    pub mechanism: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolishReport {
    pub iterations: usize,
    pub residual: f64,
    pub displacement: f64,
}

/// Outcome of [`certify`].
#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub pass: bool,
    pub radius: f64,
    pub center_residual: f64,
    pub coverage_low_margin: f64,
    pub coverage_high_margin: f64,
    pub separation_margin: f64,
    pub required_separation: f64,
    pub nearest_competitor: Option<f64>,
    pub nearest_competitor_at: Option<Vec<f64>>,
    pub samples: usize,
    /// Largest distance from a ball point to the nearest sample (estimate).
    pub sample_spacing: f64,
    pub witness: Option<Vec<f64>>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeSummary {
    pub basis_size: usize,
    pub blocks: usize,
    pub largest_block: usize,
    pub hausdorff: f64,
    pub residual: f64,
}

/// Everything the search produces.
#[derive(Debug, Clone, Serialize)]
pub struct XiSearchResult {
    pub xi_star: Vec<f64>,
    pub gamma_star: Coord,
    pub xi_frac_star: Vec<f64>,
    pub band_index: usize,
    pub upsilon_achieved: f64,
    pub upsilon_formula: Option<f64>,
    pub upsilon_certified: f64,
    pub per_step: Vec<StepReport>,
    pub antipodal_report: Vec<AntipodalReport>,
    pub selection: XiStar,
    pub gauge: GaugeSummary,
    pub polish: Option<PolishReport>,
    pub certification: Option<CertificationReport>,
    pub failure: Option<String>,
    pub notices: Vec<String>,
    pub seed: u64,
}

impl XiSearchResult {
    pub fn certified(&self) -> bool {
        self.failure.is_none() && self.certification.as_ref().is_some_and(|c| c.pass)
    }
}

/// Derivative of the eigenvalue with eigenvector column `col` in the
/// quasimomentum, by Hellmann–Feynman.
fn band_gradient(op: &Operator, m: &FloquetMatrix, vecs: &linalg::CMat, col: usize) -> Vec<f64> {
    let d = op.dim();
    let basis = &m.basis;
    let n = basis.len();
    let h = op.h;
    let mut g = vec![0.0; d];
    for i in 0..n {
        let w = vecs[(i, col)].norm_sqr();
        if w == 0.0 {
            continue;
        }
        let p = op.momentum(&basis.points[i], &basis.xi_frac);
        let eff = EffectiveSymbol::new(op).gradient(&p);
        for k in 0..d {
            g[k] += w * h * eff[k];
        }
    }
    if op.eps != 0.0 && !op.perturbation.is_constant() {
        let step = 1e-4;
        for j in 0..n {
            for i in 0..n {
                if i == j || m.entries[(i, j)].norm() == 0.0 {
                    continue;
                }
                // entry (i, j) = ε b_{γi−γj}(ζ) with ζ the Weyl midpoint
                let gi = basis.points[i];
                let gj = basis.points[j];
                let theta = [gi[0] - gj[0], gi[1] - gj[1], gi[2] - gj[2]];
                let mid: Vec<f64> = {
                    let a = op.lattice.point(&gi);
                    let b = op.lattice.point(&gj);
                    (0..d).map(|k| h * (0.5 * (a[k] + b[k]) + basis.xi_frac[k])).collect()
                };
                let w = vecs[(i, col)].conj() * vecs[(j, col)];
                for k in 0..d {
                    let mut x = mid.clone();
                    x[k] += step;
                    let a = op.perturbation.coefficient(&theta, &x);
                    x[k] -= 2.0 * step;
                    let b = op.perturbation.coefficient(&theta, &x);
                    let db = (a - b) / (2.0 * step) * (op.eps * h);
                    g[k] += (w * db).re;
                }
            }
        }
    }
    g
}

const POLISH_TOL: f64 = 1e-10;

/// Newton iteration on the full Floquet matrix for `λ = τ` along the band
/// gradient; returns the quasimomentum, local index and report.
fn polish(op: &Operator, basis: &PlaneWaveBasis, xi_frac: &[f64], tau: f64) -> Result<(Vec<f64>, usize, PolishReport)> {
    let mut xi = xi_frac.to_vec();
    let start = xi.clone();
    for it in 0..30 {
        let m = op.assemble(&basis.rebase(op, &xi));
        let (vals, vecs) = linalg::eigen(&m.entries)?;
        let (idx, lam) = vals
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
            .ok_or(Error::EmptyBasis)?;
        let r = lam - tau;
        if r.abs() <= POLISH_TOL {
            let disp = norm(&xi.iter().zip(&start).map(|(a, b)| a - b).collect::<Vec<_>>());
            return Ok((xi, idx, PolishReport { iterations: it, residual: r.abs(), displacement: disp }));
        }
        let g = band_gradient(op, &m, &vecs, idx);
        let g2 = dot(&g, &g);
        if g2 == 0.0 {
            break;
        }
        for k in 0..xi.len() {
            xi[k] -= r * g[k] / g2;
        }
    }
    Err(Error::NoConvergence("band polish did not reach |λ − τ| ≤ 1e−10".into()))
}

/// Samples the ball `B(center, radius)` in quasimomentum (rings, the
/// gradient diameter and seeded random points), solves the full Floquet
/// problem at each point and checks coverage of `[τ − υh, τ + υh]` by the
/// band of local index `n` along the diameter and separation
/// `|λ_m − τ| ≥ ϵυh` of all other eigenvalues.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    op: &Operator,
    basis: &PlaneWaveBasis,
    center: &[f64],
    n: usize,
    upsilon: f64,
    front: f64,
    tau: f64,
    config: &XiSearchConfig,
) -> Result<CertificationReport> {
    let d = op.dim();
    let h = op.h;
    let solve = |xi: &[f64]| -> Result<(Vec<f64>, linalg::CMat, FloquetMatrix)> {
        let m = op.assemble(&basis.rebase(op, xi));
        let (v, w) = linalg::eigen(&m.entries)?;
        Ok((v, w, m))
    };
    let (vals0, vecs0, m0) = solve(center)?;
    let center_residual = (vals0[n] - tau).abs();
    let need = front * upsilon * h;
    let mut report = CertificationReport {
        pass: false,
        radius: upsilon,
        center_residual,
        coverage_low_margin: 0.0,
        coverage_high_margin: 0.0,
        separation_margin: f64::INFINITY,
        required_separation: need,
        nearest_competitor: None,
        nearest_competitor_at: None,
        samples: 1,
        sample_spacing: 0.0,
        witness: None,
        reason: None,
    };
    let check_sep = |vals: &[f64], xi: &[f64], r: &mut CertificationReport| {
        for (m, v) in vals.iter().enumerate() {
            if m == n {
                continue;
            }
            let dist = (v - tau).abs();
            if r.nearest_competitor.is_none_or(|c| dist < (c - tau).abs()) {
                r.nearest_competitor = Some(*v);
                r.nearest_competitor_at = Some(xi.to_vec());
            }
            let margin = dist - need;
            if margin < r.separation_margin {
                r.separation_margin = margin;
                if margin < 0.0 && r.witness.is_none() {
                    r.witness = Some(xi.to_vec());
                }
            }
        }
    };
    check_sep(&vals0, center, &mut report);
    if upsilon == 0.0 {
        report.pass = center_residual <= 1e-9 && report.separation_margin >= 0.0;
        if !report.pass {
            report.reason = Some("center condition".into());
        }
        return Ok(report);
    }
    let g = band_gradient(op, &m0, &vecs0, n);
    let gn = norm(&g);
    let ghat: Vec<f64> = if gn > 0.0 { g.iter().map(|v| v / gn).collect() } else { vec![0.0; d] };
    let mut points: Vec<Vec<f64>> = Vec::new();
    // diameter first; its end values decide coverage
    let nd = config.diameter_points.max(2);
    let mut diameter = Vec::with_capacity(nd);
    for k in 0..nd {
        let s = -upsilon + 2.0 * upsilon * k as f64 / (nd - 1) as f64;
        diameter.push(center.iter().zip(&ghat).map(|(c, u)| c + s * u).collect::<Vec<f64>>());
    }
    let dirs = crate::symbols::levelset::directions(d, config.certify_directions.max(1));
    for r in 1..=config.certify_rings {
        let rad = upsilon * r as f64 / config.certify_rings as f64;
        for u in &dirs {
            points.push(center.iter().zip(u).map(|(c, v)| c + rad * v).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba11);
    for _ in 0..config.certify_random {
        let u = random_direction(&mut rng, d);
        let rad = upsilon * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
        points.push(center.iter().zip(&u).map(|(c, v)| c + rad * v).collect());
    }
    // eigensolves in parallel, margins merged in sample order
    let spectra = |pts: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        pts.par_iter().map(|xi| linalg::eigenvalues(&op.assemble(&basis.rebase(op, xi)).entries)).collect()
    };
    let diameter_spectra = spectra(&diameter)?;
    let mut diameter_values = Vec::with_capacity(nd);
    for (xi, vals) in diameter.iter().zip(&diameter_spectra) {
        diameter_values.push(vals[n]);
        check_sep(vals, xi, &mut report);
    }
    for (xi, vals) in points.iter().zip(spectra(&points)?) {
        check_sep(&vals, xi, &mut report);
    }
    report.samples = 1 + diameter.len() + points.len();
    let ring_gap = upsilon / config.certify_rings.max(1) as f64;
    let arc = 2.0 * std::f64::consts::PI * upsilon / config.certify_directions.max(1) as f64;
    report.sample_spacing = 0.5 * ring_gap.max(arc);
    let lo_end = diameter_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_end = diameter_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.coverage_low_margin = (tau - upsilon * h) - lo_end;
    report.coverage_high_margin = hi_end - (tau + upsilon * h);
    let covered = report.coverage_low_margin >= 0.0 && report.coverage_high_margin >= 0.0;
    let separated = report.separation_margin >= 0.0;
    report.pass = covered && separated && center_residual <= 1e-9;
    if !report.pass {
        report.reason = Some(
            match (center_residual <= 1e-9, covered, separated) {
                (false, _, _) => "center residual above 1e−9",
                (_, false, true) => "band does not cover [τ − υh, τ + υh] along the diameter",
                (_, true, false) => "competitor closer than ϵυh",
                _ => "coverage and separation both fail",
            }
            .into(),
        );
        if !covered && report.witness.is_none() {
            report.witness = Some(if report.coverage_low_margin < 0.0 { diameter[0].clone() } else { diameter[nd - 1].clone() });
        }
    }
    Ok(report)
}

/// Runs the full search: base point, gauge model, `d − 1` steps, polish
/// and certification.
pub fn run_steps(op: &Operator, config: &XiSearchConfig) -> Result<XiSearchResult> {
    let d = op.dim();
    if d < 2 {
        return Err(Error::arg("dim", "the search needs d ≥ 2"));
    }
    let h = op.h;
    let tau = config.tau;
    let eff = EffectiveSymbol::new(op);
    let xs = select_xistar(op, config)?;
    let upsilon_formula = if op.eps > 0.0 {
        compute_upsilon(d, h, op.eps, config.sigma, config.formula, config.front).ok()
    } else {
        None
    };
    // gauge model at the base quasimomentum
    let xi_frac0 = xs.xi_frac_star.clone();
    let part = build_partition(&op.symbol, &op.lattice, &config.resonance, h, op.eps, &xi_frac0, tau)?;
    let w = part.window;
    let window = op.basis_window(tau - w, tau + w, &config.window);
    let basis = op.basis(&xi_frac0, window)?;
    let matrix = op.assemble(&basis);
    let shell = 2.0 * config.shell_c * h;
    // outside Ω_τ the model keeps the raw diagonal, so compare inside only
    let outcome = gauge::run(op, &matrix, &part, &config.gauge, shell.min(w))?;
    let mut notices = part.notices.clone();
    let reach = 1.2 * h * op.max_gradient(tau - w, tau + w) * config.eps0;
    if reach > w {
        notices.push(format!(
            "window {w:.3e} is narrower than the step reach {reach:.3e}; competitors from outside Ω_τ are left to certification"
        ));
    }
    let model_err = outcome.report.hausdorff;
    let blocks = &outcome.blocks;
    let model = BlockModel::new(op, &basis, blocks);
    let istar = basis
        .index_of(&xs.gamma_star)
        .ok_or_else(|| Error::Certification(format!("base label {:?} outside the basis", xs.gamma_star)))?;
    let bstar = blocks
        .block_of(istar)
        .ok_or_else(|| Error::Certification("base label outside the window".into()))?;
    let tracked_index = blocks.blocks[bstar]
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let branches: Vec<Branch> = blocks
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, blk)| (0..blk.members.len()).map(move |i| Branch { block: b, index: i }))
        .filter(|br| !(br.block == bstar && br.index == tracked_index))
        .collect();
    let neighbour_radius = config.resonance.theta_radius(h);
    let anti_radius = h.powf(1.0 - config.resonance.kappa);
    let is_neighbour = |i: usize| {
        let g = basis.points[i];
        let diff = [g[0] - xs.gamma_star[0], g[1] - xs.gamma_star[1], g[2] - xs.gamma_star[2]];
        op.lattice.norm(&diff) <= neighbour_radius
    };
    let near_antipode = |i: usize, disp: &[f64]| -> Option<usize> {
        let p = add(&model.momenta[i], disp);
        xs.antipodal.iter().position(|a| norm(&a.location.iter().zip(&p).map(|(x, y)| x - y).collect::<Vec<_>>()) <= anti_radius)
    };
    let lip_b = op.eps
        * op.perturbation.support_radius(&op.lattice)
        * op.perturbation.max_abs_on_ball(op.symbol.coercivity().radius_for(window.e_max));

    let normal0 = eff.gradient(&xs.xi_star);
    let frame = tangent_frame(&op.symbol, &xs.xi_star, &normal0, &xs.antipodal)?;
    let mut anti_reports: Vec<AntipodalReport> = xs
        .antipodal
        .iter()
        .map(|a| AntipodalReport {
            location: a.location.clone(),
            nu: a.nu,
            form_gap: a.form_gap,
            candidates: 0,
            excluded_length: 0.0,
            sqrt_width: 0.0,
            mechanism: "second-order separation by the form gap".into(),
        })
        .collect();
    let mut disp_total = vec![0.0; d];
    let mut cur = xs.xi_star.clone();
    let mut upsilon_prev = 1.0;
    let mut steps = Vec::new();
    let mut failure = None;
    let mut etas: Vec<Vec<f64>> = Vec::new();
    for k in 1..d {
        // direction: frame vector projected to the current tangent space
        let nrm = eff.gradient(&cur);
        let nn = norm(&nrm);
        let mut eta = frame[k - 1].clone();
        let mut basis_vecs: Vec<Vec<f64>> = vec![nrm.iter().map(|v| v / nn).collect()];
        basis_vecs.extend(etas.iter().cloned());
        for _ in 0..2 {
            for b in &basis_vecs {
                let c = dot(&eta, b);
                for j in 0..d {
                    eta[j] -= c * b[j];
                }
            }
        }
        let en = norm(&eta);
        eta.iter_mut().for_each(|v| *v /= en);
        let t_half = if k == 1 { config.eps0 } else { config.eps_prime * upsilon_prev };
        let n = config.t_points.max(3);
        let grid: Vec<f64> = (0..n).map(|i| -t_half + 2.0 * t_half * i as f64 / (n - 1) as f64).collect();
        let base_disp = disp_total.clone();
        let base_point = cur.clone();
        let curve = |t: f64| -> Option<Vec<f64>> {
            track_curve(&eff, &base_point, &eta, h * t).ok().map(|dx| add(&base_disp, &dx))
        };
        let disps: Vec<Option<Vec<f64>>> = grid.iter().map(|t| curve(*t)).collect();
        // R̂ over unperturbed labels in the shell, skipping neighbours of γ*
        // and almost-antipodal labels
        let mut r_hat = 0.0;
        let mut anti_labels = vec![0usize; xs.antipodal.len()];
        for i in 0..basis.len() {
            if i == istar || is_neighbour(i) {
                continue;
            }
            let p = add(&model.momenta[i], &base_disp);
            if (op.symbol.value(&p) - tau).abs() > shell {
                continue;
            }
            if let Some(a) = near_antipode(i, &base_disp) {
                anti_labels[a] += 1;
                continue;
            }
            let slope = dot(&op.symbol.gradient(&p), &eta).abs();
            if slope > 0.0 {
                r_hat += 1.0 / slope;
            }
        }
        let r_eff = r_hat.max(1.0);
        let upsilon_target = config.front * upsilon_prev / r_eff;
        let half_width = |ups: f64, gmax: f64| config.front * ups * h + (h * gmax + lip_b) * ups + model_err;
        let travel = 1.2 * h * t_half;
        let mut cands: Vec<(Branch, f64, Option<usize>)> = Vec::new();
        for br in &branches {
            let v0 = model.value(br, &base_disp);
            let (_, gmax) = model.slope(br, &base_disp, &eta);
            if (v0 - tau).abs() <= 1.2 * gmax * travel + half_width(upsilon_target, gmax) {
                let anti = blocks.blocks[br.block].members.iter().find_map(|&i| near_antipode(i, &base_disp));
                cands.push((br.clone(), gmax, anti));
            }
        }
        // block eigenvalues on the grid, once per block
        let mut needed: Vec<usize> = cands.iter().map(|c| c.0.block).collect();
        needed.sort_unstable();
        needed.dedup();
        let cache: std::collections::HashMap<usize, Vec<Vec<f64>>> = needed
            .par_iter()
            .map(|&b| {
                let rows = disps
                    .iter()
                    .map(|dp| dp.as_ref().map_or_else(|| vec![tau; model.blocks.blocks[b].members.len()], |dp| model.values(b, dp)))
                    .collect();
                (b, rows)
            })
            .collect();
        let mut accepted = None;
        for halving in 0..=config.max_halvings {
            let ups = upsilon_target / 2f64.powi(halving as i32);
            let curves: Vec<CandidateCurve> = cands
                .iter()
                .map(|(br, gmax, _)| {
                    let values = cache[&br.block].iter().map(|row| row[br.index]).collect();
                    let br = br.clone();
                    let model = &model;
                    let curve = &curve;
                    CandidateCurve {
                        values,
                        eval: Box::new(move |t| curve(t).map_or(tau, |dp| model.value(&br, &dp))),
                        half_width: half_width(ups, *gmax),
                        r_weight: None,
                    }
                })
                .collect();
            let mut ex = bad_intervals(&grid, &curves, tau);
            // points where the curve could not be followed are excluded too
            for (i, dp) in disps.iter().enumerate() {
                if dp.is_none() {
                    ex.intervals.push((grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]));
                }
            }
            if disps.iter().any(|d| d.is_none()) {
                ex.intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::new();
                for (a, b) in ex.intervals.drain(..) {
                    match merged.last_mut() {
                        Some(last) if a <= last.1 => last.1 = last.1.max(b),
                        _ => merged.push((a, b)),
                    }
                }
                ex.total = merged.iter().map(|(a, b)| b - a).sum();
                ex.intervals = merged;
                ex.free_gap = largest_free_gap(&ex.intervals, grid[0], grid[n - 1]);
            }
            ex.r_hat = r_hat;
            if k == 1 {
                for (ai, rep) in anti_reports.iter_mut().enumerate() {
                    let near: Vec<&CandidateCurve> =
                        curves.iter().zip(&cands).filter(|(_, c)| c.2 == Some(ai)).map(|(c, _)| c).collect();
                    let len = if near.is_empty() { 0.0 } else { exclusion_of(&grid, &near, tau).total };
                    rep.candidates = anti_labels[ai];
                    rep.excluded_length = len;
                    rep.sqrt_width = (ups * h).sqrt() / h;
                }
            }
            if let Some(gap) = ex.free_gap {
                accepted = Some((ups, halving, ex, gap));
                break;
            }
            log::info!("step {k}: no free parameter at υ = {ups:.3e}; halving");
        }
        let Some((ups, halvings, ex, gap)) = accepted else {
            failure = Some(format!("step {k}: excluded set covers the parameter range after {} halvings (R̂ = {r_hat:.3})", config.max_halvings));
            steps.push(StepReport {
                step: k,
                eta: eta.clone(),
                upsilon_target,
                upsilon: 0.0,
                halvings: config.max_halvings,
                r_hat,
                t_range: (-t_half, t_half),
                t_star: 0.0,
                excluded_length: 2.0 * t_half,
                excluded: vec![(-t_half, t_half)],
                free_gap: None,
                candidates: cands.len(),
                safety_ratio: None,
            });
            break;
        };
        let t_star = 0.5 * (gap.0 + gap.1);
        let dx = track_curve(&eff, &cur, &eta, h * t_star)?;
        cur = add(&cur, &dx);
        disp_total = add(&disp_total, &dx);
        steps.push(StepReport {
            step: k,
            eta: eta.clone(),
            upsilon_target,
            upsilon: ups,
            halvings,
            r_hat,
            t_range: (-t_half, t_half),
            t_star,
            excluded_length: ex.total,
            excluded: ex.intervals,
            free_gap: Some(gap),
            candidates: cands.len(),
            safety_ratio: None,
        });
        etas.push(eta);
        upsilon_prev = ups;
    }
    if failure.is_none() {
        let nearest = (0..blocks.blocks.len())
            .into_par_iter()
            .map(|b| {
                model
                    .values(b, &disp_total)
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| !(b == bstar && *i == tracked_index))
                    .map(|(_, v)| (v - tau).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| f64::INFINITY, f64::min);
        for s in &mut steps {
            s.safety_ratio = Some(nearest / (config.front * s.upsilon * h));
        }
    }
    let largest = blocks.blocks.iter().map(|b| b.members.len()).max().unwrap_or(0);
    let gauge_summary = GaugeSummary {
        basis_size: basis.len(),
        blocks: blocks.blocks.len(),
        largest_block: largest,
        hausdorff: model_err,
        residual: outcome.report.residual_history.last().copied().unwrap_or(0.0),
    };
    let mut result = XiSearchResult {
        xi_star: cur.clone(),
        gamma_star: xs.gamma_star,
        xi_frac_star: xi_frac0.clone(),
        band_index: 0,
        upsilon_achieved: if failure.is_some() { 0.0 } else { upsilon_prev },
        upsilon_formula,
        upsilon_certified: 0.0,
        per_step: steps,
        antipodal_report: anti_reports,
        selection: xs,
        gauge: gauge_summary,
        polish: None,
        certification: None,
        failure,
        notices,
        seed: config.seed,
    };
    if result.failure.is_some() {
        return Ok(result);
    }
    // polish and certify on the full matrix
    let xi_frac: Vec<f64> = xi_frac0.iter().zip(&disp_total).map(|(a, b)| a + b / h).collect();
    let cert_window = op.basis_window(tau - w, tau + w, &config.window);
    let cbasis = op.basis(&xi_frac, cert_window)?;
    let (xi_final, n_local, pol) = polish(op, &cbasis, &xi_frac, tau)?;
    let (shift, folded) = op.lattice.fold_to_fundamental(&xi_final);
    result.gamma_star = [
        result.gamma_star[0] - shift[0],
        result.gamma_star[1] - shift[1],
        result.gamma_star[2] - shift[2],
    ];
    result.xi_frac_star = folded;
    result.xi_star = op.momentum(&result.gamma_star, &result.xi_frac_star);
    result.band_index = n_local + cbasis.below;
    result.polish = Some(pol);
    let radius = result.upsilon_achieved * config.upsilon_scale;
    result.upsilon_certified = radius;
    let cert = certify(op, &cbasis, &xi_final, n_local, radius, config.front, tau, config)?;
    if !cert.pass {
        result.failure = Some(format!("certification failed: {}", cert.reason.clone().unwrap_or_default()));
    }
    result.certification = Some(cert);
    Ok(result)
}

fn largest_free_gap(intervals: &[(f64, f64)], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut cursor = lo;
    let mut consider = |a: f64, b: f64| {
        if b > a && best.is_none_or(|(x, y)| b - a > y - x) {
            best = Some((a, b));
        }
    };
    for (a, b) in intervals {
        consider(cursor, a.min(hi));
        cursor = cursor.max(*b);
    }
    consider(cursor, hi);
    best
}

/// Per-step excluded intervals as CSV rows `step,t_lo,t_hi`.
pub fn write_intervals_csv(result: &XiSearchResult, header: &str, mut w: impl Write) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "step,t_lo,t_hi")?;
    for s in &result.per_step {
        for (a, b) in &s.excluded {
            writeln!(w, "{},{a:.12e},{b:.12e}", s.step)?;
        }
    }
    Ok(())
}
