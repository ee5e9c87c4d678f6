use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::SymbolModel;
use crate::error::{Error, Result};

/// Reference point from which one component of a level set is star-shaped;
/// the component is reached by the `rank`-th root along each ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub center: Vec<f64>,
    pub rank: usize,
}

const RAY_SCAN: usize = 200;

/// Point where the ray `center + s·u` (`s ≥ 0`) meets `{A0 = τ}` for the
/// `rank`-th time.
pub(crate) fn ray_root(s: &SymbolModel, tau: f64, chart: &Chart, u: &[f64]) -> Result<Vec<f64>> {
    let at = |t: f64| -> Vec<f64> { chart.center.iter().zip(u).map(|(c, v)| c + t * v).collect() };
    let f = |t: f64| s.value(&at(t)) - tau;
    let c_norm = chart.center.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s_max = s.coercivity().radius_for(tau) + c_norm + 1.0;
    let mut rank = chart.rank;
    let f0 = f(0.0);
    if f0.abs() <= 1e-14 * (1.0 + tau.abs()) {
        if rank == 0 {
            return Ok(at(0.0));
        }
        rank -= 1;
    }
    let mut prev_t = 0.0;
    let mut prev_f = f0;
    for k in 1..=RAY_SCAN {
        let t = s_max * k as f64 / RAY_SCAN as f64;
        let ft = f(t);
        if ft == 0.0 || (prev_f != 0.0 && prev_f.signum() != ft.signum()) {
            if rank == 0 {
                let (mut a, mut b, mut fa) = (prev_t, t, prev_f);
                if ft == 0.0 {
                    return Ok(at(t));
                }
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    let fm = f(m);
                    if fm == 0.0 {
                        return Ok(at(m));
                    }
                    if fm.signum() == fa.signum() {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                return Ok(at(0.5 * (a + b)));
            }
            rank -= 1;
        }
        prev_t = t;
        prev_f = ft;
    }
    Err(Error::NoConvergence(format!(
        "ray from {:?} along {u:?} has no level-{tau} crossing of rank {}",
        chart.center, chart.rank
    )))
}

/// Deterministic, roughly uniform unit directions in `ℝᵈ`.
pub(crate) fn directions(dim: usize, n: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci sphere
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
    }
}

/// Samples of a level set `Σ_τ`, grouped by connected component.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub tau: f64,
    pub charts: Vec<Chart>,
    pub components: Vec<Vec<Vec<f64>>>,
}

impl LevelSet {
    /// Ray-casts `per_component` directions from each chart center.
    pub fn sample(s: &SymbolModel, tau: f64, per_component: usize) -> Result<Self> {
        if per_component == 0 {
            return Err(Error::arg("sample_count", "must be at least 1"));
        }
        let charts = s.charts(tau)?;
        let dirs = directions(s.dim(), per_component);
        let mut components = Vec::with_capacity(charts.len());
        for chart in &charts {
            let pts = dirs.iter().map(|u| ray_root(s, tau, chart, u)).collect::<Result<Vec<_>>>()?;
            components.push(pts);
        }
        Ok(Self { tau, charts, components })
    }

    pub fn points(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.components.iter().flatten()
    }
}

/// Default sampling density per component: 10³ in two dimensions, 10⁴ in
/// three.
pub fn default_samples(dim: usize) -> usize {
    match dim {
        1 => 2,
        2 => 1000,
        _ => 10_000,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Orthonormal basis of the complement of `g`, deterministic.
pub(crate) fn tangent_basis(g: &[f64]) -> Vec<Vec<f64>> {
    let d = g.len();
    let n = norm(g);
    let mut q: Vec<DVector<f64>> = vec![DVector::from_column_slice(g) / n];
    // add coordinate axes in order of least overlap with g
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|a, b| g[*a].abs().total_cmp(&g[*b].abs()));
    for j in axes {
        if q.len() == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[j] = 1.0;
        for _ in 0..2 {
            for b in &q {
                v -= b * b.dot(&v);
            }
        }
        let vn = v.norm();
        if vn > 1e-8 {
            q.push(v / vn);
        }
    }
    q.into_iter().skip(1).map(|v| v.iter().copied().collect()).collect()
}

/// Outcome of a pointwise hypothesis check over sampled level sets.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub pass: bool,
    pub margin: f64,
    /// Sample where the margin is attained.
    pub witness: Vec<f64>,
}

/// Non-criticality of the energy: `min |A0 − τ| + |∇A0|` over samples of
/// `Σ_τ`.
pub fn check_microhyperbolicity(
    s: &SymbolModel,
    tau: f64,
    sample_count: usize,
    eps0: f64,
) -> Result<HypothesisCheck> {
    let set = LevelSet::sample(s, tau, sample_count)?;
    let mut margin = f64::INFINITY;
    let mut witness = Vec::new();
    for p in set.points() {
        let v = (s.value(p) - tau).abs() + norm(&s.gradient(p));
        if v < margin {
            margin = v;
            witness = p.clone();
        }
    }
    Ok(HypothesisCheck { pass: margin >= eps0, margin, witness })
}

/// Outcome of the tangential Hessian check.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityCheck {
    pub pass: bool,
    /// Smallest definite-branch value over all samples and unit tangent
    /// directions (negative when a component has mixed signature).
    pub margin: f64,
    /// `+1` or `−1` per component; `0` if no sign could be fixed.
    pub signs: Vec<i8>,
    /// Point and tangent direction realizing a sign violation or the margin.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Tangential Hessian eigen-pairs at `p` (ascending).
fn tangential_hessian(s: &SymbolModel, p: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let g = s.gradient(p);
    let t = tangent_basis(&g);
    let k = t.len();
    let h = s.hessian(p);
    let e = DMatrix::from_fn(s.dim(), k, |i, j| t[j][i]);
    let m = e.transpose() * h * &e;
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let vals = idx.iter().map(|i| eig.eigenvalues[*i]).collect();
    let vecs = idx
        .iter()
        .map(|i| (&e * eig.eigenvectors.column(*i)).iter().copied().collect())
        .collect();
    (vals, vecs)
}

/// Strong convexity of each component of `Σ_τ`: the Hessian restricted to
/// tangent spaces is definite with one sign per component.
pub fn check_strong_convexity(
    s: &SymbolModel,
    tau: f64,
    sample_count: usize,
    eps0: f64,
) -> Result<ConvexityCheck> {
    let set = LevelSet::sample(s, tau, sample_count)?;
    if s.dim() == 1 {
        let signs = vec![1; set.components.len()];
        return Ok(ConvexityCheck { pass: true, margin: f64::INFINITY, signs, witness: None });
    }
    let mut margin = f64::INFINITY;
    let mut witness = None;
    let mut violation = false;
    let mut signs = Vec::new();
    for comp in &set.components {
        let data: Vec<_> = comp.iter().map(|p| (p, tangential_hessian(s, p))).collect();
        // sign fixed by the majority of the strictly definite samples
        let (mut pos, mut neg) = (0usize, 0usize);
        for (_, (v, _)) in &data {
            let (lo, hi) = (v[0], v[v.len() - 1]);
            if lo > 0.0 {
                pos += 1;
            } else if hi < 0.0 {
                neg += 1;
            }
        }
        let sign: i8 = if pos == 0 && neg == 0 { 0 } else if pos >= neg { 1 } else { -1 };
        signs.push(sign);
        for (p, (v, vecs)) in &data {
            let (value, dir) = match sign {
                -1 => (-v[v.len() - 1], &vecs[v.len() - 1]),
                _ => (v[0], &vecs[0]),
            };
            let mixed = v[0] * v[v.len() - 1] < 0.0 || (sign == 1 && v[0] < 0.0) || (sign == -1 && v[v.len() - 1] > 0.0);
            if mixed && !violation {
                violation = true;
                witness = Some(((*p).clone(), dir.clone()));
            }
            if value < margin {
                margin = value;
                if !violation {
                    witness = Some(((*p).clone(), dir.clone()));
                }
            }
        }
    }
    let pass = !violation && signs.iter().all(|v| *v != 0) && margin >= eps0;
    Ok(ConvexityCheck { pass, margin, signs, witness })
}

/// Hessian at `0` of the local graph `ζ_k = f(ζ_k̂)` of the level set of
/// `A0` through `p`, by implicit differentiation. Rows and columns run over
/// the coordinates other than `k`, in increasing order.
pub fn graph_hessian(s: &SymbolModel, p: &[f64], k: usize) -> Result<DMatrix<f64>> {
    let d = s.dim();
    let g = s.gradient(p);
    let h = s.hessian(p);
    let gk = g[k];
    if gk.abs() <= 1e-10 * (1.0 + norm(&g)) {
        return Err(Error::GraphCoordinate { k, value: gk.abs() });
    }
    let others: Vec<usize> = (0..d).filter(|j| *j != k).collect();
    let f1: Vec<f64> = others.iter().map(|i| -g[*i] / gk).collect();
    Ok(DMatrix::from_fn(d - 1, d - 1, |a, b| {
        let (i, j) = (others[a], others[b]);
        -(h[(i, j)] + h[(i, k)] * f1[b] + h[(j, k)] * f1[a] + h[(k, k)] * f1[a] * f1[b]) / gk
    }))
}

/// Graph coordinate used in the separation test: the direction of the
/// largest gradient component.
pub fn graph_coordinate(g: &[f64]) -> usize {
    let mut k = 0;
    for j in 1..g.len() {
        if g[j].abs() > g[k].abs() {
            k = j;
        }
    }
    k
}

/// Outcome of the second-order separation test at an antipodal pair.
#[derive(Debug, Clone, Serialize)]
pub struct FormGapCheck {
    pub pass: bool,
    pub form_gap: f64,
    /// Graph coordinate used.
    pub k: usize,
}

/// Compares the level set near `ξ` with its translate through the
/// antipodal point `η`: largest entry of the difference of graph Hessians.
pub fn check_condition_1_14(
    s: &SymbolModel,
    xi: &[f64],
    eta: &[f64],
    tolerance: f64,
) -> Result<FormGapCheck> {
    let k = graph_coordinate(&s.gradient(xi));
    let f = graph_hessian(s, xi, k)?;
    let g = graph_hessian(s, eta, k)?;
    let form_gap = if f.is_empty() { 0.0 } else { (f - g).abs().max() };
    Ok(FormGapCheck { pass: form_gap >= tolerance, form_gap, k })
}

/// A point `η ≠ ξ` of `Σ_τ` with `∇A0(η) = ν ∇A0(ξ)`.
#[derive(Debug, Clone, Serialize)]
pub struct AntipodalPoint {
    pub location: Vec<f64>,
    pub nu: f64,
    pub form_gap: f64,
    /// Index of the level-set component containing the point.
    pub component: usize,
}

/// Solves `∇A0(η) = μ n̂`, `A0(η) = τ` by Newton's method from `seed`.
fn newton_parallel(s: &SymbolModel, tau: f64, nhat: &[f64], seed: &[f64]) -> Option<(Vec<f64>, f64)> {
    let d = s.dim();
    let mut eta = seed.to_vec();
    let mut mu = s.gradient(&eta).iter().zip(nhat).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..60 {
        let g = s.gradient(&eta);
        let mut r = DVector::zeros(d + 1);
        for i in 0..d {
            r[i] = g[i] - mu * nhat[i];
        }
        r[d] = s.value(&eta) - tau;
        let scale = 1.0 + norm(&g);
        if r.norm() <= 1e-14 * scale {
            return Some((eta, mu));
        }
        let h = s.hessian(&eta);
        let mut j = DMatrix::zeros(d + 1, d + 1);
        for a in 0..d {
            for b in 0..d {
                j[(a, b)] = h[(a, b)];
            }
            j[(a, d)] = -nhat[a];
            j[(d, a)] = g[a];
        }
        let step = j.lu().solve(&r)?;
        for i in 0..d {
            eta[i] -= step[i];
        }
        mu -= step[d];
        if step.norm() <= 1e-15 * (1.0 + norm(&eta)) {
            break;
        }
    }
    let g = s.gradient(&eta);
    let res = g.iter().zip(nhat).map(|(a, b)| (a - mu * b).powi(2)).sum::<f64>().sqrt();
    let ok = (s.value(&eta) - tau).abs() <= 1e-11 * (1.0 + tau.abs()) && res <= 1e-9 * (1.0 + norm(&g));
    ok.then_some((eta, mu))
}

/// All antipodal points of `ξ ∈ Σ_τ`. On each convex component the Gauss
/// map is a bijection, so every component carries exactly one point with
/// normal `+n̂` and one with `−n̂`; these are seeded from the extreme
/// samples and refined by Newton's method.
pub fn antipodal_points(
    s: &SymbolModel,
    tau: f64,
    xi: &[f64],
    sample_count: usize,
    form_tolerance: f64,
) -> Result<Vec<AntipodalPoint>> {
    if (s.value(xi) - tau).abs() > 1e-10 * (1.0 + tau.abs()) {
        return Err(Error::arg("xi", format!("point is not on the level set (A0 − τ = {:e})", s.value(xi) - tau)));
    }
    let gxi = s.gradient(xi);
    let gn = norm(&gxi);
    if gn == 0.0 {
        return Err(Error::arg("xi", "gradient vanishes; energy is critical"));
    }
    let nhat: Vec<f64> = gxi.iter().map(|v| v / gn).collect();
    let set = LevelSet::sample(s, tau, sample_count)?;
    let mut out: Vec<AntipodalPoint> = Vec::new();
    let same = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() <= 1e-8 * (1.0 + norm(a))
    };
    for (ci, comp) in set.components.iter().enumerate() {
        let dots: Vec<f64> = comp
            .iter()
            .map(|p| {
                let g = s.gradient(p);
                let n = norm(&g).max(f64::MIN_POSITIVE);
                g.iter().zip(&nhat).map(|(a, b)| a * b).sum::<f64>() / n
            })
            .collect();
        let mut seeds = Vec::new();
        if s.dim() == 1 {
            seeds.extend(0..comp.len());
        } else {
            let imax = (0..dots.len()).max_by(|a, b| dots[*a].total_cmp(&dots[*b])).unwrap_or(0);
            let imin = (0..dots.len()).min_by(|a, b| dots[*a].total_cmp(&dots[*b])).unwrap_or(0);
            seeds.push(imax);
            seeds.push(imin);
        }
        for i in seeds {
            let Some((eta, mu)) = newton_parallel(s, tau, &nhat, &comp[i]) else {
                return Err(Error::NoConvergence(format!(
                    "antipodal search on component {ci} from seed {:?} (direction {:+})",
                    comp[i],
                    dots[i].signum()
                )));
            };
            if same(&eta, xi) || out.iter().any(|a| same(&a.location, &eta)) {
                continue;
            }
            let gap = check_condition_1_14(s, xi, &eta, form_tolerance)?;
            out.push(AntipodalPoint { location: eta, nu: mu / gn, form_gap: gap.form_gap, component: ci });
        }
    }
    Ok(out)
}
