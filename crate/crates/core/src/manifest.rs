//! Experiment manifests: TOML files describing the lattice, symbol,
//! perturbation, parameters and per-command settings.
//!
//! The content hash is taken over a canonical form (keys sorted, compact
//! JSON), so reformatting or reordering a manifest does not change it.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::floquet::{Operator, WindowConfig};
use crate::gauge::GaugeConfig;
use crate::lattice::LatticePair;
use crate::resonance::ResonanceConfig;
use crate::symbols::{parse_coefficient, Perturbation, SymbolModel};
use crate::xisearch::{UpsilonFormula, XiSearchConfig};

fn manifest_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Manifest { field: field.to_string(), reason: reason.into() }
}

/// `ε = c · h^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsRule {
    pub c: f64,
    pub p: f64,
}

impl EpsRule {
    pub fn eval(&self, h: f64) -> f64 {
        if self.p == 0.0 {
            self.c
        } else {
            self.c * h.powf(self.p)
        }
    }
}

fn parse_number(s: &str, what: &'static str) -> Result<f64> {
    let t = s.trim();
    let v = match t {
        "pi" => std::f64::consts::PI,
        _ => t.parse::<f64>().map_err(|_| Error::Parse { what, reason: format!("not a number: `{t}`") })?,
    };
    if !v.is_finite() {
        return Err(Error::Parse { what, reason: format!("not finite: `{t}`") });
    }
    Ok(v)
}

/// Parses `c*h^p`, `h^p`, `c*h`, `h` or a plain number `c`.
pub fn parse_eps_rule(src: &str) -> Result<EpsRule> {
    let what = "eps rule";
    let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(Error::Parse { what, reason: "empty".into() });
    }
    let (coef, rest) = match s.find('h') {
        None => return Ok(EpsRule { c: parse_number(&s, what)?, p: 0.0 }),
        Some(0) => (1.0, &s[..]),
        Some(i) => {
            let head = s[..i].strip_suffix('*').ok_or_else(|| Error::Parse {
                what,
                reason: "expected `*` between coefficient and h".into(),
            })?;
            (parse_number(head, what)?, &s[i..])
        }
    };
    let p = match rest {
        "h" => 1.0,
        r => {
            let e = r.strip_prefix("h^").ok_or_else(|| Error::Parse { what, reason: format!("unexpected `{r}`") })?;
            let e = e.strip_prefix('(').and_then(|x| x.strip_suffix(')')).unwrap_or(e);
            parse_number(e, what)?
        }
    };
    if coef < 0.0 {
        return Err(Error::Parse { what, reason: "ε must be non-negative".into() });
    }
    Ok(EpsRule { c: coef, p })
}

/// Parses the shorthand `cubic(s)` for `Γ = s ℤ^d`; `s` may be a number,
/// `pi`, or `c*pi`.
pub fn parse_lattice_spec(src: &str, dim: usize) -> Result<LatticePair> {
    let what = "lattice shorthand";
    let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    let inner = s
        .strip_prefix("cubic(")
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| Error::Parse { what, reason: format!("expected `cubic(scale)`, got `{src}`") })?;
    let scale = match inner.strip_suffix("*pi").or_else(|| inner.strip_suffix("pi").filter(|x| !x.is_empty())) {
        Some(c) => parse_number(c, what)? * std::f64::consts::PI,
        None => parse_number(inner, what)?,
    };
    if !(scale > 0.0) {
        return Err(Error::Parse { what, reason: format!("scale must be positive, got {scale}") });
    }
    LatticePair::cubic(dim, scale)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    Value(f64),
    Rule(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub d: usize,
    pub h: f64,
    pub eps: EpsSpec,
    pub tau: f64,
    /// Quasimomentum in coordinates of the dual basis, for the single-fiber
    /// commands.
    pub xi_frac: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub shorthand: Option<String>,
    /// Rows are the primal basis vectors.
    pub basis: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolBlock {
    pub model: String,
    pub m: Option<f64>,
    #[serde(rename = "M")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBlock {
    pub theta: Vec<i64>,
    pub value: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBlock {
    /// `cos(⟨θ,x⟩)` sum over the coordinate directions with this amplitude.
    pub cosines: Option<f64>,
    pub modes: Option<Vec<ModeBlock>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceBlock {
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub k_mult: Option<f64>,
    pub c_window: Option<f64>,
    pub omega_abs: Option<f64>,
    pub rho: Option<f64>,
    pub stratum_deltas: Option<Vec<f64>>,
    /// Monte-Carlo measure estimate settings for `resonance-map`.
    pub measure_theta: Option<Vec<i64>>,
    pub measure_rho: Option<Vec<f64>>,
    pub measure_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeBlock {
    pub rounds: Option<usize>,
    pub rho: Option<f64>,
    pub pair_shells: Option<f64>,
    pub tol_block: Option<f64>,
    pub merge_classes: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSearchBlock {
    pub sigma: Option<f64>,
    pub front: Option<f64>,
    pub eps0: Option<f64>,
    pub eps1: Option<f64>,
    pub eps_prime: Option<f64>,
    pub max_rejection: Option<usize>,
    pub formula: Option<UpsilonFormula>,
    pub rho_star: Option<f64>,
    pub cell_margin: Option<f64>,
    pub shell_c: Option<f64>,
    pub t_points: Option<usize>,
    pub max_halvings: Option<usize>,
    pub upsilon_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Points per reciprocal basis direction.
    pub points: Option<Vec<usize>>,
    /// Band window `[tau − half_width, tau + half_width]`.
    pub half_width: Option<f64>,
    /// Keep every plane wave below the window so the bottom of the
    /// spectrum is known (default: only for `d = 1`).
    pub full_below: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountBlock {
    pub h: Option<Vec<f64>>,
    /// Shell half-width `w = w_factor · h`.
    pub w_factor: Option<f64>,
    pub xi_frac: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub xisearch: u64,
    pub measure: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    params: Option<Params>,
    lattice: Option<LatticeBlock>,
    symbol: Option<SymbolBlock>,
    perturbation: Option<PerturbationBlock>,
    #[serde(default)]
    resonance: ResonanceBlock,
    #[serde(default)]
    gauge: GaugeBlock,
    #[serde(default)]
    xisearch: XiSearchBlock,
    #[serde(default)]
    grid: GridBlock,
    #[serde(default)]
    count: CountBlock,
    seeds: Option<Seeds>,
    output_dir: Option<String>,
}

/// A validated manifest.
#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub params: Params,
    /// `ε` after evaluating the rule.
    pub eps: f64,
    pub eps_rule: Option<EpsRule>,
    pub lattice: LatticePair,
    pub symbol: SymbolModel,
    pub perturbation: Perturbation,
    pub resonance: ResonanceBlock,
    pub gauge: GaugeBlock,
    pub xisearch: XiSearchBlock,
    pub grid: GridBlock,
    pub count: CountBlock,
    pub seeds: Seeds,
    pub output_dir: Option<String>,
    /// SHA-256 of the canonical form, hex.
    pub hash: String,
}

/// Canonical form of a TOML document: compact JSON with sorted keys.
pub fn canonicalize(src: &str) -> Result<String> {
    let v: toml::Value = toml::from_str(src).map_err(|e| Error::Parse { what: "manifest", reason: e.to_string() })?;
    // serde_json's default map is ordered by key
    let j = serde_json::to_value(&v)?;
    Ok(serde_json::to_string(&j)?)
}

pub fn content_hash(src: &str) -> Result<String> {
    let canon = canonicalize(src)?;
    Ok(hex::encode(Sha256::digest(canon.as_bytes())))
}

fn require<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| manifest_err(field, "missing"))
}

fn build_symbol(b: &SymbolBlock, d: usize) -> Result<SymbolModel> {
    let s = match b.model.as_str() {
        "power" => SymbolModel::power(d, require(b.m, "symbol.m")?)?,
        "quadratic" => {
            let rows = require(b.matrix.clone(), "symbol.M")?;
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(manifest_err("symbol.M", format!("expected a {d}×{d} matrix")));
            }
            SymbolModel::quadratic(DMatrix::from_fn(d, d, |i, j| rows[i][j]))?
        }
        "double_well" => SymbolModel::double_well(
            d,
            require(b.a, "symbol.a")?,
            require(b.b, "symbol.b")?,
            require(b.c, "symbol.c")?,
        )?,
        "twin_well" => SymbolModel::twin_well(require(b.center.clone(), "symbol.center")?, require(b.radius, "symbol.radius")?)?,
        "quartic_sum" => SymbolModel::quartic_sum(d)?,
        other => return Err(manifest_err("symbol.model", format!("unknown model `{other}`"))),
    };
    if s.dim() != d {
        return Err(manifest_err("symbol", format!("dimension {} does not match d = {d}", s.dim())));
    }
    Ok(s)
}

fn build_perturbation(b: &PerturbationBlock, d: usize) -> Result<Perturbation> {
    match (b.cosines, &b.modes) {
        (Some(_), Some(_)) => Err(manifest_err("perturbation", "give either `cosines` or `modes`")),
        (Some(a), None) => Perturbation::cosines(d, a),
        (None, Some(modes)) => {
            let mut out = Vec::with_capacity(modes.len());
            for (i, m) in modes.iter().enumerate() {
                let poly = parse_coefficient(&m.value)
                    .map_err(|e| manifest_err(&format!("perturbation.modes[{i}].value"), e.to_string()))?;
                out.push((m.theta.clone(), poly));
            }
            Perturbation::new(d, out)
        }
        (None, None) => Err(manifest_err("perturbation", "missing `cosines` or `modes`")),
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let hash = content_hash(src)?;
        let raw: RawManifest = toml::from_str(src).map_err(|e| {
            let field = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "manifest".into());
            Error::Manifest { field, reason: e.message().to_string() }
        })?;
        let params = require(raw.params, "params")?;
        let d = params.d;
        if !(1..=3).contains(&d) {
            return Err(manifest_err("params.d", format!("must be 1, 2 or 3, got {d}")));
        }
        if !(params.h > 0.0 && params.h.is_finite()) {
            return Err(manifest_err("params.h", "must be positive"));
        }
        if !params.tau.is_finite() {
            return Err(manifest_err("params.tau", "must be finite"));
        }
        let (eps, eps_rule) = match &params.eps {
            EpsSpec::Value(v) => (*v, None),
            EpsSpec::Rule(r) => {
                let rule = parse_eps_rule(r).map_err(|e| manifest_err("params.eps", e.to_string()))?;
                (rule.eval(params.h), Some(rule))
            }
        };
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(manifest_err("params.eps", "must be a non-negative number"));
        }
        let lat = require(raw.lattice, "lattice")?;
        let lattice = match (&lat.shorthand, &lat.basis) {
            (Some(s), None) => parse_lattice_spec(s, d).map_err(|e| manifest_err("lattice.shorthand", e.to_string()))?,
            (None, Some(rows)) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(manifest_err("lattice.basis", format!("expected {d} rows of length {d}")));
                }
                // rows are basis vectors; the lattice stores them as columns
                LatticePair::from_primal(DMatrix::from_fn(d, d, |i, j| rows[j][i]))?
            }
            _ => return Err(manifest_err("lattice", "give exactly one of `shorthand` or `basis`")),
        };
        let symbol = build_symbol(&require(raw.symbol, "symbol")?, d)?;
        let perturbation = build_perturbation(&require(raw.perturbation, "perturbation")?, d)?;
        let seeds = require(raw.seeds, "seeds")?;
        Ok(Self {
            params,
            eps,
            eps_rule,
            lattice,
            symbol,
            perturbation,
            resonance: raw.resonance,
            gauge: raw.gauge,
            xisearch: raw.xisearch,
            grid: raw.grid,
            count: raw.count,
            seeds,
            output_dir: raw.output_dir,
            hash,
        })
    }

    pub fn operator(&self) -> Result<Operator> {
        Operator::new(self.lattice.clone(), self.symbol.clone(), self.perturbation.clone(), self.params.h, self.eps)
    }

    pub fn resonance_config(&self) -> Result<ResonanceConfig> {
        let mut c = ResonanceConfig::default();
        let r = &self.resonance;
        if let Some(v) = r.delta {
            c.delta = v;
        }
        if let Some(v) = r.kappa {
            c.kappa = v;
        }
        if let Some(v) = r.k_mult {
            c.k_mult = v;
        }
        if let Some(v) = r.c_window {
            c.c_window = v;
        }
        if let Some(v) = r.omega_abs {
            c.omega_abs = v;
        }
        c.rho = r.rho.or(c.rho);
        if r.stratum_deltas.is_some() {
            c.stratum_deltas = r.stratum_deltas.clone();
        }
        c.validate(self.params.d).map_err(|e| manifest_err("resonance", e.to_string()))?;
        Ok(c)
    }

    pub fn gauge_config(&self) -> GaugeConfig {
        let mut c = GaugeConfig::default();
        let g = &self.gauge;
        if let Some(v) = g.rounds {
            c.rounds = v;
        }
        c.rho = g.rho.or(c.rho);
        if let Some(v) = g.pair_shells {
            c.pair_shells = v;
        }
        c.tol_block = g.tol_block.or(c.tol_block);
        if let Some(v) = g.merge_classes {
            c.merge_classes = v;
        }
        c
    }

    pub fn xisearch_config(&self) -> Result<XiSearchConfig> {
        let x = &self.xisearch;
        let mut c = XiSearchConfig {
            tau: self.params.tau,
            seed: self.seeds.xisearch,
            resonance: self.resonance_config()?,
            gauge: self.gauge_config(),
            window: WindowConfig::default(),
            ..Default::default()
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = x.$f { c.$f = v; } )* };
        }
        set!(sigma, front, eps0, eps1, eps_prime, max_rejection, formula, rho_star, cell_margin, shell_c, t_points, max_halvings, upsilon_scale);
        Ok(c)
    }

    /// Cartesian quasimomentum from `params.xi_frac`.
    pub fn quasimomentum(&self) -> Result<Vec<f64>> {
        let f = self.params.xi_frac.clone().ok_or_else(|| manifest_err("params.xi_frac", "missing"))?;
        self.reduced_to_cartesian(&f, "params.xi_frac")
    }

    pub fn reduced_to_cartesian(&self, f: &[f64], field: &str) -> Result<Vec<f64>> {
        let d = self.params.d;
        if f.len() != d {
            return Err(manifest_err(field, format!("expected {d} entries")));
        }
        let dual = self.lattice.dual_basis();
        Ok((0..d).map(|r| (0..d).map(|c| dual[(r, c)] * f[c]).sum()).collect())
    }

    /// Seed list for output headers.
    pub fn seed_list(&self) -> String {
        format!("xisearch={} measure={}", self.seeds.xisearch, self.seeds.measure)
    }

    /// Replaces every seed by `seed` (the CLI's `--seed-override`).
    pub fn override_seeds(&mut self, seed: u64) {
        self.seeds.xisearch = seed;
        self.seeds.measure = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const REFERENCE: &str = r#"
output_dir = "out"

[params]
d = 2
h = 0.1
eps = "h^1.5"
tau = 1.0

[lattice]
shorthand = "cubic(2*pi)"

[symbol]
model = "power"
m = 2

[perturbation]
cosines = 1.0

[seeds]
xisearch = 7
measure = 11
"#;

    #[test]
    fn eps_rules() {
        assert_eq!(parse_eps_rule("h^1.5").unwrap(), EpsRule { c: 1.0, p: 1.5 });
        assert_eq!(parse_eps_rule("0.5*h^2").unwrap(), EpsRule { c: 0.5, p: 2.0 });
        assert_eq!(parse_eps_rule("h").unwrap(), EpsRule { c: 1.0, p: 1.0 });
        assert_eq!(parse_eps_rule(" 3 * h ").unwrap(), EpsRule { c: 3.0, p: 1.0 });
        assert_eq!(parse_eps_rule("0.01").unwrap(), EpsRule { c: 0.01, p: 0.0 });
        assert_eq!(parse_eps_rule("h^(0.5)").unwrap().p, 0.5);
        assert!((parse_eps_rule("h^1.5").unwrap().eval(0.01) - 1e-3).abs() < 1e-18);
        for bad in ["", "x^2", "2h", "h^", "h^a", "-1*h", "h*2", "inf"] {
            assert!(parse_eps_rule(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn lattice_shorthand() {
        let l = parse_lattice_spec("cubic(2*pi)", 2).unwrap();
        assert!((l.primal_basis()[(0, 0)] - 2.0 * std::f64::consts::PI).abs() < 1e-15);
        let l = parse_lattice_spec("cubic( 3 )", 3).unwrap();
        assert_eq!(l.dim(), 3);
        assert!(parse_lattice_spec("cubic(pi)", 1).is_ok());
        assert!(parse_lattice_spec("cubic(2pi)", 1).is_ok());
        for bad in ["cubic()", "cubic(-1)", "hex(1)", "cubic(0)", "cubic(1"] {
            assert!(parse_lattice_spec(bad, 2).is_err(), "{bad}");
        }
    }

    #[test]
    fn reference_manifest() {
        let m = ExperimentManifest::parse(REFERENCE).unwrap();
        assert!((m.eps - 0.1f64.powf(1.5)).abs() < 1e-16);
        assert_eq!(m.hash.len(), 64);
        let op = m.operator().unwrap();
        assert_eq!(op.dim(), 2);
        let c = m.xisearch_config().unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn hash_ignores_layout() {
        let reordered = r#"
[seeds]
measure = 11
xisearch = 7
[symbol]
m = 2
model = "power"
[params]
tau = 1.0
eps = "h^1.5"
h = 0.1
d = 2
[perturbation]
cosines = 1.0
[lattice]
shorthand = "cubic(2*pi)"
# comment
output_dir = "out"
"#;
        // `output_dir` after a table header belongs to the table, so move it
        let reordered = format!("output_dir = \"out\"\n{}", reordered.replace("output_dir = \"out\"\n", ""));
        assert_eq!(content_hash(REFERENCE).unwrap(), content_hash(&reordered).unwrap());
        let changed = REFERENCE.replace("tau = 1.0", "tau = 1.1");
        assert_ne!(content_hash(REFERENCE).unwrap(), content_hash(&changed).unwrap());
    }

    #[test]
    fn validation_names_field() {
        let no_symbol = REFERENCE.replace("[symbol]\nmodel = \"power\"\nm = 2\n", "");
        match ExperimentManifest::parse(&no_symbol) {
            Err(Error::Manifest { field, .. }) => assert_eq!(field, "symbol"),
            other => panic!("{other:?}"),
        }
        let no_seeds = REFERENCE.replace("[seeds]\nxisearch = 7\nmeasure = 11\n", "");
        assert!(matches!(ExperimentManifest::parse(&no_seeds), Err(Error::Manifest { field, .. }) if field == "seeds"));
        let bad_mode = REFERENCE.replace("cosines = 1.0", "modes = [{theta = [1, 0], value = \"1 +\"}]");
        assert!(matches!(ExperimentManifest::parse(&bad_mode), Err(Error::Manifest { field, .. }) if field.starts_with("perturbation.modes[0]")));
        let unknown = REFERENCE.replace("[seeds]", "[seeds]\nextra = 1");
        assert!(matches!(ExperimentManifest::parse(&unknown), Err(Error::Manifest { .. })));
    }

    #[test]
    fn explicit_basis_rows() {
        let src = REFERENCE.replace("shorthand = \"cubic(2*pi)\"", "basis = [[1.0, 0.0], [0.5, 1.0]]");
        let m = ExperimentManifest::parse(&src).unwrap();
        let b = m.lattice.primal_basis();
        assert_eq!(b[(0, 1)], 0.5);
        assert_eq!(b[(1, 1)], 1.0);
    }
}
