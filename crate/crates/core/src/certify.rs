//! Experiment drivers: each assembles the other modules into one measured
//! inequality and returns a [`CertificationRecord`].

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dimension, domain, Error, Result};
use crate::grid::{
    average_over, dilate, lp_norm, weighted_norm, DyadicCube, GridFunction, MAX_LEVEL_1D,
    MAX_LEVEL_2D,
};
use crate::kernels::{
    check_h2, named_kernel, H2Report, Hilbert, LinearMultiplier, Operator, PairSampling, Symbol,
};
use crate::oscillation::{lerner_decompose, lerner_lambda, osc_profile};
use crate::sparse::{
    dominate, dyadic_maximal, eval_family_a, greedy_witness, random_carleson, random_function,
    random_subcube, CarlesonSequence, DominateOptions, MaximalMode, SparseFamily,
};
use crate::weights::{ap_constant, conjugate, multi_ap_constant, power_weight, WeightTuple};

/// Environment variable overriding the number of worker threads.
pub const JOBS_ENV: &str = "SPARSELAB_JOBS";

/// `max(1, (p_1/p0)'/p, …, (p_m/p0)'/p)` with `1/p = Σ 1/p_i`.
pub fn beta_exponent(pbar: &[f64], p0: f64) -> Result<f64> {
    if pbar.is_empty() {
        return dimension("at least one exponent is needed");
    }
    if !(p0 >= 1.0) {
        return domain(format!("p0 must be >= 1, got {p0}"));
    }
    if let Some(&pi) = pbar.iter().find(|&&pi| !(pi > p0) || !pi.is_finite()) {
        return domain(format!("every p_i must exceed p0 = {p0}, found {pi}"));
    }
    let p = 1.0 / pbar.iter().map(|q| 1.0 / q).sum::<f64>();
    Ok(pbar
        .iter()
        .map(|&pi| conjugate(pi / p0) / p)
        .fold(1.0, f64::max))
}

/// Parameters attached to every record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub n: usize,
    #[serde(rename = "L")]
    pub resolution: u32,
    pub m: usize,
    pub p0: f64,
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// One measured inequality `lhs <= C · rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub params: Parameters,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent when `rhs = 0`.
    pub ratio: Option<f64>,
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Outcome of the exact inequalities checked along the way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl CertificationRecord {
    fn new(experiment: &str, params: Parameters, lhs: f64, rhs: f64) -> Self {
        Self {
            experiment: experiment.into(),
            key: None,
            trial: None,
            params,
            lhs,
            rhs,
            ratio: (rhs > 0.0).then(|| lhs / rhs),
            constants: BTreeMap::new(),
            beta: None,
            pass: None,
        }
    }

    /// Both sides vanish.
    pub fn is_degenerate(&self) -> bool {
        self.lhs == 0.0 && self.rhs == 0.0
    }
}

fn check_inputs(fs: &[GridFunction]) -> Result<(usize, u32)> {
    let Some(first) = fs.first() else {
        return dimension("at least one input function is needed");
    };
    for f in &fs[1..] {
        first.check_same_shape(f)?;
    }
    Ok((first.dim(), first.resolution()))
}

fn check_nonnegative(fs: &[GridFunction]) -> Result<()> {
    for (i, f) in fs.iter().enumerate() {
        if let Some(c) = f.values().iter().position(|&v| !(v >= 0.0)) {
            return domain(format!("input {i} is negative at cell {c}"));
        }
    }
    Ok(())
}

fn tuple_params(t: &WeightTuple, k: Option<u32>) -> Parameters {
    Parameters {
        n: t.dim(),
        resolution: t.resolution(),
        m: t.m(),
        p0: t.p0(),
        p: t.exponents().to_vec(),
        k,
        ..Parameters::default()
    }
}

/// `Π_i ‖f_i‖_{L^{p_i}(w_i)}`.
fn input_norms(t: &WeightTuple, fs: &[GridFunction]) -> Result<f64> {
    if fs.len() != t.m() {
        return dimension(format!("{} weights but {} functions", t.m(), fs.len()));
    }
    let mut prod = 1.0;
    for ((f, w), &pi) in fs.iter().zip(t.weights()).zip(t.exponents()) {
        prod *= weighted_norm(f, pi, w)?;
    }
    Ok(prod)
}

/// `‖𝒜^{p0}_𝒮 f‖_{L^p(ν)}` against `[w̄]_{A_{P̄/p0}}^β Π ‖f_i‖_{L^{p_i}(w_i)}`.
pub fn certify_theorem_b(
    s: &SparseFamily,
    t: &WeightTuple,
    fs: &[GridFunction],
    maxlevel: u32,
) -> Result<CertificationRecord> {
    check_inputs(fs)?;
    check_nonnegative(fs)?;
    t.weights()[0].check_same_shape(&fs[0])?;
    let beta = beta_exponent(t.exponents(), t.p0())?;
    let constant = multi_ap_constant(t, t.p0(), maxlevel)?;
    let af = eval_family_a(s, 0, t.p0(), fs)?;
    let lhs = weighted_norm(&af, t.p(), &t.nu())?;
    let rhs = constant.value.powf(beta) * input_norms(t, fs)?;
    let mut rec = CertificationRecord::new("theorem-b", tuple_params(t, None), lhs, rhs);
    rec.constants.insert("multi_ap".into(), constant.value);
    rec.constants.insert("family_size".into(), s.len() as f64);
    rec.beta = Some(beta);
    Ok(rec)
}

/// `‖𝒜^{k,p0}_α f‖_{L^p(w)}` against `(k+1) ‖Σ_ℓ 𝒜^{0,p0}_{𝒮_ℓ} f‖_{L^p(w)}` with
/// the families produced by [`dominate`].
pub fn certify_theorem_a(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
    p: f64,
    w: Option<&GridFunction>,
    seed: u64,
) -> Result<CertificationRecord> {
    let (dim, resolution) = check_inputs(fs)?;
    let opts = DominateOptions {
        p,
        weight: w.cloned(),
        seed,
        ..DominateOptions::default()
    };
    let report = dominate(a, k, p0, fs, &opts)?;
    let params = Parameters {
        n: dim,
        resolution,
        m: fs.len(),
        p0,
        p: vec![p],
        k: Some(k),
        seed,
        ..Parameters::default()
    };
    let rhs = (k as f64 + 1.0) * report.rhs_norm;
    let mut rec = CertificationRecord::new("theorem-a", params, report.lhs_norm, rhs);
    rec.constants
        .insert("pointwise_ratio".into(), report.pointwise_ratio);
    rec.constants
        .insert("pieces".into(), report.pieces.len() as f64);
    let w_hat = report
        .pieces
        .iter()
        .map(|p| p.weak_norm_estimate)
        .fold(0.0, f64::max);
    rec.constants.insert("weak_norm".into(), w_hat);
    rec.pass = Some(report.all_sparse);
    Ok(rec)
}

/// `δ0` from an (H2) fit; a report whose ring values all vanish has no decay
/// constraint and yields `+∞`.
pub fn h2_delta0(h2: &H2Report) -> Result<f64> {
    if !h2.values.is_empty() && h2.values.iter().all(|&v| v == 0.0) {
        return Ok(f64::INFINITY);
    }
    match h2.delta0 {
        Some(d) if d > 0.0 => Ok(d),
        Some(d) => domain(format!("degenerate decay: δ0 = {d} is not positive")),
        None => domain("degenerate decay: the ring fit failed"),
    }
}

/// End to end: Lerner decomposition of `T f`, oscillation profile per cube
/// (root included), the resulting pointwise sparse bound, and
/// `‖T f‖_{L^p(ν)}` against `[w̄]^β Π ‖f_i‖_{L^{p_i}(w_i)}`.
///
/// `pass` records whether `|T f| <= |m_{Tf}(Q_0)| + 2C Σ_Q Σ_ℓ 2^{-ℓδ0} Π⟨f_i⟩_{2^ℓQ,p0} χ_Q`
/// holds in `L^p(ν)`, with `C` the largest profile ratio.
pub fn certify_theorem_c(
    op: &dyn Operator,
    h2: &H2Report,
    t: &WeightTuple,
    fs: &[GridFunction],
    maxlevel: u32,
) -> Result<CertificationRecord> {
    let (dim, res) = check_inputs(fs)?;
    t.weights()[0].check_same_shape(&fs[0])?;
    if fs.len() != op.arity() || t.m() != op.arity() {
        return dimension(format!("{} takes {} functions", op.name(), op.arity()));
    }
    let delta0 = h2_delta0(h2)?;
    let p0 = t.p0();
    let beta = beta_exponent(t.exponents(), p0)?;
    let constant = multi_ap_constant(t, p0, maxlevel)?;
    let nu = t.nu();
    let tf = op.apply(fs)?;
    let lhs = weighted_norm(&tf, t.p(), &nu)?;
    let rhs = constant.value.powf(beta) * input_norms(t, fs)?;

    let root = DyadicCube::unit(dim);
    let dec = lerner_decompose(&tf, &root)?;
    let lambda = lerner_lambda(dim);
    let mut cubes: Vec<DyadicCube> = dec.family.cubes().to_vec();
    if !cubes.contains(&root) {
        cubes.push(root);
    }
    let mut osc_constant: f64 = 0.0;
    let mut profiles = Vec::with_capacity(cubes.len());
    for q in &cubes {
        let prof = osc_profile(op, fs, q, lambda, p0, delta0)?;
        if let Some(r) = prof.ratio {
            osc_constant = osc_constant.max(r);
        } else if prof.lhs > 0.0 {
            osc_constant = f64::INFINITY;
        }
        profiles.push(prof);
    }
    let mut bound = GridFunction::constant(dim, res, dec.median.abs())?;
    for (q, prof) in cubes.iter().zip(&profiles) {
        if !dec.family.cubes().contains(q) {
            continue;
        }
        let add = 2.0 * osc_constant * prof.rhs;
        if add == 0.0 {
            continue;
        }
        let vals = bound.values_mut();
        for &c in q.cells(res)?.cells() {
            vals[c] += add;
        }
    }
    let bound_norm = weighted_norm(&bound, t.p(), &nu)?;
    let lerner_ok = dec.verify(&tf, 1e-9)?;

    let mut rec = CertificationRecord::new("theorem-c", tuple_params(t, None), lhs, rhs);
    rec.constants.insert("multi_ap".into(), constant.value);
    rec.constants.insert("delta0".into(), delta0);
    rec.constants.insert("osc_constant".into(), osc_constant);
    rec.constants.insert("sparse_bound_norm".into(), bound_norm);
    rec.constants
        .insert("lerner_cubes".into(), dec.family.len() as f64);
    rec.beta = Some(beta);
    rec.pass = Some(lerner_ok && lhs <= bound_norm * (1.0 + 1e-9) + 1e-300);
    Ok(rec)
}

/// `‖M^𝒟 f‖_{L^p(w)}` against `[w]_{A_p}^{1/(p-1)} ‖f‖_{L^p(w)}`.
pub fn certify_buckley(
    w: &GridFunction,
    p: f64,
    f: &GridFunction,
    maxlevel: u32,
) -> Result<CertificationRecord> {
    if !(p > 1.0) {
        return domain(format!("the maximal bound needs p > 1, got {p}"));
    }
    w.check_same_shape(f)?;
    let ap = ap_constant(w, p, maxlevel)?;
    let mf = dyadic_maximal(f, &MaximalMode::Plain { p0: 1.0 })?;
    let lhs = weighted_norm(&mf, p, w)?;
    let beta = 1.0 / (p - 1.0);
    let rhs = ap.value.powf(beta) * weighted_norm(f, p, w)?;
    let params = Parameters {
        n: f.dim(),
        resolution: f.resolution(),
        m: 1,
        p0: 1.0,
        p: vec![p],
        ..Parameters::default()
    };
    let mut rec = CertificationRecord::new("buckley", params, lhs, rhs);
    rec.constants.insert("ap".into(), ap.value);
    rec.beta = Some(beta);
    Ok(rec)
}

/// The chain of dyadic ancestors of `q`, each keeping the half it does not share
/// with the next cube.
pub fn ancestor_chain(q: &DyadicCube, resolution: u32) -> Result<SparseFamily> {
    let cubes: Vec<DyadicCube> = (0..=q.level())
        .map(|k| q.ancestor(k).expect("k within level"))
        .collect();
    greedy_witness(q.dim(), resolution, &cubes)
}

/// `f_i = σ_i χ_Q` on the cube `Q` attaining `[w̄]_{A_{P̄/p0}}`, with the ancestor
/// chain of `Q` as family.
pub fn extremal_probe_b(
    t: &WeightTuple,
    maxlevel: u32,
) -> Result<(SparseFamily, Vec<GridFunction>)> {
    let witness = multi_ap_constant(t, t.p0(), maxlevel)?.witness;
    let res = t.resolution();
    let chi = GridFunction::indicator(&witness.cells(res)?)?;
    let fs = t
        .dual_weights()
        .iter()
        .map(|s| s.zip_with(&chi, |a, b| a * b))
        .collect::<Result<Vec<_>>>()?;
    Ok((ancestor_chain(&witness, res)?, fs))
}

/// `χ_Q` for the cube at `level` containing `point`.
pub fn cube_at(point: &[f64], level: u32) -> Result<DyadicCube> {
    let side = 1u64 << level;
    let index: Vec<u32> = point
        .iter()
        .map(|&x| ((x.rem_euclid(1.0) * side as f64).floor() as u64).min(side - 1) as u32)
        .collect();
    DyadicCube::new(point.len(), level, &index)
}

/// Worker threads: `SPARSELAB_JOBS` wins over the requested value; default 1.
pub fn resolve_jobs(requested: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(JOBS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(j) if j > 0 => Ok(j),
            _ => domain(format!("{JOBS_ENV} must be a positive integer, got '{v}'")),
        };
    }
    match requested {
        Some(0) => domain("--jobs must be positive"),
        Some(j) => Ok(j),
        None => Ok(1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TheoremA,
    TheoremB,
    TheoremC,
    Buckley,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TheoremA => "theorem-a",
            Self::TheoremB => "theorem-b",
            Self::TheoremC => "theorem-c",
            Self::Buckley => "buckley",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Unweighted,
    /// `|x - c|^α` around the torus center.
    Power,
    /// Log-uniform random cell values, fresh per trial.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFamily {
    #[serde(rename = "type")]
    pub kind: WeightKind,
    #[serde(default)]
    pub alpha_grid: Vec<f64>,
}

/// A scalar or a list of scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

fn default_k() -> OneOrMany<u32> {
    OneOrMany::One(0)
}

/// Sweep configuration; every list-valued field is one axis of the cartesian grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub n: usize,
    #[serde(rename = "L")]
    pub resolution: u32,
    pub m: usize,
    pub p0: OneOrMany<f64>,
    /// Each entry is one exponent tuple; a scalar is repeated `m` times.
    pub p: Vec<OneOrMany<f64>>,
    #[serde(default = "default_k")]
    pub k: OneOrMany<u32>,
    pub weight_family: WeightFamily,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Operator for `theorem-c`: `hilbert` (default) or `identity`.
    #[serde(default)]
    pub operator: Option<String>,
}

/// One point of the parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub experiment: Experiment,
    pub n: usize,
    #[serde(rename = "L")]
    pub resolution: u32,
    pub m: usize,
    pub p0: f64,
    pub p: Vec<f64>,
    pub k: u32,
    pub weight: WeightKind,
    pub alpha: Option<f64>,
    pub operator: Option<String>,
    pub seed: u64,
}

impl SweepPoint {
    /// First 16 hex digits of the SHA-256 of the point's JSON.
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("points serialize");
        hex16(&Sha256::digest(json.as_bytes()))
    }

    fn trial_seed(&self, key: &str, trial: usize) -> u64 {
        let digest = Sha256::digest(format!("{}:{key}:{trial}", self.seed).as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn max_level(n: usize) -> u32 {
    if n == 1 {
        MAX_LEVEL_1D
    } else {
        MAX_LEVEL_2D
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n) {
            return dimension(format!("n must be 1 or 2, got {}", self.n));
        }
        if self.resolution == 0 || self.resolution > max_level(self.n) {
            return dimension(format!(
                "L must lie in 1..={} for n = {}, got {}",
                max_level(self.n),
                self.n,
                self.resolution
            ));
        }
        if self.m == 0 {
            return domain("m must be at least 1");
        }
        match self.experiment {
            Experiment::Buckley if self.m != 1 => return domain("buckley takes m = 1"),
            Experiment::TheoremC => {
                if self.m != 1 || self.n != 1 {
                    return domain("theorem-c takes n = 1 and m = 1");
                }
                if self.resolution < 6 {
                    return dimension("theorem-c needs L >= 6 for the ring fit");
                }
                match self.operator.as_deref() {
                    None | Some("hilbert") | Some("identity") => {}
                    Some(other) => return domain(format!("unknown operator '{other}'")),
                }
            }
            _ => {}
        }
        if self.operator.is_some() && self.experiment != Experiment::TheoremC {
            return domain("operator applies to theorem-c only");
        }
        if self.weight_family.kind == WeightKind::Power {
            if let Some(a) = self
                .weight_family
                .alpha_grid
                .iter()
                .find(|&&a| !(a > -(self.n as f64)) || !a.is_finite())
            {
                return domain(format!("power weight exponent {a} must exceed -n"));
            }
        }
        for k in self.k.values() {
            if self.experiment == Experiment::TheoremA && k > self.resolution {
                return domain(format!("complexity {k} exceeds L"));
            }
        }
        for point in self.points() {
            if point.p.len() != self.m {
                return dimension(format!(
                    "exponent tuple {:?} does not have m = {} entries",
                    point.p, self.m
                ));
            }
            if self.experiment == Experiment::Buckley {
                if !(point.p[0] > 1.0) {
                    return domain(format!("buckley needs p > 1, got {}", point.p[0]));
                }
            } else {
                beta_exponent(&point.p, point.p0)?;
            }
        }
        Ok(())
    }

    /// Cartesian grid in the order p0, p, k, α.
    pub fn points(&self) -> Vec<SweepPoint> {
        let alphas: Vec<Option<f64>> = match self.weight_family.kind {
            WeightKind::Power => self
                .weight_family
                .alpha_grid
                .iter()
                .map(|&a| Some(a))
                .collect(),
            _ => vec![None],
        };
        let ks = match self.experiment {
            Experiment::TheoremA => self.k.values(),
            _ => vec![0],
        };
        let mut out = Vec::new();
        for p0 in self.p0.values() {
            for p in &self.p {
                let pbar = match p {
                    OneOrMany::One(v) => vec![*v; self.m],
                    OneOrMany::Many(v) => v.clone(),
                };
                for &k in &ks {
                    for &alpha in &alphas {
                        out.push(SweepPoint {
                            experiment: self.experiment,
                            n: self.n,
                            resolution: self.resolution,
                            m: self.m,
                            p0,
                            p: pbar.clone(),
                            k,
                            weight: self.weight_family.kind,
                            alpha,
                            operator: self.operator.clone(),
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Per-point reduction of the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: String,
    pub point: SweepPoint,
    pub records: usize,
    /// Sides of the record attaining the largest ratio.
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub ratio_max: Option<f64>,
    pub ratio_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<CertificationRecord>,
    pub summary: Vec<SummaryRow>,
    /// Trials already present in the output and not recomputed.
    pub resumed: usize,
}

fn center(n: usize) -> Vec<f64> {
    vec![0.5; n]
}

fn point_weights<R: Rng>(
    point: &SweepPoint,
    count: usize,
    rng: &mut R,
) -> Result<Vec<GridFunction>> {
    let (n, res) = (point.n, point.resolution);
    (0..count)
        .map(|_| match point.weight {
            WeightKind::Unweighted => GridFunction::constant(n, res, 1.0),
            WeightKind::Power => power_weight(point.alpha.unwrap_or(0.0), &center(n), n, res),
            WeightKind::Random => crate::sparse::random_weight(n, res, rng),
        })
        .collect()
}

fn random_inputs<R: Rng>(
    point: &SweepPoint,
    trial: usize,
    rng: &mut R,
) -> Result<Vec<GridFunction>> {
    let (n, res) = (point.n, point.resolution);
    let unit = DyadicCube::unit(n);
    (0..point.m)
        .map(|_| {
            if trial % 2 == 1 {
                random_function(n, res, rng)
            } else {
                let level = rng.gen_range(0..=res);
                GridFunction::indicator(&random_subcube(&unit, level, rng).cells(res)?)
            }
        })
        .collect()
}

/// Per-point state shared by the trials.
struct PointContext {
    h2: Option<H2Report>,
}

fn h2_for(point: &SweepPoint) -> Result<Option<H2Report>> {
    if point.experiment != Experiment::TheoremC {
        return Ok(None);
    }
    let res = point.resolution;
    let level = 6.min(res - 2);
    let q = DyadicCube::new(1, level, &[0])?;
    let kernel = match point.operator.as_deref() {
        Some("identity") => named_kernel("identity", res)?,
        _ => named_kernel("hilbert-exact", res)?,
    };
    let jmax = 5.min(level);
    Ok(Some(check_h2(
        &kernel,
        point.p0,
        &q,
        2,
        jmax,
        PairSampling::default(),
    )?))
}

fn operator_for(point: &SweepPoint) -> Box<dyn Operator> {
    match point.operator.as_deref() {
        Some("identity") => Box::new(LinearMultiplier(Symbol::identity(1))),
        _ => Box::new(Hilbert),
    }
}

fn run_trial(
    point: &SweepPoint,
    ctx: &PointContext,
    key: &str,
    trial: usize,
) -> Result<CertificationRecord> {
    let seed = point.trial_seed(key, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, res) = (point.n, point.resolution);
    let mut rec = match point.experiment {
        Experiment::TheoremB => {
            let t = WeightTuple::new(
                point_weights(point, point.m, &mut rng)?,
                point.p.clone(),
                point.p0,
            )?;
            let (family, fs) = if trial == 0 {
                extremal_probe_b(&t, res)?
            } else {
                let g = random_function(n, res, &mut rng)?;
                let family = lerner_decompose(&g, &DyadicCube::unit(n))?.family;
                let fs = if trial % 3 == 2 {
                    let level = rng.gen_range(0..=res);
                    let q = random_subcube(&DyadicCube::unit(n), level, &mut rng);
                    let chi = GridFunction::indicator(&q.cells(res)?)?;
                    t.dual_weights()
                        .iter()
                        .map(|s| s.zip_with(&chi, |a, b| a * b))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    random_inputs(point, trial, &mut rng)?
                };
                (family, fs)
            };
            certify_theorem_b(&family, &t, &fs, res)?
        }
        Experiment::TheoremA => {
            let t = WeightTuple::new(
                point_weights(point, point.m, &mut rng)?,
                point.p.clone(),
                point.p0,
            )?;
            let a = random_carleson(&DyadicCube::unit(n), res.min(6), 16, &mut rng)?;
            let fs = random_inputs(point, trial | 1, &mut rng)?;
            let nu = t.nu();
            let mut rec = certify_theorem_a(&a, point.k, point.p0, &fs, t.p(), Some(&nu), seed)?;
            rec.params.p = point.p.clone();
            rec
        }
        Experiment::TheoremC => {
            let t = WeightTuple::new(
                point_weights(point, 1, &mut rng)?,
                point.p.clone(),
                point.p0,
            )?;
            let fs = random_inputs(point, trial, &mut rng)?;
            let op = operator_for(point);
            let h2 = ctx.h2.as_ref().expect("computed for theorem-c");
            certify_theorem_c(op.as_ref(), h2, &t, &fs, res)?
        }
        Experiment::Buckley => {
            let w = point_weights(point, 1, &mut rng)?.remove(0);
            let f = if trial == 0 {
                let q = cube_at(&center(n), res.saturating_sub(2))?;
                GridFunction::indicator(&q.cells(res)?)?
            } else {
                random_inputs(point, trial, &mut rng)?.remove(0)
            };
            certify_buckley(&w, point.p[0], &f, res)?
        }
    };
    rec.key = Some(key.to_string());
    rec.trial = Some(trial);
    rec.params.seed = seed;
    rec.params.k = (point.experiment == Experiment::TheoremA).then_some(point.k);
    rec.params.weight = Some(
        match point.weight {
            WeightKind::Unweighted => "unweighted",
            WeightKind::Power => "power",
            WeightKind::Random => "random",
        }
        .to_string(),
    );
    rec.params.alpha = point.alpha;
    Ok(rec)
}

fn median_of(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Max and median ratio per point, in grid order.
pub fn summarize(points: &[SweepPoint], records: &[CertificationRecord]) -> Vec<SummaryRow> {
    points
        .iter()
        .map(|point| {
            let key = point.key();
            let mine: Vec<&CertificationRecord> = records
                .iter()
                .filter(|r| r.key.as_deref() == Some(&key))
                .collect();
            let best = mine.iter().filter(|r| r.ratio.is_some()).max_by(|a, b| {
                a.ratio
                    .unwrap()
                    .total_cmp(&b.ratio.unwrap())
                    .then(b.trial.cmp(&a.trial))
            });
            let mut ratios: Vec<f64> = mine.iter().filter_map(|r| r.ratio).collect();
            ratios.sort_by(f64::total_cmp);
            SummaryRow {
                key,
                point: point.clone(),
                records: mine.len(),
                lhs: best.map(|r| r.lhs),
                rhs: best.map(|r| r.rhs),
                ratio_max: best.and_then(|r| r.ratio),
                ratio_median: median_of(&ratios),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one line per point.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "key,experiment,n,L,m,p0,p,k,weight,alpha,records,lhs,rhs,ratio,ratio_median\n",
    );
    for r in rows {
        let pt = &r.point;
        let weight = serde_json::to_value(pt.weight).expect("enum serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.key,
            pt.experiment.as_str(),
            pt.n,
            pt.resolution,
            pt.m,
            pt.p0,
            pt.p.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            pt.k,
            weight.as_str().unwrap_or_default(),
            opt(pt.alpha),
            r.records,
            opt(r.lhs),
            opt(r.rhs),
            opt(r.ratio_max),
            opt(r.ratio_median),
        ));
    }
    out
}

pub const RECORDS_FILE: &str = "records.ndjson";
pub const SUMMARY_FILE: &str = "summary.csv";

fn read_records(path: &Path) -> Result<Vec<CertificationRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                column: e.column(),
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

/// Runs every missing `(point, trial)` pair. With `out` set, records already in
/// `out/records.ndjson` are kept, new ones appended, and `out/summary.csv`
/// rewritten from the whole file. Degenerate trials (`0/0`) are dropped.
pub fn sweep(config: &SweepConfig, jobs: usize) -> Result<SweepOutcome> {
    config.validate()?;
    let points = config.points();
    let existing = match &config.out {
        Some(dir) => read_records(&dir.join(RECORDS_FILE))?,
        None => Vec::new(),
    };
    let done: HashSet<(String, usize)> = existing
        .iter()
        .filter_map(|r| Some((r.key.clone()?, r.trial?)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let mut fresh = Vec::new();
    let mut resumed = 0;
    for point in &points {
        let key = point.key();
        let todo: Vec<usize> = (0..config.trials)
            .filter(|t| !done.contains(&(key.clone(), *t)))
            .collect();
        resumed += config.trials - todo.len();
        if todo.is_empty() {
            continue;
        }
        let ctx = PointContext { h2: h2_for(point)? };
        let out: Vec<Result<CertificationRecord>> = pool.install(|| {
            todo.par_iter()
                .map(|&t| run_trial(point, &ctx, &key, t))
                .collect()
        });
        for r in out {
            let r = r?;
            if !r.is_degenerate() {
                fresh.push(r);
            }
        }
    }
    let mut records = existing;
    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(RECORDS_FILE))?;
        for r in &fresh {
            writeln!(file, "{}", serde_json::to_string(r)?)?;
        }
    }
    records.extend(fresh);
    let summary = summarize(&points, &records);
    if let Some(dir) = &config.out {
        fs::write(dir.join(SUMMARY_FILE), summary_csv(&summary))?;
    }
    Ok(SweepOutcome {
        records,
        summary,
        resumed,
    })
}

/// Running supremum of the ratios in trial order.
pub fn running_sup(records: &[CertificationRecord]) -> Vec<f64> {
    let mut sup: f64 = 0.0;
    records
        .iter()
        .map(|r| {
            if let Some(x) = r.ratio {
                sup = sup.max(x);
            }
            sup
        })
        .collect()
}

/// `⟨f⟩_{2^ℓ Q, p0}` for `ℓ = 0..=level(Q)`.
pub fn dilated_averages(f: &GridFunction, q: &DyadicCube, p0: f64) -> Result<Vec<f64>> {
    (0..=q.level())
        .map(|ell| average_over(f, &dilate(q, ell, f.resolution())?, p0))
        .collect()
}

/// `‖f‖_{L^p}` of each input, for reports.
pub fn input_lp_norms(fs: &[GridFunction], p: f64) -> Result<Vec<f64>> {
    fs.iter().map(|f| lp_norm(f, p)).collect()
}
