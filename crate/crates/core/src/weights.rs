//! Muckenhoupt, reverse Hölder and multiple-weight characteristics over the
//! dyadic cubes of levels `0..=maxlevel`.

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::grid::{cubes_up_to, torus_distance, DyadicCube, GridFunction, Pyramid};

/// Cells below this value are raised to it when weights are read from files.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Name of the only cube family we scan.
pub const DYADIC_FAMILY: &str = "dyadic";

/// Value of a weight characteristic together with the cube attaining it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub value: f64,
    pub witness: DyadicCube,
    pub family: String,
    pub maxlevel: u32,
}

/// `m` weights with exponents `p_1..p_m`, the harmonic exponent `p` and the
/// baseline `p0`.
#[derive(Clone, Debug)]
pub struct WeightTuple {
    weights: Vec<GridFunction>,
    exponents: Vec<f64>,
    p: f64,
    p0: f64,
}

impl WeightTuple {
    pub fn new(weights: Vec<GridFunction>, exponents: Vec<f64>, p0: f64) -> Result<Self> {
        if weights.is_empty() {
            return dimension("a weight tuple needs at least one weight");
        }
        if weights.len() != exponents.len() {
            return dimension(format!(
                "{} weights but {} exponents",
                weights.len(),
                exponents.len()
            ));
        }
        for w in &weights[1..] {
            weights[0].check_same_shape(w)?;
        }
        for (i, w) in weights.iter().enumerate() {
            if let Some(cell) = w
                .values()
                .iter()
                .position(|&v| !(v > 0.0) || !v.is_finite())
            {
                return domain(format!(
                    "weight {i} is not positive and finite at cell {cell}"
                ));
            }
        }
        if let Some(bad) = exponents.iter().find(|&&q| !(q > 1.0) || !q.is_finite()) {
            return domain(format!("exponents must lie in (1, ∞), got {bad}"));
        }
        if !(p0 >= 1.0) {
            return domain(format!("baseline exponent p0 must be >= 1, got {p0}"));
        }
        let min_p = exponents.iter().copied().fold(f64::INFINITY, f64::min);
        if !(p0 < min_p) {
            return domain(format!(
                "baseline p0 = {p0} must be below every p_i (min {min_p})"
            ));
        }
        let p = 1.0 / exponents.iter().map(|q| 1.0 / q).sum::<f64>();
        Ok(Self {
            weights,
            exponents,
            p,
            p0,
        })
    }

    /// All weights identically one.
    pub fn unweighted(dim: usize, resolution: u32, exponents: Vec<f64>, p0: f64) -> Result<Self> {
        let one = GridFunction::constant(dim, resolution, 1.0)?;
        Self::new(vec![one; exponents.len()], exponents, p0)
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[GridFunction] {
        &self.weights
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// `a = p / p0`.
    pub fn a(&self) -> f64 {
        self.p / self.p0
    }

    /// `a_i = p_i / p0`.
    pub fn a_i(&self, i: usize) -> f64 {
        self.exponents[i] / self.p0
    }

    /// `ν = Π w_i^{p/p_i}`.
    pub fn nu(&self) -> GridFunction {
        let mut nu =
            GridFunction::constant(self.weights[0].dim(), self.weights[0].resolution(), 1.0)
                .expect("shape already validated");
        for (w, &pi) in self.weights.iter().zip(&self.exponents) {
            let e = self.p / pi;
            for (acc, &v) in nu.values_mut().iter_mut().zip(w.values()) {
                *acc *= v.powf(e);
            }
        }
        nu
    }

    /// `σ_i = w_i^{1 - a_i'}` with `a_i = p_i / p0`.
    pub fn dual_weights(&self) -> Vec<GridFunction> {
        (0..self.m())
            .map(|i| {
                let e = 1.0 - conjugate(self.a_i(i));
                self.weights[i].map(|v| v.powf(e))
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].dim()
    }

    pub fn resolution(&self) -> u32 {
        self.weights[0].resolution()
    }

    /// Same exponents, every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w.scale(factor)).collect(),
            exponents: self.exponents.clone(),
            p: self.p,
            p0: self.p0,
        }
    }
}

/// Hölder conjugate `q' = q / (q - 1)`, with `1' = ∞` and `∞' = 1`.
pub fn conjugate(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

fn check_maxlevel(w: &GridFunction, maxlevel: u32) -> Result<()> {
    if maxlevel > w.resolution() {
        return dimension(format!(
            "maxlevel {maxlevel} exceeds the weight resolution {}",
            w.resolution()
        ));
    }
    Ok(())
}

fn scan(dim: usize, maxlevel: u32, value: impl Fn(&DyadicCube) -> f64) -> ConstantReport {
    let mut best = f64::NEG_INFINITY;
    let mut witness = DyadicCube::unit(dim);
    for q in cubes_up_to(dim, maxlevel) {
        let v = value(&q);
        if v > best {
            best = v;
            witness = q;
        }
    }
    ConstantReport {
        value: best,
        witness,
        family: DYADIC_FAMILY.to_string(),
        maxlevel,
    }
}

/// `[w]_{A_p}`; `p = 1` uses `avg_Q w / inf_Q w`.
pub fn ap_constant(w: &GridFunction, p: f64, maxlevel: u32) -> Result<ConstantReport> {
    if !(p >= 1.0) {
        return domain(format!("A_p needs p >= 1, got {p}"));
    }
    check_maxlevel(w, maxlevel)?;
    let sums = Pyramid::sums(w, |v| v);
    if p == 1.0 {
        let mins = Pyramid::minima(w);
        return Ok(scan(w.dim(), maxlevel, |q| sums.mean(q) / mins.get(q)));
    }
    let e = -1.0 / (p - 1.0);
    let duals = Pyramid::sums(w, |v| v.powf(e));
    Ok(scan(w.dim(), maxlevel, |q| {
        sums.mean(q) * duals.mean(q).powf(p - 1.0)
    }))
}

/// `[w]_{RH_q}`; `q = ∞` uses `sup_Q w / avg_Q w`.
pub fn rh_constant(w: &GridFunction, q: f64, maxlevel: u32) -> Result<ConstantReport> {
    if !(q > 1.0) {
        return domain(format!("RH_q needs q > 1, got {q}"));
    }
    check_maxlevel(w, maxlevel)?;
    let sums = Pyramid::sums(w, |v| v);
    if q.is_infinite() {
        let maxs = Pyramid::maxima(w);
        return Ok(scan(w.dim(), maxlevel, |c| maxs.get(c) / sums.mean(c)));
    }
    let powers = Pyramid::sums(w, |v| v.powf(q));
    Ok(scan(w.dim(), maxlevel, |c| {
        powers.mean(c).powf(1.0 / q) / sums.mean(c)
    }))
}

/// `[w̄]_{A_{P̄/r}}`: `sup_Q (avg ν) Π (avg w_i^{1-a_i'})^{(p/r)/a_i'}` with `a_i = p_i / r`.
pub fn multi_ap_constant(t: &WeightTuple, r: f64, maxlevel: u32) -> Result<ConstantReport> {
    if !(r >= 1.0) {
        return domain(format!("the exponent divisor r must be >= 1, got {r}"));
    }
    if let Some(&pi) = t.exponents().iter().find(|&&pi| !(r < pi)) {
        return domain(format!("r = {r} must be below every p_i (found {pi})"));
    }
    check_maxlevel(&t.weights()[0], maxlevel)?;
    let a = t.p() / r;
    let nu = Pyramid::sums(&t.nu(), |v| v);
    let factors: Vec<(Pyramid, f64)> = t
        .weights()
        .iter()
        .zip(t.exponents())
        .map(|(w, &pi)| {
            let ai_conj = conjugate(pi / r);
            let e = 1.0 - ai_conj;
            (Pyramid::sums(w, move |v| v.powf(e)), a / ai_conj)
        })
        .collect();
    Ok(scan(t.dim(), maxlevel, |q| {
        factors
            .iter()
            .fold(nu.mean(q), |acc, (pyr, e)| acc * pyr.mean(q).powf(*e))
    }))
}

/// `σ_i = w_i^{1-(p_i/p0)'}` cellwise.
pub fn dual_weights(t: &WeightTuple) -> Vec<GridFunction> {
    t.dual_weights()
}

/// Both sides of `[σ]_{A_{p'/p0}} <= [w]_{RH_{(p0'/p)'}}^{1/(p-1)} [w]_{A_p}^{1/(p-1)}`,
/// `σ = w^{1-p'}`, over one cube family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub sigma_ap: ConstantReport,
    pub w_ap: ConstantReport,
    /// `None` when `p0 = 1`, where the reverse Hölder exponent is 1 and the factor is 1.
    pub w_rh: Option<ConstantReport>,
    pub rh_exponent: f64,
}

pub fn duality_inequality_check(
    w: &GridFunction,
    p: f64,
    p0: f64,
    maxlevel: u32,
) -> Result<DualityReport> {
    if !(p0 >= 1.0) {
        return domain(format!("p0 must be >= 1, got {p0}"));
    }
    let p0_conj = conjugate(p0);
    if !(p > 1.0 && p < p0_conj) {
        return domain(format!("need 1 < p < p0' = {p0_conj}, got p = {p}"));
    }
    let p_conj = conjugate(p);
    let sigma = w.map(|v| v.powf(1.0 - p_conj));
    let sigma_ap = ap_constant(&sigma, p_conj / p0, maxlevel)?;
    let w_ap = ap_constant(w, p, maxlevel)?;
    let rh_exponent = conjugate(p0_conj / p);
    let w_rh = if rh_exponent > 1.0 {
        Some(rh_constant(w, rh_exponent, maxlevel)?)
    } else {
        None
    };
    let rh_value = w_rh.as_ref().map_or(1.0, |r| r.value);
    let lhs = sigma_ap.value;
    let rhs = (rh_value * w_ap.value).powf(1.0 / (p - 1.0));
    Ok(DualityReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-9),
        sigma_ap,
        w_ap,
        w_rh,
        rh_exponent,
    })
}

/// Cell averages of `dist_torus(x, center)^alpha`.
pub fn power_weight(
    alpha: f64,
    center: &[f64],
    dim: usize,
    resolution: u32,
) -> Result<GridFunction> {
    if center.len() != dim {
        return dimension(format!(
            "center has {} coordinates, expected {dim}",
            center.len()
        ));
    }
    if !(alpha > -(dim as f64)) {
        return domain(format!(
            "power weight exponent {alpha} is not locally integrable in dimension {dim}"
        ));
    }
    let n = 1usize << resolution;
    let h = 1.0 / n as f64;
    match dim {
        1 => {
            let c = center[0];
            let values = (0..n)
                .map(|i| interval_power_mean(i as f64 * h, (i + 1) as f64 * h, c, alpha))
                .collect();
            GridFunction::new(1, resolution, values)
        }
        _ => {
            const SUB: usize = 16;
            let sh = h / SUB as f64;
            let mut values = Vec::with_capacity(n * n);
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for s in 0..SUB {
                        for t in 0..SUB {
                            let x = [
                                a as f64 * h + (s as f64 + 0.5) * sh,
                                b as f64 * h + (t as f64 + 0.5) * sh,
                            ];
                            let d = torus_distance(&x, center).max(1e-300);
                            acc += d.powf(alpha);
                        }
                    }
                    values.push(acc / (SUB * SUB) as f64);
                }
            }
            GridFunction::new(2, resolution, values)
        }
    }
}

/// Exact mean of `d(x)^alpha` over `[lo, hi]`, `d` the circle distance to `c`.
fn interval_power_mean(lo: f64, hi: f64, c: f64, alpha: f64) -> f64 {
    // d is piecewise linear with unit slope; kinks sit at c + k/2
    let mut cuts = vec![lo];
    let first = ((lo - c) * 2.0).floor() as i64 + 1;
    let mut k = first;
    loop {
        let x = c + k as f64 / 2.0;
        if x >= hi {
            break;
        }
        if x > lo {
            cuts.push(x);
        }
        k += 1;
    }
    cuts.push(hi);
    let anti = |u: f64| u.powf(alpha + 1.0) / (alpha + 1.0);
    let dist = |x: f64| {
        let d = (x - c).rem_euclid(1.0);
        d.min(1.0 - d)
    };
    let total: f64 = cuts
        .windows(2)
        .map(|w| (anti(dist(w[1])) - anti(dist(w[0]))).abs())
        .sum();
    total / (hi - lo)
}
