//! Medians, local mean oscillation and the stopping-time decomposition
//! `|f - m_f(Q_0)| <= 2 Σ_{Q∈𝒮} ω_{2^{-n-2}}(f; Q) χ_Q`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{average_over, dilate, CellSet, DyadicCube, GridFunction, Rearrangement};
use crate::kernels::Operator;
use crate::sparse::{verify_sparse, SparseFamily};

fn sorted_values(f: &GridFunction, q: &DyadicCube) -> Result<Vec<f64>> {
    f.check_cube(q)?;
    let mut v = f.restrict(q)?;
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

/// Smallest valid median of sorted values.
fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    let mut lo = 0;
    while lo < n {
        let v = s[lo];
        let hi = s[lo..].partition_point(|&x| x == v) + lo;
        // below: lo cells, above: n - hi cells
        if 2 * lo <= n && 2 * (n - hi) <= n {
            return v;
        }
        lo = hi;
    }
    unreachable!("the lower middle value is always a median")
}

/// `m_f(Q)`: the smallest cell value `v` on `Q` with `|{f > v}|, |{f < v}| <= |Q|/2`.
pub fn median(f: &GridFunction, q: &DyadicCube) -> Result<f64> {
    Ok(median_sorted(&sorted_values(f, q)?))
}

/// Cells allowed strictly above the level when `f*` is taken at `λ|Q|`.
fn allowed_above(lambda: f64, cells: usize) -> usize {
    ((lambda * cells as f64).ceil() as usize).saturating_sub(1)
}

fn osc_sorted(s: &[f64], lambda: f64) -> f64 {
    let n = s.len();
    let keep = n - allowed_above(lambda, n).min(n - 1);
    (0..=n - keep)
        .map(|i| (s[i + keep - 1] - s[i]) / 2.0)
        .fold(f64::INFINITY, f64::min)
}

/// `ω_λ(f; Q) = inf_c ((f - c) χ_Q)^*(λ|Q|)`.
///
/// The rearrangement at `λ|Q|` is the `(K+1)`-th largest `|f - c|` over the
/// `N` cells of `Q`, `K = ⌈λN⌉ - 1`, so the infimum is half the shortest span
/// of `N - K` consecutive sorted values, attained at its midpoint.
pub fn local_osc(f: &GridFunction, q: &DyadicCube, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return domain(format!("λ must lie in (0, 1), got {lambda}"));
    }
    Ok(osc_sorted(&sorted_values(f, q)?, lambda))
}

/// `λ = 2^{-n-2}`.
pub fn lerner_lambda(dim: usize) -> f64 {
    (-(dim as f64) - 2.0).exp2()
}

/// Output of [`lerner_decompose`]: a sparse family and its oscillation coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LernerDecomposition {
    pub root: DyadicCube,
    pub median: f64,
    pub lambda: f64,
    pub family: SparseFamily,
    /// `ω_λ(f; Q)` for each cube of the family, in the same order.
    pub omegas: Vec<f64>,
}

impl LernerDecomposition {
    /// `2 Σ_Q ω_λ(f; Q) χ_Q`.
    pub fn bound(&self) -> GridFunction {
        let dim = self.family.dim();
        let res = self.family.resolution();
        let mut out = GridFunction::zeros(dim, res).expect("family shape is valid");
        for (q, w) in self.family.cubes().iter().zip(&self.omegas) {
            let cells = q.cells(res).expect("family cubes fit the grid");
            let vals = out.values_mut();
            for &c in cells.cells() {
                vals[c] += 2.0 * w;
            }
        }
        out
    }

    /// Largest `|f - m_f(Q_0)| - bound` over the cells of the root, and the cell attaining it.
    pub fn excess(&self, f: &GridFunction) -> Result<(f64, usize)> {
        f.check_cube(&self.root)?;
        let bound = self.bound();
        let mut worst = (f64::NEG_INFINITY, 0);
        for &c in self.root.cells(f.resolution())?.cells() {
            let e = (f.values()[c] - self.median).abs() - bound.values()[c];
            if e > worst.0 {
                worst = (e, c);
            }
        }
        Ok(worst)
    }

    /// The pointwise inequality with tolerance `tol · (1 + |f - m|)`, and sparsity.
    pub fn verify(&self, f: &GridFunction, tol: f64) -> Result<bool> {
        let bound = self.bound();
        for &c in self.root.cells(f.resolution())?.cells() {
            let lhs = (f.values()[c] - self.median).abs();
            if lhs > bound.values()[c] + tol * (1.0 + lhs) {
                return Ok(false);
            }
        }
        Ok(verify_sparse(&self.family))
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    cube: DyadicCube,
    #[serde(rename = "omega_value")]
    omega: f64,
    witness: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct DecompositionRepr {
    root: DyadicCube,
    median: f64,
    lambda: f64,
    dim: usize,
    resolution: u32,
    cubes: Vec<EntryRepr>,
}

impl Serialize for LernerDecomposition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DecompositionRepr {
            root: self.root,
            median: self.median,
            lambda: self.lambda,
            dim: self.family.dim(),
            resolution: self.family.resolution(),
            cubes: self
                .family
                .cubes()
                .iter()
                .enumerate()
                .map(|(i, q)| EntryRepr {
                    cube: *q,
                    omega: self.omegas[i],
                    witness: self.family.witness(i).ranges(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LernerDecomposition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DecompositionRepr::deserialize(d)?;
        let mut omegas = Vec::with_capacity(r.cubes.len());
        let mut entries = Vec::with_capacity(r.cubes.len());
        for e in r.cubes {
            let cells = e.witness.into_iter().flat_map(|(a, b)| a..b).collect();
            entries.push((e.cube, CellSet::from_cells(r.dim, r.resolution, cells)));
            omegas.push(e.omega);
        }
        let family =
            SparseFamily::new(r.dim, r.resolution, entries).map_err(serde::de::Error::custom)?;
        Ok(Self {
            root: r.root,
            median: r.median,
            lambda: r.lambda,
            family,
            omegas,
        })
    }
}

/// Maximal strict subcubes `R ⊂ Q` with `2^{n+1} |R ∩ E| >= |R|`.
fn stopping_cubes(q: &DyadicCube, in_e: &[bool], resolution: u32) -> Vec<DyadicCube> {
    let factor = 1usize << (q.dim() + 1);
    let mut out = Vec::new();
    let mut stack: Vec<DyadicCube> = if q.level() < resolution {
        q.children().into_iter().rev().collect()
    } else {
        Vec::new()
    };
    while let Some(r) = stack.pop() {
        let cells = r.cells(resolution).expect("subcube of a valid cube");
        let hits = cells.cells().iter().filter(|&&c| in_e[c]).count();
        if hits == 0 {
            continue;
        }
        if factor * hits >= cells.len() {
            out.push(r);
        } else if r.level() < resolution {
            stack.extend(r.children().into_iter().rev());
        }
    }
    out
}

/// Stopping-time construction of the sparse family.
///
/// At a cube `Q` with median `c` and `t = ((f - c) χ_Q)^*(2^{-n-2}|Q|)`, the
/// exceptional set is `E = {|f - c| > t}`; the children of `Q` are the maximal
/// strict subcubes `R` with `|R ∩ E| >= 2^{-n-1}|R|`. Off the children
/// `|f - c| <= t <= 2ω(Q)`, and `|m_f(R) - c| <= t` on each child, so the
/// bound telescopes with factor exactly 2. The children cover less than half
/// of `Q`, and `E_Q = Q \ ∪R`. Cubes with `ω = 0` are left out of the family.
pub fn lerner_decompose(f: &GridFunction, q0: &DyadicCube) -> Result<LernerDecomposition> {
    f.check_cube(q0)?;
    let dim = f.dim();
    let res = f.resolution();
    let lambda = lerner_lambda(dim);
    let root_median = median(f, q0)?;
    let mut in_e = vec![false; f.len()];
    let mut entries = Vec::new();
    let mut omegas = Vec::new();
    let mut stack = vec![*q0];
    while let Some(q) = stack.pop() {
        let cells = q.cells(res)?;
        let mut s: Vec<f64> = cells.cells().iter().map(|&c| f.values()[c]).collect();
        s.sort_unstable_by(f64::total_cmp);
        let c = median_sorted(&s);
        let omega = osc_sorted(&s, lambda);
        let t =
            Rearrangement::new(s.iter().map(|v| v - c), f.cell_volume()).at(lambda * q.volume());
        for &cell in cells.cells() {
            in_e[cell] = (f.values()[cell] - c).abs() > t;
        }
        let children = stopping_cubes(&q, &in_e, res);
        for &cell in cells.cells() {
            in_e[cell] = false;
        }
        if omega > 0.0 {
            let mut covered = Vec::new();
            for r in &children {
                covered.extend_from_slice(r.cells(res)?.cells());
            }
            let witness = cells.difference(&CellSet::from_cells(dim, res, covered));
            entries.push((q, witness));
            omegas.push(omega);
        }
        stack.extend(children.into_iter().rev());
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| entries[i].0);
    let omegas = order.iter().map(|&i| omegas[i]).collect();
    let mut slots: Vec<Option<(DyadicCube, CellSet)>> = entries.into_iter().map(Some).collect();
    let entries = order
        .iter()
        .map(|&i| slots[i].take().expect("each index once"))
        .collect();
    Ok(LernerDecomposition {
        root: *q0,
        median: root_median,
        lambda,
        family: SparseFamily::new(dim, res, entries)?,
        omegas,
    })
}

/// `ω_λ(T f; Q)` against `Σ_{ℓ=0}^{level(Q)} 2^{-ℓδ_0} Π_i ⟨f_i⟩_{2^ℓ Q, p0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationProfile {
    pub base: DyadicCube,
    pub operator: String,
    pub lambda: f64,
    pub p0: f64,
    pub delta0: f64,
    /// `Π_i ⟨f_i⟩_{2^ℓ Q, p0}` for `ℓ = 0..=level(Q)`; the last ring is the whole torus.
    pub ring_values: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent when `rhs = 0`.
    pub ratio: Option<f64>,
}

pub fn osc_profile(
    op: &dyn Operator,
    fs: &[GridFunction],
    q: &DyadicCube,
    lambda: f64,
    p0: f64,
    delta0: f64,
) -> Result<OscillationProfile> {
    if !(delta0 > 0.0) {
        return domain(format!(
            "the decay exponent δ0 must be positive, got {delta0}"
        ));
    }
    if !(p0 >= 1.0) {
        return domain(format!("p0 must be >= 1, got {p0}"));
    }
    let tf = op.apply(fs)?;
    let lhs = local_osc(&tf, q, lambda)?;
    let res = tf.resolution();
    let mut ring_values = Vec::with_capacity(q.level() as usize + 1);
    let mut rhs = 0.0;
    for ell in 0..=q.level() {
        let big = dilate(q, ell, res)?;
        let mut prod = 1.0;
        for f in fs {
            prod *= average_over(f, &big, p0)?;
        }
        let decay = if ell == 0 {
            1.0
        } else {
            (-(ell as f64) * delta0).exp2()
        };
        rhs += decay * prod;
        ring_values.push(prod);
    }
    Ok(OscillationProfile {
        base: *q,
        operator: op.name(),
        lambda,
        p0,
        delta0,
        ring_values,
        lhs,
        rhs,
        ratio: (rhs > 0.0).then(|| lhs / rhs),
    })
}
