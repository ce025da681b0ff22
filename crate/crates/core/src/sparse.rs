//! Carleson sequences, sparse families and the sparse operators built from
//! them, together with the stopping-time machinery that turns a
//! complexity-`k` operator into sums of complexity-zero ones.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::grid::{
    average_over, dilate, lp_norm, power, root, weak_norm, weighted_norm, CellSet, DyadicCube,
    GridFunction, Pyramid,
};
use crate::weights::conjugate;

/// Slack allowed in the packing condition.
pub const CARLESON_TOLERANCE: f64 = 1e-12;

/// Finitely supported nonnegative coefficients on the dyadic subcubes of a root cube.
#[derive(Clone, Debug, PartialEq)]
pub struct CarlesonSequence {
    root: DyadicCube,
    coeffs: BTreeMap<DyadicCube, f64>,
}

impl CarlesonSequence {
    /// Zero coefficients are dropped; repeated cubes are summed.
    pub fn new(
        root: DyadicCube,
        coeffs: impl IntoIterator<Item = (DyadicCube, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (q, a) in coeffs {
            if !(a >= 0.0) || !a.is_finite() {
                return domain(format!(
                    "coefficient {a} at cube {q} is not a finite nonnegative number"
                ));
            }
            if q.dim() != root.dim() {
                return dimension(format!(
                    "cube {q} has dimension {}, root has {}",
                    q.dim(),
                    root.dim()
                ));
            }
            if !root.contains(&q) {
                return domain(format!("cube {q} is not contained in the root {root}"));
            }
            if a > 0.0 {
                *map.entry(q).or_insert(0.0) += a;
            }
        }
        Ok(Self { root, coeffs: map })
    }

    /// `α = δ_Q`.
    pub fn single(root: DyadicCube, q: DyadicCube, alpha: f64) -> Result<Self> {
        Self::new(root, [(q, alpha)])
    }

    pub fn root(&self) -> DyadicCube {
        self.root
    }

    pub fn dim(&self) -> usize {
        self.root.dim()
    }

    pub fn get(&self, q: &DyadicCube) -> f64 {
        self.coeffs.get(q).copied().unwrap_or(0.0)
    }

    /// Support in canonical order (coarse to fine).
    pub fn iter(&self) -> impl Iterator<Item = (&DyadicCube, &f64)> {
        self.coeffs.iter()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_level(&self) -> Option<u32> {
        self.coeffs.keys().map(DyadicCube::level).max()
    }

    pub fn max_coefficient(&self) -> f64 {
        self.coeffs.values().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.root, self.coeffs.iter().map(|(q, a)| (*q, a * factor)))
    }

    fn terms(&self) -> Vec<(DyadicCube, f64)> {
        self.coeffs.iter().map(|(q, a)| (*q, *a)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CoefficientRepr {
    cube: DyadicCube,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct CarlesonRepr {
    root: DyadicCube,
    coefficients: Vec<CoefficientRepr>,
}

impl Serialize for CarlesonSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CarlesonRepr {
            root: self.root,
            coefficients: self
                .iter()
                .map(|(q, a)| CoefficientRepr {
                    cube: *q,
                    alpha: *a,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CarlesonSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CarlesonRepr::deserialize(d)?;
        Self::new(
            r.root,
            r.coefficients.into_iter().map(|c| (c.cube, c.alpha)),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Outcome of the packing check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonReport {
    pub holds: bool,
    pub worst: DyadicCube,
    pub ratio: f64,
}

/// `sup_Q |Q|^{-1} Σ_{T ⊂ Q} α_T |T| <= 1`, scanned over the subcubes of the root.
pub fn verify_carleson(a: &CarlesonSequence) -> CarlesonReport {
    let mut packed: HashMap<DyadicCube, f64> = HashMap::new();
    for (t, &alpha) in a.iter() {
        let mass = alpha * t.volume();
        for up in 0..=(t.level() - a.root.level()) {
            let q = t.ancestor(up).expect("ancestor inside the root");
            *packed.entry(q).or_insert(0.0) += mass;
        }
    }
    let mut entries: Vec<(DyadicCube, f64)> = packed
        .into_iter()
        .map(|(q, s)| (q, s / q.volume()))
        .collect();
    entries.sort_by_key(|x| x.0);
    let mut worst = a.root;
    let mut ratio = 0.0;
    for (q, r) in entries {
        if r > ratio {
            ratio = r;
            worst = q;
        }
    }
    CarlesonReport {
        holds: ratio <= 1.0 + CARLESON_TOLERANCE,
        worst,
        ratio,
    }
}

/// A cube collection with a witness set `E_Q ⊂ Q` per cube.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFamily {
    dim: usize,
    resolution: u32,
    cubes: Vec<DyadicCube>,
    witnesses: Vec<CellSet>,
}

impl SparseFamily {
    pub fn new(dim: usize, resolution: u32, entries: Vec<(DyadicCube, CellSet)>) -> Result<Self> {
        let mut cubes = Vec::with_capacity(entries.len());
        let mut witnesses = Vec::with_capacity(entries.len());
        for (q, e) in entries {
            if q.dim() != dim || e.dim() != dim {
                return dimension(format!("cube {q} does not live in dimension {dim}"));
            }
            if q.level() > resolution || e.resolution() != resolution {
                return dimension(format!(
                    "cube {q} or its witness does not match resolution {resolution}"
                ));
            }
            cubes.push(q);
            witnesses.push(e);
        }
        Ok(Self {
            dim,
            resolution,
            cubes,
            witnesses,
        })
    }

    pub fn empty(dim: usize, resolution: u32) -> Self {
        Self {
            dim,
            resolution,
            cubes: Vec::new(),
            witnesses: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn witness(&self, i: usize) -> &CellSet {
        &self.witnesses[i]
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// The family as a 0/1 coefficient sequence on the torus.
    pub fn as_sequence(&self) -> Result<CarlesonSequence> {
        CarlesonSequence::new(
            DyadicCube::unit(self.dim),
            self.cubes.iter().map(|q| (*q, 1.0)),
        )
    }

    fn terms(&self) -> Vec<(DyadicCube, f64)> {
        self.cubes.iter().map(|q| (*q, 1.0)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyEntryRepr {
    cube: DyadicCube,
    witness: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct FamilyRepr {
    dim: usize,
    resolution: u32,
    cubes: Vec<FamilyEntryRepr>,
}

impl Serialize for SparseFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FamilyRepr {
            dim: self.dim,
            resolution: self.resolution,
            cubes: self
                .cubes
                .iter()
                .zip(&self.witnesses)
                .map(|(q, e)| FamilyEntryRepr {
                    cube: *q,
                    witness: e.ranges(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = FamilyRepr::deserialize(d)?;
        let total = 1usize << (r.resolution as usize * r.dim);
        let mut entries = Vec::with_capacity(r.cubes.len());
        for e in r.cubes {
            let mut cells = Vec::new();
            for (a, b) in e.witness {
                if a > b || b > total {
                    return Err(serde::de::Error::custom(format!(
                        "bad cell range [{a}, {b})"
                    )));
                }
                cells.extend(a..b);
            }
            entries.push((e.cube, CellSet::from_cells(r.dim, r.resolution, cells)));
        }
        Self::new(r.dim, r.resolution, entries).map_err(serde::de::Error::custom)
    }
}

/// First violation of the sparse-family axioms, if any.
pub fn sparsity_violation(s: &SparseFamily) -> Option<(DyadicCube, String)> {
    let total = 1usize << (s.resolution as usize * s.dim);
    let mut owner: Vec<Option<usize>> = vec![None; total];
    for (i, (q, e)) in s.cubes.iter().zip(&s.witnesses).enumerate() {
        let inside = q.cells(s.resolution).expect("validated level");
        for &c in e.cells() {
            if !inside.contains(c) {
                return Some((*q, format!("witness cell {c} lies outside {q}")));
            }
            if let Some(j) = owner[c] {
                return Some((
                    *q,
                    format!("witness cell {c} is shared with {}", s.cubes[j]),
                ));
            }
            owner[c] = Some(i);
        }
        if 2 * e.len() < inside.len() {
            return Some((
                *q,
                format!("|E_Q| = {} cells but |Q| = {} cells", e.len(), inside.len()),
            ));
        }
    }
    None
}

/// Disjoint witnesses with `|Q| <= 2|E_Q|`, checked on cell counts.
pub fn verify_sparse(s: &SparseFamily) -> bool {
    sparsity_violation(s).is_none()
}

/// `E_Q = Q \ ∪{selected cubes strictly inside Q}`; fails on the first cube
/// keeping less than half of its cells.
pub fn greedy_witness(dim: usize, resolution: u32, cubes: &[DyadicCube]) -> Result<SparseFamily> {
    let mut sorted: Vec<DyadicCube> = cubes.to_vec();
    sorted.sort();
    sorted.dedup();
    for q in &sorted {
        if q.dim() != dim || q.level() > resolution {
            return dimension(format!(
                "cube {q} does not fit dimension {dim}, resolution {resolution}"
            ));
        }
    }
    let total = 1usize << (resolution as usize * dim);
    let mut covered = vec![false; total];
    let mut witnesses: Vec<Option<CellSet>> = vec![None; sorted.len()];
    let mut idx = sorted.len();
    while idx > 0 {
        let level = sorted[idx - 1].level();
        let start = sorted[..idx].partition_point(|q| q.level() < level);
        for i in start..idx {
            let q = sorted[i];
            let cells = q.cells(resolution)?;
            let kept: Vec<usize> = cells
                .cells()
                .iter()
                .copied()
                .filter(|&c| !covered[c])
                .collect();
            if 2 * kept.len() < cells.len() {
                return Err(Error::CheckFailed(format!(
                    "cube {q} keeps {} of {} cells after removing smaller selected cubes",
                    kept.len(),
                    cells.len()
                )));
            }
            witnesses[i] = Some(CellSet::from_cells(dim, resolution, kept));
        }
        for q in &sorted[start..idx] {
            for &c in q.cells(resolution)?.cells() {
                covered[c] = true;
            }
        }
        idx = start;
    }
    let entries = sorted
        .into_iter()
        .zip(witnesses)
        .map(|(q, e)| (q, e.expect("every level visited")))
        .collect();
    SparseFamily::new(dim, resolution, entries)
}

fn check_tuple(fs: &[GridFunction]) -> Result<(usize, u32)> {
    let first = fs
        .first()
        .ok_or_else(|| Error::Domain("the operator needs at least one function".into()))?;
    for f in &fs[1..] {
        first.check_same_shape(f)?;
    }
    Ok((first.dim(), first.resolution()))
}

fn check_nonnegative(fs: &[GridFunction]) -> Result<()> {
    for (i, f) in fs.iter().enumerate() {
        if let Some(c) = f.values().iter().position(|&v| !(v >= 0.0)) {
            return domain(format!("function {i} is negative at cell {c}"));
        }
    }
    Ok(())
}

fn check_p0(p0: f64) -> Result<()> {
    if !(p0 >= 1.0) || !p0.is_finite() {
        return domain(format!("p0 must be a finite number >= 1, got {p0}"));
    }
    Ok(())
}

/// Pyramids of `|f_i|^{p0}`, so that `Π⟨f_i⟩_{Q,p0}` costs `O(m)` per cube.
pub(crate) struct AverageTable {
    pyramids: Vec<Pyramid>,
    p0: f64,
}

impl AverageTable {
    pub(crate) fn new(fs: &[GridFunction], p0: f64) -> Self {
        Self {
            pyramids: fs
                .iter()
                .map(|f| Pyramid::sums(f, |v| power(v.abs(), p0)))
                .collect(),
            p0,
        }
    }

    pub(crate) fn average(&self, i: usize, q: &DyadicCube) -> f64 {
        root(self.pyramids[i].mean(q), self.p0)
    }

    pub(crate) fn product(&self, q: &DyadicCube) -> f64 {
        (0..self.pyramids.len())
            .map(|i| self.average(i, q))
            .product()
    }
}

/// Adds `coefficient[Q]` to every cell of `Q`.
fn push_down(dim: usize, resolution: u32, mut levels: Vec<Vec<f64>>) -> Vec<f64> {
    for j in 0..resolution as usize {
        let (coarse, fine) = levels.split_at_mut(j + 1);
        let coarse = &coarse[j];
        let fine = &mut fine[0];
        let side = 1usize << j;
        for (lin, &v) in coarse.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if dim == 1 {
                fine[2 * lin] += v;
                fine[2 * lin + 1] += v;
            } else {
                let (a, b) = (lin / side, lin % side);
                let fs = side * 2;
                for (da, db) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    fine[(2 * a + da) * fs + 2 * b + db] += v;
                }
            }
        }
    }
    levels.pop().expect("at least one level")
}

fn eval_ancestor_form(
    terms: &[(DyadicCube, f64)],
    root_cube: &DyadicCube,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    check_p0(p0)?;
    let (dim, resolution) = check_tuple(fs)?;
    if root_cube.dim() != dim {
        return dimension(format!("root {root_cube} does not live in dimension {dim}"));
    }
    let table = AverageTable::new(fs, p0);
    let mut levels: Vec<Vec<f64>> = (0..=resolution)
        .map(|j| vec![0.0; 1usize << (j as usize * dim)])
        .collect();
    for (q, alpha) in terms {
        if q.level() > resolution {
            return dimension(format!(
                "cube {q} is finer than the grid resolution {resolution}"
            ));
        }
        let Some(anc) = q.ancestor(k) else { continue };
        if !root_cube.contains(&anc) {
            continue;
        }
        levels[q.level() as usize][q.linear_index()] += alpha * table.product(&anc);
    }
    GridFunction::new(dim, resolution, push_down(dim, resolution, levels))
}

/// `𝒜^{k,p0}_α f = Σ_Q α_Q Π_i ⟨f_i⟩_{Q^{(k)},p0} χ_Q`, skipping `Q^{(k)} ⊄ P0`.
pub fn eval_sparse_a(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    eval_ancestor_form(&a.terms(), &a.root, k, p0, fs)
}

/// `𝒜^{k,p0}_𝒮` with unit coefficients on the cubes of a family.
pub fn eval_family_a(
    s: &SparseFamily,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    eval_ancestor_form(&s.terms(), &DyadicCube::unit(s.dim), k, p0, fs)
}

fn eval_dilate_form(
    terms: &[(DyadicCube, f64)],
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    check_p0(p0)?;
    let (dim, resolution) = check_tuple(fs)?;
    let mut levels: Vec<Vec<f64>> = (0..=resolution)
        .map(|j| vec![0.0; 1usize << (j as usize * dim)])
        .collect();
    for (q, alpha) in terms {
        if q.dim() != dim || q.level() > resolution {
            return dimension(format!("cube {q} does not fit the grid"));
        }
        let big = dilate(q, k, resolution)?;
        let mut prod = 1.0;
        for f in fs {
            prod *= average_over(f, &big, p0)?;
        }
        levels[q.level() as usize][q.linear_index()] += alpha * prod;
    }
    GridFunction::new(dim, resolution, push_down(dim, resolution, levels))
}

/// `𝒯^{k,p0}_α f = Σ_Q α_Q Π_i ⟨f_i⟩_{2^k Q,p0} χ_Q`.
pub fn eval_sparse_t(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    eval_dilate_form(&a.terms(), k, p0, fs)
}

pub fn eval_family_t(
    s: &SparseFamily,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
) -> Result<GridFunction> {
    eval_dilate_form(&s.terms(), k, p0, fs)
}

/// One piece `𝒜^{k,p0;0}_{α,P}` of the scale separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePiece {
    pub ell: u32,
    pub sequence: CarlesonSequence,
}

impl SlicePiece {
    pub fn root(&self) -> DyadicCube {
        self.sequence.root()
    }
}

/// Splits `𝒜^{k,p0}_{α,P0}` into `Σ_{ℓ<k} Σ_{P ∈ 𝒟_ℓ(P0)} 𝒜^{k,p0;0}_{α,P}`.
///
/// Piece `(ℓ, P)` carries the coefficients on `𝒟_{jk}(P)`, `j >= 1`. Empty
/// pieces are omitted. For `k = 0` the whole sequence is the only piece.
pub fn slice(a: &CarlesonSequence, k: u32) -> Vec<SlicePiece> {
    if a.is_empty() {
        return Vec::new();
    }
    if k == 0 {
        return vec![SlicePiece {
            ell: 0,
            sequence: a.clone(),
        }];
    }
    let base = a.root.level();
    let mut groups: BTreeMap<(u32, DyadicCube), Vec<(DyadicCube, f64)>> = BTreeMap::new();
    for (q, &alpha) in a.iter() {
        let rel = q.level() - base;
        if rel < k {
            continue;
        }
        let ell = rel % k;
        let p = q.ancestor(rel - ell).expect("inside the root");
        groups.entry((ell, p)).or_default().push((*q, alpha));
    }
    groups
        .into_iter()
        .map(|((ell, p), terms)| SlicePiece {
            ell,
            sequence: CarlesonSequence::new(p, terms).expect("subsequence of a valid sequence"),
        })
        .collect()
}

/// Result of the stopping-time selection on one piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub root: DyadicCube,
    pub k: u32,
    pub p0: f64,
    pub cstar: f64,
    pub selected: Vec<DyadicCube>,
    /// Witness family, absent when some selected cube fails the half-measure test.
    pub family: Option<SparseFamily>,
    /// First selected `P` with `|F(P)| > |P|/2`.
    pub violation: Option<DyadicCube>,
    /// `max_x 𝒜 f(x) / Σ_{Q∈𝒮} Π⟨f_i⟩_{Q,p0} χ_Q(x)`.
    pub domination_constant: f64,
}

impl SelectionReport {
    pub fn is_sparse(&self) -> bool {
        self.violation.is_none()
    }
}

/// The inductive selection: `Δ_{P0} = 0`, select `P` when `Δ_P < Π_P γ_P`.
///
/// For `k >= 1` the recursion runs over `𝒟_{jk}(P0)` with `γ_P = max_{𝒟_k(P)} α`;
/// for `k = 0` it runs over all subcubes with `γ_P = α_P`. It stops once
/// `level + k` exceeds the resolution.
pub fn select_sparse(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
    cstar: f64,
) -> Result<SelectionReport> {
    check_p0(p0)?;
    let (dim, resolution) = check_tuple(fs)?;
    check_nonnegative(fs)?;
    if !(cstar > 0.0) || !cstar.is_finite() {
        return domain(format!("C* must be positive and finite, got {cstar}"));
    }
    if cstar < a.max_coefficient() {
        return domain(format!(
            "C* = {cstar} is below the largest coefficient {}; Δ could turn negative",
            a.max_coefficient()
        ));
    }
    if a.dim() != dim {
        return dimension("sequence and functions live in different dimensions");
    }
    if let Some(level) = a.max_level() {
        if level > resolution {
            return dimension(format!(
                "coefficient at level {level} is finer than resolution {resolution}"
            ));
        }
    }
    let table = AverageTable::new(fs, p0);
    let mut selected = Vec::new();
    let mut stack = vec![(a.root, 0.0f64)];
    let stride = k.max(1);
    while let Some((p, delta)) = stack.pop() {
        if p.level() + k > resolution {
            continue;
        }
        let prod = table.product(&p);
        let kids = if k == 0 { Vec::new() } else { p.descendants(k) };
        let gamma = if k == 0 {
            a.get(&p)
        } else {
            kids.iter().map(|r| a.get(r)).fold(0.0, f64::max)
        };
        let chosen = delta - prod * gamma < 0.0;
        if chosen {
            selected.push(p);
        }
        if k == 0 {
            if p.level() < resolution {
                let next = delta + if chosen { cstar * prod } else { 0.0 } - a.get(&p) * prod;
                for q in p.descendants(stride).into_iter().rev() {
                    stack.push((q, next));
                }
            }
        } else {
            for q in kids.into_iter().rev() {
                let alpha = a.get(&q);
                let next = if chosen {
                    delta + (cstar - alpha) * prod
                } else {
                    delta - alpha * prod
                };
                stack.push((q, next));
            }
        }
    }
    selected.sort();
    let (family, violation) = match greedy_witness(dim, resolution, &selected) {
        Ok(f) => (Some(f), None),
        Err(_) => (None, first_half_violation(dim, resolution, &selected)),
    };
    let lhs = eval_sparse_a(a, k, p0, fs)?;
    let rhs = eval_ancestor_form(
        &selected.iter().map(|q| (*q, 1.0)).collect::<Vec<_>>(),
        &DyadicCube::unit(dim),
        0,
        p0,
        fs,
    )?;
    Ok(SelectionReport {
        root: a.root,
        k,
        p0,
        cstar,
        selected,
        family,
        violation,
        domination_constant: pointwise_ratio(&lhs, &rhs),
    })
}

/// `max_x lhs(x) / rhs(x)`, with `0/0` ignored and `x/0 = ∞` for `x > 0`.
pub fn pointwise_ratio(lhs: &GridFunction, rhs: &GridFunction) -> f64 {
    lhs.values()
        .iter()
        .zip(rhs.values())
        .filter(|(l, _)| **l != 0.0)
        .map(|(l, r)| if *r == 0.0 { f64::INFINITY } else { l / r })
        .fold(0.0, f64::max)
}

/// `F(P) = ∪{selected cubes strictly inside P}`; returns the first `P` with `|F(P)| > |P|/2`.
pub fn first_half_violation(
    dim: usize,
    resolution: u32,
    selected: &[DyadicCube],
) -> Option<DyadicCube> {
    let mut sorted = selected.to_vec();
    sorted.sort();
    sorted.dedup();
    for p in &sorted {
        let mut cells: Vec<usize> = Vec::new();
        for q in &sorted {
            if q.level() > p.level() && p.contains(q) {
                cells.extend_from_slice(q.cells(resolution).ok()?.cells());
            }
        }
        let covered = CellSet::from_cells(dim, resolution, cells).len();
        if 2 * covered > p.cell_count(resolution) {
            return Some(*p);
        }
    }
    None
}

/// Both sides of `(Σ_Q α_Q (Π avg_Q f_i)^q |Q|)^{1/q} <= Π p_i' ‖f_i‖_{p_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn carleson_embedding_check(
    a: &CarlesonSequence,
    q: f64,
    exponents: &[f64],
    fs: &[GridFunction],
) -> Result<EmbeddingReport> {
    let (dim, resolution) = check_tuple(fs)?;
    check_nonnegative(fs)?;
    if exponents.len() != fs.len() {
        return domain(format!(
            "{} exponents for {} functions",
            exponents.len(),
            fs.len()
        ));
    }
    if let Some(bad) = exponents.iter().find(|&&p| !(p > 1.0)) {
        return domain(format!("embedding exponents must exceed 1, got {bad}"));
    }
    let inv: f64 = exponents.iter().map(|p| 1.0 / p).sum();
    if !(q > 0.0) || (1.0 / q - inv).abs() > 1e-12 {
        return domain(format!("q = {q} does not satisfy 1/q = Σ 1/p_i = {inv}"));
    }
    if a.dim() != dim {
        return dimension("sequence and functions live in different dimensions");
    }
    let table = AverageTable::new(fs, 1.0);
    let mut sum = 0.0;
    for (cube, &alpha) in a.iter() {
        if cube.level() > resolution {
            return dimension(format!("cube {cube} is finer than resolution {resolution}"));
        }
        sum += alpha * table.product(cube).powf(q) * cube.volume();
    }
    let lhs = sum.powf(1.0 / q);
    let mut rhs = 1.0;
    for (f, &p) in fs.iter().zip(exponents) {
        rhs *= conjugate(p) * lp_norm(f, p)?;
    }
    Ok(EmbeddingReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-9),
    })
}

/// `β_Q = 2^{-nk} Σ_{R ∈ 𝒟_k(Q)} α_R` on the subcubes of the root.
pub fn beta_sequence(a: &CarlesonSequence, k: u32) -> CarlesonSequence {
    let scale = (-((k as usize * a.dim()) as f64)).exp2();
    let base = a.root.level();
    let terms = a.iter().filter_map(|(r, &alpha)| {
        if r.level() - base < k {
            return None;
        }
        Some((r.ancestor(k).expect("deep enough"), scale * alpha))
    });
    CarlesonSequence::new(a.root, terms).expect("coefficients stay nonnegative and inside the root")
}

/// Calderón–Zygmund pieces of one function of the tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CZComponent {
    /// Maximal strict subcubes of the base cube with `⟨f⟩_{R,p0} > λ^{1/m}`.
    pub stopping: Vec<DyadicCube>,
    /// `⟨f⟩_{R,p0}` for each stopping cube, as computed.
    pub averages: Vec<f64>,
    pub good: GridFunction,
    pub bad: GridFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CZDecomposition {
    pub base: DyadicCube,
    pub lambda: f64,
    pub p0: f64,
    pub m: usize,
    pub components: Vec<CZComponent>,
}

impl CZDecomposition {
    /// `λ^{1/m}`, the stopping threshold on `p0`-averages.
    pub fn threshold(&self) -> f64 {
        self.lambda.powf(1.0 / self.m as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CZOutcome {
    /// Some `⟨f_i⟩_{P,p0}` already exceeds `λ^{1/m}`, so `|P| λ^{p0/m} < ‖f_i‖_{p0}^{p0}`.
    ShortCircuit {
        index: usize,
        average: f64,
    },
    Decomposed(CZDecomposition),
}

/// Decomposes each `f_i^{p0} = g_i + Σ_R b_i^R` below the base cube, with
/// `b_i^R = (f_i^{p0} - ⟨f_i⟩_{R,p0}^{p0}) χ_R`.
pub fn cz_decompose(
    fs: &[GridFunction],
    lambda: f64,
    p0: f64,
    m: usize,
    base: &DyadicCube,
) -> Result<CZOutcome> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return domain(format!("λ must be positive, got {lambda}"));
    }
    check_p0(p0)?;
    if m == 0 {
        return domain("m must be at least 1");
    }
    let (_, resolution) = check_tuple(fs)?;
    fs[0].check_cube(base)?;
    let threshold = lambda.powf(1.0 / m as f64);
    let table = AverageTable::new(fs, p0);
    for i in 0..fs.len() {
        let avg = table.average(i, base);
        if avg > threshold {
            return Ok(CZOutcome::ShortCircuit {
                index: i,
                average: avg,
            });
        }
    }
    let mut components = Vec::with_capacity(fs.len());
    for (i, f) in fs.iter().enumerate() {
        let mut stopping = Vec::new();
        let mut averages = Vec::new();
        let mut stack: Vec<DyadicCube> = if base.level() < resolution {
            base.children().into_iter().rev().collect()
        } else {
            Vec::new()
        };
        while let Some(r) = stack.pop() {
            let avg = table.average(i, &r);
            if avg > threshold {
                stopping.push(r);
                averages.push(avg);
            } else if r.level() < resolution {
                stack.extend(r.children().into_iter().rev());
            }
        }
        let fp = f.map(|v| power(v.abs(), p0));
        let mut bad = vec![0.0; f.len()];
        let mut good = fp.values().to_vec();
        for (r, &avg) in stopping.iter().zip(&averages) {
            let level = power(avg, p0);
            for &c in r.cells(resolution)?.cells() {
                bad[c] = fp.values()[c] - level;
                good[c] = level;
            }
        }
        components.push(CZComponent {
            stopping,
            averages,
            good: GridFunction::new(f.dim(), resolution, good)?,
            bad: GridFunction::new(f.dim(), resolution, bad)?,
        });
    }
    Ok(CZOutcome::Decomposed(CZDecomposition {
        base: *base,
        lambda,
        p0,
        m,
        components,
    }))
}

/// Which dyadic maximal operator to apply.
#[derive(Clone, Debug, PartialEq)]
pub enum MaximalMode {
    /// `M_{p0} f(x) = sup_{Q ∋ x} ⟨f⟩_{Q,p0}`.
    Plain { p0: f64 },
    /// `M_σ f(x) = sup_{Q ∋ x} σ(Q)^{-1} ∫_Q |f| σ`.
    SigmaWeighted { sigma: GridFunction },
}

/// Cellwise supremum over all dyadic cubes containing the cell.
pub fn dyadic_maximal(f: &GridFunction, mode: &MaximalMode) -> Result<GridFunction> {
    let dim = f.dim();
    let resolution = f.resolution();
    let level_avgs: Vec<Vec<f64>> = match mode {
        MaximalMode::Plain { p0 } => {
            check_p0(*p0)?;
            let pyr = Pyramid::sums(f, |v| power(v.abs(), *p0));
            (0..=resolution)
                .map(|j| {
                    let cells = 1usize << ((resolution - j) as usize * dim);
                    pyr.level(j)
                        .iter()
                        .map(|s| root(s / cells as f64, *p0))
                        .collect()
                })
                .collect()
        }
        MaximalMode::SigmaWeighted { sigma } => {
            f.check_same_shape(sigma)?;
            if let Some(c) = sigma.values().iter().position(|&v| !(v > 0.0)) {
                return domain(format!("σ is not positive at cell {c}"));
            }
            let prod = f.zip_with(sigma, |a, b| a.abs() * b)?;
            let num = Pyramid::sums(&prod, |v| v);
            let den = Pyramid::sums(sigma, |v| v);
            (0..=resolution)
                .map(|j| {
                    num.level(j)
                        .iter()
                        .zip(den.level(j))
                        .map(|(a, b)| a / b)
                        .collect()
                })
                .collect()
        }
    };
    let mut running = level_avgs[0].clone();
    for (j, avgs) in level_avgs.iter().enumerate().skip(1) {
        let side = 1usize << j;
        let parent_side = side / 2;
        running = avgs
            .iter()
            .enumerate()
            .map(|(lin, &v)| {
                let parent = if dim == 1 {
                    lin / 2
                } else {
                    (lin / side / 2) * parent_side + (lin % side) / 2
                };
                v.max(running[parent])
            })
            .collect();
    }
    GridFunction::new(dim, resolution, running)
}

/// Both sides of `‖M_σ f‖_{L^p(σ)} <= p' ‖f‖_{L^p(σ)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn maximal_bound_check(
    f: &GridFunction,
    sigma: &GridFunction,
    p: f64,
) -> Result<MaximalBoundReport> {
    if !(p > 1.0) {
        return domain(format!("the maximal bound needs p > 1, got {p}"));
    }
    let mf = dyadic_maximal(
        f,
        &MaximalMode::SigmaWeighted {
            sigma: sigma.clone(),
        },
    )?;
    let lhs = weighted_norm(&mf, p, sigma)?;
    let rhs = conjugate(p) * weighted_norm(f, p, sigma)?;
    Ok(MaximalBoundReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-9),
    })
}

/// Running maximum of `‖𝒜^{k,p0;0}_α f‖_{L^{p0/m,∞}}` over inputs normalized in `L^{p0}`.
///
/// The first trial is the normalized indicator of the root; later trials
/// alternate between uniform random values and indicators of random subcubes.
/// This is a lower estimate of a supremum.
#[allow(clippy::too_many_arguments)]
pub fn measure_weak_norm(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    m: usize,
    resolution: u32,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    check_p0(p0)?;
    if trials == 0 {
        return domain("at least one trial is needed");
    }
    if m == 0 {
        return domain("m must be at least 1");
    }
    let dim = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = p0 / m as f64;
    let mut best: f64 = 0.0;
    for t in 0..trials {
        let fs: Vec<GridFunction> = (0..m)
            .map(|_| -> Result<GridFunction> {
                let raw = if t == 0 {
                    GridFunction::indicator(&a.root.cells(resolution)?)?
                } else if t % 2 == 1 {
                    random_function(dim, resolution, &mut rng)?
                } else {
                    let level = rng.gen_range(a.root.level()..=resolution);
                    let sub = random_subcube(&a.root, level, &mut rng);
                    GridFunction::indicator(&sub.cells(resolution)?)?
                };
                let norm = lp_norm(&raw, p0)?;
                Ok(if norm > 0.0 {
                    raw.scale(1.0 / norm)
                } else {
                    raw
                })
            })
            .collect::<Result<_>>()?;
        let out = eval_sparse_a(a, k, p0, &fs)?;
        best = best.max(weak_norm(&out, q)?);
    }
    Ok(best)
}

/// `C* = 2^{2(m+1)} · 2Ŵ`, never below the largest coefficient.
pub fn default_cstar(m: usize, weak_norm_estimate: f64, max_alpha: f64) -> f64 {
    let c = (2.0 * (m as f64 + 1.0)).exp2() * 2.0 * weak_norm_estimate;
    c.max(max_alpha).max(1.0)
}

/// Output of the full domination pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub k: u32,
    pub p0: f64,
    pub seed: u64,
    pub pieces: Vec<PieceOutcome>,
    /// `max_x 𝒜^{k,p0}_α f(x) / Σ_pieces 𝒜^{0,p0}_{𝒮_ℓ} f(x)`.
    pub pointwise_ratio: f64,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    /// `lhs_norm / rhs_norm`, absent when both vanish.
    pub norm_ratio: Option<f64>,
    pub norm_exponent: f64,
    pub all_sparse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceOutcome {
    pub ell: u32,
    pub root: DyadicCube,
    pub weak_norm_estimate: f64,
    pub selection: SelectionReport,
}

/// Options for [`dominate`].
#[derive(Clone, Debug)]
pub struct DominateOptions {
    /// Norm exponent for the reported ratio.
    pub p: f64,
    /// Weight for the reported norms; `None` means Lebesgue measure.
    pub weight: Option<GridFunction>,
    /// Trials for each weak-norm estimate.
    pub trials: usize,
    pub seed: u64,
    /// Overrides the default `C*`.
    pub cstar: Option<f64>,
}

impl Default for DominateOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            weight: None,
            trials: 16,
            seed: 0,
            cstar: None,
        }
    }
}

/// slice, select on every piece, then compare `𝒜^{k,p0}_α f` against the sum
/// of the complexity-zero operators of the selected families.
pub fn dominate(
    a: &CarlesonSequence,
    k: u32,
    p0: f64,
    fs: &[GridFunction],
    opts: &DominateOptions,
) -> Result<DominationReport> {
    let (dim, resolution) = check_tuple(fs)?;
    check_nonnegative(fs)?;
    let m = fs.len();
    let mut pieces = Vec::new();
    let mut rhs = GridFunction::zeros(dim, resolution)?;
    for (idx, piece) in slice(a, k).into_iter().enumerate() {
        let seq = &piece.sequence;
        let w_hat = measure_weak_norm(
            seq,
            k,
            p0,
            m,
            resolution,
            opts.trials,
            opts.seed.wrapping_add(idx as u64),
        )?;
        let cstar = opts
            .cstar
            .unwrap_or_else(|| default_cstar(m, w_hat, seq.max_coefficient()));
        let selection = select_sparse(seq, k, p0, fs, cstar)?;
        let part = eval_ancestor_form(
            &selection
                .selected
                .iter()
                .map(|q| (*q, 1.0))
                .collect::<Vec<_>>(),
            &DyadicCube::unit(dim),
            0,
            p0,
            fs,
        )?;
        rhs = rhs.zip_with(&part, |x, y| x + y)?;
        pieces.push(PieceOutcome {
            ell: piece.ell,
            root: piece.root(),
            weak_norm_estimate: w_hat,
            selection,
        });
    }
    let lhs = eval_sparse_a(a, k, p0, fs)?;
    let norm = |g: &GridFunction| match &opts.weight {
        Some(w) => weighted_norm(g, opts.p, w),
        None => lp_norm(g, opts.p),
    };
    let lhs_norm = norm(&lhs)?;
    let rhs_norm = norm(&rhs)?;
    let norm_ratio = if rhs_norm > 0.0 {
        Some(lhs_norm / rhs_norm)
    } else if lhs_norm == 0.0 {
        None
    } else {
        Some(f64::INFINITY)
    };
    Ok(DominationReport {
        k,
        p0,
        seed: opts.seed,
        all_sparse: pieces.iter().all(|p| p.selection.is_sparse()),
        pieces,
        pointwise_ratio: pointwise_ratio(&lhs, &rhs),
        lhs_norm,
        rhs_norm,
        norm_ratio,
        norm_exponent: opts.p,
    })
}

/// A uniformly chosen dyadic subcube of `root` at `level`.
pub fn random_subcube<R: Rng + ?Sized>(root: &DyadicCube, level: u32, rng: &mut R) -> DyadicCube {
    let k = level - root.level();
    let per_axis = 1u32 << k;
    let index: Vec<u32> = root
        .index()
        .iter()
        .map(|&i| (i << k) + rng.gen_range(0..per_axis))
        .collect();
    DyadicCube::new(root.dim(), level, &index).expect("index in range")
}

/// Cell values i.i.d. uniform on `[0, 1]`.
pub fn random_function<R: Rng + ?Sized>(
    dim: usize,
    resolution: u32,
    rng: &mut R,
) -> Result<GridFunction> {
    let n = 1usize << (resolution as usize * dim);
    GridFunction::new(
        dim,
        resolution,
        (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
    )
}

/// Cell values i.i.d. log-uniform on `[2^{-4}, 2^4]`.
pub fn random_weight<R: Rng + ?Sized>(
    dim: usize,
    resolution: u32,
    rng: &mut R,
) -> Result<GridFunction> {
    let n = 1usize << (resolution as usize * dim);
    GridFunction::new(
        dim,
        resolution,
        (0..n)
            .map(|_| rng.gen_range(-4.0f64..=4.0).exp2())
            .collect(),
    )
}

/// Random coefficients on about `count` subcubes of `root` down to `maxlevel`,
/// rescaled so that the packing condition holds.
pub fn random_carleson<R: Rng + ?Sized>(
    root: &DyadicCube,
    maxlevel: u32,
    count: usize,
    rng: &mut R,
) -> Result<CarlesonSequence> {
    if maxlevel < root.level() {
        return domain(format!(
            "maxlevel {maxlevel} is above the root level {}",
            root.level()
        ));
    }
    let terms: Vec<(DyadicCube, f64)> = (0..count)
        .map(|_| {
            let level = rng.gen_range(root.level()..=maxlevel);
            (random_subcube(root, level, rng), rng.gen_range(0.0..=1.0))
        })
        .collect();
    let a = CarlesonSequence::new(*root, terms)?;
    let ratio = verify_carleson(&a).ratio;
    if ratio > 1.0 {
        a.scaled(1.0 / ratio)
    } else {
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube(level: u32, i: u32) -> DyadicCube {
        DyadicCube::new(1, level, &[i]).unwrap()
    }

    fn interval_indicator(res: u32, level: u32, i: u32) -> GridFunction {
        GridFunction::indicator(&cube(level, i).cells(res).unwrap()).unwrap()
    }

    /// `Σ_Q α_Q Π avg χ_Q` by looping over cells and cubes directly.
    fn direct_a(a: &CarlesonSequence, k: u32, p0: f64, fs: &[GridFunction]) -> Vec<f64> {
        let res = fs[0].resolution();
        let mut out = vec![0.0; fs[0].len()];
        for (q, &alpha) in a.iter() {
            let Some(anc) = q.ancestor(k) else { continue };
            if !a.root().contains(&anc) {
                continue;
            }
            let prod: f64 = fs
                .iter()
                .map(|f| crate::grid::average(f, &anc, p0).unwrap())
                .product();
            for &c in q.cells(res).unwrap().cells() {
                out[c] += alpha * prod;
            }
        }
        out
    }

    #[test]
    fn carleson_examples() {
        let root = DyadicCube::unit(1);
        let r = verify_carleson(&CarlesonSequence::single(root, root, 1.0).unwrap());
        assert!(r.holds);
        assert_eq!(r.worst, root);
        assert_eq!(r.ratio, 1.0);

        let a = CarlesonSequence::new(root, [(root, 1.0), (cube(1, 0), 1.0)]).unwrap();
        let r = verify_carleson(&a);
        assert!(!r.holds);
        assert_eq!(r.worst, root);
        assert!((r.ratio - 1.5).abs() < 1e-15);

        let r = verify_carleson(&CarlesonSequence::new(root, []).unwrap());
        assert!(r.holds && r.ratio == 0.0);

        assert!(CarlesonSequence::single(root, root, -1.0).is_err());
        assert!(CarlesonSequence::single(cube(1, 0), cube(1, 1), 1.0).is_err());
    }

    #[test]
    fn carleson_in_two_dimensions() {
        let root = DyadicCube::unit(2);
        let child = DyadicCube::new(2, 1, &[1, 0]).unwrap();
        let a = CarlesonSequence::new(root, [(root, 1.0), (child, 1.0)]).unwrap();
        assert!((verify_carleson(&a).ratio - 1.25).abs() < 1e-15);
    }

    fn chain_family(first_witness: CellSet) -> SparseFamily {
        let res = 3;
        let c0 = cube(0, 0);
        let c1 = cube(1, 0);
        let c2 = cube(2, 0);
        let e1 = c1.cells(res).unwrap().difference(&c2.cells(res).unwrap());
        SparseFamily::new(
            1,
            res,
            vec![(c0, first_witness), (c1, e1), (c2, c2.cells(res).unwrap())],
        )
        .unwrap()
    }

    #[test]
    fn sparse_examples() {
        let res = 3;
        let half = cube(1, 0).cells(res).unwrap();
        let s = SparseFamily::new(1, res, vec![(cube(0, 0), half)]).unwrap();
        assert!(verify_sparse(&s));

        let e0 = cube(0, 0)
            .cells(res)
            .unwrap()
            .difference(&cube(1, 0).cells(res).unwrap());
        assert!(verify_sparse(&chain_family(e0)));

        let bad = chain_family(cube(2, 0).cells(res).unwrap());
        assert!(!verify_sparse(&bad));
        let bad_quarter = chain_family(cube(2, 3).cells(res).unwrap());
        let (w, _) = sparsity_violation(&bad_quarter).unwrap();
        assert_eq!(w, cube(0, 0));
    }

    #[test]
    fn greedy_witness_examples() {
        let s = greedy_witness(1, 3, &[cube(0, 0)]).unwrap();
        assert!(verify_sparse(&s));
        assert_eq!(s.witness(0).len(), 8);

        let s = greedy_witness(1, 3, &[cube(0, 0), cube(1, 0), cube(2, 0)]).unwrap();
        assert!(verify_sparse(&s));
        let counts: Vec<usize> = (0..3).map(|i| s.witness(i).len()).collect();
        assert_eq!(counts, vec![4, 2, 2]);

        // both halves selected leave nothing for the parent
        let err = greedy_witness(1, 3, &[cube(0, 0), cube(1, 0), cube(1, 1)]).unwrap_err();
        assert!(matches!(err, Error::CheckFailed(_)));
        assert_eq!(
            first_half_violation(1, 3, &[cube(0, 0), cube(1, 0), cube(1, 1)]),
            Some(cube(0, 0))
        );
    }

    #[test]
    fn family_json_round_trip() {
        let s = greedy_witness(1, 4, &[cube(0, 0), cube(2, 1), cube(3, 7)]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: SparseFamily = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(text.contains("\"witness\""));
    }

    #[test]
    fn eval_a_examples() {
        let res = 3;
        let one = GridFunction::constant(1, res, 1.0).unwrap();
        let s =
            SparseFamily::new(1, res, vec![(cube(0, 0), cube(1, 0).cells(res).unwrap())]).unwrap();
        let out = eval_family_a(&s, 0, 1.0, std::slice::from_ref(&one)).unwrap();
        assert!(out.values().iter().all(|&v| v == 1.0));

        let a = CarlesonSequence::single(DyadicCube::unit(1), cube(1, 0), 1.0).unwrap();
        let f = interval_indicator(res, 1, 1);
        let out = eval_sparse_a(&a, 1, 1.0, &[f]).unwrap();
        let expect: Vec<f64> = (0..8).map(|i| if i < 4 { 0.5 } else { 0.0 }).collect();
        assert_eq!(out.values(), expect.as_slice());

        let g = interval_indicator(res, 1, 0);
        let a = CarlesonSequence::single(DyadicCube::unit(1), cube(0, 0), 1.0).unwrap();
        let out = eval_sparse_a(&a, 0, 2.0, &[g.clone(), g]).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        assert!(eval_sparse_a(&a, 0, 1.0, &[]).is_err());
    }

    #[test]
    fn eval_a_skips_ancestors_outside_root() {
        let res = 4;
        let root = cube(1, 0);
        let a = CarlesonSequence::new(
            root,
            [(cube(1, 0), 1.0), (cube(2, 1), 1.0), (cube(3, 0), 0.5)],
        )
        .unwrap();
        let one = GridFunction::constant(1, res, 1.0).unwrap();
        let out = eval_sparse_a(&a, 1, 1.0, std::slice::from_ref(&one)).unwrap();
        assert_eq!(out.values(), direct_a(&a, 1, 1.0, &[one]).as_slice());
        // level-1 cube has ancestor [0,1) which is not inside the root
        assert_eq!(out.values()[0], 0.5);
        assert_eq!(out.values()[4], 1.0);
    }

    #[test]
    fn eval_t_examples() {
        let res = 4;
        let f = interval_indicator(res, 2, 3);
        let s =
            SparseFamily::new(1, res, vec![(cube(2, 0), cube(2, 0).cells(res).unwrap())]).unwrap();
        let out = eval_family_t(&s, 2, 1.0, std::slice::from_ref(&f)).unwrap();
        // 2^2 [0,1/4) is the whole torus
        assert!((out.values()[0] - 0.25).abs() < 1e-15);

        let out = eval_family_t(&s, 1, 1.0, std::slice::from_ref(&f)).unwrap();
        // 2[0,1/4) = [-1/8, 3/8) wraps onto [7/8, 1), half of which is in the support of f
        let set = dilate(&cube(2, 0), 1, res).unwrap();
        let oracle = set.cells().iter().filter(|&&c| c >= 12).count() as f64 / set.len() as f64;
        assert!(oracle > 0.0);
        assert!((out.values()[0] - oracle).abs() < 1e-15);
        assert_eq!(out.values()[8], 0.0);

        let g = random_function(1, res, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a0 = eval_family_a(&s, 0, 1.5, std::slice::from_ref(&g)).unwrap();
        let t0 = eval_family_t(&s, 0, 1.5, std::slice::from_ref(&g)).unwrap();
        for (x, y) in a0.values().iter().zip(t0.values()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn slice_examples() {
        let root = DyadicCube::unit(1);
        let a = CarlesonSequence::new(
            root,
            [(cube(2, 1), 0.3), (cube(3, 5), 0.2), (cube(1, 1), 0.1)],
        )
        .unwrap();
        let pieces = slice(&a, 1);
        assert_eq!(pieces.len(), 1);
        assert_eq!((pieces[0].ell, pieces[0].root()), (0, root));

        let pieces = slice(&a, 2);
        let shape: Vec<(u32, DyadicCube, usize)> = pieces
            .iter()
            .map(|p| (p.ell, p.root(), p.sequence.len()))
            .collect();
        assert_eq!(shape, vec![(0, root, 1), (1, cube(1, 1), 1)]);
        assert!(slice(&CarlesonSequence::new(root, []).unwrap(), 2).is_empty());
    }

    #[test]
    fn slice_reassembles_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=3 {
            let a = random_carleson(&DyadicCube::unit(1), 7, 40, &mut rng).unwrap();
            let fs = vec![
                random_function(1, 7, &mut rng).unwrap(),
                random_function(1, 7, &mut rng).unwrap(),
            ];
            let whole = eval_sparse_a(&a, k, 1.5, &fs).unwrap();
            let mut sum = vec![0.0; whole.len()];
            for piece in slice(&a, k) {
                let part = eval_sparse_a(&piece.sequence, k, 1.5, &fs).unwrap();
                for (s, v) in sum.iter_mut().zip(part.values()) {
                    *s += v;
                }
            }
            for (x, y) in whole.values().iter().zip(&sum) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn selection_examples() {
        let res = 4;
        let root = DyadicCube::unit(1);
        let one = GridFunction::constant(1, res, 1.0).unwrap();
        let a = CarlesonSequence::single(root, root, 1.0).unwrap();
        for cstar in [1.0, 3.5, 100.0] {
            let r = select_sparse(&a, 0, 1.0, std::slice::from_ref(&one), cstar).unwrap();
            assert_eq!(r.selected, vec![root]);
        }
        assert!(select_sparse(&a, 0, 1.0, std::slice::from_ref(&one), 0.5).is_err());

        let zero = GridFunction::zeros(1, res).unwrap();
        let a = random_carleson(&root, res, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let r = select_sparse(&a, 1, 1.0, &[zero], 10.0).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.domination_constant, 0.0);

        let neg = one.scale(-1.0);
        assert!(select_sparse(&a, 1, 1.0, &[neg], 10.0).is_err());
    }

    #[test]
    fn selection_randomized() {
        let res = 8;
        let root = DyadicCube::unit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..60 {
            let k = trial % 3;
            let m = 1 + trial as usize % 2;
            let p0 = [1.0, 1.5, 2.0][trial as usize % 3];
            let a = random_carleson(&root, res, 60, &mut rng).unwrap();
            let fs: Vec<GridFunction> = (0..m)
                .map(|_| random_function(1, res, &mut rng).unwrap())
                .collect();
            for piece in slice(&a, k) {
                let w = measure_weak_norm(&piece.sequence, k, p0, m, res, 4, trial as u64).unwrap();
                let cstar = default_cstar(m, w, piece.sequence.max_coefficient());
                let r = select_sparse(&piece.sequence, k, p0, &fs, cstar).unwrap();
                assert!(r.is_sparse(), "trial {trial}: {:?}", r.violation);
                assert!(r.domination_constant <= cstar * (1.0 + 1e-12));
                assert!(verify_sparse(r.family.as_ref().unwrap()));
            }
        }
    }

    #[test]
    fn embedding_examples() {
        let res = 5;
        let root = DyadicCube::unit(1);
        let one = GridFunction::constant(1, res, 1.0).unwrap();
        let a = CarlesonSequence::single(root, root, 1.0).unwrap();
        let r =
            carleson_embedding_check(&a, 1.0, &[2.0, 2.0], &[one.clone(), one.clone()]).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-15 && (r.rhs - 4.0).abs() < 1e-12 && r.holds);

        let spike = GridFunction::indicator(&CellSet::from_cells(1, res, vec![3])).unwrap();
        let b = random_carleson(&root, res, 30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r = carleson_embedding_check(&b, 2.0, &[2.0], &[spike]).unwrap();
        assert!(r.holds && r.lhs < 0.5 * r.rhs);

        assert!(carleson_embedding_check(&a, 2.0, &[2.0, 2.0], &[one.clone(), one]).is_err());
    }

    #[test]
    fn beta_examples() {
        let root = DyadicCube::unit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_carleson(&root, 6, 30, &mut rng).unwrap();
        assert_eq!(beta_sequence(&a, 0), a);

        let r = cube(2, 3);
        let b = beta_sequence(&CarlesonSequence::single(root, r, 1.0).unwrap(), 2);
        assert_eq!(b.len(), 1);
        assert!((b.get(&root) - 0.25).abs() < 1e-15);

        for k in 1..=2 {
            for _ in 0..20 {
                let a = random_carleson(&root, 6, 30, &mut rng).unwrap();
                assert!(verify_carleson(&beta_sequence(&a, k)).holds);
            }
        }
    }

    #[test]
    fn cz_examples() {
        let res = 4;
        let root = DyadicCube::unit(1);
        let f = interval_indicator(res, 2, 0).scale(4.0);
        let CZOutcome::Decomposed(d) =
            cz_decompose(std::slice::from_ref(&f), 1.5, 1.0, 1, &root).unwrap()
        else {
            panic!("no short circuit expected");
        };
        let c = &d.components[0];
        assert_eq!(c.stopping, vec![cube(1, 0)]);
        let expect_b: Vec<f64> = (0..16)
            .map(|i| {
                if i < 4 {
                    2.0
                } else if i < 8 {
                    -2.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(c.bad.values(), expect_b.as_slice());
        let expect_g: Vec<f64> = (0..16).map(|i| if i < 8 { 2.0 } else { 0.0 }).collect();
        assert_eq!(c.good.values(), expect_g.as_slice());

        let zero = GridFunction::zeros(1, res).unwrap();
        let CZOutcome::Decomposed(d) =
            cz_decompose(std::slice::from_ref(&zero), 1.0, 1.0, 1, &root).unwrap()
        else {
            panic!()
        };
        assert!(d.components[0].stopping.is_empty());
        assert!(d.components[0].bad.values().iter().all(|&v| v == 0.0));

        let small = random_function(1, res, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap()
            .scale(0.5);
        let CZOutcome::Decomposed(d) =
            cz_decompose(std::slice::from_ref(&small), 0.25, 2.0, 2, &root).unwrap()
        else {
            panic!()
        };
        assert!(d.components[0].stopping.is_empty());
        let sq = small.map(|v| v * v);
        assert_eq!(d.components[0].good, sq);

        assert!(matches!(
            cz_decompose(std::slice::from_ref(&f), 0.5, 1.0, 1, &root).unwrap(),
            CZOutcome::ShortCircuit { index: 0, .. }
        ));
        assert!(cz_decompose(&[f], 0.0, 1.0, 1, &root).is_err());
    }

    #[test]
    fn maximal_examples() {
        let res = 4;
        let one = GridFunction::constant(1, res, 1.0).unwrap();
        let m = dyadic_maximal(&one, &MaximalMode::Plain { p0: 1.0 }).unwrap();
        assert!(m.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let f = interval_indicator(res, 2, 0);
        let m = dyadic_maximal(&f, &MaximalMode::Plain { p0: 1.0 }).unwrap();
        // sup over the ancestors of each cell, by brute force
        for cell in 0..16u32 {
            let oracle = (0..=res)
                .map(|lvl| {
                    crate::grid::average(&f, &cube(res, cell).ancestor(lvl).unwrap(), 1.0).unwrap()
                })
                .fold(0.0, f64::max);
            assert_eq!(m.values()[cell as usize], oracle);
        }
        assert_eq!(m.values()[12], 0.25);
        assert_eq!(m.values()[5], 0.5);
    }

    #[test]
    fn maximal_weighted_matches_direct_sup() {
        let res = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_function(2, res, &mut rng).unwrap();
        let sigma = random_weight(2, res, &mut rng).unwrap();
        let m = dyadic_maximal(
            &f,
            &MaximalMode::SigmaWeighted {
                sigma: sigma.clone(),
            },
        )
        .unwrap();
        for cell in 0..f.len() {
            let c = DyadicCube::from_linear(2, res, cell);
            let oracle = (0..=res)
                .map(|up| {
                    let q = c.ancestor(up).unwrap();
                    let fw = f.restrict(&q).unwrap();
                    let sw = sigma.restrict(&q).unwrap();
                    fw.iter().zip(&sw).map(|(a, b)| a * b).sum::<f64>() / sw.iter().sum::<f64>()
                })
                .fold(0.0, f64::max);
            assert!((m.values()[cell] - oracle).abs() < 1e-12 * oracle.max(1.0));
        }
    }

    #[test]
    fn weak_norm_examples() {
        let res = 6;
        let root = DyadicCube::unit(1);
        let a = CarlesonSequence::single(root, root, 1.0).unwrap();
        let w = measure_weak_norm(&a, 0, 1.0, 1, res, 1, 0).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        let w = measure_weak_norm(&a, 0, 2.0, 2, res, 40, 7).unwrap();
        assert!(w <= 1.0 + 1e-9);
        let w10 = measure_weak_norm(&a, 0, 1.5, 2, res, 10, 1).unwrap();
        let w20 = measure_weak_norm(&a, 0, 1.5, 2, res, 20, 1).unwrap();
        assert!(w20 >= w10);
    }

    #[test]
    fn dominate_examples() {
        let res = 6;
        let root = DyadicCube::unit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a = random_carleson(&root, res, 40, &mut rng).unwrap();
        let fs = vec![random_function(1, res, &mut rng).unwrap()];
        let r = dominate(&a, 0, 1.0, &fs, &DominateOptions::default()).unwrap();
        assert_eq!(r.pieces.len(), 1);
        assert!(r.pointwise_ratio.is_finite() && r.all_sparse);

        let r = dominate(&a, 2, 1.0, &fs, &DominateOptions::default()).unwrap();
        assert!(r.all_sparse && r.norm_ratio.unwrap().is_finite());

        let zero = vec![GridFunction::zeros(1, res).unwrap()];
        let r = dominate(&a, 1, 1.0, &zero, &DominateOptions::default()).unwrap();
        assert_eq!((r.lhs_norm, r.rhs_norm, r.norm_ratio), (0.0, 0.0, None));
    }

    fn grid_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..4.0, len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn eval_a_is_multisublinear(v1 in grid_values(32), v2 in grid_values(32), lam in -3.0f64..3.0, k in 0u32..3) {
            let f1 = GridFunction::new(1, 5, v1).unwrap();
            let f2 = GridFunction::new(1, 5, v2).unwrap();
            let a = random_carleson(&DyadicCube::unit(1), 5, 12, &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
            let base = eval_sparse_a(&a, k, 1.5, &[f1.clone(), f2.clone()]).unwrap();
            let scaled = eval_sparse_a(&a, k, 1.5, &[f1.scale(lam), f2.clone()]).unwrap();
            for (x, y) in base.values().iter().zip(scaled.values()) {
                prop_assert!((x * lam.abs() - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let direct = direct_a(&a, k, 1.5, &[f1.clone(), f2.clone()]);
            for (x, y) in base.values().iter().zip(&direct) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let lower = eval_sparse_a(&a, k, 1.0, &[f1, f2]).unwrap();
            for (hi, lo) in base.values().iter().zip(lower.values()) {
                prop_assert!(*hi >= lo * (1.0 - 1e-12));
            }
        }

        #[test]
        fn cz_invariants(v in grid_values(64), lambda in 0.2f64..3.0, p0 in 1.0f64..2.5) {
            let f = GridFunction::new(1, 6, v).unwrap();
            let root = DyadicCube::unit(1);
            match cz_decompose(std::slice::from_ref(&f), lambda, p0, 2, &root).unwrap() {
                CZOutcome::ShortCircuit { average, .. } => prop_assert!(average > lambda.sqrt()),
                CZOutcome::Decomposed(d) => {
                    let c = &d.components[0];
                    let thr = d.threshold();
                    let fp = f.map(|x| x.powf(p0));
                    let mut measure = 0.0;
                    for r in &c.stopping {
                        let cells = r.cells(6).unwrap();
                        let mean: f64 = cells.cells().iter().map(|&i| c.bad.values()[i]).sum::<f64>();
                        prop_assert!(mean.abs() <= 1e-12 * cells.len() as f64 * (1.0 + fp.max_abs()));
                        prop_assert!(crate::grid::average(&f, r, p0).unwrap() > thr * (1.0 - 1e-12));
                        let parent = r.parent().unwrap();
                        prop_assert!(crate::grid::average(&f, &parent, p0).unwrap() <= thr * (1.0 + 1e-12));
                        measure += r.volume();
                    }
                    let norm = lp_norm(&f, p0).unwrap().powf(p0);
                    prop_assert!(measure <= lambda.powf(-p0 / 2.0) * norm * (1.0 + 1e-12));
                    let bound = 2.0 * lambda.powf(p0 / 2.0);
                    for (g, (b, x)) in c.good.values().iter().zip(c.bad.values().iter().zip(fp.values())) {
                        prop_assert!((g + b - x).abs() <= 1e-12 * (1.0 + x));
                        prop_assert!(*g <= bound * (1.0 + 1e-12));
                    }
                    prop_assert!((c.good.integral() - norm).abs() <= 1e-12 * (1.0 + norm));
                }
            }
        }

        #[test]
        fn maximal_bound_holds(v in grid_values(64), s in prop::collection::vec(-4.0f64..4.0, 64)) {
            let f = GridFunction::new(1, 6, v).unwrap();
            let sigma = GridFunction::new(1, 6, s.into_iter().map(f64::exp2).collect()).unwrap();
            let r = maximal_bound_check(&f, &sigma, 2.0).unwrap();
            prop_assert!(r.holds, "{:?}", r);
        }

        #[test]
        fn embedding_holds(v1 in grid_values(32), v2 in grid_values(32), seed in 0u64..1000) {
            let a = random_carleson(&DyadicCube::unit(1), 5, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let f1 = GridFunction::new(1, 5, v1).unwrap();
            let f2 = GridFunction::new(1, 5, v2).unwrap();
            prop_assert!(carleson_embedding_check(&a, 2.0, &[2.0], std::slice::from_ref(&f1)).unwrap().holds);
            prop_assert!(carleson_embedding_check(&a, 1.0, &[2.0, 2.0], &[f1, f2]).unwrap().holds);
        }
    }
}
