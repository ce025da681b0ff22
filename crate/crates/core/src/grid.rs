//! Dyadic geometry on the periodic unit cube `[0,1)^n` and piecewise-constant
//! functions on its level-`L` lattice.
//!
//! Every function lives on the `2^{nL}` cells of the lattice; every dyadic cube
//! of level `j <= L` is a union of `2^{n(L-j)}` cells, so integrals over dyadic
//! cubes are finite sums. Dilations `2^k Q` are concentric, wrap around the
//! torus, and saturate to the whole torus once their side reaches 1.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dimension, domain, Error, Result};

/// Largest supported resolution for one-dimensional grids.
pub const MAX_LEVEL_1D: u32 = 12;
/// Largest supported resolution for two-dimensional grids.
pub const MAX_LEVEL_2D: u32 = 8;

pub(crate) fn check_dim_level(dim: usize, level: u32) -> Result<()> {
    match dim {
        1 if level <= MAX_LEVEL_1D => Ok(()),
        2 if level <= MAX_LEVEL_2D => Ok(()),
        1 | 2 => dimension(format!(
            "resolution {level} exceeds the supported maximum for n = {dim}"
        )),
        _ => dimension(format!(
            "dimension {dim} is not supported (n must be 1 or 2)"
        )),
    }
}

/// A dyadic cube `2^{-j}([0,1)^n + index)` of the canonical grid on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    dim: u8,
    level: u32,
    index: [u32; 2],
}

impl DyadicCube {
    pub fn new(dim: usize, level: u32, index: &[u32]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return dimension(format!("dimension {dim} is not supported"));
        }
        if index.len() != dim {
            return dimension(format!(
                "cube index has {} components, expected {dim}",
                index.len()
            ));
        }
        if level > 31 {
            return dimension(format!("cube level {level} is too deep"));
        }
        let side = 1u64 << level;
        if index.iter().any(|&i| i as u64 >= side) {
            return domain(format!(
                "cube index {index:?} out of range for level {level}"
            ));
        }
        let mut idx = [0u32; 2];
        idx[..dim].copy_from_slice(index);
        Ok(Self {
            dim: dim as u8,
            level,
            index: idx,
        })
    }

    /// The whole torus `[0,1)^n`.
    pub fn unit(dim: usize) -> Self {
        Self {
            dim: dim as u8,
            level: 0,
            index: [0, 0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> &[u32] {
        &self.index[..self.dim()]
    }

    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn volume(&self) -> f64 {
        (-((self.level as usize * self.dim()) as f64)).exp2()
    }

    /// Position of this cube in the row-major enumeration of its level.
    pub fn linear_index(&self) -> usize {
        let side = 1usize << self.level;
        self.index()
            .iter()
            .fold(0usize, |acc, &i| acc * side + i as usize)
    }

    pub fn from_linear(dim: usize, level: u32, linear: usize) -> Self {
        let side = 1usize << level;
        let mut index = [0u32; 2];
        let mut rest = linear;
        for slot in (0..dim).rev() {
            index[slot] = (rest % side) as u32;
            rest /= side;
        }
        Self {
            dim: dim as u8,
            level,
            index,
        }
    }

    pub fn parent(&self) -> Option<Self> {
        self.ancestor(1)
    }

    /// The unique cube `k` levels up that contains this one.
    pub fn ancestor(&self, k: u32) -> Option<Self> {
        if k > self.level {
            return None;
        }
        let mut index = self.index;
        for i in index.iter_mut().take(self.dim()) {
            *i >>= k;
        }
        Some(Self {
            dim: self.dim,
            level: self.level - k,
            index,
        })
    }

    /// The `2^n` children, in row-major order.
    pub fn children(&self) -> Vec<Self> {
        self.descendants(1)
    }

    /// All descendants exactly `k` levels below, in row-major order.
    pub fn descendants(&self, k: u32) -> Vec<Self> {
        let dim = self.dim();
        let per_axis = 1u32 << k;
        let level = self.level + k;
        let base: Vec<u32> = self.index().iter().map(|&i| i << k).collect();
        let mut out = Vec::with_capacity((per_axis as usize).pow(dim as u32));
        if dim == 1 {
            for a in 0..per_axis {
                out.push(Self {
                    dim: 1,
                    level,
                    index: [base[0] + a, 0],
                });
            }
        } else {
            for a in 0..per_axis {
                for b in 0..per_axis {
                    out.push(Self {
                        dim: 2,
                        level,
                        index: [base[0] + a, base[1] + b],
                    });
                }
            }
        }
        out
    }

    /// True when `other` is contained in `self` (not necessarily strictly).
    pub fn contains(&self, other: &Self) -> bool {
        other.dim == self.dim
            && other.level >= self.level
            && other.ancestor(other.level - self.level).as_ref() == Some(self)
    }

    /// Number of lattice cells of resolution `resolution` inside the cube.
    pub fn cell_count(&self, resolution: u32) -> usize {
        1usize << ((resolution - self.level) as usize * self.dim())
    }

    /// Lattice cells (row-major linear indices, ascending) covered by the cube.
    pub fn cells(&self, resolution: u32) -> Result<CellSet> {
        if self.level > resolution {
            return dimension(format!(
                "cube of level {} is finer than the grid resolution {resolution}",
                self.level
            ));
        }
        let s = 1usize << (resolution - self.level);
        let ranges: Vec<(usize, usize)> =
            self.index().iter().map(|&i| (i as usize * s, s)).collect();
        Ok(CellSet::from_axis_ranges(self.dim(), resolution, &ranges))
    }

    /// Concentric cube of the same center and half the side, as a cell set.
    pub fn half(&self, resolution: u32) -> Result<CellSet> {
        if self.level + 2 > resolution {
            return dimension(format!(
                "the half cube of a level-{} cube needs resolution at least {}",
                self.level,
                self.level + 2
            ));
        }
        let s = 1usize << (resolution - self.level);
        let ranges: Vec<(usize, usize)> = self
            .index()
            .iter()
            .map(|&i| (i as usize * s + s / 4, s / 2))
            .collect();
        Ok(CellSet::from_axis_ranges(self.dim(), resolution, &ranges))
    }

    /// True when `2^k Q` is at least as large as the torus.
    pub fn dilation_saturates(&self, k: u32) -> bool {
        k >= self.level
    }
}

impl std::fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:", self.level)?;
        let parts: Vec<String> = self.index().iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl std::str::FromStr for DyadicCube {
    type Err = Error;

    /// Parses `level:i` or `level:i,j`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("cannot parse cube `{s}` (expected level:i[,j])"));
        let (level, index) = s.split_once(':').ok_or_else(bad)?;
        let level: u32 = level.trim().parse().map_err(|_| bad())?;
        let index: Vec<u32> = index
            .split(',')
            .map(|t| t.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        Self::new(index.len(), level, &index)
    }
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    level: u32,
    index: Vec<u32>,
}

impl Serialize for DyadicCube {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CubeRepr {
            level: self.level,
            index: self.index().to_vec(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DyadicCube {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = CubeRepr::deserialize(deserializer)?;
        DyadicCube::new(repr.index.len(), repr.level, &repr.index).map_err(D::Error::custom)
    }
}

/// A set of lattice cells at a fixed resolution, kept sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSet {
    dim: usize,
    resolution: u32,
    cells: Vec<usize>,
}

impl CellSet {
    pub fn empty(dim: usize, resolution: u32) -> Self {
        Self {
            dim,
            resolution,
            cells: Vec::new(),
        }
    }

    pub fn from_cells(dim: usize, resolution: u32, mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self {
            dim,
            resolution,
            cells,
        }
    }

    /// Product of per-axis wrapped ranges `(start, length)`.
    fn from_axis_ranges(dim: usize, resolution: u32, ranges: &[(usize, usize)]) -> Self {
        let n = 1usize << resolution;
        let axis = |&(start, len): &(usize, usize)| -> Vec<usize> {
            (0..len.min(n)).map(|t| (start + t) % n).collect()
        };
        let cells = match dim {
            1 => axis(&ranges[0]),
            _ => {
                let rows = axis(&ranges[0]);
                let cols = axis(&ranges[1]);
                let mut out = Vec::with_capacity(rows.len() * cols.len());
                for r in &rows {
                    for c in &cols {
                        out.push(r * n + c);
                    }
                }
                out
            }
        };
        Self::from_cells(dim, resolution, cells)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    /// Lebesgue measure of the set.
    pub fn measure(&self) -> f64 {
        self.cells.len() as f64 * cell_volume(self.dim, self.resolution)
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        let cells = self
            .cells
            .iter()
            .copied()
            .filter(|c| !other.contains(*c))
            .collect();
        Self {
            dim: self.dim,
            resolution: self.resolution,
            cells,
        }
    }

    /// Maximal runs `[start, end)` of consecutive cell indices.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &c in &self.cells {
            match out.last_mut() {
                Some((_, end)) if *end == c => *end += 1,
                _ => out.push((c, c + 1)),
            }
        }
        out
    }
}

pub(crate) fn cell_volume(dim: usize, resolution: u32) -> f64 {
    (-((resolution as usize * dim) as f64)).exp2()
}

/// `2^k Q`: the concentric cube of side `min(1, 2^k ℓ(Q))`, wrapped on the torus.
///
/// When `Q` is a single lattice cell and `k >= 1` the dilate does not align
/// with cell boundaries; the cells whose centers fall in it are returned.
pub fn dilate(cube: &DyadicCube, k: u32, resolution: u32) -> Result<CellSet> {
    if cube.level() > resolution {
        return dimension(format!(
            "cube of level {} is finer than the grid resolution {resolution}",
            cube.level()
        ));
    }
    let n = 1usize << resolution;
    let s = 1usize << (resolution - cube.level());
    if cube.dilation_saturates(k) {
        let ranges = vec![(0, n); cube.dim()];
        return Ok(CellSet::from_axis_ranges(cube.dim(), resolution, &ranges));
    }
    let big = s << k;
    let ranges: Vec<(usize, usize)> = cube
        .index()
        .iter()
        .map(|&i| {
            let start2 = 2 * (i as i64) * s as i64 + s as i64 - big as i64;
            let start = start2.div_euclid(2).rem_euclid(n as i64) as usize;
            (start, big)
        })
        .collect();
    Ok(CellSet::from_axis_ranges(cube.dim(), resolution, &ranges))
}

/// The ring `S_j(Q) = 2^j Q \ 2^{j-1} Q` (and `S_0(Q) = Q`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Annulus {
    pub base: DyadicCube,
    pub ring: u32,
}

impl Annulus {
    pub fn new(base: DyadicCube, ring: u32) -> Self {
        Self { base, ring }
    }

    /// Rings whose outer cube exceeds the torus are empty after wrapping.
    pub fn is_saturated(&self) -> bool {
        self.ring > self.base.level()
    }

    pub fn cells(&self, resolution: u32) -> Result<CellSet> {
        if self.ring == 0 {
            return self.base.cells(resolution);
        }
        if self.is_saturated() {
            return Ok(CellSet::empty(self.base.dim(), resolution));
        }
        let outer = dilate(&self.base, self.ring, resolution)?;
        let inner = dilate(&self.base, self.ring - 1, resolution)?;
        Ok(outer.difference(&inner))
    }
}

/// Piecewise-constant real function on the level-`L` lattice of `[0,1)^n`,
/// stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct GridFunction {
    dim: usize,
    resolution: u32,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct GridRepr {
    dim: usize,
    resolution: u32,
    values: Vec<f64>,
}

impl TryFrom<GridRepr> for GridFunction {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        Self::new(r.dim, r.resolution, r.values)
    }
}

impl GridFunction {
    pub fn new(dim: usize, resolution: u32, values: Vec<f64>) -> Result<Self> {
        check_dim_level(dim, resolution)?;
        let expected = 1usize << (dim * resolution as usize);
        if values.len() != expected {
            return dimension(format!(
                "expected {expected} cell values for n = {dim}, L = {resolution}, got {}",
                values.len()
            ));
        }
        Ok(Self {
            dim,
            resolution,
            values,
        })
    }

    pub fn constant(dim: usize, resolution: u32, value: f64) -> Result<Self> {
        check_dim_level(dim, resolution)?;
        Ok(Self {
            dim,
            resolution,
            values: vec![value; 1usize << (dim * resolution as usize)],
        })
    }

    pub fn zeros(dim: usize, resolution: u32) -> Result<Self> {
        Self::constant(dim, resolution, 0.0)
    }

    /// Indicator of a set of cells.
    pub fn indicator(set: &CellSet) -> Result<Self> {
        let mut f = Self::zeros(set.dim(), set.resolution())?;
        for &c in set.cells() {
            f.values[c] = 1.0;
        }
        Ok(f)
    }

    /// Samples `func` at the cell centers.
    pub fn from_centers(dim: usize, resolution: u32, func: impl Fn(&[f64]) -> f64) -> Result<Self> {
        check_dim_level(dim, resolution)?;
        let n = 1usize << resolution;
        let h = 1.0 / n as f64;
        let mut values = Vec::with_capacity(n.pow(dim as u32));
        if dim == 1 {
            for i in 0..n {
                values.push(func(&[(i as f64 + 0.5) * h]));
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    values.push(func(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]));
                }
            }
        }
        Ok(Self {
            dim,
            resolution,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        cell_volume(self.dim, self.resolution)
    }

    /// Side length of the lattice in cells.
    pub fn side(&self) -> usize {
        1usize << self.resolution
    }

    pub fn map(&self, op: impl Fn(f64) -> f64) -> Self {
        Self {
            dim: self.dim,
            resolution: self.resolution,
            values: self.values.iter().map(|&v| op(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            resolution: self.resolution,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Values on the cells of `cube`.
    pub fn restrict(&self, cube: &DyadicCube) -> Result<Vec<f64>> {
        self.check_cube(cube)?;
        let set = cube.cells(self.resolution)?;
        Ok(set.cells().iter().map(|&c| self.values[c]).collect())
    }

    pub fn check_cube(&self, cube: &DyadicCube) -> Result<()> {
        if cube.dim() != self.dim {
            return dimension(format!(
                "cube dimension {} does not match function dimension {}",
                cube.dim(),
                self.dim
            ));
        }
        if cube.level() > self.resolution {
            return dimension(format!(
                "cube level {} exceeds function resolution {}",
                cube.level(),
                self.resolution
            ));
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.resolution != other.resolution {
            return dimension(format!(
                "grid shapes differ: (n = {}, L = {}) vs (n = {}, L = {})",
                self.dim, self.resolution, other.dim, other.resolution
            ));
        }
        Ok(())
    }

    /// Center of a lattice cell.
    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let n = self.side();
        let h = 1.0 / n as f64;
        if self.dim == 1 {
            [(cell as f64 + 0.5) * h, 0.0]
        } else {
            [((cell / n) as f64 + 0.5) * h, ((cell % n) as f64 + 0.5) * h]
        }
    }
}

/// Cube sums of a cellwise quantity at every level `0..=L`.
///
/// `level_values[j][Q.linear_index()]` is the combination (sum, min or max) of
/// the base values over the cells of `Q`.
#[derive(Clone, Debug)]
pub struct Pyramid {
    dim: usize,
    level_values: Vec<Vec<f64>>,
}

impl Pyramid {
    fn build(dim: usize, resolution: u32, base: Vec<f64>, combine: fn(f64, f64) -> f64) -> Self {
        let mut levels = vec![base];
        for j in (0..resolution).rev() {
            let side = 1usize << j;
            let child_side = side * 2;
            let finer = levels.last().expect("base level present");
            let coarse: Vec<f64> = if dim == 1 {
                (0..side)
                    .map(|i| combine(finer[2 * i], finer[2 * i + 1]))
                    .collect()
            } else {
                let mut out = Vec::with_capacity(side * side);
                for a in 0..side {
                    for b in 0..side {
                        let r0 = 2 * a * child_side;
                        let r1 = (2 * a + 1) * child_side;
                        let c = 2 * b;
                        out.push(combine(
                            combine(finer[r0 + c], finer[r0 + c + 1]),
                            combine(finer[r1 + c], finer[r1 + c + 1]),
                        ));
                    }
                }
                out
            };
            levels.push(coarse);
        }
        levels.reverse();
        Self {
            dim,
            level_values: levels,
        }
    }

    pub fn sums(f: &GridFunction, op: impl Fn(f64) -> f64) -> Self {
        let base = f.values().iter().map(|&v| op(v)).collect();
        Self::build(f.dim(), f.resolution(), base, |a, b| a + b)
    }

    pub fn minima(f: &GridFunction) -> Self {
        Self::build(f.dim(), f.resolution(), f.values().to_vec(), f64::min)
    }

    pub fn maxima(f: &GridFunction) -> Self {
        Self::build(f.dim(), f.resolution(), f.values().to_vec(), f64::max)
    }

    pub fn resolution(&self) -> u32 {
        (self.level_values.len() - 1) as u32
    }

    pub fn get(&self, cube: &DyadicCube) -> f64 {
        self.level_values[cube.level() as usize][cube.linear_index()]
    }

    /// Cube sum divided by the number of cells, for sum pyramids.
    pub fn mean(&self, cube: &DyadicCube) -> f64 {
        self.get(cube) / cube.cell_count(self.resolution()) as f64
    }

    pub fn level(&self, j: u32) -> &[f64] {
        &self.level_values[j as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// All dyadic cubes of levels `0..=maxlevel`, coarse to fine, row-major in each level.
pub fn cubes_up_to(dim: usize, maxlevel: u32) -> impl Iterator<Item = DyadicCube> {
    (0..=maxlevel).flat_map(move |j| {
        let count = 1usize << (j as usize * dim);
        (0..count).map(move |lin| DyadicCube::from_linear(dim, j, lin))
    })
}

/// `⟨f⟩_{Q,p0} = (|Q|^{-1} ∫_Q |f|^{p0})^{1/p0}`.
pub fn average(f: &GridFunction, cube: &DyadicCube, p0: f64) -> Result<f64> {
    f.check_cube(cube)?;
    let set = cube.cells(f.resolution())?;
    average_over(f, &set, p0)
}

/// `p0`-average of `|f|` over an arbitrary nonempty cell set.
pub fn average_over(f: &GridFunction, set: &CellSet, p0: f64) -> Result<f64> {
    if !(p0 >= 1.0) {
        return domain(format!("averaging exponent must be >= 1, got {p0}"));
    }
    if set.is_empty() {
        return domain("average over an empty cell set");
    }
    let sum: f64 = set
        .cells()
        .iter()
        .map(|&c| power(f.values[c].abs(), p0))
        .sum();
    Ok(root(sum / set.len() as f64, p0))
}

pub(crate) fn power(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

pub(crate) fn root(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x.sqrt()
    } else {
        x.powf(1.0 / p)
    }
}

/// The decreasing rearrangement of a finite family of equal-mass cells.
#[derive(Clone, Debug)]
pub struct Rearrangement {
    sorted: Vec<f64>,
    cell_volume: f64,
}

impl Rearrangement {
    /// Rearrangement of `|values|`, each cell carrying mass `cell_volume`.
    pub fn new(values: impl IntoIterator<Item = f64>, cell_volume: f64) -> Self {
        let mut sorted: Vec<f64> = values.into_iter().map(f64::abs).collect();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        Self {
            sorted,
            cell_volume,
        }
    }

    pub fn of(f: &GridFunction) -> Self {
        Self::new(f.values().iter().copied(), f.cell_volume())
    }

    /// `f*(t) = inf{α > 0 : |{|f| > α}| < t}`.
    pub fn at(&self, t: f64) -> f64 {
        let ratio = t / self.cell_volume;
        // the largest K with K < t / h is the number of cells allowed above the level
        let allowed = (ratio.ceil() as i64 - 1).max(0) as usize;
        self.sorted.get(allowed).copied().unwrap_or(0.0).max(0.0)
    }

    /// `|{|f| > α}|`.
    pub fn distribution(&self, alpha: f64) -> f64 {
        let count = self.sorted.partition_point(|&v| v > alpha);
        count as f64 * self.cell_volume
    }

    /// `sup_t t^{1/q} f*(t)`, attained at the right ends of the steps of `f*`.
    pub fn weak_norm(&self, q: f64) -> f64 {
        self.sorted
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1) as f64 * self.cell_volume).powf(1.0 / q) * v)
            .fold(0.0, f64::max)
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

/// `f*(t)` for the whole function.
pub fn rearrangement(f: &GridFunction, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("rearrangement argument must be positive, got {t}"));
    }
    Ok(Rearrangement::of(f).at(t))
}

/// Discrete `‖f‖_{L^p(w)} = (Σ |f|^p w · cellvol)^{1/p}`.
pub fn weighted_norm(f: &GridFunction, p: f64, w: &GridFunction) -> Result<f64> {
    f.check_same_shape(w)?;
    if !(p > 0.0) {
        return domain(format!("norm exponent must be positive, got {p}"));
    }
    if let Some(bad) = w.values().iter().position(|&v| !(v > 0.0)) {
        return domain(format!("weight is not positive at cell {bad}"));
    }
    let sum: f64 = f
        .values()
        .iter()
        .zip(w.values())
        .map(|(&v, &wt)| v.abs().powf(p) * wt)
        .sum();
    Ok((sum * f.cell_volume()).powf(1.0 / p))
}

/// Unweighted `‖f‖_{L^p}`.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return domain(format!("norm exponent must be positive, got {p}"));
    }
    let sum: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum();
    Ok((sum * f.cell_volume()).powf(1.0 / p))
}

/// The `L^{q,∞}` quasinorm `sup_t t^{1/q} f*(t)`.
pub fn weak_norm(f: &GridFunction, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return domain(format!("weak-norm exponent must be positive, got {q}"));
    }
    Ok(Rearrangement::of(f).weak_norm(q))
}

/// Distance on the unit torus `[0,1)^n`.
pub fn torus_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = (a - b).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube1(level: u32, i: u32) -> DyadicCube {
        DyadicCube::new(1, level, &[i]).unwrap()
    }

    fn indicator_1d(resolution: u32, lo: f64, hi: f64) -> GridFunction {
        GridFunction::from_centers(1, resolution, |x| {
            if x[0] >= lo && x[0] < hi {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn cube_geometry() {
        let q = DyadicCube::new(2, 2, &[1, 3]).unwrap();
        assert_eq!(q.volume(), 1.0 / 16.0);
        assert_eq!(q.side(), 0.25);
        let kids = q.children();
        assert_eq!(kids.len(), 4);
        assert!(kids.iter().all(|c| q.contains(c) && c.parent() == Some(q)));
        assert_eq!(q.ancestor(2), Some(DyadicCube::unit(2)));
        assert_eq!(q.ancestor(3), None);
        let cells = q.cells(4).unwrap();
        assert_eq!(cells.len(), 16);
        let union: usize = kids.iter().map(|c| c.cells(4).unwrap().len()).sum();
        assert_eq!(union, 16);
        assert!(DyadicCube::new(1, 2, &[4]).is_err());
        assert_eq!("3:5".parse::<DyadicCube>().unwrap(), cube1(3, 5));
    }

    #[test]
    fn cube_json_shape() {
        let q = DyadicCube::new(2, 3, &[1, 2]).unwrap();
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"{"level":3,"index":[1,2]}"#);
        let back: DyadicCube = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn average_examples() {
        let one = GridFunction::constant(1, 4, 1.0).unwrap();
        assert_eq!(average(&one, &cube1(2, 1), 2.0).unwrap(), 1.0);

        let half = indicator_1d(4, 0.0, 0.5);
        let v = average(&half, &cube1(0, 0), 2.0).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);

        // direct summation oracle: two of the eight cells of [0,1/2) are 1 at L = 4
        let quarter = indicator_1d(4, 0.0, 0.25);
        let cells = cube1(1, 0).cells(4).unwrap();
        let oracle: f64 = cells
            .cells()
            .iter()
            .map(|&c| quarter.values()[c])
            .sum::<f64>()
            / cells.len() as f64;
        assert_eq!(oracle, 0.5);
        assert_eq!(average(&quarter, &cube1(1, 0), 1.0).unwrap(), oracle);

        assert!(matches!(
            average(&quarter, &cube1(5, 0), 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dilate_examples() {
        let q = cube1(1, 0);
        assert_eq!(dilate(&q, 0, 4).unwrap(), q.cells(4).unwrap());

        // cell enumeration oracle: length-1/2 interval centered at 1/8 is [-1/8, 3/8)
        let d = dilate(&cube1(2, 0), 1, 4).unwrap();
        let expected: Vec<usize> = (0..16)
            .filter(|&c| {
                let x = (c as f64 + 0.5) / 16.0;
                let rel = (x - 0.125 + 0.5).rem_euclid(1.0) - 0.5;
                rel.abs() < 0.25
            })
            .collect();
        assert_eq!(d.cells(), expected.as_slice());
        assert_eq!(d.measure(), 0.5);

        let sat = dilate(&q, 3, 4).unwrap();
        assert_eq!(sat.len(), 16);
    }

    #[test]
    fn dilate_cell_level_uses_centers() {
        let d = dilate(&cube1(4, 5), 1, 4).unwrap();
        assert_eq!(d.cells(), &[4, 5]);
        let d = dilate(&cube1(4, 0), 2, 4).unwrap();
        assert_eq!(d.cells(), &[0, 1, 14, 15]);
    }

    #[test]
    fn annuli_are_disjoint_and_fill_the_dilate() {
        let q = cube1(4, 3);
        let rings: Vec<CellSet> = (0..=4)
            .map(|j| Annulus::new(q, j).cells(8).unwrap())
            .collect();
        let total: usize = rings.iter().map(|r| r.len()).sum();
        assert_eq!(total, 256);
        for a in 0..rings.len() {
            for b in a + 1..rings.len() {
                assert!(rings[a].cells().iter().all(|c| !rings[b].contains(*c)));
            }
        }
        assert!(Annulus::new(q, 5).is_saturated());
        assert!(Annulus::new(q, 5).cells(8).unwrap().is_empty());
    }

    #[test]
    fn rearrangement_examples() {
        let ind = indicator_1d(4, 0.0, 0.25);
        assert_eq!(rearrangement(&ind, 0.1).unwrap(), 1.0);
        assert_eq!(rearrangement(&ind, 0.25).unwrap(), 1.0);
        assert_eq!(rearrangement(&ind, 0.26).unwrap(), 0.0);

        let c = GridFunction::constant(1, 3, 2.5).unwrap();
        assert_eq!(rearrangement(&c, 1.0).unwrap(), 2.5);
        assert_eq!(rearrangement(&c, 0.01).unwrap(), 2.5);

        let step = GridFunction::new(1, 2, vec![1.0, 4.0, 0.0, 2.0]).unwrap();
        assert_eq!(rearrangement(&step, 0.3).unwrap(), 2.0);
    }

    #[test]
    fn weighted_norm_examples() {
        let one = GridFunction::constant(1, 3, 1.0).unwrap();
        for p in [0.5, 1.0, 3.0] {
            assert!((weighted_norm(&one, p, &one).unwrap() - 1.0).abs() < 1e-12);
        }
        let half = indicator_1d(4, 0.0, 0.5);
        let two = GridFunction::constant(1, 4, 2.0).unwrap();
        assert!((weighted_norm(&half, 1.0, &two).unwrap() - 1.0).abs() < 1e-12);

        let quarter = indicator_1d(4, 0.0, 0.25);
        let w = quarter.map(|v| if v > 0.0 { 4.0 } else { 1.0 });
        // direct sum oracle: 4 cells of value 1 weighted 4, volume 1/16 each
        let oracle = (4.0 * 4.0 / 16.0f64).sqrt();
        assert!((weighted_norm(&quarter, 2.0, &w).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 1.0).abs() < 1e-15);

        let bad = w.map(|v| v - 1.0);
        assert!(matches!(
            weighted_norm(&quarter, 2.0, &bad),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn weak_norm_examples() {
        let one = GridFunction::constant(1, 4, 1.0).unwrap();
        for q in [0.5, 1.0, 2.0] {
            assert!((weak_norm(&one, q).unwrap() - 1.0).abs() < 1e-12);
        }
        let ind = indicator_1d(4, 0.0, 0.25);
        assert!((weak_norm(&ind, 1.0).unwrap() - 0.25).abs() < 1e-12);

        // distribution-function oracle: sup_α α |{|f| > α}|^{1/q}, approached
        // from below at each distinct value
        let step = GridFunction::new(1, 2, vec![4.0, 2.0, 1.0, 0.0]).unwrap();
        let oracle = [4.0f64, 2.0, 1.0]
            .iter()
            .map(|&a| {
                let mass = step.values().iter().filter(|&&v| v >= a).count() as f64 / 4.0;
                a * mass.sqrt()
            })
            .fold(0.0, f64::max);
        assert_eq!(oracle, 2.0);
        assert!((weak_norm(&step, 2.0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn pyramid_matches_direct_sums() {
        let f = GridFunction::new(2, 2, (0..16).map(|v| v as f64).collect()).unwrap();
        let pyr = Pyramid::sums(&f, |v| v);
        for q in cubes_up_to(2, 2) {
            let direct: f64 = f.restrict(&q).unwrap().iter().sum();
            assert_eq!(pyr.get(&q), direct, "cube {q}");
        }
        let mins = Pyramid::minima(&f);
        assert_eq!(mins.get(&DyadicCube::new(2, 1, &[1, 1]).unwrap()), 10.0);
    }

    #[test]
    fn torus_distance_wraps() {
        assert!((torus_distance(&[0.05], &[0.95]) - 0.1).abs() < 1e-12);
        assert!((torus_distance(&[0.0, 0.0], &[0.5, 0.5]) - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
