//! Model operators on the torus: Fourier multipliers (linear and bilinear),
//! the periodic Hilbert transform, their kernels, and numerical checks of the
//! symbol and kernel-regularity conditions.
//!
//! Frequencies live on the integer lattice `[-N/2, N/2)^d`, `N = 2^L`. The
//! transform is `f̂(ξ) = Σ_j f_j e^{-2πi jξ/N}`, and a multiplier acts by
//! `T_m f = N^{-1} Σ_ξ m(ξ) f̂(ξ) e^{2πi xξ/N}`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::grid::{Annulus, DyadicCube, GridFunction};

type SymbolFn = dyn Fn(&[f64]) -> Complex64 + Send + Sync;

#[derive(Clone)]
enum SymbolKind {
    Closed(Arc<SymbolFn>),
    Sampled {
        resolution: u32,
        values: Vec<Complex64>,
    },
}

/// A Fourier multiplier symbol on `d` frequency variables (`d = n` for linear
/// operators, `d = 2n` for bilinear ones).
#[derive(Clone)]
pub struct Symbol {
    name: String,
    dims: usize,
    kind: SymbolKind,
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Symbol")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .finish()
    }
}

impl Symbol {
    pub fn closed(
        name: impl Into<String>,
        dims: usize,
        eval: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dims,
            kind: SymbolKind::Closed(Arc::new(eval)),
        }
    }

    /// Values on the lattice `[-N/2, N/2)^d` in row-major order, cell `j` of an
    /// axis holding frequency `j - N/2`.
    pub fn sampled(
        name: impl Into<String>,
        dims: usize,
        resolution: u32,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if !(1..=2).contains(&dims) {
            return dimension(format!(
                "sampled symbols need 1 or 2 frequency variables, got {dims}"
            ));
        }
        let expected = 1usize << (resolution as usize * dims);
        if values.len() != expected {
            return dimension(format!(
                "expected {expected} symbol samples, got {}",
                values.len()
            ));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return domain(format!("symbol sample {i} is not finite"));
        }
        Ok(Self {
            name: name.into(),
            dims,
            kind: SymbolKind::Sampled { resolution, values },
        })
    }

    /// Real samples stored as a grid function over the frequency lattice.
    pub fn from_grid(name: impl Into<String>, g: &GridFunction) -> Result<Self> {
        let values = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::sampled(name, g.dim(), g.resolution(), values)
    }

    pub fn identity(dims: usize) -> Self {
        Self::closed("identity", dims, |_| Complex64::new(1.0, 0.0))
    }

    pub fn zero(dims: usize) -> Self {
        Self::closed("zero", dims, |_| Complex64::new(0.0, 0.0))
    }

    /// `-i sign(ξ)`, the Hilbert transform symbol.
    pub fn hilbert() -> Self {
        Self::closed("hilbert", 1, |x| {
            Complex64::new(0.0, -x[0].signum() * f64::from(x[0] != 0.0))
        })
    }

    /// `-i sign(ξ)` with the Nyquist frequency `-2^{L-1}` set to zero, so that
    /// the symbol is Hermitian on the lattice of resolution `L`.
    pub fn hilbert_hermitian(resolution: u32) -> Self {
        let nyquist = -((1u64 << (resolution - 1)) as f64);
        Self::closed("hilbert", 1, move |x| {
            if x[0] == nyquist || x[0] == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -x[0].signum())
            }
        })
    }

    /// `|ξ|^{iτ}`, zero at the origin.
    pub fn oscillating(tau: f64) -> Self {
        Self::closed(format!("oscillating({tau})"), 1, move |x| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, tau * r.ln())
            }
        })
    }

    /// `m(ξ) = ξ`, unbounded.
    pub fn linear_growth() -> Self {
        Self::closed("linear", 1, |x| Complex64::new(x[0], 0.0))
    }

    /// `-i ξ / |(ξ, η)|`, zero at the origin; homogeneous of degree zero and
    /// smooth away from it.
    pub fn cone() -> Self {
        Self::closed("cone", 2, |x| {
            let d = x[0].hypot(x[1]);
            Complex64::new(0.0, if d == 0.0 { 0.0 } else { -x[0] / d })
        })
    }

    /// `ξ η`, unbounded.
    pub fn product() -> Self {
        Self::closed("product", 2, |x| Complex64::new(x[0] * x[1], 0.0))
    }

    /// Built-in symbols by name.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "identity" => Self::identity(1),
            "zero" => Self::zero(1),
            "sign" | "hilbert" | "riesz1d" => Self::hilbert(),
            "oscillating" => Self::oscillating(1.0),
            "linear" => Self::linear_growth(),
            "bilinear-identity" => Self::identity(2),
            "cone" => Self::cone(),
            "product" => Self::product(),
            other => return domain(format!("unknown symbol '{other}'")),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// `m(ξ)` at an integer frequency; `None` outside a sampled lattice.
    pub fn value(&self, xi: &[i64]) -> Option<Complex64> {
        match &self.kind {
            SymbolKind::Closed(f) => {
                let x: Vec<f64> = xi.iter().map(|&v| v as f64).collect();
                Some(f(&x))
            }
            SymbolKind::Sampled { resolution, values } => {
                let half = 1i64 << (resolution - 1);
                let n = 2 * half;
                let mut lin = 0usize;
                for &v in xi {
                    if v < -half || v >= half {
                        return None;
                    }
                    lin = lin * n as usize + (v + half) as usize;
                }
                Some(values[lin])
            }
        }
    }

    /// Values in FFT bin order on the lattice of resolution `L`.
    fn tabulate(&self, resolution: u32) -> Result<Vec<Complex64>> {
        if let SymbolKind::Sampled { resolution: r, .. } = &self.kind {
            if *r != resolution {
                return dimension(format!(
                    "symbol sampled at resolution {r}, grid has {resolution}"
                ));
            }
        }
        let n = 1usize << resolution;
        let freq = |k: usize| -> i64 {
            if k < n / 2 {
                k as i64
            } else {
                k as i64 - n as i64
            }
        };
        let total = n.pow(self.dims as u32);
        let mut out = Vec::with_capacity(total);
        for lin in 0..total {
            let xi: Vec<i64> = if self.dims == 1 {
                vec![freq(lin)]
            } else {
                vec![freq(lin / n), freq(lin % n)]
            };
            out.push(
                self.value(&xi)
                    .expect("lattice point inside the sampled range"),
            );
        }
        Ok(out)
    }
}

/// Bin of `-ξ` for bin `k` on an axis of length `n`.
fn neg_bin(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// `m(-ξ) = conj m(ξ)` off the Nyquist lines. On those lines `-ξ ≡ ξ`, and the
/// real part of the output is that of the symmetrized symbol `(m(ξ) + conj m(-ξ)) / 2`.
fn is_hermitian(table: &[Complex64], n: usize, dims: usize) -> bool {
    let scale = table.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let on_nyquist = |lin: usize| {
        if dims == 1 {
            lin == n / 2
        } else {
            lin / n == n / 2 || lin % n == n / 2
        }
    };
    (0..table.len()).filter(|&lin| !on_nyquist(lin)).all(|lin| {
        let partner = if dims == 1 {
            neg_bin(lin, n)
        } else {
            neg_bin(lin / n, n) * n + neg_bin(lin % n, n)
        };
        (table[partner] - table[lin].conj()).norm() <= 1e-14 * scale
    })
}

/// Unnormalized DFT along every axis; `inverse` flips the exponent sign.
fn fft_grid(data: &mut [Complex64], dims: usize, n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    if dims == 1 {
        fft.process(data);
        return;
    }
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            column[r] = data[r * n + c];
        }
        fft.process(&mut column);
        for r in 0..n {
            data[r * n + c] = column[r];
        }
    }
}

/// `T_m` on complex cell values of an `n`-dimensional grid at resolution `L`.
pub fn apply_linear_multiplier_complex(
    m: &Symbol,
    values: &[Complex64],
    dim: usize,
    resolution: u32,
) -> Result<Vec<Complex64>> {
    if m.dims != dim {
        return dimension(format!(
            "symbol has {} variables, function has dimension {dim}",
            m.dims
        ));
    }
    let n = 1usize << resolution;
    if values.len() != n.pow(dim as u32) {
        return dimension(format!(
            "expected {} cell values, got {}",
            n.pow(dim as u32),
            values.len()
        ));
    }
    let table = m.tabulate(resolution)?;
    let mut data = values.to_vec();
    fft_grid(&mut data, dim, n, false);
    for (d, s) in data.iter_mut().zip(&table) {
        *d *= s;
    }
    fft_grid(&mut data, dim, n, true);
    let norm = 1.0 / data.len() as f64;
    for d in &mut data {
        *d *= norm;
    }
    Ok(data)
}

/// `T_m f`. Real part when `m` is Hermitian on the lattice, modulus otherwise.
/// The Hilbert symbol, for instance, acts as zero on the Nyquist mode.
pub fn apply_linear_multiplier(m: &Symbol, f: &GridFunction) -> Result<GridFunction> {
    let values: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let out = apply_linear_multiplier_complex(m, &values, f.dim(), f.resolution())?;
    let n = 1usize << f.resolution();
    let real = if is_hermitian(&m.tabulate(f.resolution())?, n, f.dim()) {
        out.iter().map(|c| c.re).collect()
    } else {
        log::warn!("symbol '{}' is not Hermitian; reporting |T_m f|", m.name);
        out.iter().map(|c| c.norm()).collect()
    };
    GridFunction::new(f.dim(), f.resolution(), real)
}

/// Periodic Hilbert transform with the real (Hermitian) symbol.
///
/// `H∘H = -(I - P_0 - P_{N/2})`, where `P_{N/2}` projects onto the Nyquist mode.
pub fn hilbert_transform(f: &GridFunction) -> Result<GridFunction> {
    if f.dim() != 1 {
        return dimension("the Hilbert transform is one-dimensional");
    }
    apply_linear_multiplier(&Symbol::hilbert_hermitian(f.resolution()), f)
}

/// Hilbert transform with the literal symbol `-i sign(ξ)` on complex values;
/// applied twice it equals `-(I - mean)` exactly.
pub fn hilbert_transform_complex(values: &[Complex64], resolution: u32) -> Result<Vec<Complex64>> {
    apply_linear_multiplier_complex(&Symbol::hilbert(), values, 1, resolution)
}

/// `T_m(f, g)(x) = N^{-2} Σ_ξ Σ_η e^{2πi x(ξ+η)/N} m(ξ, η) f̂(ξ) ĝ(η)`, by direct double sum.
pub fn apply_bilinear_multiplier(
    m: &Symbol,
    f: &GridFunction,
    g: &GridFunction,
) -> Result<GridFunction> {
    f.check_same_shape(g)?;
    if f.dim() != 1 {
        return dimension("bilinear multipliers are implemented for n = 1");
    }
    if m.dims != 2 {
        return dimension(format!(
            "a bilinear symbol needs 2 variables, got {}",
            m.dims
        ));
    }
    let n = f.len();
    let table = m.tabulate(f.resolution())?;
    let transform = |h: &GridFunction| {
        let mut d: Vec<Complex64> = h.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_grid(&mut d, 1, n, false);
        d
    };
    let fh = transform(f);
    let gh = transform(g);
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for a in 0..n {
        for b in 0..n {
            h[(a + b) % n] += table[a * n + b] * fh[a] * gh[b];
        }
    }
    fft_grid(&mut h, 1, n, true);
    let norm = 1.0 / (n * n) as f64;
    let values = if is_hermitian(&table, n, 2) {
        h.iter().map(|c| c.re * norm).collect()
    } else {
        log::warn!(
            "symbol '{}' is not Hermitian; reporting |T_m(f, g)|",
            m.name
        );
        h.iter().map(|c| c.norm() * norm).collect()
    };
    GridFunction::new(1, f.resolution(), values)
}

/// A model operator acting on `m`-tuples of grid functions.
pub trait Operator: Send + Sync {
    fn arity(&self) -> usize;
    fn apply(&self, fs: &[GridFunction]) -> Result<GridFunction>;
    fn name(&self) -> String;
}

fn check_arity(op: &dyn Operator, fs: &[GridFunction]) -> Result<()> {
    if fs.len() != op.arity() {
        return domain(format!(
            "{} takes {} functions, got {}",
            op.name(),
            op.arity(),
            fs.len()
        ));
    }
    Ok(())
}

/// `T_m` for a linear symbol.
#[derive(Clone, Debug)]
pub struct LinearMultiplier(pub Symbol);

impl Operator for LinearMultiplier {
    fn arity(&self) -> usize {
        1
    }

    fn apply(&self, fs: &[GridFunction]) -> Result<GridFunction> {
        check_arity(self, fs)?;
        apply_linear_multiplier(&self.0, &fs[0])
    }

    fn name(&self) -> String {
        format!("multiplier[{}]", self.0.name)
    }
}

/// The periodic Hilbert transform.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hilbert;

impl Operator for Hilbert {
    fn arity(&self) -> usize {
        1
    }

    fn apply(&self, fs: &[GridFunction]) -> Result<GridFunction> {
        check_arity(self, fs)?;
        hilbert_transform(&fs[0])
    }

    fn name(&self) -> String {
        "hilbert".into()
    }
}

/// `T_m(f, g)` for a bilinear symbol.
#[derive(Clone, Debug)]
pub struct BilinearMultiplier(pub Symbol);

impl Operator for BilinearMultiplier {
    fn arity(&self) -> usize {
        2
    }

    fn apply(&self, fs: &[GridFunction]) -> Result<GridFunction> {
        check_arity(self, fs)?;
        apply_bilinear_multiplier(&self.0, &fs[0], &fs[1])
    }

    fn name(&self) -> String {
        format!("bilinear[{}]", self.0.name)
    }
}

/// Smoothing applied to a symbol before its kernel is tabulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Taper {
    None,
    /// `Π_d cos²(π|ξ_d|/N)`; turns the sharp lattice cutoff of a
    /// non-decaying symbol into an absolutely summable one.
    CosSquared,
}

/// Kernel `K(x, y_1, …, y_m) = m̌(x - y_1, …, x - y_m)` of a multiplier on a
/// one-dimensional lattice, with `m̌(z) = Σ_ξ m(ξ) e^{2πi z·ξ/N}`.
#[derive(Clone, Debug)]
pub struct KernelSample {
    arity: usize,
    resolution: u32,
    table: Vec<f64>,
}

impl KernelSample {
    pub fn from_table(arity: usize, resolution: u32, table: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&arity) {
            return domain(format!("kernels of arity {arity} are not supported"));
        }
        let n = 1usize << resolution;
        if table.len() != n.pow(arity as u32) {
            return dimension(format!(
                "kernel table needs {} entries, got {}",
                n.pow(arity as u32),
                table.len()
            ));
        }
        Ok(Self {
            arity,
            resolution,
            table,
        })
    }

    /// `K(x, y) = cot(π(x - y))`, the periodic Hilbert kernel at cell centers.
    pub fn hilbert_exact(resolution: u32) -> Self {
        let n = 1usize << resolution;
        let table = (0..n)
            .map(|d| {
                if d == 0 {
                    0.0
                } else {
                    1.0 / (PI * d as f64 / n as f64).tan()
                }
            })
            .collect();
        Self {
            arity: 1,
            resolution,
            table,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Raw table indexed by cell offsets `x - y_i mod N`.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `K(x, y_1, …)` at cell indices; `None` on the diagonal `x = y_1 = … = y_m`.
    pub fn eval(&self, x: usize, ys: &[usize]) -> Option<f64> {
        if ys.len() != self.arity || ys.iter().all(|&y| y == x) {
            return None;
        }
        Some(self.eval_unmasked(x, ys))
    }

    fn eval_unmasked(&self, x: usize, ys: &[usize]) -> f64 {
        let n = 1usize << self.resolution;
        let off = |y: usize| (x + n - y % n) % n;
        match self.arity {
            1 => self.table[off(ys[0])],
            _ => self.table[off(ys[0]) * n + off(ys[1])],
        }
    }
}

/// Tabulates `m̌` by an inverse DFT. The real part is kept; a warning is
/// logged when the symbol is not Hermitian.
pub fn kernel_from_symbol(m: &Symbol, resolution: u32, taper: Taper) -> Result<KernelSample> {
    let arity = m.dims;
    if !(1..=2).contains(&arity) {
        return domain(format!(
            "kernels need a symbol in 1 or 2 variables, got {arity}"
        ));
    }
    let n = 1usize << resolution;
    let mut table = m.tabulate(resolution)?;
    if taper == Taper::CosSquared {
        let weight = |k: usize| {
            let xi = if k < n / 2 {
                k as f64
            } else {
                n as f64 - k as f64
            };
            (PI * xi / n as f64).cos().powi(2)
        };
        for (lin, v) in table.iter_mut().enumerate() {
            *v *= if arity == 1 {
                weight(lin)
            } else {
                weight(lin / n) * weight(lin % n)
            };
        }
    }
    if !is_hermitian(&table, n, arity) {
        log::warn!(
            "symbol '{}' is not Hermitian; its kernel table keeps the real part",
            m.name
        );
    }
    fft_grid(&mut table, arity, n, true);
    KernelSample::from_table(arity, resolution, table.into_iter().map(|c| c.re).collect())
}

/// One multi-index term of the `M(s, l)` check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MslTerm {
    pub alpha: Vec<u32>,
    /// `sup_R (R^{s|α| - n} Σ_{R <= |ξ| < 2R} |∂^α m|^s)^{1/s}` over all `R = 2^r`, `r < rlevels`.
    pub sup: f64,
    /// Same sup over `r < rlevels - 2`.
    pub sup_coarse: f64,
    pub per_scale: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MslReport {
    pub symbol: String,
    pub s: f64,
    pub l: u32,
    pub rlevels: u32,
    pub terms: Vec<MslTerm>,
    /// Every term finite and `sup / sup_coarse` within `[1/2, 2]`.
    pub member: bool,
}

fn multi_indices(dims: usize, max_order: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if dims == 1 {
        for a in 0..=max_order {
            out.push(vec![a]);
        }
    } else {
        for total in 0..=max_order {
            for a in (0..=total).rev() {
                out.push(vec![a, total - a]);
            }
        }
    }
    out
}

/// Offsets and weights of `D^a`, `D f(x) = (f(x+1) - f(x-1)) / 2`.
fn central_stencil(a: u32) -> Vec<(i64, f64)> {
    let mut coeffs = vec![(0i64, 1.0f64)];
    for _ in 0..a {
        let mut next: Vec<(i64, f64)> = Vec::new();
        for &(o, w) in &coeffs {
            for (shift, sign) in [(1i64, 0.5f64), (-1, -0.5)] {
                let target = o + shift;
                match next.iter_mut().find(|(t, _)| *t == target) {
                    Some(entry) => entry.1 += w * sign,
                    None => next.push((target, w * sign)),
                }
            }
        }
        coeffs = next;
    }
    coeffs.retain(|(_, w)| *w != 0.0);
    coeffs
}

/// `∂^α m(ξ)` by central differences; `None` if the stencil touches the origin
/// or leaves the sampled lattice.
fn derivative(m: &Symbol, xi: &[i64], alpha: &[u32]) -> Option<Complex64> {
    let first = central_stencil(alpha[0]);
    let second = if alpha.len() == 2 {
        central_stencil(alpha[1])
    } else {
        vec![(0, 1.0)]
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for &(o0, w0) in &first {
        for &(o1, w1) in &second {
            let p: Vec<i64> = if alpha.len() == 1 {
                vec![xi[0] + o0]
            } else {
                vec![xi[0] + o0, xi[1] + o1]
            };
            if p.iter().all(|&v| v == 0) {
                return None;
            }
            acc += m.value(&p)? * (w0 * w1);
        }
    }
    Some(acc)
}

/// Lattice points with `R <= |ξ| < 2R`.
fn ring_points(dims: usize, r: i64) -> Vec<Vec<i64>> {
    let lo2 = r * r;
    let hi2 = 4 * r * r;
    let mut out = Vec::new();
    if dims == 1 {
        for x in -2 * r..2 * r {
            if x * x >= lo2 && x * x < hi2 {
                out.push(vec![x]);
            }
        }
    } else {
        for x in -2 * r..2 * r {
            for y in -2 * r..2 * r {
                let q = x * x + y * y;
                if q >= lo2 && q < hi2 {
                    out.push(vec![x, y]);
                }
            }
        }
    }
    out
}

/// The `M(s, l)` quantities `sup_R (R^{s|α|-n} ∫_{R<|ξ|<2R} |∂^α m|^s)^{1/s}`,
/// `|α| <= l`, with `R = 2^r`, `r < rlevels`, on the lattice of resolution `L`.
pub fn check_msl(m: &Symbol, s: f64, l: u32, rlevels: u32, resolution: u32) -> Result<MslReport> {
    if !(s > 1.0 && s <= 2.0) {
        return domain(format!("s must lie in (1, 2], got {s}"));
    }
    if rlevels < 3 {
        return domain("at least three dyadic scales are needed");
    }
    let half = 1i64 << (resolution - 1);
    let reach = (1i64 << rlevels) + l as i64;
    if reach > half {
        return domain(format!(
            "rings up to |ξ| = 2^{rlevels} with a width-{l} stencil leave the lattice [-{half}, {half})"
        ));
    }
    let n = m.dims as f64;
    let mut terms = Vec::new();
    for alpha in multi_indices(m.dims, l) {
        let order: u32 = alpha.iter().sum();
        let mut per_scale = Vec::with_capacity(rlevels as usize);
        for r in 0..rlevels {
            let radius = 1i64 << r;
            let sum: f64 = ring_points(m.dims, radius)
                .iter()
                .filter_map(|xi| derivative(m, xi, &alpha))
                .map(|d| d.norm().powf(s))
                .sum();
            let rf = radius as f64;
            per_scale.push((rf.powf(s * order as f64 - n) * sum).powf(1.0 / s));
        }
        let sup = per_scale.iter().copied().fold(0.0, f64::max);
        let sup_coarse = per_scale[..rlevels as usize - 2]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        terms.push(MslTerm {
            alpha,
            sup,
            sup_coarse,
            per_scale,
        });
    }
    let member = terms.iter().all(|t| {
        t.sup.is_finite()
            && (t.sup == 0.0
                || (t.sup_coarse > 0.0 && (0.5..=2.0).contains(&(t.sup / t.sup_coarse))))
    });
    Ok(MslReport {
        symbol: m.name.clone(),
        s,
        l,
        rlevels,
        terms,
        member,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderTerm {
    pub alpha: u32,
    pub beta: u32,
    /// `sup (|ξ|+|η|)^{α+β} |∂^α_ξ ∂^β_η m|` over the full lattice.
    pub constant: f64,
    /// Same sup over `|ξ|, |η| < N/8`.
    pub constant_coarse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub symbol: String,
    pub s: u32,
    pub resolution: u32,
    pub terms: Vec<HormanderTerm>,
    /// Every constant finite and at most doubling from the quarter lattice to the full one.
    pub member: bool,
}

/// Estimates `C_{α,β}` of the bilinear Hörmander condition for `|α|+|β| <= s`.
pub fn check_hormander_bilinear(m: &Symbol, s: u32, resolution: u32) -> Result<HormanderReport> {
    if m.dims != 2 {
        return dimension(format!(
            "a bilinear symbol needs 2 variables, got {}",
            m.dims
        ));
    }
    let half = 1i64 << (resolution - 1);
    let inner = half - s as i64;
    if inner <= half / 4 {
        return domain(format!(
            "a width-{s} stencil does not fit resolution {resolution}"
        ));
    }
    let mut terms = Vec::new();
    for alpha in multi_indices(2, s) {
        let (a, b) = (alpha[0], alpha[1]);
        let mut full: f64 = 0.0;
        let mut coarse: f64 = 0.0;
        for x in -inner + 1..inner {
            for y in -inner + 1..inner {
                let Some(d) = derivative(m, &[x, y], &alpha) else {
                    continue;
                };
                let v = ((x.abs() + y.abs()) as f64).powi((a + b) as i32) * d.norm();
                full = full.max(v);
                if x.abs() < half / 4 && y.abs() < half / 4 {
                    coarse = coarse.max(v);
                }
            }
        }
        terms.push(HormanderTerm {
            alpha: a,
            beta: b,
            constant: full,
            constant_coarse: coarse,
        });
    }
    let member = terms
        .iter()
        .all(|t| t.constant.is_finite() && t.constant <= 2.0 * t.constant_coarse + 1e-12);
    Ok(HormanderReport {
        symbol: m.name.clone(),
        s,
        resolution,
        terms,
        member,
    })
}

/// Ring decay of kernel differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2Report {
    pub base: DyadicCube,
    pub p0: f64,
    pub arity: usize,
    pub rings: Vec<u32>,
    /// `B_j = sup_{x, x̄ ∈ ½Q} (∫_{S_j} |K(x,·) - K(x̄,·)|^{p0'})^{1/p0'}` (ring max when `p0 = 1`).
    pub values: Vec<f64>,
    pub pairs: usize,
    /// Least-squares slope of `log2 B_j` against `j`; absent when some `B_j = 0`.
    pub slope: Option<f64>,
    /// `-slope / m`.
    pub delta_hat: Option<f64>,
    /// `δ̂ - n / p0`.
    pub delta0: Option<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: Option<f64>,
    pub degenerate: bool,
}

/// Sampling of the point pairs `(x, x̄)` in `½Q`.
#[derive(Clone, Copy, Debug)]
pub struct PairSampling {
    /// All pairs are used while `|½Q|` has at most this many cells; otherwise
    /// this many random pairs.
    pub limit: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self { limit: 64, seed: 0 }
    }
}

fn sample_pairs(cells: &[usize], sampling: PairSampling) -> Vec<(usize, usize)> {
    let mut all = Vec::new();
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            all.push((a, b));
        }
    }
    if cells.len() <= sampling.limit || all.len() <= sampling.limit {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut idx = sample(&mut rng, all.len(), sampling.limit).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i]).collect()
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    (slope, rms)
}

fn ring_norm(diffs: impl Iterator<Item = f64>, p0: f64, cell_volume: f64) -> f64 {
    if p0 == 1.0 {
        return diffs.fold(0.0, f64::max);
    }
    let q = p0 / (p0 - 1.0);
    (diffs.map(|d| d.powf(q)).sum::<f64>() * cell_volume).powf(1.0 / q)
}

fn check_h2_inputs(k: &KernelSample, p0: f64, q: &DyadicCube, jmin: u32, jmax: u32) -> Result<()> {
    if !(p0 >= 1.0) {
        return domain(format!("p0 must be >= 1, got {p0}"));
    }
    if q.dim() != 1 {
        return dimension("kernel checks are one-dimensional");
    }
    if q.level() + 2 > k.resolution {
        return dimension(format!(
            "½Q needs cube level at most {}",
            k.resolution.saturating_sub(2)
        ));
    }
    if jmax > q.level() {
        return domain(format!(
            "ring {jmax} of a level-{} cube is saturated",
            q.level()
        ));
    }
    if jmax < jmin + 2 {
        return domain("the fit needs at least three rings");
    }
    Ok(())
}

/// Ring-wise size of `K(x, ·) - K(x̄, ·)` and the fitted decay exponent.
pub fn check_h2(
    k: &KernelSample,
    p0: f64,
    q: &DyadicCube,
    jmin: u32,
    jmax: u32,
    sampling: PairSampling,
) -> Result<H2Report> {
    if k.arity != 1 {
        return domain("check_h2 takes a linear kernel; use check_h2_bilinear");
    }
    check_h2_inputs(k, p0, q, jmin, jmax)?;
    let res = k.resolution;
    let h = (-(res as f64)).exp2();
    let half = q.half(res)?;
    let pairs = sample_pairs(half.cells(), sampling);
    let rings: Vec<u32> = (jmin..=jmax).collect();
    let mut values = Vec::with_capacity(rings.len());
    for &j in &rings {
        let ring = Annulus::new(*q, j).cells(res)?;
        let best = pairs
            .iter()
            .map(|&(x, xb)| {
                let diffs = ring.cells().iter().filter_map(|&y| {
                    let a = k.eval(x, &[y])?;
                    let b = k.eval(xb, &[y])?;
                    Some((a - b).abs())
                });
                ring_norm(diffs, p0, h)
            })
            .fold(0.0, f64::max);
        values.push(best);
    }
    Ok(fit_report(
        *q,
        p0,
        1,
        rings.clone(),
        rings.iter().map(|&j| j as f64).collect(),
        values,
        pairs.len(),
    ))
}

fn fit_report(
    base: DyadicCube,
    p0: f64,
    arity: usize,
    rings: Vec<u32>,
    xs: Vec<f64>,
    values: Vec<f64>,
    pairs: usize,
) -> H2Report {
    let degenerate = values.iter().any(|&v| !(v > 0.0));
    let (slope, residual) = if degenerate {
        (None, None)
    } else {
        let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
        let (s, r) = least_squares(&xs, &ys);
        (Some(s), Some(r))
    };
    let delta_hat = slope.map(|s| -s / arity as f64);
    H2Report {
        base,
        p0,
        arity,
        rings,
        values,
        pairs,
        slope,
        delta_hat,
        delta0: delta_hat.map(|d| d - base.dim() as f64 / p0),
        residual,
        degenerate,
    }
}

/// Bilinear version over ring pairs `S_{j1} × S_{j2}`; the fit is against
/// `max(j1, j2)` and `δ̂ = -slope / 2`. `rings` lists the `(j1, j2)` pairs in
/// row-major order and `values` the matching `B_{j1,j2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearH2Report {
    pub ring_pairs: Vec<(u32, u32)>,
    pub report: H2Report,
}

pub fn check_h2_bilinear(
    k: &KernelSample,
    p0: f64,
    q: &DyadicCube,
    jmin: u32,
    jmax: u32,
    sampling: PairSampling,
) -> Result<BilinearH2Report> {
    if k.arity != 2 {
        return domain("check_h2_bilinear takes a bilinear kernel");
    }
    check_h2_inputs(k, p0, q, jmin, jmax)?;
    let res = k.resolution;
    let h = (-(res as f64)).exp2();
    let pairs = sample_pairs(q.half(res)?.cells(), sampling);
    let rings: Vec<Vec<usize>> = (jmin..=jmax)
        .map(|j| Annulus::new(*q, j).cells(res).map(|c| c.cells().to_vec()))
        .collect::<Result<_>>()?;
    let mut ring_pairs = Vec::new();
    let mut xs = Vec::new();
    let mut values = Vec::new();
    for (a, r1) in rings.iter().enumerate() {
        for (b, r2) in rings.iter().enumerate() {
            let (j1, j2) = (jmin + a as u32, jmin + b as u32);
            let best = pairs
                .iter()
                .map(|&(x, xb)| {
                    let diffs = r1.iter().flat_map(|&y1| {
                        r2.iter().map(move |&y2| {
                            (k.eval_unmasked(x, &[y1, y2]) - k.eval_unmasked(xb, &[y1, y2])).abs()
                        })
                    });
                    ring_norm(diffs, p0, h * h)
                })
                .fold(0.0, f64::max);
            ring_pairs.push((j1, j2));
            xs.push(j1.max(j2) as f64);
            values.push(best);
        }
    }
    let rings_max: Vec<u32> = ring_pairs.iter().map(|&(a, b)| a.max(b)).collect();
    Ok(BilinearH2Report {
        ring_pairs,
        report: fit_report(*q, p0, 2, rings_max, xs, values, pairs.len()),
    })
}

/// Kernel tables for the built-in names, tapered; `hilbert-exact` is the closed-form
/// cotangent and `identity` the exact lattice delta.
pub fn named_kernel(name: &str, resolution: u32) -> Result<KernelSample> {
    match name {
        "hilbert" | "sign" | "riesz1d" => {
            kernel_from_symbol(&Symbol::hilbert(), resolution, Taper::CosSquared)
        }
        "hilbert-exact" | "cot" => Ok(KernelSample::hilbert_exact(resolution)),
        "identity" | "delta" => {
            let n = 1usize << resolution;
            let mut table = vec![0.0; n];
            table[0] = n as f64;
            KernelSample::from_table(1, resolution, table)
        }
        other => {
            let m = Symbol::named(other)
                .map_err(|_| Error::Domain(format!("unknown kernel '{other}'")))?;
            kernel_from_symbol(&m, resolution, Taper::CosSquared)
        }
    }
}
