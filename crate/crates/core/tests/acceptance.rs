//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always print. A criterion
//! listed in `UNATTAINABLE` is expected to fail for the stated reason; the
//! process exits nonzero on any other failure, or if an expected failure passes.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sparselab::certify::{
    beta_exponent, certify_theorem_c, running_sup, sweep, CertificationRecord, Experiment,
    OneOrMany, SweepConfig, WeightFamily, WeightKind,
};
use sparselab::grid::{average, DyadicCube, GridFunction};
use sparselab::kernels::{
    apply_bilinear_multiplier, apply_linear_multiplier, check_h2, hilbert_transform_complex,
    kernel_from_symbol, Hilbert, KernelSample, PairSampling, Symbol, Taper,
};
use sparselab::oscillation::lerner_decompose;
use sparselab::sparse::{
    carleson_embedding_check, cz_decompose, default_cstar, dyadic_maximal, maximal_bound_check,
    measure_weak_norm, random_carleson, random_function, random_subcube, random_weight,
    select_sparse, slice, verify_sparse, CZOutcome, MaximalMode,
};
use sparselab::weights::{duality_inequality_check, power_weight, WeightTuple};
use sparselab::Error;

const RES: u32 = 8;
const TRIALS: usize = 500;
const TOL: f64 = 1e-9;

/// Criteria that cannot hold as stated, with the reason printed next to them.
const UNATTAINABLE: &[(&str, &str)] = &[(
    "1e-ii",
    "(p, p0) = (1.5, 4) violates 1 < p < p0' = 4/3, so A_{p'/p0} = A_{3/4} is undefined",
)];

struct Outcome {
    id: &'static str,
    title: String,
    pass: bool,
    detail: String,
}

fn outcome(
    id: &'static str,
    title: impl Into<String>,
    pass: bool,
    detail: impl Into<String>,
) -> Outcome {
    Outcome {
        id,
        title: title.into(),
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit() -> DyadicCube {
    DyadicCube::unit(1)
}

/// Nonnegative test inputs of several shapes.
fn nonneg_input(r: &mut ChaCha8Rng, res: u32) -> GridFunction {
    let n = 1usize << res;
    let values: Vec<f64> = match r.gen_range(0..5) {
        0 => (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
        1 => (0..n).map(|_| r.gen_range(0..4) as f64).collect(),
        2 => {
            let mut v = vec![0.0; n];
            for _ in 0..r.gen_range(1..5) {
                v[r.gen_range(0..n)] = r.gen_range(1.0..100.0);
            }
            v
        }
        3 => {
            let block = 1usize << r.gen_range(0..res);
            let levels: Vec<f64> = (0..n / block).map(|_| r.gen_range(0.0..10.0)).collect();
            (0..n).map(|i| levels[i / block]).collect()
        }
        _ => (0..n)
            .map(|_| r.gen_range(0.0f64..1.0).powi(8) * 50.0)
            .collect(),
    };
    GridFunction::new(1, res, values).unwrap()
}

fn signed_input(r: &mut ChaCha8Rng, res: u32) -> GridFunction {
    let f = nonneg_input(r, res);
    if r.gen_bool(0.5) {
        let shift = r.gen_range(-5.0..5.0);
        f.map(|v| v - shift)
    } else {
        f
    }
}

fn relative_gap(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + TOL) + TOL * f64::MIN_POSITIVE
}

fn criterion_1a() -> Outcome {
    let mut r = rng(101);
    let mut failures = 0;
    let mut cubes = 0;
    for _ in 0..TRIALS {
        let f = signed_input(&mut r, RES);
        let dec = lerner_decompose(&f, &unit()).unwrap();
        cubes += dec.family.len();
        // independent pointwise oracle for |f - m| <= 2 Σ ω χ_Q
        let mut bound = vec![0.0; f.len()];
        for (q, w) in dec.family.cubes().iter().zip(&dec.omegas) {
            for &c in q.cells(RES).unwrap().cells() {
                bound[c] += 2.0 * w;
            }
        }
        let pointwise = f
            .values()
            .iter()
            .zip(&bound)
            .all(|(&v, &b)| (v - dec.median).abs() <= b + TOL * (1.0 + (v - dec.median).abs()));
        if !(pointwise && verify_sparse(&dec.family)) {
            failures += 1;
        }
    }
    outcome(
        "1a",
        "Lerner formula |f - m_f(Q0)| <= 2 Σ ω χ_Q and sparse family",
        failures == 0,
        format!(
            "{}/{TRIALS} trials hold, {cubes} cubes in total",
            TRIALS - failures
        ),
    )
}

/// `Σ |P'|` over the maximal selected cubes strictly inside `p`.
fn next_generation_measure(p: &DyadicCube, selected: &[DyadicCube]) -> f64 {
    let inner: Vec<&DyadicCube> = selected
        .iter()
        .filter(|q| *q != p && p.contains(q))
        .collect();
    inner
        .iter()
        .filter(|q| !inner.iter().any(|o| o != *q && o.contains(q)))
        .map(|q| q.volume())
        .sum()
}

fn criterion_1b() -> Outcome {
    let mut r = rng(202);
    let mut failures = 0;
    let mut checked = 0;
    for trial in 0..TRIALS {
        let k = r.gen_range(0..4u32);
        let m = r.gen_range(1..3usize);
        let p0 = [1.0, 1.5, 2.0][r.gen_range(0..3)];
        let a = random_carleson(&unit(), RES, r.gen_range(4..40), &mut r).unwrap();
        let fs: Vec<GridFunction> = (0..m).map(|_| nonneg_input(&mut r, RES)).collect();
        for piece in slice(&a, k) {
            let seq = &piece.sequence;
            let w = measure_weak_norm(seq, k, p0, m, RES, 4, trial as u64).unwrap();
            let cstar = default_cstar(m, w, seq.max_coefficient());
            let report = select_sparse(seq, k, p0, &fs, cstar).unwrap();
            for p in &report.selected {
                checked += 1;
                if next_generation_measure(p, &report.selected) > p.volume() / 2.0 * (1.0 + TOL) {
                    failures += 1;
                }
            }
            if !report.is_sparse() {
                failures += 1;
            }
        }
    }
    outcome(
        "1b",
        "selection sparsity |F(P)| <= |P|/2 of select_sparse",
        failures == 0,
        format!("{TRIALS} trials, {checked} selected cubes, {failures} violations"),
    )
}

fn criterion_1c() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (id, m, q, exps) in [
        ("1c-i", 1usize, 2.0, vec![2.0]),
        ("1c-ii", 2, 1.0, vec![2.0, 2.0]),
    ] {
        let mut r = rng(303 + m as u64);
        let mut failures = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..TRIALS {
            let a = random_carleson(&unit(), RES, r.gen_range(4..60), &mut r).unwrap();
            let fs: Vec<GridFunction> = (0..m).map(|_| nonneg_input(&mut r, RES)).collect();
            let rep = carleson_embedding_check(&a, q, &exps, &fs).unwrap();
            if rep.rhs > 0.0 {
                worst = worst.max(rep.lhs / rep.rhs);
            }
            if !(rep.holds && relative_gap(rep.lhs, rep.rhs)) {
                failures += 1;
            }
        }
        out.push(outcome(
            id,
            format!("Carleson embedding (m, q) = ({m}, {q})"),
            failures == 0,
            format!(
                "{}/{TRIALS} hold, largest lhs/rhs = {worst:.4}",
                TRIALS - failures
            ),
        ));
    }
    out
}

/// `M_σ f` by scanning every dyadic cube.
fn brute_sigma_maximal(f: &GridFunction, sigma: &GridFunction) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0f64; n];
    for level in 0..=RES {
        let width = n >> level;
        for start in (0..n).step_by(width) {
            let num: f64 = (start..start + width)
                .map(|c| f.values()[c].abs() * sigma.values()[c])
                .sum();
            let den: f64 = (start..start + width).map(|c| sigma.values()[c]).sum();
            for c in start..start + width {
                out[c] = out[c].max(num / den);
            }
        }
    }
    out
}

fn criterion_1d() -> Outcome {
    let mut r = rng(404);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let sigma = if r.gen_bool(0.5) {
            random_weight(1, RES, &mut r).unwrap()
        } else {
            power_weight(r.gen_range(-0.9..2.0), &[r.gen_range(0.0..1.0)], 1, RES).unwrap()
        };
        let f = nonneg_input(&mut r, RES);
        let rep = maximal_bound_check(&f, &sigma, 2.0).unwrap();
        let fast = dyadic_maximal(
            &f,
            &MaximalMode::SigmaWeighted {
                sigma: sigma.clone(),
            },
        )
        .unwrap();
        let brute = brute_sigma_maximal(&f, &sigma);
        let agree = fast
            .values()
            .iter()
            .zip(&brute)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        if rep.rhs > 0.0 {
            worst = worst.max(rep.lhs / rep.rhs);
        }
        if !(rep.holds && agree && relative_gap(rep.lhs, rep.rhs)) {
            failures += 1;
        }
    }
    outcome(
        "1d",
        "dyadic maximal bound ‖M_σ f‖_{L²(σ)} <= 2‖f‖_{L²(σ)}",
        failures == 0,
        format!(
            "{}/{TRIALS} hold, largest lhs/rhs = {worst:.4}",
            TRIALS - failures
        ),
    )
}

fn duality_campaign(p: f64, p0: f64, seed: u64) -> Result<(usize, f64), Error> {
    let mut r = rng(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let w = if r.gen_bool(0.5) {
            random_weight(1, RES, &mut r)?
        } else {
            power_weight(r.gen_range(-0.5..0.5), &[r.gen_range(0.0..1.0)], 1, RES)?
        };
        let rep = duality_inequality_check(&w, p, p0, RES)?;
        worst = worst.max(rep.lhs / rep.rhs);
        if !(rep.holds && relative_gap(rep.lhs, rep.rhs)) {
            failures += 1;
        }
    }
    Ok((failures, worst))
}

fn criterion_1e() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (id, p, p0, label) in [
        ("1e-i", 1.2, 3.0, "(1.2, 3)"),
        ("1e-ii", 1.5, 4.0, "(1.5, 4)"),
        (
            "1e-iii",
            1.5,
            4.0 / 3.0,
            "(1.5, 4/3), the admissible reading p0' = 4 of (1.5, 4)",
        ),
    ] {
        let title = format!("duality inequality at (p, p0) = {label}");
        out.push(match duality_campaign(p, p0, 505) {
            Ok((failures, worst)) => outcome(
                id,
                title,
                failures == 0,
                format!(
                    "{}/{TRIALS} hold, largest lhs/rhs = {worst:.4}",
                    TRIALS - failures
                ),
            ),
            Err(e) => outcome(id, title, false, format!("not computable: {e}")),
        });
    }
    out
}

fn criterion_1f() -> Outcome {
    let mut r = rng(606);
    let mut failures = Vec::new();
    let mut stopping_total = 0;
    for trial in 0..TRIALS {
        let m = r.gen_range(1..3usize);
        let p0 = r.gen_range(1.0..2.5);
        let base = random_subcube(&unit(), r.gen_range(0..4), &mut r);
        let fs: Vec<GridFunction> = (0..m).map(|_| nonneg_input(&mut r, RES)).collect();
        let top = fs
            .iter()
            .map(|f| average(f, &base, p0).unwrap())
            .fold(0.0, f64::max);
        if top == 0.0 {
            continue;
        }
        let lambda = (top * r.gen_range(1.0..4.0)).powi(m as i32);
        let dec = match cz_decompose(&fs, lambda, p0, m, &base).unwrap() {
            CZOutcome::Decomposed(d) => d,
            CZOutcome::ShortCircuit { .. } => {
                failures.push(format!("trial {trial}: unexpected short circuit"));
                continue;
            }
        };
        let thr = lambda.powf(1.0 / m as f64);
        let thr_p = thr.powf(p0);
        for (i, (f, comp)) in fs.iter().zip(&dec.components).enumerate() {
            let fp: Vec<f64> = f.values().iter().map(|v| v.abs().powf(p0)).collect();
            let mut measure = 0.0;
            for (j, rcube) in comp.stopping.iter().enumerate() {
                stopping_total += 1;
                let cells = rcube.cells(RES).unwrap();
                let sum: f64 = cells.cells().iter().map(|&c| fp[c]).sum();
                let avg_p = sum / cells.len() as f64;
                let bad_sum: f64 = cells.cells().iter().map(|&c| comp.bad.values()[c]).sum();
                let mean_zero = bad_sum.abs() <= TOL * sum.max(f64::MIN_POSITIVE);
                let stops = avg_p > thr_p * (1.0 - TOL) && avg_p <= 2.0 * thr_p * (1.0 + TOL);
                let recorded = (comp.averages[j].powf(p0) - avg_p).abs() <= TOL * avg_p;
                let maximal = (1..rcube.level() - base.level())
                    .map(|k| rcube.ancestor(k).unwrap())
                    .all(|anc| average(f, &anc, p0).unwrap().powf(p0) <= thr_p * (1.0 + TOL));
                let disjoint = comp
                    .stopping
                    .iter()
                    .all(|o| o == rcube || !(o.contains(rcube) || rcube.contains(o)));
                if !(mean_zero
                    && stops
                    && recorded
                    && maximal
                    && disjoint
                    && base.contains(rcube)
                    && *rcube != base)
                {
                    failures.push(format!("trial {trial}: component {i}, cube {rcube}"));
                }
                measure += rcube.volume();
            }
            let mass: f64 = base
                .cells(RES)
                .unwrap()
                .cells()
                .iter()
                .map(|&c| fp[c])
                .sum::<f64>()
                * f.cell_volume();
            if measure > mass / thr_p * (1.0 + TOL) {
                failures.push(format!(
                    "trial {trial}: Σ|R| = {measure} exceeds {}",
                    mass / thr_p
                ));
            }
            for c in 0..f.len() {
                let g = comp.good.values()[c];
                let b = comp.bad.values()[c];
                if (g + b - fp[c]).abs() > TOL * fp[c].max(1.0)
                    || g > 2.0 * thr_p * (1.0 + TOL) && base.cells(RES).unwrap().contains(c)
                {
                    failures.push(format!("trial {trial}: cell {c} of component {i}"));
                    break;
                }
            }
        }
    }
    outcome(
        "1f",
        "CZ decomposition: mean-zero b, stopping bounds, Σ|R| bound, g <= 2^n λ^{p0/m}",
        failures.is_empty(),
        match failures.first() {
            None => format!("{TRIALS} trials, {stopping_total} stopping cubes"),
            Some(f) => format!("{} violations, first: {f}", failures.len()),
        },
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let q = DyadicCube::new(1, 6, &[0]).unwrap();
    let mut fits = Vec::new();
    for res in [9, 10, 11] {
        let k = kernel_from_symbol(&Symbol::hilbert(), res, Taper::CosSquared).unwrap();
        let rep = check_h2(&k, 2.0, &q, 2, 5, PairSampling::default()).unwrap();
        fits.push(rep.delta_hat.unwrap_or(f64::NAN));
    }
    let elapsed = start.elapsed();
    let at10 = fits[1];
    let stable = fits.iter().all(|d| (d - at10).abs() <= 0.05);
    let pass = (at10 - 1.5).abs() <= 0.15 && stable && elapsed < Duration::from_secs(30);
    outcome(
        "2",
        "Hilbert kernel decay fit, p0 = 2, rings 2..5 of a level-6 cube",
        pass,
        format!(
            "δ̂ = {:.4} / {:.4} / {:.4} at L = 9 / 10 / 11, {:.2} s",
            fits[0],
            fits[1],
            fits[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn jobs() -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8)
}

fn config(
    experiment: Experiment,
    m: usize,
    p0: Vec<f64>,
    k: Vec<u32>,
    weights: WeightFamily,
    trials: usize,
    seed: u64,
) -> SweepConfig {
    SweepConfig {
        experiment,
        n: 1,
        resolution: RES,
        m,
        p0: OneOrMany::Many(p0),
        p: vec![OneOrMany::One(2.0)],
        k: OneOrMany::Many(k),
        weight_family: weights,
        trials,
        seed,
        out: None,
        operator: None,
    }
}

fn unweighted() -> WeightFamily {
    WeightFamily {
        kind: WeightKind::Unweighted,
        alpha_grid: Vec::new(),
    }
}

fn power_grid() -> WeightFamily {
    WeightFamily {
        kind: WeightKind::Power,
        alpha_grid: (-3..=3).map(|i| i as f64 * 0.3).collect(),
    }
}

fn criterion_3() -> Outcome {
    let cfg = config(
        Experiment::TheoremA,
        1,
        vec![1.0],
        vec![0, 1, 2, 3],
        unweighted(),
        200,
        7,
    );
    let res = sweep(&cfg, jobs()).unwrap();
    let sups: Vec<f64> = res
        .summary
        .iter()
        .map(|row| row.ratio_max.unwrap_or(f64::NAN))
        .collect();
    let counts: Vec<usize> = res.summary.iter().map(|row| row.records).collect();
    let sparse = res.records.iter().all(|r| r.pass == Some(true));
    let top = sups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = sups.len() == 4
        && sups[0] > 0.0
        && top <= 3.0 * sups[0]
        && sparse
        && sups.iter().all(|s| s.is_finite());
    outcome(
        "3",
        "Theorem A: sup_k ratio/(k+1) within 3x of k = 0",
        pass,
        format!(
            "sup ratio/(k+1) for k = 0..3: {} ({} records per k), max/k0 = {:.3}",
            sups.iter()
                .map(|s| format!("{s:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("/"),
            top / sups[0]
        ),
    )
}

fn sup_of(records: &[&CertificationRecord]) -> f64 {
    let owned: Vec<CertificationRecord> = records.iter().map(|r| (*r).clone()).collect();
    running_sup(&owned).last().copied().unwrap_or(0.0)
}

fn criterion_4() -> Vec<Outcome> {
    let cfg = SweepConfig {
        m: 2,
        ..config(
            Experiment::TheoremB,
            2,
            vec![1.0, 1.5],
            vec![0],
            power_grid(),
            1000,
            23,
        )
    };
    let res = sweep(&cfg, jobs()).unwrap();
    let mut out = Vec::new();
    for (id, p0) in [("4-i", 1.0), ("4-ii", 1.5)] {
        let mine: Vec<&CertificationRecord> =
            res.records.iter().filter(|r| r.params.p0 == p0).collect();
        let half: Vec<&CertificationRecord> = mine
            .iter()
            .copied()
            .filter(|r| r.trial.unwrap() < 500)
            .collect();
        let (s500, s1000) = (sup_of(&half), sup_of(&mine));
        let change = (s1000 - s500) / s500;
        let finite = mine.iter().all(|r| r.ratio.is_some_and(f64::is_finite));
        let mut per_point: f64 = 0.0;
        for row in res.summary.iter().filter(|row| row.point.p0 == p0) {
            let pts: Vec<&CertificationRecord> = mine
                .iter()
                .copied()
                .filter(|r| r.key.as_deref() == Some(&row.key))
                .collect();
            let h: Vec<&CertificationRecord> = pts
                .iter()
                .copied()
                .filter(|r| r.trial.unwrap() < 500)
                .collect();
            per_point = per_point.max((sup_of(&pts) - sup_of(&h)) / sup_of(&h));
        }
        out.push(outcome(
            id,
            format!("Theorem B campaign m = 2, p0 = {p0}, p̄ = (2,2), α ∈ [-0.9, 0.9]: running sup stable"),
            finite && s500 > 0.0 && change < 0.10,
            format!(
                "{} records, sup {s500:.5} at 500 trials, {s1000:.5} at 1000 ({:+.2}%), largest per-α change {:.2}%",
                mine.len(),
                change * 100.0,
                per_point * 100.0
            ),
        ));
    }
    let b1 = beta_exponent(&[2.0, 2.0], 1.0).unwrap();
    let b2 = beta_exponent(&[8.0, 8.0], 2.0).unwrap();
    out.push(outcome(
        "4-iii",
        "β exponent: 2 at (m=2, p0=1, p̄=(2,2)), 1 at (m=2, p0=2, p̄=(8,8))",
        b1 == 2.0 && b2 == 1.0,
        format!("β = {b1}, {b2}"),
    ));
    out
}

fn criterion_5() -> Vec<Outcome> {
    let res_level = RES;
    let h2 = check_h2(
        &KernelSample::hilbert_exact(res_level),
        1.0,
        &DyadicCube::new(1, 6, &[0]).unwrap(),
        2,
        5,
        PairSampling::default(),
    )
    .unwrap();
    let t = WeightTuple::unweighted(1, res_level, vec![2.0], 1.0).unwrap();
    let mut r = rng(707);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut exact = true;
    let trials = 100;
    for _ in 0..trials {
        let f = random_function(1, res_level, &mut r).unwrap();
        let rec = certify_theorem_c(&Hilbert, &h2, &t, &[f], res_level).unwrap();
        let ratio = rec.ratio.unwrap_or(f64::NAN);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        exact &= rec.pass == Some(true);
    }
    let band = outcome(
        "5-i",
        "Theorem C: Hilbert, w ≡ 1, p = 2, ratio within [0.1, 10]",
        lo >= 0.1 && hi <= 10.0 && exact,
        format!(
            "{trials} trials, ratio in [{lo:.4}, {hi:.4}], δ0 = {:.3}, sparse bound holds in every trial: {exact}",
            h2.delta0.unwrap_or(f64::NAN)
        ),
    );
    let cfg = config(
        Experiment::TheoremC,
        1,
        vec![1.0],
        vec![0],
        power_grid(),
        20,
        31,
    );
    let res = sweep(&cfg, jobs()).unwrap();
    let finite = res
        .records
        .iter()
        .all(|r| r.ratio.is_some_and(f64::is_finite));
    let sup = res
        .summary
        .iter()
        .filter_map(|r| r.ratio_max)
        .fold(0.0, f64::max);
    let bounded = res.records.iter().all(|r| r.pass == Some(true));
    let sweep_outcome = outcome(
        "5-ii",
        "Theorem C: ratio finite across the power-weight sweep α ∈ [-0.9, 0.9]",
        finite && !res.records.is_empty(),
        format!(
            "{} records over {} weights, sup ratio {sup:.4}, sparse bound holds in all: {bounded}",
            res.records.len(),
            res.summary.len()
        ),
    );
    vec![band, sweep_outcome]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn criterion_6() -> Vec<Outcome> {
    let mut r = rng(808);
    let (mut e_id, mut e_h2, mut e_bi): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..50 {
        let f = signed_input(&mut r, RES);
        let scale = f.max_abs().max(1.0);
        let t1 = apply_linear_multiplier(&Symbol::identity(1), &f).unwrap();
        e_id = e_id.max(max_abs_diff(t1.values(), f.values()) / scale);
        if trial % 5 == 0 {
            let g2 = random_function(2, 5, &mut r).unwrap();
            let t2 = apply_linear_multiplier(&Symbol::identity(2), &g2).unwrap();
            e_id = e_id.max(max_abs_diff(t2.values(), g2.values()));
        }

        let values: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let hh = hilbert_transform_complex(&hilbert_transform_complex(&values, RES).unwrap(), RES)
            .unwrap();
        let mean = f.mean();
        let h2_err = hh
            .iter()
            .zip(f.values())
            .map(|(z, &v)| (z - Complex64::new(-(v - mean), 0.0)).norm())
            .fold(0.0, f64::max);
        e_h2 = e_h2.max(h2_err / scale);

        let g = signed_input(&mut r, RES);
        let prod = apply_bilinear_multiplier(&Symbol::identity(2), &f, &g).unwrap();
        let direct: Vec<f64> = f
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| a * b)
            .collect();
        let pscale = direct.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        e_bi = e_bi.max(max_abs_diff(prod.values(), &direct) / pscale);
    }
    vec![
        outcome(
            "6-i",
            "T_1 = identity to 1e-12",
            e_id <= 1e-12,
            format!("max relative error {e_id:.2e}"),
        ),
        outcome(
            "6-ii",
            "H² = -(I - mean) to 1e-10 (complex path)",
            e_h2 <= 1e-10,
            format!("max relative error {e_h2:.2e}"),
        ),
        outcome(
            "6-iii",
            "bilinear m ≡ 1 gives the pointwise product to 1e-12",
            e_bi <= 1e-12,
            format!("max relative error {e_bi:.2e}"),
        ),
    ]
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut files = 0;
    let configs = [
        config(
            Experiment::TheoremB,
            2,
            vec![1.0],
            vec![0],
            power_grid(),
            20,
            5,
        ),
        config(
            Experiment::TheoremA,
            1,
            vec![1.0],
            vec![0, 2],
            unweighted(),
            10,
            5,
        ),
        config(
            Experiment::Buckley,
            1,
            vec![1.0],
            vec![0],
            power_grid(),
            10,
            5,
        ),
        config(
            Experiment::TheoremC,
            1,
            vec![1.0],
            vec![0],
            unweighted(),
            10,
            5,
        ),
    ];
    for (i, base) in configs.into_iter().enumerate() {
        let mut outputs = Vec::new();
        for (run, jobs) in [(0, 1), (1, 4)] {
            let mut cfg = base.clone();
            cfg.out = Some(dir.path().join(format!("c{i}-r{run}")));
            sweep(&cfg, jobs).unwrap();
            let dir = cfg.out.unwrap();
            outputs.push((
                std::fs::read(dir.join("records.ndjson")).unwrap(),
                std::fs::read(dir.join("summary.csv")).unwrap(),
            ));
        }
        files += 2;
        identical &= outputs[0] == outputs[1];
    }
    outcome(
        "7",
        "sweep reruns with the same seed are byte-identical",
        identical,
        format!("{files} record/summary pairs compared across 1 and 4 worker threads"),
    )
}

fn main() {
    // libtest arguments such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let total = Instant::now();
    let mut results = Vec::new();
    let suite1 = Instant::now();
    results.push(criterion_1a());
    results.push(criterion_1b());
    results.extend(criterion_1c());
    results.push(criterion_1d());
    results.extend(criterion_1e());
    results.push(criterion_1f());
    let suite1_time = suite1.elapsed();
    results.push(outcome(
        "1",
        "exact-inequality suite runtime under 5 minutes",
        suite1_time < Duration::from_secs(300),
        format!("{:.1} s", suite1_time.as_secs_f64()),
    ));
    results.push(criterion_2());
    results.push(criterion_3());
    results.extend(criterion_4());
    results.extend(criterion_5());
    results.extend(criterion_6());
    results.push(criterion_7());

    let mut unexpected = Vec::new();
    for o in &results {
        let expected = UNATTAINABLE.iter().find(|(id, _)| *id == o.id);
        let status = if o.pass { "PASS" } else { "FAIL" };
        match expected {
            Some((_, why)) => {
                println!(
                    "{status} [{}] {} :: {} (known unattainable: {why})",
                    o.id, o.title, o.detail
                );
                if o.pass {
                    unexpected.push(o.id);
                }
            }
            None => {
                println!("{status} [{}] {} :: {}", o.id, o.title, o.detail);
                if !o.pass {
                    unexpected.push(o.id);
                }
            }
        }
    }
    println!(
        "acceptance: {} criteria, {} passed, {:.1} s",
        results.len(),
        results.iter().filter(|o| o.pass).count(),
        total.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        println!("unexpected outcomes: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
