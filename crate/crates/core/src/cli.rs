//! Command-line front end. Exit codes: 0 success, 2 invalid input, 3 a failed
//! exact check.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{
    resolve_jobs, summary_csv, sweep, Experiment, SweepConfig, RECORDS_FILE, SUMMARY_FILE,
};
use crate::error::{Error, Result};
use crate::grid::{DyadicCube, GridFunction};
use crate::io;
use crate::kernels::{
    check_h2, check_h2_bilinear, check_hormander_bilinear, check_msl, named_kernel, PairSampling,
    Symbol,
};
use crate::oscillation::{lerner_decompose, LernerDecomposition};
use crate::plot;
use crate::sparse::{
    default_cstar, dominate, measure_weak_norm, random_function, random_weight, select_sparse,
    sparsity_violation, DominateOptions, SparseFamily,
};
use crate::weights::{
    ap_constant, duality_inequality_check, multi_ap_constant, power_weight, rh_constant,
    WeightTuple,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "sparselab",
    version,
    about = "Sparse operators on dyadic grids and weighted-norm certification"
)]
pub struct Cli {
    /// Seed for every random choice of this invocation; overrides a config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (SPARSELAB_JOBS takes precedence; default 1).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file, or output directory for sweeps; stdout otherwise.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConstantKind {
    /// `[w]_{A_p}`.
    Ap,
    /// `[w]_{RH_q}` with `q = --p`.
    Rh,
    /// `[w̄]_{A_{P̄/p0}}` for several weights.
    Multi,
    /// Both sides of the duality inequality at `(p, p0)`.
    Duality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenerateKind {
    /// Uniform values on [0, 1].
    Uniform,
    /// Log-uniform values on [2^-4, 2^4].
    Weight,
    /// `|x - 1/2|^alpha` cell averages.
    Power,
    /// Indicator of `--cube`.
    Indicator,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Weight characteristics of grid-function weights.
    Constants {
        #[arg(long, required = true)]
        weight: Vec<PathBuf>,
        /// Exponent; one per weight for `multi`.
        #[arg(long, required = true, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long, value_enum, default_value = "ap")]
        kind: ConstantKind,
        #[arg(long, default_value_t = 1.0)]
        p0: f64,
        /// Finest cube level scanned; defaults to the grid level.
        #[arg(long)]
        maxlevel: Option<u32>,
    },
    /// Writes a grid function in GFN1 format.
    Generate {
        #[arg(long, value_enum)]
        kind: GenerateKind,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long = "level", short = 'L')]
        level: u32,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
        /// Cube as `level:i[,j]`.
        #[arg(long)]
        cube: Option<DyadicCube>,
    },
    /// Stopping-time decomposition `|f - m_f(Q0)| <= 2 Σ ω χ_Q` of a grid function.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        /// Root cube `level:i[,j]`; the unit cube by default.
        #[arg(long)]
        root: Option<DyadicCube>,
    },
    /// Checks the sparsity of a family or decomposition JSON file.
    Verify {
        #[arg(long)]
        family: PathBuf,
    },
    /// Stopping-time selection of a sparse family from a Carleson sequence.
    Select {
        #[arg(long)]
        carleson: PathBuf,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        k: u32,
        #[arg(long, default_value_t = 1.0)]
        p0: f64,
        /// Threshold; estimated from the weak norm when absent.
        #[arg(long)]
        cstar: Option<f64>,
        #[arg(long, default_value_t = 16)]
        trials: usize,
    },
    /// Slicing, selection and the domination ratio.
    Dominate {
        #[arg(long)]
        carleson: PathBuf,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        k: u32,
        #[arg(long, default_value_t = 1.0)]
        p0: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long)]
        weight: Option<PathBuf>,
        #[arg(long)]
        cstar: Option<f64>,
        #[arg(long, default_value_t = 16)]
        trials: usize,
    },
    /// Sweep of the complexity-k domination ratio.
    #[command(name = "certify-a")]
    CertifyA {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep of the weighted sparse bound.
    #[command(name = "certify-b")]
    CertifyB {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep of the end-to-end operator bound.
    #[command(name = "certify-c")]
    CertifyC {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep of the weighted maximal bound.
    #[command(name = "certify-buckley")]
    CertifyBuckley {
        #[arg(long)]
        config: PathBuf,
    },
    /// Symbol class checks: `M(s, l)` for one variable, Hörmander for two.
    CheckSymbol {
        /// Built-in name or a GFN1 file over the frequency lattice.
        #[arg(long)]
        symbol: String,
        #[arg(long, default_value_t = 2.0)]
        s: f64,
        /// Derivative order.
        #[arg(long, default_value_t = 1)]
        l: u32,
        #[arg(long, default_value_t = 4)]
        rlevels: u32,
        #[arg(long = "level", short = 'L', default_value_t = 10)]
        level: u32,
    },
    /// Ring decay of kernel differences and the fitted exponent.
    CheckH2 {
        #[arg(long, default_value = "hilbert")]
        kernel: String,
        #[arg(long, default_value_t = 2.0)]
        p0: f64,
        #[arg(long, default_value_t = 2)]
        jmin: u32,
        #[arg(long, default_value_t = 5)]
        jmax: u32,
        /// Level of the base cube.
        #[arg(long, default_value_t = 6)]
        cube_level: u32,
        #[arg(long = "level", short = 'L', default_value_t = 10)]
        level: u32,
        #[arg(long, default_value_t = 64)]
        pairs: usize,
    },
    /// Runs any sweep configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// SVG line chart of two CSV columns.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "alpha")]
        x: String,
        #[arg(long, default_value = "ratio")]
        y: String,
    },
}

/// A report together with the seed that produced it.
#[derive(Serialize, Deserialize)]
struct Seeded<T> {
    seed: u64,
    #[serde(flatten)]
    report: T,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CheckFailed(_) => EXIT_CHECK_FAILED,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn read_inputs(paths: &[PathBuf]) -> Result<Vec<GridFunction>> {
    paths.iter().map(|p| io::read_grid(p)).collect()
}

fn maxlevel_for(w: &GridFunction, maxlevel: Option<u32>) -> u32 {
    maxlevel.unwrap_or(w.resolution())
}

fn load_config(path: &Path, cli: &Cli, expected: Option<Experiment>) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse {
            line,
            column,
            message,
        } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    if let Some(want) = expected {
        if cfg.experiment != want {
            return Err(Error::Domain(format!(
                "this command runs '{}' but the config names '{}'",
                want.as_str(),
                cfg.experiment.as_str()
            )));
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_sweep(cli: &Cli, config: &Path, expected: Option<Experiment>) -> Result<()> {
    let cfg = load_config(config, cli, expected)?;
    let jobs = resolve_jobs(cli.jobs)?;
    let outcome = sweep(&cfg, jobs)?;
    match &cfg.out {
        Some(dir) => eprintln!(
            "{} records ({} resumed) in {}, summary in {}",
            outcome.records.len(),
            outcome.resumed,
            dir.join(RECORDS_FILE).display(),
            dir.join(SUMMARY_FILE).display()
        ),
        None => emit(None, &summary_csv(&outcome.summary))?,
    }
    Ok(())
}

fn read_family(path: &Path) -> Result<SparseFamily> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: format!("{}: {e}", path.display()),
    })?;
    if value.get("omega_value").is_some() || value.get("median").is_some() {
        return Ok(serde_json::from_value::<LernerDecomposition>(value)?.family);
    }
    if let Some(fam) = value.get("family") {
        if !fam.is_null() {
            return Ok(serde_json::from_value(fam.clone())?);
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn execute(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Constants {
            weight,
            p,
            kind,
            p0,
            maxlevel,
        } => {
            let weights = weight
                .iter()
                .map(|w| io::read_weight(w))
                .collect::<Result<Vec<_>>>()?;
            let single = || -> Result<(&GridFunction, f64)> {
                if weights.len() != 1 || p.len() != 1 {
                    return Err(Error::Domain(
                        "this kind takes one --weight and one --p".into(),
                    ));
                }
                Ok((&weights[0], p[0]))
            };
            let text = match kind {
                ConstantKind::Ap => {
                    let (w, p) = single()?;
                    io::to_json(&ap_constant(w, p, maxlevel_for(w, *maxlevel))?)?
                }
                ConstantKind::Rh => {
                    let (w, q) = single()?;
                    io::to_json(&rh_constant(w, q, maxlevel_for(w, *maxlevel))?)?
                }
                ConstantKind::Duality => {
                    let (w, p) = single()?;
                    io::to_json(&duality_inequality_check(
                        w,
                        p,
                        *p0,
                        maxlevel_for(w, *maxlevel),
                    )?)?
                }
                ConstantKind::Multi => {
                    let t = WeightTuple::new(weights.clone(), p.clone(), *p0)?;
                    io::to_json(&multi_ap_constant(
                        &t,
                        *p0,
                        maxlevel_for(&weights[0], *maxlevel),
                    )?)?
                }
            };
            emit(out, &text)
        }
        Command::Generate {
            kind,
            n,
            level,
            alpha,
            cube,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let f = match kind {
                GenerateKind::Uniform => random_function(*n, *level, &mut rng)?,
                GenerateKind::Weight => random_weight(*n, *level, &mut rng)?,
                GenerateKind::Power => power_weight(*alpha, &vec![0.5; *n], *n, *level)?,
                GenerateKind::Indicator => {
                    let q = cube
                        .as_ref()
                        .ok_or_else(|| Error::Domain("--cube is required".into()))?;
                    if q.dim() != *n {
                        return Err(Error::Dimension(format!("cube {q} is not {n}-dimensional")));
                    }
                    GridFunction::indicator(&q.cells(*level)?)?
                }
            };
            emit(out, &io::format_grid(&f))
        }
        Command::Decompose { input, root } => {
            let f = io::read_grid(input)?;
            let root = root.unwrap_or_else(|| DyadicCube::unit(f.dim()));
            let dec = lerner_decompose(&f, &root)?;
            emit(out, &io::to_json(&dec)?)?;
            if !dec.verify(&f, 1e-9)? {
                let (excess, cell) = dec.excess(&f)?;
                let detail = match sparsity_violation(&dec.family) {
                    Some((q, why)) => format!("cube {q}: {why}"),
                    None => format!("cell {cell} exceeds the bound by {excess:e}"),
                };
                return Err(Error::CheckFailed(detail));
            }
            Ok(())
        }
        Command::Verify { family } => {
            let fam = read_family(family)?;
            if let Some((q, why)) = sparsity_violation(&fam) {
                return Err(Error::CheckFailed(format!("cube {q}: {why}")));
            }
            emit(out, &format!("sparse: {} cubes\n", fam.len()))
        }
        Command::Select {
            carleson,
            input,
            k,
            p0,
            cstar,
            trials,
        } => {
            let a = io::read_carleson(carleson)?;
            let fs = read_inputs(input)?;
            let seed = cli.seed.unwrap_or(0);
            let cstar = match cstar {
                Some(c) => *c,
                None => {
                    let w = measure_weak_norm(
                        &a,
                        *k,
                        *p0,
                        fs.len(),
                        fs[0].resolution(),
                        *trials,
                        seed,
                    )?;
                    default_cstar(fs.len(), w, a.max_coefficient())
                }
            };
            let report = select_sparse(&a, *k, *p0, &fs, cstar)?;
            emit(
                out,
                &io::to_json(&Seeded {
                    seed,
                    report: &report,
                })?,
            )?;
            if let Some(q) = report.violation {
                return Err(Error::CheckFailed(format!(
                    "selected cube {q} keeps less than half its measure"
                )));
            }
            Ok(())
        }
        Command::Dominate {
            carleson,
            input,
            k,
            p0,
            p,
            weight,
            cstar,
            trials,
        } => {
            let a = io::read_carleson(carleson)?;
            let fs = read_inputs(input)?;
            let seed = cli.seed.unwrap_or(0);
            let opts = DominateOptions {
                p: *p,
                weight: weight.as_deref().map(io::read_weight).transpose()?,
                trials: *trials,
                seed,
                cstar: *cstar,
            };
            let report = dominate(&a, *k, *p0, &fs, &opts)?;
            emit(out, &io::to_json(&report)?)?;
            if !report.all_sparse {
                let bad = report
                    .pieces
                    .iter()
                    .find_map(|p| p.selection.violation)
                    .map_or_else(String::new, |q| q.to_string());
                return Err(Error::CheckFailed(format!(
                    "selection is not sparse at cube {bad}"
                )));
            }
            Ok(())
        }
        Command::CertifyA { config } => run_sweep(cli, config, Some(Experiment::TheoremA)),
        Command::CertifyB { config } => run_sweep(cli, config, Some(Experiment::TheoremB)),
        Command::CertifyC { config } => run_sweep(cli, config, Some(Experiment::TheoremC)),
        Command::CertifyBuckley { config } => run_sweep(cli, config, Some(Experiment::Buckley)),
        Command::Sweep { config } => run_sweep(cli, config, None),
        Command::CheckSymbol {
            symbol,
            s,
            l,
            rlevels,
            level,
        } => {
            let m = if Path::new(symbol).is_file() {
                Symbol::from_grid(symbol.clone(), &io::read_grid(Path::new(symbol))?)?
            } else {
                Symbol::named(symbol)?
            };
            let text = if m.dims() == 1 {
                io::to_json(&check_msl(&m, *s, *l, *rlevels, *level)?)?
            } else {
                io::to_json(&check_hormander_bilinear(&m, *l, *level)?)?
            };
            emit(out, &text)
        }
        Command::CheckH2 {
            kernel,
            p0,
            jmin,
            jmax,
            cube_level,
            level,
            pairs,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let k = named_kernel(kernel, *level)?;
            let q = DyadicCube::new(1, *cube_level, &[0])?;
            let sampling = PairSampling {
                limit: *pairs,
                seed,
            };
            let text = if k.arity() == 1 {
                io::to_json(&Seeded {
                    seed,
                    report: check_h2(&k, *p0, &q, *jmin, *jmax, sampling)?,
                })?
            } else {
                io::to_json(&Seeded {
                    seed,
                    report: check_h2_bilinear(&k, *p0, &q, *jmin, *jmax, sampling)?,
                })?
            };
            emit(out, &text)
        }
        Command::Plot { csv, x, y } => {
            let text = std::fs::read_to_string(csv)?;
            let series = plot::read_series(&text, x, y)?;
            emit(out, &plot::emit_plot(&series, x, y)?)
        }
    }
}
