//! The `fit`, `predict`, `synth` and `bench` verbs.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use binned_gp::gp::{default_init, fit, BinnedDataset, FitConfig, GpModel, ObservationKind};
use binned_gp::nonneg::{ep_fit, place_virtual_grid, predict_constrained, EPConfig};
use binned_gp::polytope::{fill_rectangles, sample_points, Polytope};
use binned_gp::{Hyperrectangle, Support};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{rectangle_grid, run_bench, BenchConfig, Method, MethodOptions, DEFAULT_BOOTSTRAP};
use crate::error::CliError;
use crate::formats::{write_predictions, Approximation, BinFile, ModelFile, PolytopeFile, QueryTable};
use crate::scenarios::{generate, Problem, Scenario, SynthOptions};

#[derive(Debug, Parser)]
#[command(name = "binned-gp", version, about = "Gaussian-process regression on binned data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit hyperparameters by maximising the log marginal likelihood.
    Fit(FitArgs),
    /// Predict latent values, bin integrals or non-negative latent values.
    Predict(PredictArgs),
    /// Write a synthetic dataset for one of the experiment scenarios.
    Synth(SynthArgs),
    /// Compare methods on freshly synthesised data.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Bin file (.csv) or polytope file (.json).
    pub input: PathBuf,
    /// Model file to write; the model goes to stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optimiser iteration cap; 0 returns the initial hyperparameters.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Points per polytope (point approximation).
    #[arg(long, conflicts_with = "rects")]
    pub density: Option<usize>,
    /// Rectangles per polytope (rectangle approximation).
    #[arg(long)]
    pub rects: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Latent,
    Integral,
    Nonneg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    /// Query CSV (x1..xd or s1,t1..sd,td) or polytope file (.json).
    pub queries: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Latent)]
    pub mode: Mode,
    /// Virtual points per dimension for --mode nonneg.
    #[arg(long)]
    pub virtual_grid: Option<usize>,
    /// Add the observation noise variance to the predictive variance.
    #[arg(long)]
    pub include_noise: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// robot, histogram, audience, polygons or sampled.
    pub scenario: String,
    /// Directory to write into (created if missing).
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Privacy budget; perturbs the observations with Laplace noise.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub scenario: String,
    /// Comma-separated subset of simple, centroid, integral, nonneg, points,
    /// rectangles. Defaults depend on the scenario.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub density: usize,
    #[arg(long, default_value_t = 8)]
    pub rects: usize,
    #[arg(long)]
    pub virtual_grid: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
}

/// Caps the rayon pool at `BINNED_GP_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BINNED_GP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("BINNED_GP_THREADS must be a positive integer, got '{raw}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Synth(a) => cmd_synth(&a, stdout),
        Command::Bench(a) => cmd_bench(&a, stdout),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn approximate_all(polys: &[Polytope], approx: &Approximation) -> Result<Vec<Support>, CliError> {
    match *approx {
        Approximation::Points { per_region, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            polys
                .iter()
                .map(|p| Ok(Support::Approx(Arc::new(sample_points(p, per_region, &mut rng)?))))
                .collect()
        }
        Approximation::Rectangles { per_region, resolution } => polys
            .iter()
            .map(|p| Ok(Support::Approx(Arc::new(fill_rectangles(p, per_region, resolution)?))))
            .collect(),
    }
}

/// Column names and values identifying one query in the output.
type QueryColumns = (Vec<String>, Vec<f64>);

pub const DEFAULT_POINTS_PER_REGION: usize = 64;

fn load_training(args: &FitArgs) -> Result<(BinnedDataset, ObservationKind, Option<Approximation>), CliError> {
    let reader = open(&args.input)?;
    if is_json(&args.input) {
        let file = PolytopeFile::read(reader)?;
        let approx = match (args.density, args.rects) {
            (_, Some(n)) => Approximation::Rectangles {
                per_region: n,
                resolution: rectangle_grid(n),
            },
            (n, None) => Approximation::Points {
                per_region: n.unwrap_or(DEFAULT_POINTS_PER_REGION),
                seed: args.seed,
            },
        };
        let supports = approximate_all(&file.polytopes()?, &approx)?;
        let data = BinnedDataset::new(file.dims, supports, file.observations()?)?;
        Ok((data, ObservationKind::Sum, Some(approx)))
    } else {
        if args.density.is_some() || args.rects.is_some() {
            return Err(CliError::Usage("--density and --rects apply to polytope (.json) input only".into()));
        }
        let file = BinFile::read(reader)?;
        Ok((file.to_dataset()?, file.header.kind, None))
    }
}

pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (data, kind, approximation) = load_training(args)?;
    let config = FitConfig {
        max_iters: args.max_iters.unwrap_or(FitConfig::default().max_iters),
        ..FitConfig::default()
    };
    let result = fit(&data, &default_init(&data)?, &config)?;
    let hp = &result.hyperparameters;
    let report = format!(
        "alpha={} lengthscales={:?} noise_variance={} log_marginal_likelihood={} iterations={} converged={}",
        hp.alpha, hp.lengthscales, hp.noise_variance, result.log_marginal_likelihood, result.iterations, result.converged
    );
    let model = ModelFile {
        fit: result,
        kind,
        approximation,
        data,
    };
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            model.write(&mut w)?;
            w.flush()?;
            writeln!(stdout, "{report}")?;
        }
        None => {
            model.write(&mut *stdout)?;
            writeln!(stdout)?;
            eprintln!("{report}");
        }
    }
    Ok(())
}

/// Per-axis virtual grid size: 53 in one dimension, about 53 points in total
/// above that (at least 2 per axis).
pub fn default_virtual_per_axis(dims: usize) -> usize {
    (53f64.powf(1.0 / dims as f64).floor() as usize).max(2)
}

fn training_box(data: &BinnedDataset) -> Result<Hyperrectangle, CliError> {
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); data.dims()];
    for s in data.supports() {
        for (b, (lo, hi)) in bounds.iter_mut().zip(s.bounds()) {
            b.0 = b.0.min(lo);
            b.1 = b.1.max(hi);
        }
    }
    Ok(Hyperrectangle::from_bounds(&bounds)?)
}

pub fn cmd_predict(args: &PredictArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let model = ModelFile::read(open(&args.model)?)?;
    let dims = model.data.dims();
    let (supports, columns): (Vec<Support>, Vec<QueryColumns>) = if is_json(&args.queries) {
        let file = PolytopeFile::read(open(&args.queries)?)?;
        let approx = model.approximation.clone().unwrap_or(Approximation::Points {
            per_region: DEFAULT_POINTS_PER_REGION,
            seed: 0,
        });
        let supports = approximate_all(&file.polytopes()?, &approx)?;
        let cols = (0..supports.len())
            .map(|i| (vec!["region".to_string()], vec![i as f64]))
            .collect();
        (supports, cols)
    } else {
        let table = QueryTable::read(open(&args.queries)?)?;
        let names = table.column_names();
        let cols = (0..table.len()).map(|i| (names.clone(), table.row(i))).collect();
        (table.supports(), cols)
    };
    if let Some(s) = supports.iter().find(|s| s.dims() != dims) {
        return Err(CliError::Data(format!(
            "query dimension {} does not match the model's {dims}",
            s.dims()
        )));
    }
    let any_point = supports.iter().any(Support::is_point);
    match args.mode {
        Mode::Latent if !supports.iter().all(Support::is_point) => {
            return Err(CliError::Usage("--mode latent needs point queries (x1..xd)".into()))
        }
        Mode::Integral if any_point => {
            return Err(CliError::Usage("--mode integral needs region queries (s1,t1..sd,td or polytopes)".into()))
        }
        _ => {}
    }
    let hp = model.fit.hyperparameters.clone();
    let extra = if args.include_noise { hp.noise_variance } else { 0.0 };
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(&mut *stdout),
    };
    match args.mode {
        Mode::Latent | Mode::Integral => {
            let post = GpModel::new(model.data, hp)?.predict(&supports)?.with_added_variance(extra);
            write_predictions(&mut out, &columns, &post.mean, &post.variance, None)?;
        }
        Mode::Nonneg => {
            let per_axis = args.virtual_grid.unwrap_or_else(|| default_virtual_per_axis(dims));
            let vp = place_virtual_grid(&training_box(&model.data)?, &vec![per_axis; dims])?;
            let (state, _) = ep_fit(&model.data, &hp, &vp, &EPConfig::default())?;
            let post = predict_constrained(&state, &model.data, &hp, &vp, &supports)?;
            let variance: Vec<f64> = post.latent_variance.iter().map(|v| v + extra).collect();
            write_predictions(&mut out, &columns, &post.latent_mean, &variance, Some(&post.link_mean))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let problem = generate(scenario, &SynthOptions { epsilon: args.epsilon }, &mut rng)?;
    fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<(), CliError>| -> Result<(), CliError> {
        let path = args.out.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        w.flush()?;
        written.push(path);
        Ok(())
    };
    match &problem {
        Problem::Binned(p) => {
            let bins = BinFile::from_dataset(&p.data, ObservationKind::Sum)?;
            let queries = QueryTable::from_supports(&p.queries)?;
            put("train.csv", &|w| bins.write(w))?;
            put("queries.csv", &|w| queries.write(w))?;
            put("truth.csv", &|w| write_truth(w, &queries.column_names(), |i| queries.row(i), &p.truth))?;
        }
        Problem::Polygons(p) => {
            let train = PolytopeFile::from_polytopes(&p.regions, Some(&p.y));
            let tests = PolytopeFile::from_polytopes(&p.tests, None);
            put("train.json", &|w| train.write(w))?;
            put("queries.json", &|w| tests.write(w))?;
            put("truth.csv", &|w| write_truth(w, &["region".into()], |i| vec![i as f64], &p.truth))?;
        }
    }
    for path in written {
        writeln!(stdout, "{}", path.display())?;
    }
    Ok(())
}

fn write_truth<W: Write>(out: W, names: &[String], row: impl Fn(usize) -> Vec<f64>, truth: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = names.to_vec();
    header.push("truth".into());
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for (i, t) in truth.iter().enumerate() {
        let mut rec: Vec<String> = row(i).iter().map(f64::to_string).collect();
        rec.push(t.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let scenario: Scenario = args.scenario.parse()?;
    let mut cfg = BenchConfig::new(scenario);
    if !args.methods.is_empty() {
        cfg.methods = args.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    }
    let defaults = MethodOptions::default();
    cfg.repeats = args.repeats;
    cfg.seed = args.seed;
    cfg.epsilon = args.epsilon;
    cfg.bootstrap = args.bootstrap;
    cfg.options = MethodOptions {
        max_iters: args.max_iters.unwrap_or(defaults.max_iters),
        virtual_grid: args.virtual_grid,
        density: args.density,
        rects: args.rects,
        ..defaults
    };
    if cfg.methods.contains(&Method::Points) && args.density == 0 || cfg.methods.contains(&Method::Rectangles) && args.rects == 0 {
        return Err(CliError::Usage("--density and --rects must be positive".into()));
    }
    let report = run_bench(&cfg)?;
    write!(stdout, "{}", report.to_table())?;
    Ok(())
}
