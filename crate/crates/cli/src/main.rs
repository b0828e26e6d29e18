mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bmf_fdr_core::bounds::pattern_sizes_from_rel;
use bmf_fdr_core::eval::EvalReport;
use bmf_fdr_core::ratings::map_ratings;
use bmf_fdr_core::{
    binarize_ratings, min_usage_curve, plant, run_experiment, trust_pal, wrong_rec_rate,
    BinaryMatrix, CurveMethod, CurveParams, FactorPairBinary, FilterMethod, PairCount,
    PlantedParams, RatingsTable, TrustConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "bmf-fdr",
    version,
    about = "Boolean matrix factorization with false-discovery control"
)]
struct Cli {
    /// TOML file with defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a planted factorization and a noisy data matrix.
    Generate(GenerateArgs),
    /// Factorize a binary matrix, choosing the rank by FDR control.
    Factorize(FactorizeArgs),
    /// Minimum usage size per pattern size for both bounds, as CSV.
    Curve(CurveArgs),
    /// Compare factors with planted ones, or score them against ratings.
    Eval(EvalArgs),
    /// Run a synthetic experiment grid from the config file.
    Experiment(ExperimentArgs),
    /// Turn ratings triples into a pruned binary matrix.
    Binarize(BinarizeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Columns.
    #[arg(long)]
    n: Option<usize>,
    /// Rows.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    r_star: Option<usize>,
    /// Maximum relative tile size.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    p_plus: Option<f64>,
    #[arg(long)]
    p_minus: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data matrix in text format.
    #[arg(long)]
    out: PathBuf,
    /// Planted factors as JSON.
    #[arg(long)]
    planted: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Density,
    Coherence,
    Both,
}

impl From<MethodArg> for FilterMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Density => FilterMethod::Density,
            MethodArg::Coherence => FilterMethod::Coherence,
            MethodArg::Both => FilterMethod::Both,
        }
    }
}

#[derive(Args)]
struct TrustArgs {
    /// Estimated noise level p̂.
    #[arg(long)]
    noise_estimate: Option<f64>,
    /// FDR level q [default: 0.01].
    #[arg(long)]
    fdr_level: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Rank increment Δr [default: 10].
    #[arg(long)]
    rank_increment: Option<usize>,
    /// [default: 2000]
    #[arg(long)]
    max_iter: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    min_decrease: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrustArgs {
    fn apply(&self, mut cfg: TrustConfig) -> TrustConfig {
        if let Some(v) = self.noise_estimate {
            cfg.p_hat = v;
        }
        if let Some(v) = self.fdr_level {
            cfg.q = v;
        }
        if let Some(v) = self.method {
            cfg.method = v.into();
        }
        if let Some(v) = self.rank_increment {
            cfg.delta_r = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.min_decrease {
            cfg.min_decrease = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Args)]
struct FactorizeArgs {
    /// Data matrix in text format.
    input: PathBuf,
    #[command(flatten)]
    trust: TrustArgs,
    /// Full run report as JSON; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Returned factors as JSON.
    #[arg(long)]
    factors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairsArg {
    Unordered,
    Ordered,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Noise level p.
    #[arg(long)]
    p: Option<f64>,
    /// FDR level q.
    #[arg(long)]
    q: Option<f64>,
    /// Tile density δ.
    #[arg(long)]
    delta: Option<f64>,
    /// Relative pattern sizes; every integer size up to n/10 when omitted.
    #[arg(long, value_delimiter = ',')]
    a_rel: Option<Vec<f64>>,
    /// Column pairs counted by the coherence union bound.
    #[arg(long, value_enum)]
    pairs: Option<PairsArg>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Computed factors as JSON.
    factors: PathBuf,
    /// Planted factors as JSON.
    #[arg(long, conflicts_with = "ratings")]
    planted: Option<PathBuf>,
    /// Data matrix, needed for the residual.
    #[arg(long, requires = "planted")]
    data: Option<PathBuf>,
    /// Overlap fraction up to which a tile is a false discovery [default: 0].
    #[arg(long)]
    overlap: Option<f64>,
    /// Ratings file; the factors must come from its binarization.
    #[arg(long, requires = "ids")]
    ratings: Option<PathBuf>,
    /// Id maps written by `binarize`.
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Scores below this are bad recommendations [default: 2.5].
    #[arg(long)]
    bad_threshold: Option<f64>,
    /// JSON report; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report as a one-row CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Overrides experiment.seed; one of the two is required.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides experiment.workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides experiment.output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BinarizeArgs {
    /// `row_id,col_id,score` triples, comma- or tab-separated.
    ratings: PathBuf,
    /// Cells are 1 iff the score exceeds this [default: 3].
    #[arg(long)]
    positive_threshold: Option<f64>,
    #[arg(long)]
    min_row_degree: Option<usize>,
    #[arg(long)]
    min_col_degree: Option<usize>,
    /// Matrix in text format.
    #[arg(long)]
    out: PathBuf,
    /// Surviving row and column ids as JSON.
    #[arg(long)]
    ids: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct IdMaps {
    rows: Vec<String>,
    cols: Vec<String>,
}

#[derive(Serialize)]
struct RecommendationReport {
    wrong_rec_rate: f64,
    rank: usize,
    rated_cells: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

fn read_matrix(path: &Path) -> Result<BinaryMatrix> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BinaryMatrix::read_text(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
}

fn need<T>(value: Option<T>, name: &str) -> Result<T> {
    value.with_context(|| {
        format!("missing parameter {name}: pass it as a flag or in the config file")
    })
}

fn generate(args: &GenerateArgs, cfg: &ConfigFile) -> Result<()> {
    let g = &cfg.generate;
    let params = PlantedParams {
        n: need(args.n.or(g.n), "n")?,
        m: need(args.m.or(g.m), "m")?,
        r_star: need(args.r_star.or(g.r_star), "r_star")?,
        d: need(args.d.or(g.d), "d")?,
        p_plus: args.p_plus.or(g.p_plus).unwrap_or(0.0),
        p_minus: args.p_minus.or(g.p_minus).unwrap_or(0.0),
        seed: need(args.seed.or(g.seed), "seed")?,
    };
    let instance = plant(&params)?;
    let mut w = create(&args.out)?;
    instance.data.write_text(&mut w)?;
    w.flush()?;
    if let Some(path) = &args.planted {
        write_json(Some(path), &instance.planted)?;
    }
    Ok(())
}

fn factorize(args: &FactorizeArgs, cfg: &ConfigFile) -> Result<()> {
    let d = read_matrix(&args.input)?;
    let trust = args.trust.apply(cfg.trust.clone());
    let report = trust_pal(&d, &trust)?;
    eprintln!(
        "rank {} after {} round(s), residual {}, stop {:?}",
        report.rank(),
        report.rounds.len(),
        report.residual(),
        report.stop
    );
    if let Some(path) = &args.factors {
        write_json(Some(path), &report.factors)?;
    }
    write_json(args.report.as_deref(), &report)
}

fn curve(args: &CurveArgs, cfg: &ConfigFile) -> Result<()> {
    let c = &cfg.curve;
    let n = need(args.n.or(c.n), "n")?;
    let pairs = match args.pairs {
        Some(PairsArg::Unordered) => PairCount::Unordered,
        Some(PairsArg::Ordered) => PairCount::Ordered,
        None => c.pairs.unwrap_or_default(),
    };
    let params = CurveParams {
        n,
        m: need(args.m.or(c.m), "m")?,
        p: args.p.or(c.p).unwrap_or(cfg.trust.p_hat),
        q: args.q.or(c.q).unwrap_or(cfg.trust.q),
        delta: args.delta.or(c.delta).unwrap_or(0.5),
        pairs,
    };
    let a_grid = match args.a_rel.clone().or_else(|| c.a_rel.clone()) {
        Some(rels) => pattern_sizes_from_rel(n, &rels),
        None => (1..=(n / 10).max(2)).collect(),
    };
    let density = min_usage_curve(&params, CurveMethod::Density, &a_grid)?;
    // a single column has no pairs, so coherence starts at a = 2
    let coh_grid: Vec<usize> = a_grid.iter().map(|&a| a.max(2)).collect();
    let coherence = min_usage_curve(&params, CurveMethod::Coherence, &coh_grid)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record([
        "a_rel",
        "b_rel_density",
        "b_rel_coherence",
        "infeasible_flags",
    ])?;
    for ((dp, cp), &a) in density.iter().zip(&coherence).zip(&a_grid) {
        let mut flags = Vec::new();
        if !dp.feasible {
            flags.push("density");
        }
        if !cp.feasible || a < 2 {
            flags.push("coherence");
        }
        let b_coh = if a < 2 { 1.0 } else { cp.b_rel };
        w.write_record([
            dp.a_rel.to_string(),
            dp.b_rel.to_string(),
            b_coh.to_string(),
            flags.join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn eval(args: &EvalArgs, cfg: &ConfigFile) -> Result<()> {
    let factors: FactorPairBinary = read_json(&args.factors)?;
    if let Some(ratings_path) = &args.ratings {
        let ids: IdMaps = read_json(need(args.ids.as_deref(), "ids")?)?;
        let rt = RatingsTable::read(
            File::open(ratings_path)
                .with_context(|| format!("opening {}", ratings_path.display()))?,
        )?;
        let mapped = map_ratings(&rt, &ids.rows, &ids.cols);
        let bad = args.bad_threshold.or(cfg.eval.bad_threshold).unwrap_or(2.5);
        let report = RecommendationReport {
            wrong_rec_rate: wrong_rec_rate(&factors, &mapped, bad)?,
            rank: factors.rank(),
            rated_cells: mapped.len(),
        };
        return write_json(args.out.as_deref(), &report);
    }
    let Some(planted_path) = &args.planted else {
        bail!("eval needs --planted or --ratings");
    };
    let planted: FactorPairBinary = read_json(planted_path)?;
    let data = match &args.data {
        Some(path) => read_matrix(path)?,
        None => bmf_fdr_core::boolean_product(&planted),
    };
    let overlap = args.overlap.or(cfg.eval.overlap).unwrap_or(0.0);
    let report = EvalReport::compute(&data, &factors, &planted, overlap)?;
    if let Some(path) = &args.csv {
        report.write_csv(create(path)?)?;
    }
    write_json(args.out.as_deref(), &report)
}

fn experiment(args: &ExperimentArgs, cfg: &ConfigFile) -> Result<()> {
    let mut spec = cfg.experiment_spec(args.seed)?;
    if let Some(w) = args.workers {
        spec.workers = w;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from))
        .context("no output directory: pass --out or set experiment.output")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let results = run_experiment(&spec)?;
    results.write_runs_csv(create(&dir.join("runs.csv"))?)?;
    results.write_aggregate_csv(create(&dir.join("aggregate.csv"))?)?;
    results.write_timings_csv(create(&dir.join("timings.csv"))?)?;
    let failures = results.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} run(s), {failures} failed; results in {}",
        results.rows.len(),
        dir.display()
    );
    Ok(())
}

fn binarize(args: &BinarizeArgs, cfg: &ConfigFile) -> Result<()> {
    let b = &cfg.binarize;
    let file =
        File::open(&args.ratings).with_context(|| format!("opening {}", args.ratings.display()))?;
    let rt = RatingsTable::read(BufReader::new(file))?;
    if rt.duplicates > 0 {
        eprintln!(
            "{} duplicate rating(s) replaced by later entries",
            rt.duplicates
        );
    }
    let out = binarize_ratings(
        &rt,
        args.positive_threshold
            .or(b.positive_threshold)
            .unwrap_or(3.0),
        args.min_row_degree.or(b.min_row_degree).unwrap_or(0),
        args.min_col_degree.or(b.min_col_degree).unwrap_or(0),
    )?;
    eprintln!(
        "{} x {} matrix, density {:.4}",
        out.matrix.rows(),
        out.matrix.cols(),
        out.matrix.density()
    );
    let mut w = create(&args.out)?;
    out.matrix.write_text(&mut w)?;
    w.flush()?;
    write_json(
        Some(&args.ids),
        &IdMaps {
            rows: out.row_ids,
            cols: out.col_ids,
        },
    )
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => generate(a, &cfg),
        Command::Factorize(a) => factorize(a, &cfg),
        Command::Curve(a) => curve(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Experiment(a) => experiment(a, &cfg),
        Command::Binarize(a) => binarize(a, &cfg),
    }
}
