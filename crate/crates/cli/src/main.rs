use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spinglass_core::disorder::{sample_tensor, DisorderSpec};
use spinglass_core::experiments::{
    init_threads_from_env, read_csv, report, run, ExperimentConfig, ExperimentKind, ResultRow,
};
use spinglass_core::parisi::{gs_prediction, minimize_cs, MinimizerConfig};
use spinglass_core::tensor::write_tensor;
use spinglass_core::MixtureSpec;

#[derive(Parser)]
#[command(name = "spinglass", version, about = "Spherical mixed p-spin glass experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a disorder tensor and write it with its metadata sidecar.
    Generate {
        #[arg(long)]
        order: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "gaussian")]
        family: DisorderSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground states per instance.
    Gs(ExperimentArgs),
    /// Free energies per instance by thermodynamic integration.
    Fe(ExperimentArgs),
    /// Minimize the Crisanti–Sommers functional, or extrapolate it to zero temperature.
    Parisi(ParisiArgs),
    /// Audit the truncation pipeline.
    TruncateAudit(ExperimentArgs),
    /// Cross-family universality of the ground state.
    Universality(ExperimentArgs),
    /// Heavy-tail growth of the normalized ground state.
    Baiyin(ExperimentArgs),
    /// Spiked tensor detection curve.
    Pca(ExperimentArgs),
    /// Ground states on products of spheres.
    Multispecies(ExperimentArgs),
    /// Ground states on the ℓq sphere.
    Lq(ExperimentArgs),
    /// Rebuild the report files from a results CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A configuration file plus flags that override its values.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Mixture coefficients `γ_1,γ_2,…`.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<DisorderSpec>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Replicates `0..count`, an alternative to `--seeds`.
    #[arg(long, conflicts_with = "seeds")]
    seed_count: Option<u64>,
    #[arg(long)]
    root_seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParisiArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    gammas: Vec<f64>,
    /// Inverse temperature; with several values the zero-temperature extrapolation is printed.
    #[arg(long, value_delimiter = ',', required = true)]
    beta: Vec<f64>,
    /// Number of replica-symmetry-breaking atoms.
    #[arg(long, default_value_t = 2)]
    k: usize,
}

fn build_config(kind: ExperimentKind, a: ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(
            kind,
            vec![0.0, 1.0],
            vec![DisorderSpec::Gaussian],
            vec![200],
            vec![0],
        ),
    };
    if cfg.kind != kind {
        bail!("configuration declares kind '{}' but the '{}' command was used", cfg.kind, kind);
    }
    if a.name.is_some() {
        cfg.name = a.name;
    }
    if let Some(v) = a.gammas {
        cfg.gammas = v;
    }
    if let Some(v) = a.families {
        cfg.families = v;
    }
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(c) = a.seed_count {
        cfg.seeds = (0..c).collect();
    }
    if let Some(v) = a.root_seed {
        cfg.root_seed = v;
    }
    if a.beta.is_some() {
        cfg.beta = a.beta;
    }
    if let Some(r) = a.restarts {
        cfg.solver.restarts = r;
    }
    if let Some(v) = a.lambdas {
        cfg.lambdas = v;
    }
    if a.q.is_some() {
        cfg.q = a.q;
    }
    if a.out.is_some() {
        cfg.output = a.out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_aggregates(rows: &[ResultRow]) {
    for r in rows.iter().filter(|r| r.seed.is_none()) {
        let n = r.n.map(|n| format!("N={n} ")).unwrap_or_default();
        println!("{n}{} {} = {:.6} ± {}", r.family, r.stat, r.value, r.stderr);
    }
}

fn run_experiment(kind: ExperimentKind, args: ExperimentArgs) -> Result<()> {
    let cfg = build_config(kind, args)?;
    let rows = run(&cfg).with_context(|| format!("running '{}'", cfg.label()))?;
    let out = cfg
        .output
        .clone()
        .unwrap_or_else(|| Path::new("results").join(cfg.label()));
    let files = report(&rows, &cfg, &out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)
        .with_context(|| format!("writing {}", out.join("config.toml").display()))?;
    print_aggregates(&rows);
    println!("wrote {}", files.csv.display());
    println!("wrote {}", files.summary.display());
    Ok(())
}

fn run_parisi(a: ParisiArgs) -> Result<()> {
    let mix = MixtureSpec::new(a.gammas)?;
    let cfg = MinimizerConfig::default();
    if a.beta.len() == 1 {
        let m = minimize_cs(&mix, a.beta[0], a.k, &cfg)?;
        println!("value = {:.10}", m.value.value);
        println!("breakpoints = {:?}", m.profile.breakpoints());
        println!("values = {:?}", m.profile.values());
        println!("converged = {}", m.converged);
    } else {
        let p = gs_prediction(&mix, &a.beta, a.k, &cfg)?;
        for (b, v) in p.betas.iter().zip(&p.values) {
            println!("beta = {b}: {v:.10}");
        }
        println!("gs_prediction = {:.10}", p.value);
        println!("monotone = {}, converged = {}", p.monotone, p.converged);
    }
    Ok(())
}

fn main() -> Result<()> {
    init_threads_from_env()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { order, n, family, seed, out } => {
            let t = sample_tensor(order, n, &family, seed)?;
            write_tensor(&out, &t, &family.tag(), seed)?;
            println!("wrote {} ({} entries)", out.display(), t.len());
            Ok(())
        }
        Command::Gs(a) => run_experiment(ExperimentKind::Gs, a),
        Command::Fe(a) => run_experiment(ExperimentKind::Fe, a),
        Command::Parisi(a) => run_parisi(a),
        Command::TruncateAudit(a) => run_experiment(ExperimentKind::TruncationAudit, a),
        Command::Universality(a) => run_experiment(ExperimentKind::Universality, a),
        Command::Baiyin(a) => run_experiment(ExperimentKind::Baiyin, a),
        Command::Pca(a) => run_experiment(ExperimentKind::TensorPca, a),
        Command::Multispecies(a) => run_experiment(ExperimentKind::Multispecies, a),
        Command::Lq(a) => run_experiment(ExperimentKind::Lq, a),
        Command::Report { input, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = read_csv(&input)?;
            let files = report(&rows, &cfg, &out)?;
            println!("wrote {}", files.summary.display());
            Ok(())
        }
    }
}
