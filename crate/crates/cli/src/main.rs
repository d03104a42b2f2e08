//! Command-line front end: exact stencil tables, single solves, convergence
//! benchmarks, and point-cloud ranking.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hjsort::bench::{emit_csv, emit_plot_data, run_study, FilterSelection, StudyOptions};
use hjsort::fd_coeffs::{
    arithmetic_weights, backward_weights, centered_weights, derivative_weights, forward_weights,
    NodeSpec, Stencil,
};
use hjsort::grid::{GridFunction, GridSpec};
use hjsort::hj_solver::{sweep_solve, SchemeConfig};
use hjsort::ranking::{load_points, rank_cloud};
use hjsort::rational::{display_compact, parse_rational, Rational};
use hjsort::test_problems::{by_name, sample_points, verify_residual, TestProblem};

#[derive(Parser)]
#[command(
    name = "hjsort",
    version,
    about = "Upwind finite-difference solvers for the Hamilton-Jacobi continuum limit of nondominated sorting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print exact finite-difference weights, one `offset<TAB>num/den` line
    /// per node, with a trailing `# derivative=p accuracy=q` comment.
    Coeffs(CoeffsArgs),
    /// Solve one problem on one mesh and print the run summary line
    /// `h,order,filtered,usage_fraction,max_residual`.
    Solve(SolveArgs),
    /// Run a convergence study over a mesh ladder and write CSV + plot data.
    /// Exits nonzero if a structural invariant (stability bound, filter
    /// residual) was violated.
    Bench(BenchArgs),
    /// Rank a 2-D point cloud by the PDE solution and compare against exact
    /// nondominated sorting.
    Rank(RankArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Family {
    Backward,
    Forward,
    Centered,
    Arith,
    General,
}

#[derive(Args)]
struct CoeffsArgs {
    /// Stencil family.
    #[arg(long, value_enum)]
    family: Family,
    /// Difference order (backward/forward) or node count (arith).
    #[arg(long)]
    k: Option<usize>,
    /// Nodes left of zero (centered/general).
    #[arg(long)]
    m: Option<usize>,
    /// Nodes right of zero (centered/general).
    #[arg(long)]
    n: Option<usize>,
    /// First node of the arithmetic progression, as a rational like `1/2`.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    /// Progression/offset step, as a rational.
    #[arg(long, allow_hyphen_values = true)]
    d: Option<String>,
    /// Derivative order (arith/general).
    #[arg(long, default_value_t = 1)]
    p: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FilterFlag {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct ProblemArgs {
    /// Test problem.
    #[arg(long)]
    problem: String,
    /// Oscillation parameter of the smooth problem.
    #[arg(long, default_value_t = 20.0)]
    kparam: f64,
    /// Kink strength of the nonsmooth problem.
    #[arg(long, default_value_t = 10.0)]
    cparam: f64,
    /// Value of the constant problem.
    #[arg(long, default_value_t = 1.0)]
    const_value: f64,
}

impl ProblemArgs {
    fn build(&self) -> Result<TestProblem> {
        by_name(&self.problem, self.kparam, self.cparam, self.const_value)
            .with_context(|| format!("unknown problem '{}' (expected f1|f2|const)", self.problem))
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Space dimension (f1/f2 are two-dimensional).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Intervals per axis (h = 1/mesh).
    #[arg(long)]
    mesh: usize,
    /// Backward-difference order k.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Blend with the monotone scheme under the √h test.
    #[arg(long)]
    filtered: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold_exponent: f64,
    #[arg(long, default_value_t = 1e-12)]
    root_tol: f64,
    /// Write the factored solution w here (binary grid format).
    #[arg(long)]
    w_out: Option<PathBuf>,
    /// Write the solution u here (binary grid format).
    #[arg(long)]
    u_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Scheme orders to run.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 5, 8, 13])]
    orders: Vec<usize>,
    /// Run filtered schemes, unfiltered, or both.
    #[arg(long, value_enum, default_value_t = FilterFlag::On)]
    filtered: FilterFlag,
    /// Mesh ladder (interval counts, increasing).
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256, 512, 1024])]
    meshes: Vec<usize>,
    /// Output directory for the CSV and plot data.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold_exponent: f64,
    /// Seed of the manufactured-solution verification sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RankArgs {
    /// Input CSV of `x1,x2` rows.
    #[arg(long = "in")]
    input: PathBuf,
    /// Intervals per axis of the density/solver grid.
    #[arg(long, default_value_t = 128)]
    mesh: usize,
    /// Filtered scheme order.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// 3×3 mean-smoothing passes applied to the density estimate.
    #[arg(long, default_value_t = 0)]
    smoothing: usize,
    /// Output CSV `x1,x2,pde_rank,exact_layer`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold_exponent: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Coeffs(args) => coeffs(args),
        Command::Solve(args) => solve(args),
        Command::Bench(args) => bench(args),
        Command::Rank(args) => rank(args),
    }
}

fn want<T: Copy>(v: Option<T>, flag: &str, family: &str) -> Result<T> {
    v.with_context(|| format!("--{} is required for --family {}", flag, family))
}

fn want_rational(v: &Option<String>, flag: &str, family: &str) -> Result<Rational> {
    let s = v
        .as_deref()
        .with_context(|| format!("--{} is required for --family {}", flag, family))?;
    parse_rational(s).with_context(|| format!("--{} expects a rational like 3 or -1/2", flag))
}

fn coeffs(args: CoeffsArgs) -> Result<()> {
    let stencil = match args.family {
        Family::Backward | Family::Forward => {
            let k = want(args.k, "k", "backward/forward")?;
            if args.p != 1 {
                bail!("one-sided difference tables are first-derivative rules; use --family arith/general for higher p");
            }
            if args.family == Family::Backward {
                backward_weights(k)?
            } else {
                forward_weights(k)?
            }
        }
        Family::Centered => {
            if args.p != 1 {
                bail!(
                    "centered tables are first-derivative rules; use --family general for higher p"
                );
            }
            centered_weights(
                want(args.m, "m", "centered")?,
                want(args.n, "n", "centered")?,
            )?
        }
        Family::Arith => {
            let spec = NodeSpec::arithmetic(
                want_rational(&args.a, "a", "arith")?,
                want_rational(&args.d, "d", "arith")?,
                want(args.k, "k", "arith")?,
            );
            if args.p == 1 {
                arithmetic_weights(&spec)?
            } else {
                derivative_weights(&spec, args.p)?
            }
        }
        Family::General => {
            let spec = NodeSpec::offset(
                want(args.m, "m", "general")?,
                want(args.n, "n", "general")?,
                want_rational(&args.d, "d", "general")?,
            );
            derivative_weights(&spec, args.p)?
        }
    };
    print_stencil(&stencil);
    Ok(())
}

fn print_stencil(s: &Stencil) {
    for (off, w) in s.offsets.iter().zip(&s.weights) {
        println!("{}\t{}/{}", display_compact(off), w.numer(), w.denom());
    }
    println!(
        "# derivative={} accuracy={}",
        s.derivative_order, s.accuracy_order
    );
}

fn scheme_config(
    order: usize,
    filtered: bool,
    threshold_exponent: f64,
    root_tol: f64,
) -> SchemeConfig {
    SchemeConfig {
        order,
        filtered,
        threshold_exponent,
        root_tol,
        max_newton_iters: 100,
    }
}

fn solve(args: SolveArgs) -> Result<()> {
    let problem = args.problem.build()?;
    if problem.name != "const" && args.dim != 2 {
        bail!("problem '{}' is two-dimensional", problem.name);
    }
    let spec = GridSpec::new(args.dim, args.mesh)?;
    let f = GridFunction::from_fn(spec, |x| problem.density_at(x));
    let cfg = scheme_config(
        args.order,
        args.filtered,
        args.threshold_exponent,
        args.root_tol,
    );
    let report = sweep_solve(&f, &cfg)?;
    if let Some(path) = &args.w_out {
        report.w.write_binary(path)?;
    }
    if let Some(path) = &args.u_out {
        report.u.write_binary(path)?;
    }
    println!(
        "{},{},{},{},{}",
        spec.h(),
        args.order,
        args.filtered,
        report.usage_fraction,
        report.max_filter_residual
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let problem = args.problem.build()?;
    // Certify the manufactured pair before trusting it as a benchmark truth.
    let points = sample_points(args.seed, 500, 0.05, !problem.smooth);
    verify_residual(&problem, &points, 1e-4, 1e-6)
        .with_context(|| format!("manufactured-solution check failed for '{}'", problem.name))?;

    let filter = match args.filtered {
        FilterFlag::On => FilterSelection::FilteredOnly,
        FilterFlag::Off => FilterSelection::UnfilteredOnly,
        FilterFlag::Both => FilterSelection::Both,
    };
    let mut opts = StudyOptions::new(args.orders.clone(), filter, args.meshes.clone());
    opts.threshold_exponent = args.threshold_exponent;
    let report = run_study(&problem, &opts)?;

    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join(format!("{}.csv", report.problem));
    emit_csv(&report, &csv_path)?;
    let plot_files = emit_plot_data(&report, &args.out)?;
    println!(
        "wrote {} and {} plot series",
        csv_path.display(),
        plot_files.len()
    );
    for s in &report.observed_orders {
        println!(
            "order k={} filtered={}: L1(u) slope {}",
            s.order,
            s.filtered,
            s.l1_u.map_or("n/a".into(), |v| format!("{:.3}", v)),
        );
    }
    if !report.violations.is_empty() {
        for v in &report.violations {
            eprintln!("violation: {}", v);
        }
        bail!(
            "{} structural invariant violations",
            report.violations.len()
        );
    }
    Ok(())
}

fn rank(args: RankArgs) -> Result<()> {
    let cloud = load_points(&args.input)
        .with_context(|| format!("failed to ingest {}", args.input.display()))?;
    let cfg = scheme_config(args.order, true, args.threshold_exponent, 1e-12);
    let result = rank_cloud(&cloud, args.mesh, &cfg, args.smoothing)?;

    let mut out = BufWriter::new(File::create(&args.out)?);
    writeln!(out, "x1,x2,pde_rank,exact_layer")?;
    for ((p, rank), layer) in cloud
        .original
        .iter()
        .zip(&result.pde_rank)
        .zip(&result.exact_layer)
    {
        writeln!(out, "{},{},{},{}", p[0], p[1], rank, layer)?;
    }
    out.flush()?;
    println!(
        "points={} layers={} agreement={:.4}",
        cloud.len(),
        result.exact_layer.iter().max().copied().unwrap_or(0),
        result.agreement
    );
    Ok(())
}
