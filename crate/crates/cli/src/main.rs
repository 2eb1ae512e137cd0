use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gtd_core::harness::{self, GenConfig, Init, TrialConfig};
use gtd_core::instance::fmt_f64;
use gtd_core::{exact, pdgd, report, AlgorithmSpec, DVector, Family, Instance, Metric, Schedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gtd", version, about = "Gradient TD learners, exact oracles and PDGD analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print θ*, λ*, MSPBE(0) and cond(A) for an instance file.
    Solve {
        instance: PathBuf,
        /// Also print θ̂_σ and its distance to θ*.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run one learner and emit `k,error,mspbe` CSV.
    Run(RunArgs),
    /// Analyse and integrate the continuous-time dynamics of a learner.
    Ode(OdeArgs),
    /// Ranking experiment over random instances.
    Bench(BenchArgs),
    /// Write a random instance file.
    Generate(GenerateArgs),
    /// Report violated modelling assumptions of an instance file.
    Validate { instance: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Gtd2,
    Gtd3,
    Gtd4,
    Gtd5,
}

impl From<Algo> for Family {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Gtd2 => Family::Gtd2,
            Algo::Gtd3 => Family::Gtd3,
            Algo::Gtd4 => Family::Gtd4,
            Algo::Gtd5 => Family::Gtd5,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Feature,
    Identity,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Feature => Metric::FeatureWeighted,
            MetricArg::Identity => Metric::Identity,
        }
    }
}

#[derive(Args)]
struct MetricFlags {
    /// Metric of the θ damping (GTD3/4/5).
    #[arg(long, value_enum)]
    primal_metric: Option<MetricArg>,
    /// Metric of the λ damping (GTD2/4).
    #[arg(long, value_enum)]
    dual_metric: Option<MetricArg>,
}

impl MetricFlags {
    fn apply(&self, mut spec: AlgorithmSpec) -> AlgorithmSpec {
        if let Some(m) = self.primal_metric {
            spec = spec.with_primal_metric(m.into());
        }
        if let Some(m) = self.dual_metric {
            spec = spec.with_dual_metric(m.into());
        }
        spec
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// α_k = c / (k + c).
    #[arg(long, default_value_t = 5.0)]
    alpha_c: f64,
    /// σ_k = c / (k + c) (GTD4/GTD5).
    #[arg(long, default_value_t = 100.0)]
    sigma_c: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    record_every: u64,
    /// Draw θ₀ and λ₀ from N(0, scale²) instead of zero.
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[command(flatten)]
    metrics: MetricFlags,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    instance: PathBuf,
}

#[derive(Args)]
struct OdeArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    t_end: f64,
    /// Defaults to the stability bound 0.5 / ‖M‖.
    #[arg(long)]
    dt: Option<f64>,
    /// Write `t,comp_0,...` CSV of the trajectory.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Integrator steps between trace rows.
    #[arg(long, default_value_t = 100)]
    record_every: usize,
    #[command(flatten)]
    metrics: MetricFlags,
    instance: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    instances: u64,
    #[arg(long)]
    tau: u64,
    #[arg(long, default_value_t = 5.0)]
    alpha_c: f64,
    #[arg(long, default_value_t = 100.0)]
    sigma_c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Draw sizes per instance (states 3..=100, actions 2..=30, features ≈ |S|/10).
    #[arg(long)]
    ranged: bool,
    /// Also write per-instance `trace_<i>_<algo>.csv`.
    #[arg(long)]
    traces: bool,
    #[arg(long, default_value_t = 1000)]
    record_every: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    actions: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &PathBuf) -> Result<Instance> {
    Instance::read(path).with_context(|| format!("reading {}", path.display()))
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn solve(instance: &PathBuf, sigma: Option<f64>) -> Result<()> {
    let pb = load(instance)?.problem()?;
    let theta = exact::theta_star(&pb)?;
    println!("theta_star: {}", fmt_vec(&theta));
    println!("lambda_star: {}", fmt_vec(&exact::lambda_star(&pb)?));
    println!("mspbe_at_zero: {}", fmt_f64(exact::mspbe(&pb, &DVector::zeros(pb.q()))?));
    println!("cond_a: {}", fmt_f64(pb.cond_a()));
    if let Some(sigma) = sigma {
        let hat = exact::theta_hat_sigma(&pb, sigma)?;
        println!("theta_hat_sigma: {}", fmt_vec(&hat));
        println!("theta_hat_sigma_distance: {}", fmt_f64((&hat - &theta).norm()));
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let pb = load(&args.instance)?.problem()?;
    let spec = args.metrics.apply(AlgorithmSpec::new(
        args.algo.into(),
        Schedule::hyperbolic(args.alpha_c)?,
        Schedule::hyperbolic(args.sigma_c)?,
    ));
    let init = match args.init_scale {
        Some(scale) => Init::Gaussian { scale, seed: args.init_seed },
        None => Init::Zero,
    };
    let trial = TrialConfig { tau: args.steps, record_every: args.record_every, init };
    let trace = harness::run_trial(&pb, &spec, &trial, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let csv = report::trace_csv(&trace);
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if trace.diverged {
        eprintln!("warning: {} diverged", spec.name());
    }
    Ok(())
}

fn ode(args: &OdeArgs) -> Result<()> {
    let pb = load(&args.instance)?.problem()?;
    let spec = args.metrics.apply(AlgorithmSpec::new(
        args.algo.into(),
        Schedule::Constant(1.0),
        Schedule::Constant(args.sigma),
    ));
    let sys = pdgd::system_matrices(&pb, &spec, args.sigma)?;
    let stability = pdgd::hurwitz_check(&sys.m)?;
    let dt = args.dt.unwrap_or_else(|| pdgd::max_stable_dt(&sys));
    let traj = pdgd::integrate_pdgd(&sys, &DVector::zeros(sys.c.len()), dt, args.t_end, args.record_every)?;
    let target = pdgd::analytic_fixed_point(&pb, &spec, args.sigma)?.unwrap_or_else(|| sys.fixed_point.clone());

    println!("spectral_abscissa: {}", fmt_f64(stability.spectral_abscissa));
    println!("stable: {}", stability.is_stable);
    println!("final_distance: {}", fmt_f64((traj.last() - &target).norm()));

    if let Some(path) = &args.trace {
        let mut out = String::from("t");
        for i in 0..sys.c.len() {
            out.push_str(&format!(",comp_{i}"));
        }
        out.push('\n');
        for (t, x) in traj.times.iter().zip(&traj.states) {
            out.push_str(&fmt_f64(*t));
            for v in x.iter() {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let config =
        if args.ranged { GenConfig::ranged(args.seed) } else { GenConfig { seed: args.seed, ..GenConfig::default() } };
    let alpha = Schedule::hyperbolic(args.alpha_c)?;
    let sigma = Schedule::hyperbolic(args.sigma_c)?;
    let specs: Vec<AlgorithmSpec> = Family::ALL.iter().map(|f| AlgorithmSpec::new(*f, alpha, sigma)).collect();
    let trial = TrialConfig::new(args.tau, args.record_every);

    let run = || harness::run_experiment(&config, &specs, args.instances, &trial, args.traces);
    let exp = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(run)?,
        None => run()?,
    };
    report::write_experiment(&args.out, &exp)?;
    print!("{}", report::rankings_csv(&exp.table));
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let config = GenConfig {
        gamma: args.gamma,
        reward_sparsify_threshold: args.threshold,
        ..GenConfig::fixed(args.states, args.actions, args.features, args.seed)
    };
    let inst = harness::generate_instance(&config, &mut harness::instance_rng(args.seed, 0))?;
    inst.write(&args.out)?;
    Ok(())
}

fn validate(instance: &PathBuf) -> Result<()> {
    let report = load(instance)?.validate();
    if report.is_valid() {
        println!("valid");
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    bail!("{} violation(s)", report.violations.len())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve { instance, sigma } => solve(&instance, sigma),
        Command::Run(args) => run(&args),
        Command::Ode(args) => ode(&args),
        Command::Bench(args) => bench(&args),
        Command::Generate(args) => generate(&args),
        Command::Validate { instance } => validate(&instance),
    }
}
