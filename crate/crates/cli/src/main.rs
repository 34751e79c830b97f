mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use maxmargin::certify::{
    certify_network, closed_form_tau, single_neuron_oracle, solve_general_weighting, theoretical_gamma, ClassWeighting,
    OracleConfig,
};
use maxmargin::constructions::{build_cyclic, build_group_trace_for, build_memorization_addition, build_parity};
use maxmargin::group::{basis_vectors, character_table, irreps, Group, GroupKind};
use maxmargin::net::{dataset_margin, Network};
use maxmargin::spectra::{census, max_normalized_power, multidim_presence, Analysis};
use maxmargin::tasks::{build_dataset, TaskSpec};
use maxmargin::trainer::train;

use config::{default_activation, parse_activation, slug, FileConfig, OracleArgs, TaskArgs, TrainArgs};

/// A bad invocation: exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "maxmargin", version, about = "Max-margin constructions, certificates, training and spectra")]
struct Cli {
    /// TOML file supplying defaults for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "MAXMARGIN_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the analytic max-margin network for a task
    Construct {
        #[command(flatten)]
        task: TaskArgs,
        /// Where to write the network (default OUT/net_<task>.json)
        #[arg(long)]
        net_out: Option<PathBuf>,
    },
    /// Build the one-hot memorization network for addition mod p
    Memorize {
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        net_out: Option<PathBuf>,
    },
    /// Check a network against the optimality certificate
    Certify {
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
        /// Relative tolerance for every check
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print the closed-form maximum margin
    Gamma {
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Search for the best single unit-norm neuron
    Oracle {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Train a network by gradient descent
    Train {
        #[command(flatten)]
        task: TaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Per-neuron spectra of a network
    Spectrum {
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        opts: SpectrumArgs,
    },
    /// Dominant frequency or representation counts
    Census {
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        opts: SpectrumArgs,
        /// Also evaluate the three-dimensional transform (cyclic tasks, p <= 31)
        #[arg(long)]
        multidim: bool,
    },
    /// Solve the class-weighting systems on character-table subsets
    Weighting {
        #[arg(long)]
        group: Option<String>,
        /// Representation indices (default: all non-trivial)
        #[arg(long, value_delimiter = ',')]
        kappa_r: Option<Vec<usize>>,
        /// Class indices (default: all non-identity)
        #[arg(long, value_delimiter = ',')]
        kappa_c: Option<Vec<usize>>,
    },
}

#[derive(Args, Clone, Default)]
struct SpectrumArgs {
    /// Unfolded Fourier powers (frequencies j and p-j kept apart, DC included)
    #[arg(long)]
    unfolded: bool,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    version: &'static str,
    seed: Option<u64>,
    outputs: Vec<String>,
    wall_time_secs: f64,
    passed: bool,
}

struct Outcome {
    config: Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    passed: bool,
}

impl Outcome {
    fn ok(config: Value, outputs: Vec<PathBuf>) -> Self {
        Self { config, seed: None, outputs, passed: true }
    }
}

struct Ctx {
    out: PathBuf,
    file: FileConfig,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_net(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Network::from_json(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn construct(ctx: &Ctx, mut task: TaskArgs, net_out: Option<PathBuf>) -> Result<Outcome> {
    task.merge(&ctx.file.task());
    let spec = task.resolve()?;
    let net = match &spec {
        TaskSpec::Modular { p } => build_cyclic(*p)?,
        TaskSpec::Parity { n, set, .. } => build_parity(*n, set)?,
        TaskSpec::Group { group: GroupKind::Cyclic { p } } => {
            let mut net = build_cyclic(*p)?;
            net.task = spec.clone();
            net
        }
        TaskSpec::Group { group } => build_group_trace_for(*group)?,
    };
    let path = net_out.unwrap_or_else(|| ctx.path(&format!("net_{}.json", slug(&spec))));
    report_net(&net, &path)?;
    Ok(Outcome::ok(json!({ "task": spec }), vec![path]))
}

fn report_net(net: &Network, path: &Path) -> Result<()> {
    let data = build_dataset(&net.task)?;
    let gamma = theoretical_gamma(&net.task)?;
    let r = dataset_margin(net, &data, gamma.norm.0, gamma.norm.1)?;
    fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    fs::write(path, net.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("task              {}", net.task);
    println!("width             {}", net.width());
    println!("norm L_(2,{})      {:.6e}", gamma.norm.1, r.norm);
    println!("min margin        {:.6e}", r.min_margin);
    println!("normalized margin {:.7}", r.normalized_margin);
    println!("theoretical gamma {:.7}", gamma.value);
    println!("network           {}", path.display());
    Ok(())
}

fn memorize(ctx: &Ctx, p: Option<usize>, net_out: Option<PathBuf>) -> Result<Outcome> {
    let p = p.or(ctx.file.p).ok_or_else(|| Usage("memorize needs --p".into()))?;
    let spec = TaskSpec::Modular { p };
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let net = build_memorization_addition(p)?;
    let path = net_out.unwrap_or_else(|| ctx.path(&format!("mem_p{p}.json")));
    report_net(&net, &path)?;
    Ok(Outcome::ok(json!({ "task": spec }), vec![path]))
}

fn certify(ctx: &Ctx, net_path: &Path, mut task: TaskArgs, tol: Option<f64>) -> Result<Outcome> {
    let net = load_net(net_path)?;
    if !task.is_empty() {
        task.merge(&ctx.file.task());
        let spec = task.resolve()?;
        if spec != net.task {
            return Err(Usage(format!("network is for {} but --task describes {spec}", net.task)).into());
        }
    }
    let tol = tol.or(ctx.file.tol).unwrap_or(1e-8);
    let data = build_dataset(&net.task)?;
    let report = certify_network(&net, &data, tol)?;
    let path = ctx.path("certificate.json");
    write_json(&path, &report)?;
    let mark = |b: bool| if b { "ok" } else { "FAIL" };
    println!("uniform margin    {:<4} deviation {:e}", mark(report.uniform_margin_ok), report.uniform_margin_deviation);
    println!("equal incorrect   {:<4} spread {:e}", mark(report.c1_ok), report.c1_spread);
    println!(
        "margin vs theory  {:<4} measured {:.7} theory {:.7} rel error {:e}",
        mark(report.gamma_ok),
        report.gamma_measured,
        report.gamma_theory,
        report.rel_error
    );
    println!("certificate       {}", if report.passed { "passed" } else { "failed" });
    Ok(Outcome {
        config: json!({ "net": net_path, "task": net.task, "tol": tol }),
        seed: None,
        outputs: vec![path],
        passed: report.passed,
    })
}

fn gamma(ctx: &Ctx, mut task: TaskArgs) -> Result<Outcome> {
    task.merge(&ctx.file.task());
    let spec = task.resolve()?;
    let g = theoretical_gamma(&spec)?;
    println!("{:.9e}", g.value);
    if !g.certified {
        eprintln!("warning: the group fails the negativity condition; the value is not certified");
    }
    let path = ctx.path(&format!("gamma_{}.json", slug(&spec)));
    write_json(&path, &json!({ "task": spec, "gamma": g }))?;
    Ok(Outcome::ok(json!({ "task": spec }), vec![path]))
}

fn oracle(ctx: &Ctx, mut task: TaskArgs, mut args: OracleArgs) -> Result<Outcome> {
    task.merge(&ctx.file.task());
    args.merge(&ctx.file.oracle());
    let spec = task.resolve()?;
    let act = match &args.activation {
        Some(a) => parse_activation(a)?,
        None => default_activation(&spec),
    };
    let defaults = OracleConfig::default();
    let cfg = OracleConfig {
        restarts: args.restarts.unwrap_or(defaults.restarts),
        steps: args.steps.unwrap_or(defaults.steps),
        step_size: args.step_size.unwrap_or(defaults.step_size),
        seed: args.seed.unwrap_or(defaults.seed),
        grad_tol: defaults.grad_tol,
    };
    let weighting = match &spec {
        TaskSpec::Group { group: group @ GroupKind::Symmetric { .. } } => {
            let g = Group::new(*group)?;
            ClassWeighting::ByClass(closed_form_tau(&character_table(&irreps(&g)?, &g)?))
        }
        _ => ClassWeighting::Uniform,
    };
    let data = build_dataset(&spec)?;
    let result = single_neuron_oracle(&data, act, &weighting, None, &cfg)?;
    let gamma = theoretical_gamma(&spec)?;
    let bounded = result.best_objective <= gamma.value + 1e-6;
    println!("best objective    {:.9}", result.best_objective);
    println!("theoretical gamma {:.9}", gamma.value);
    println!("restart           {}", result.best_restart);
    println!("converged         {} (tangential gradient {:e})", result.converged, result.grad_norm);
    if spec.cyclic_order().is_some() {
        let p = maxmargin::certify::neuron_min_folded_power(&result.neuron);
        println!("folded power      {p:.9}");
    }
    let path = ctx.path(&format!("oracle_{}.json", slug(&spec)));
    write_json(
        &path,
        &json!({ "task": spec, "activation": act, "config": cfg, "weighting": weighting, "gamma": gamma.value,
                 "within_bound": bounded, "result": result }),
    )?;
    Ok(Outcome {
        config: json!({ "task": spec, "activation": act, "oracle": cfg }),
        seed: Some(cfg.seed),
        outputs: vec![path],
        passed: bounded,
    })
}

fn train_cmd(ctx: &Ctx, mut task: TaskArgs, mut args: TrainArgs) -> Result<Outcome> {
    task.merge(&ctx.file.task());
    args.merge(&ctx.file.train());
    let cfg = args.resolve(&task)?;
    let tag = args.preset.clone().unwrap_or_else(|| slug(&cfg.task));
    let (net, trace) = match train(&cfg) {
        Ok(r) => r,
        Err(maxmargin::Error::Diverged { step, trace }) => {
            let path = ctx.path(&format!("trace_{tag}.csv"));
            trace.write_csv(create(&path)?)?;
            anyhow::bail!("training diverged at step {step}; partial trace in {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };
    let trace_path = ctx.path(&format!("trace_{tag}.csv"));
    trace.write_csv(create(&trace_path)?)?;
    let net_path = ctx.path(&format!("net_{tag}.json"));
    fs::write(&net_path, net.to_json()? + "\n")?;
    let gamma = theoretical_gamma(&cfg.task)?;
    if let Some(last) = trace.last() {
        println!("steps             {}", last.step);
        println!("loss              {:.6e}", last.loss);
        println!("normalized margin {:.7}", last.normalized_margin);
        println!("theoretical gamma {:.7}", gamma.value);
        println!("ratio             {:.4}", last.normalized_margin / gamma.value);
        println!("accuracy          {:.4}", last.accuracy);
        if let Some(p) = last.mean_max_power {
            println!("mean max power    {p:.6}");
        }
    }
    if trace.degenerate_start {
        eprintln!("warning: zero initialization is a stationary point; nothing was learned");
    }
    println!("trace             {}", trace_path.display());
    println!("network           {}", net_path.display());
    Ok(Outcome { config: serde_json::to_value(&cfg)?, seed: Some(cfg.seed), outputs: vec![trace_path, net_path], passed: true })
}

enum OwnedAnalysis {
    Fourier(usize),
    Rep(maxmargin::group::BasisVectors, Vec<String>),
}

impl OwnedAnalysis {
    fn for_net(net: &Network) -> Result<Self> {
        if let Some(p) = net.task.cyclic_order() {
            return Ok(Self::Fourier(p));
        }
        match &net.task {
            TaskSpec::Group { group } => {
                let g = Group::new(*group)?;
                let reps = irreps(&g)?;
                let basis = basis_vectors(&reps, &g)?;
                Ok(Self::Rep(basis, reps.into_iter().map(|r| r.name).collect()))
            }
            _ => Err(Usage("spectra need a modular or group network".into()).into()),
        }
    }

    fn view(&self) -> Analysis<'_> {
        match self {
            Self::Fourier(p) => Analysis::Fourier { p: *p },
            Self::Rep(basis, names) => Analysis::Rep { basis, names: names.clone() },
        }
    }
}

fn spectrum(ctx: &Ctx, net_path: &Path, opts: &SpectrumArgs) -> Result<Outcome> {
    use std::io::Write;
    let net = load_net(net_path)?;
    let owned = OwnedAnalysis::for_net(&net)?;
    let report = census(&net, &owned.view())?;
    let path = ctx.path("spectrum.csv");
    let mut out = create(&path)?;
    write!(out, "index,norm,u_max_power,v_max_power,w_max_power,combined_max_power,dominant")?;
    for b in &report.buckets {
        write!(out, ",{b}")?;
    }
    writeln!(out)?;
    let fourier = matches!(owned, OwnedAnalysis::Fourier(_));
    for s in report.neurons.iter().filter(|s| s.nonzero) {
        let n = &net.neurons[s.index];
        let part = |x: &[f64]| -> String {
            let v = match &owned {
                OwnedAnalysis::Fourier(_) => max_normalized_power(x, !opts.unfolded),
                OwnedAnalysis::Rep(basis, _) => maxmargin::spectra::rep_power(x, basis).map(|f| f.into_iter().fold(0.0, f64::max)),
            };
            v.map(|v| format!("{v:e}")).unwrap_or_default()
        };
        let v = n.v.as_deref().map(part).unwrap_or_default();
        write!(out, "{},{:e},{},{},{},{:e},{}", s.index, s.norm, part(&n.u), v, part(&n.w), s.max_power, s.dominant.unwrap_or(0))?;
        for x in &s.power {
            write!(out, ",{x:e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    println!("neurons           {} nonzero of {}", report.nonzero_neurons, net.width());
    println!("mean max power    {:.6}", report.mean_max_power);
    if fourier && opts.unfolded {
        println!("u/v/w columns use unfolded powers");
    }
    println!("spectrum          {}", path.display());
    Ok(Outcome::ok(json!({ "net": net_path, "unfolded": opts.unfolded }), vec![path]))
}

fn census_cmd(ctx: &Ctx, net_path: &Path, opts: &SpectrumArgs, multidim: bool) -> Result<Outcome> {
    let net = load_net(net_path)?;
    let owned = OwnedAnalysis::for_net(&net)?;
    if opts.unfolded {
        return Err(Usage("census always uses folded powers".into()).into());
    }
    let report = census(&net, &owned.view())?;
    let neurons_path = ctx.path("census_neurons.csv");
    let summary_path = ctx.path("census_summary.csv");
    report.write_neuron_csv(create(&neurons_path)?)?;
    report.write_summary_csv(create(&summary_path)?)?;
    let mut outputs = vec![neurons_path, summary_path];
    for (label, c) in report.buckets.iter().zip(&report.counts) {
        println!("{label:<18}{c}");
    }
    println!("all present       {}", report.all_present);
    println!("mean max power    {:.6}", report.mean_max_power);
    if multidim {
        let p = net
            .task
            .cyclic_order()
            .ok_or_else(|| Usage("--multidim needs a cyclic task".into()))?;
        let md = multidim_presence(&net, p).map_err(|e| Usage(e.to_string()))?;
        println!("multidim present  {} of {}", md.num_present_folded(), md.folded_present.len());
        let path = ctx.path("multidim.json");
        write_json(&path, &md)?;
        outputs.push(path);
    }
    Ok(Outcome::ok(json!({ "net": net_path, "multidim": multidim }), outputs))
}

fn weighting(ctx: &Ctx, group: Option<String>, kappa_r: Option<Vec<usize>>, kappa_c: Option<Vec<usize>>) -> Result<Outcome> {
    let name = group.or(ctx.file.group.clone()).ok_or_else(|| Usage("weighting needs --group".into()))?;
    let kind: GroupKind = name.parse().map_err(|e: maxmargin::Error| Usage(e.to_string()))?;
    let g = Group::new(kind).map_err(|e| Usage(e.to_string()))?;
    let reps = irreps(&g).map_err(|e| Usage(e.to_string()))?;
    let table = character_table(&reps, &g)?;
    let kr = kappa_r.unwrap_or_else(|| (1..table.num_reps()).collect());
    let kc = kappa_c.unwrap_or_else(|| (1..table.num_classes()).collect());
    let sol = solve_general_weighting(&table, &kr, &kc).map_err(|e| Usage(e.to_string()))?;
    let path = ctx.path(&format!("weighting_{kind}.json"));
    write_json(&path, &json!({ "group": kind, "rep_names": table.rep_names, "class_labels": table.class_labels, "solution": sol }))?;
    println!("reps              {:?}", kr.iter().map(|&r| table.rep_names[r].as_str()).collect::<Vec<_>>());
    println!("classes           {:?}", kc.iter().map(|&c| table.class_labels[c].as_str()).collect::<Vec<_>>());
    if sol.singular {
        println!("singular system   the subset pair is infeasible");
    } else {
        println!("class totals      {:?}", sol.class_totals);
        println!("lambda            {:?}", sol.lambda);
        println!("positive          {}", sol.positive);
        println!("reps dominate     {}", sol.reps_dominate);
        println!("classes dominate  {}", sol.classes_dominate);
        if let Some(e) = sol.closed_form_error {
            println!("closed form error {e:e}");
        }
    }
    println!("feasible          {}", sol.feasible);
    Ok(Outcome {
        config: json!({ "group": kind, "kappa_r": kr, "kappa_c": kc }),
        seed: None,
        outputs: vec![path],
        passed: sol.feasible,
    })
}

fn run(cli: Cli) -> Result<(String, Outcome, PathBuf)> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let out = cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { out: out.clone(), file };
    let (name, outcome) = match cli.cmd {
        Cmd::Construct { task, net_out } => ("construct", construct(&ctx, task, net_out)?),
        Cmd::Memorize { p, net_out } => ("memorize", memorize(&ctx, p, net_out)?),
        Cmd::Certify { net, task, tol } => ("certify", certify(&ctx, &net, task, tol)?),
        Cmd::Gamma { task } => ("gamma", gamma(&ctx, task)?),
        Cmd::Oracle { task, oracle: o } => ("oracle", oracle(&ctx, task, o)?),
        Cmd::Train { task, train } => ("train", train_cmd(&ctx, task, train)?),
        Cmd::Spectrum { net, opts } => ("spectrum", spectrum(&ctx, &net, &opts)?),
        Cmd::Census { net, opts, multidim } => ("census", census_cmd(&ctx, &net, &opts, multidim)?),
        Cmd::Weighting { group, kappa_r, kappa_c } => ("weighting", weighting(&ctx, group, kappa_r, kappa_c)?),
    };
    Ok((name.to_string(), outcome, out))
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<maxmargin::Error>() {
        Some(
            maxmargin::Error::NotPrime(_)
            | maxmargin::Error::DegreeOutOfRange(_)
            | maxmargin::Error::UnsupportedKind
            | maxmargin::Error::InvalidTask(_)
            | maxmargin::Error::InvalidWeighting(_)
            | maxmargin::Error::Config(_),
        ) => EXIT_USAGE,
        Some(maxmargin::Error::HypothesisViolated { .. }) => EXIT_CHECK_FAILED,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok((command, outcome, out)) => {
            let manifest = RunManifest {
                command: command.clone(),
                config: outcome.config,
                version: env!("CARGO_PKG_VERSION"),
                seed: outcome.seed,
                outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
                wall_time_secs: start.elapsed().as_secs_f64(),
                passed: outcome.passed,
            };
            if let Err(e) = write_json(&out.join(format!("manifest_{command}.json")), &manifest) {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_RUNTIME);
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
