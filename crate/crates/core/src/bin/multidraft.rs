//! Command-line front end: experiments, sweeps, oracle checks, model files
//! and single-verification traces.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multidraft::harness::{
    format_csv, format_json, oracle_check, run_cells, Algo, ExperimentSpec, HarnessError, ReportFormat,
};
use multidraft::model::{random_model, GenSpec, ModelError, ModelPair};
use multidraft::prob::RandomSource;
use multidraft::verify::{
    verify_gbv, verify_kseq, verify_sd, verify_spectr_gbv_traced, DraftSet, StepDecision, TargetScores,
};

#[derive(Parser)]
#[command(name = "multidraft", version, about = "Speculative decoding verification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and write one row per (config, seed, prompt).
    Run(GridArgs),
    /// Like `run`, with a default grid of K ∈ {1,3,5,7} and L ∈ {2,4,8}.
    Sweep(GridArgs),
    /// Exact enumeration checks on a small instance (JSON report).
    OracleCheck(OracleArgs),
    /// Write a random model file.
    GenModel(GenArgs),
    /// Verify one draft set and print every step.
    VerifyDemo(DemoArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Flat `key = value` file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list of ar, sd, spectr, gbv, spectr-gbv.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long = "L")]
    l: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    draft_model: Option<PathBuf>,
    #[arg(long)]
    target_model: Option<PathBuf>,
    /// V,ORDER,SEED,CONC[,LAMBDA]
    #[arg(long)]
    gen: Option<String>,
    #[arg(long)]
    prompts: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Record wall-clock milliseconds (otherwise 0, keeping reports reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Generated instance; the two-token order-0 instance when omitted.
    #[arg(long)]
    gen: Option<String>,
    #[arg(long)]
    draft_model: Option<PathBuf>,
    #[arg(long)]
    target_model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// V,ORDER,SEED,CONC[,LAMBDA]
    #[arg(long)]
    gen: String,
    /// Draft model path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the matching target model.
    #[arg(long)]
    target_out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "spectr-gbv")]
    algo: String,
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    gen: Option<String>,
    #[arg(long)]
    draft_model: Option<PathBuf>,
    #[arg(long)]
    target_model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Oracle(String),
    Io(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } | HarnessError::Model(ModelError::Io { .. }) => Failure::Io(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        HarnessError::from(e).into()
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_pair(
    gen: Option<&str>,
    draft: Option<&PathBuf>,
    target: Option<&PathBuf>,
    temperature: f64,
) -> Result<(ModelPair, String), Failure> {
    match (gen, draft, target) {
        (Some(g), _, _) => {
            let spec: GenSpec = g.parse()?;
            Ok((ModelPair::generate(&spec, temperature)?, format!("gen {spec}")))
        }
        (None, Some(d), Some(t)) => Ok((
            ModelPair::load(d, t, temperature)?,
            format!("files {} {}", d.display(), t.display()),
        )),
        (None, None, None) => Ok((
            ModelPair::canonical().with_temperature(temperature),
            "order-0 p=(0.5,0.5) q=(0.8,0.2)".into(),
        )),
        _ => Err(Failure::Usage("need both --draft-model and --target-model".into())),
    }
}

fn grid(args: GridArgs, sweep: bool) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::default();
    if sweep {
        spec.ks = vec![1, 3, 5, 7];
        spec.ls = vec![2, 4, 8];
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let map = multidraft::harness::parse_config_file(&text).map_err(|e| Failure::Usage(e.to_string()))?;
        spec.apply_all(&map).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let flags: [(&str, Option<String>); 14] = [
        ("algo", args.algo),
        ("K", args.k),
        ("L", args.l),
        ("temperature", args.temperature),
        ("draft-model", args.draft_model.map(|p| p.display().to_string())),
        ("target-model", args.target_model.map(|p| p.display().to_string())),
        ("gen", args.gen),
        ("prompts", args.prompts.map(|v| v.to_string())),
        ("prompt-len", args.prompt_len.map(|v| v.to_string())),
        ("max-tokens", args.max_tokens.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("trials", args.trials.map(|v| v.to_string())),
        ("out", args.out.map(|p| p.display().to_string())),
        ("format", args.format),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            spec.apply(key, &v).map_err(|e| Failure::Usage(e.to_string()))?;
        }
    }
    if args.timing {
        spec.timing = true;
    }
    let configs = spec.configs().map_err(|e| Failure::Usage(e.to_string()))?;
    let rows = run_cells(&configs)?;
    let text = match spec.format {
        ReportFormat::Csv => format_csv(&rows),
        ReportFormat::Json => format_json(&rows),
    };
    write_out(spec.out.as_deref(), &text)
}

fn oracle(args: OracleArgs) -> Result<(), Failure> {
    let (pair, name) = load_pair(
        args.gen.as_deref(),
        args.draft_model.as_ref(),
        args.target_model.as_ref(),
        args.temperature,
    )?;
    let report = oracle_check(&pair, &name, &[], args.l, args.k)?;
    let mut text = serde_json::to_string_pretty(&report.to_json()).expect("json");
    text.push('\n');
    write_out(args.out.as_deref(), &text)?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(Failure::Oracle(format!("failed checks: {}", failed.join(", "))))
    }
}

fn gen_model(args: GenArgs) -> Result<(), Failure> {
    let spec: GenSpec = args.gen.parse()?;
    match &args.target_out {
        Some(target_path) => {
            let pair = ModelPair::generate(&spec, 1.0)?;
            pair.draft.save(&args.out)?;
            pair.target.save(target_path)?;
        }
        None => random_model(spec.vocab_size, spec.order, spec.seed, spec.concentration)?.save(&args.out)?,
    }
    Ok(())
}

fn demo(args: DemoArgs) -> Result<(), Failure> {
    let algo: Algo = args.algo.parse().map_err(|e: multidraft::harness::ConfigError| Failure::Usage(e.to_string()))?;
    if args.k == 0 || args.l == 0 {
        return Err(Failure::Usage("need K >= 1 and L >= 1".into()));
    }
    let (pair, name) = load_pair(
        args.gen.as_deref(),
        args.draft_model.as_ref(),
        args.target_model.as_ref(),
        args.temperature,
    )?;
    let k = if algo.single_draft() { 1 } else { args.k };
    let mut rng = RandomSource::new(args.seed);
    let drafts = DraftSet::draw(&pair.draft_view(), &[], k, args.l, &mut rng);
    let scores = TargetScores::score(&pair.target_view(), &[], &drafts);
    let show = |t: &[multidraft::prob::TokenId]| t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    println!("instance: {name}");
    println!("algo {algo}, K = {k}, L = {}", args.l);
    for (i, row) in drafts.rows().iter().enumerate() {
        println!("draft {i}: [{}]", show(row));
    }
    let out = match algo {
        Algo::Ar => return Err(Failure::Usage("ar has no verification step".into())),
        Algo::Sd => verify_sd(&drafts, &scores, &mut rng),
        Algo::Spectr => verify_kseq(&drafts, &scores, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?,
        Algo::Gbv => verify_gbv(&drafts, &scores, &mut rng).0,
        Algo::SpectrGbv => {
            let (out, _, trace) = verify_spectr_gbv_traced(&drafts, &scores, &mut rng);
            for step in trace {
                let what = match step.decision {
                    StepDecision::Accepted => "accept",
                    StepDecision::Rejected => "reject",
                    StepDecision::SkippedInH => "skip (already rejected)",
                };
                match (step.h, step.eta) {
                    (Some(h), Some(eta)) => println!(
                        "  row {} [{}]{}: h = {h:.6}, eta = {eta:.6} -> {what}",
                        step.row,
                        show(&step.block),
                        if step.full_block { " (full)" } else { "" }
                    ),
                    _ => println!("  row {} [{}]: {what}", step.row, show(&step.block)),
                }
            }
            out
        }
    };
    println!("tau = {}, f = {}, t = [{}], y = {}", out.tau, out.f, show(&out.t), out.y);
    let c = out.counters;
    println!(
        "target_calls = {}, draft_calls = {}, vocab_scans = {}, eta_draws = {}, warnings = {}",
        c.target_calls, c.draft_calls, c.vocab_scans, c.eta_draws, c.warnings
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => grid(a, false),
        Command::Sweep(a) => grid(a, true),
        Command::OracleCheck(a) => oracle(a),
        Command::GenModel(a) => gen_model(a),
        Command::VerifyDemo(a) => demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Oracle(m)) => {
            eprintln!("oracle check failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("io error: {m}");
            ExitCode::from(3)
        }
    }
}
