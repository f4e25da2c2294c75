use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddguard_core::config::ScenarioConfig;
use ddguard_core::datamodel::{rank_ok, stack, DEFAULT_RANK_TOL};
use ddguard_core::pipeline::{self, Artifacts, Timings};
use ddguard_core::sim::SimLog;
use ddguard_core::stc::RoscFamily;
use rayon::prelude::*;

mod files;

const EXIT_UNSAFE: u8 = 2;
const EXIT_SYNTHESIS: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ddguard",
    version,
    about = "Data-driven attack detection and emergency control for a networked plant"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario configuration (JSON). Defaults to the built-in two-tank setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate random-input experiments and write trajectory CSVs.
    Collect(Common),
    /// Build the model set from the collected trajectories.
    Identify(Common),
    /// Synthesize the terminal set and the controllable-set family.
    Synth(Common),
    /// Run a scenario (or a parallel seed sweep) and write logs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        /// Run this many consecutive seeds in parallel.
        #[arg(long)]
        sweep: Option<usize>,
    },
    /// Write the vertices of every level for plotting.
    ExportSets(Common),
}

/// Failure with an exit code chosen by the command.
#[derive(Debug)]
struct Coded(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Coded {
    fn from(e: E) -> Self {
        let e = e.into();
        let code = classify(&e);
        Coded(code, e)
    }
}

fn classify(e: &anyhow::Error) -> u8 {
    use ddguard_core::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Synthesis(_) | E::EmptySet(_) | E::Unbounded(_) | E::Solver(_)) => EXIT_SYNTHESIS,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Coded(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, Coded> {
    match cmd {
        Command::Collect(c) => collect(&c),
        Command::Identify(c) => identify(&c),
        Command::Synth(c) => synth(&c),
        Command::Run {
            common,
            scenario,
            sweep,
        } => run(&common, &scenario, sweep),
        Command::ExportSets(c) => export_sets(&c),
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            ScenarioConfig::from_json(&files::read_text(p)?).with_context(|| format!("loading {}", p.display()))?
        }
        None => ScenarioConfig::two_tank(),
    };
    if let Some(s) = c.seed {
        cfg.data.seed = s;
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn collect(c: &Common) -> Result<u8, Coded> {
    let cfg = load_config(c)?;
    ensure_dir(&c.out)?;
    let data = pipeline::collect(&cfg)?;
    for (i, t) in data.trajectories.iter().enumerate() {
        files::write_trajectory(&files::trajectory_path(&c.out, i), t)?;
    }
    let d = stack(&data)?;
    println!(
        "wrote {} trajectories ({} samples) to {}",
        data.trajectories.len(),
        d.samples(),
        c.out.display()
    );
    if rank_ok(&d, DEFAULT_RANK_TOL) {
        println!("rank check: ok ([X-; U-] has full row rank {})", cfg.n() + cfg.m());
        Ok(0)
    } else {
        Err(Coded(
            EXIT_INPUT,
            anyhow!(
                "rank check failed: [X-; U-] is rank deficient; raise the sample count or the excitation amplitude"
            ),
        ))
    }
}

fn identify(c: &Common) -> Result<u8, Coded> {
    let cfg = load_config(c)?;
    let data = files::read_trajectories(&c.out, cfg.data.trajectories, cfg.n(), cfg.m())?;
    let ms = pipeline::identify(&cfg, &data)?;
    let report = pipeline::identify_report(&cfg, &data, &ms)?;
    files::write_text(&c.out.join(files::MODEL_FILE), &pipeline::model_set_to_json(&ms)?)?;
    files::write_text(&c.out.join(files::REPORT_FILE), &serde_json::to_string_pretty(&report)?)?;
    println!(
        "model set: {} generators, max generator norm {:.3e}, contains configured plant: {}",
        report.generators, report.max_generator_norm.0, report.contains_true_model
    );
    Ok(0)
}

fn load_model(cfg: &ScenarioConfig, dir: &Path) -> Result<ddguard_core::datamodel::ModelSet> {
    let path = dir.join(files::MODEL_FILE);
    let ms = pipeline::model_set_from_json(&files::read_text(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if ms.n != cfg.n() || ms.m != cfg.m() {
        bail!("{} does not match the configured dimensions", path.display());
    }
    Ok(pipeline::attach_vertices(cfg, ms)?)
}

fn load_family(cfg: &ScenarioConfig, dir: &Path) -> Result<RoscFamily> {
    let path = dir.join(files::FAMILY_FILE);
    let fam =
        RoscFamily::from_json(&files::read_text(&path)?).with_context(|| format!("parsing {}", path.display()))?;
    if fam.n != cfg.n() || fam.m != cfg.m() {
        bail!("{} does not match the configured dimensions", path.display());
    }
    Ok(fam)
}

fn synth(c: &Common) -> Result<u8, Coded> {
    let cfg = load_config(c)?;
    let ms = load_model(&cfg, &c.out)?;
    let fam = pipeline::synthesize(&cfg, &ms)?;
    files::write_text(&c.out.join(files::FAMILY_FILE), &fam.to_json()?)?;
    let areas = files::write_sets(&c.out.join(files::SETS_FILE), &fam)?;
    println!("family: {} levels above the terminal set", fam.num_levels());
    for (j, a) in areas.iter().enumerate() {
        println!("level {j:>3}: area {a:.6e}");
    }
    Ok(0)
}

fn export_sets(c: &Common) -> Result<u8, Coded> {
    let cfg = load_config(c)?;
    let fam = load_family(&cfg, &c.out)?;
    let path = c.out.join(files::SETS_FILE);
    files::write_sets(&path, &fam)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn summarize(log: &SimLog) -> String {
    let first = |f: fn(&ddguard_core::sim::StepRecord) -> bool| {
        log.steps
            .iter()
            .find(|s| f(s))
            .map_or("-".to_string(), |s| s.k.to_string())
    };
    format!(
        "{} seed {}: first anomaly {}, first emergency {}, ignore steps {}, outcome {}",
        log.scenario,
        log.seed,
        first(|s| s.anomaly),
        first(|s| s.emergency),
        log.steps.iter().filter(|s| s.ignore).count(),
        if log.is_safe() { "safe" } else { "VIOLATION" }
    )
}

fn run(c: &Common, scenario: &str, sweep: Option<usize>) -> Result<u8, Coded> {
    let cfg = load_config(c)?;
    cfg.scenario(scenario)?;
    let ms = load_model(&cfg, &c.out)?;
    let fam = load_family(&cfg, &c.out)?;
    let art = Artifacts::assemble(&cfg, ms, fam, Timings::default())?;
    files::write_sets(&c.out.join(files::SETS_FILE), &art.family)?;

    let seeds: Vec<u64> = match sweep {
        None => vec![cfg.seed],
        Some(0) => return Err(Coded(EXIT_INPUT, anyhow!("--sweep needs a positive count"))),
        Some(k) => (0..k as u64).map(|i| cfg.seed + i).collect(),
    };
    let logs: Vec<SimLog> = seeds
        .par_iter()
        .map(|&s| art.run(&cfg, scenario, s))
        .collect::<std::result::Result<_, _>>()?;

    let mut safe = true;
    for log in &logs {
        let stem = if sweep.is_some() {
            format!("{scenario}_seed{}", log.seed)
        } else {
            scenario.to_string()
        };
        files::write_log(&c.out, &stem, log)?;
        println!("{}", summarize(log));
        safe &= log.is_safe();
    }
    Ok(if safe { 0 } else { EXIT_UNSAFE })
}
