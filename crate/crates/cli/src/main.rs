//! `mpm-parvi` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mpm_parvi::sampler::Progress;
use mpm_parvi::snapshot::{format_f64, snapshot_file_name, write_telemetry};
use mpm_parvi::{sample_stats, Error, Sampler, SampleStats, SimConfig, Snapshot};

const THREADS_VAR: &str = "MPM_PARVI_THREADS";

#[derive(Parser)]
#[command(name = "mpm-parvi", version, about = "MPM-based particle sampler for unnormalised densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler and write snapshots, telemetry.csv and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise a snapshot against the target of a config file.
    Diagnose {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long = "target-config")]
        target_config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Parse and validate a config, printing the fully resolved version.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| match cli.command {
        Command::Run { config, out } => run(&config, &out, threads),
        Command::Diagnose {
            snapshot,
            target_config,
            format,
        } => diagnose(&snapshot, &target_config, format),
        Command::Validate { config } => validate(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, Error> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(None);
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n >= 1 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
            Ok(Some(n))
        }
        _ => Err(Error::Format {
            path: THREADS_VAR.into(),
            message: format!("expected an integer >= 1, got '{raw}'"),
        }),
    }
}

fn load_config(path: &Path) -> Result<SimConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(SimConfig::parse(&text)?)
}

fn validate(path: &Path) -> Result<(), Error> {
    let config = load_config(path)?;
    print!("{}", config.to_text());
    Ok(())
}

fn run(config_path: &Path, out: &Path, threads: Option<usize>) -> Result<(), Error> {
    let mut config = load_config(config_path)?;
    if threads == Some(1) {
        config.simulation.deterministic = true;
    }
    let snapshots = out.join("snapshots");
    fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
    fs::write(out.join("config.toml"), config.to_text()).map_err(|e| Error::io(out, e))?;

    let mut sampler = Sampler::new(&config)?;
    let every = config.output.snapshot_every;
    let observe = |s: &Sampler, p: Progress| {
        if p.iteration == 0 || p.finished || (every > 0 && p.iteration.is_multiple_of(every)) {
            let path = snapshots.join(snapshot_file_name(p.iteration));
            mpm_parvi::write_snapshot(&Snapshot::from_sampler(s), &path)?;
        }
        Ok(())
    };
    let outcome = sampler.run(observe);
    let redact = config.simulation.deterministic;
    write_telemetry(sampler.telemetry(), redact, out.join("telemetry.csv"))?;
    let summary = outcome?;

    let positions = sampler.positions();
    let moments = mpm_parvi::moments(&positions).ok();
    let last = sampler.telemetry().last().copied();
    let report = json!({
        "summary": summary,
        "particle_count": positions.len(),
        "dimension": config.simulation.dimension,
        "scheme": format!("{:?}", config.simulation.scheme),
        "target": config.target.name(),
        "seed": config.simulation.seed,
        "deterministic": config.simulation.deterministic,
        "final_mean_log_density": last.map(|r| r.mean_log_density),
        "final_kinetic_energy": last.map(|r| r.kinetic_energy),
        "mean": moments.as_ref().map(|m| &m.0),
        "covariance": moments.as_ref().map(|m| &m.1),
    });
    let report_path = out.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report is valid JSON");
    fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;
    log::info!("wrote results to {}", out.display());
    Ok(())
}

fn diagnose(snapshot_path: &Path, target_path: &Path, format: Format) -> Result<(), Error> {
    let config = load_config(target_path)?;
    let snapshot = mpm_parvi::read_snapshot(snapshot_path)?;
    let dim = config.simulation.dimension;
    if snapshot.dimension != dim {
        return Err(Error::Format {
            path: snapshot_path.display().to_string(),
            message: format!("snapshot has dimension {}, target config has {dim}", snapshot.dimension),
        });
    }
    let positions = snapshot.positions();
    let target = config.target.build::<f64>(dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.simulation.seed);
    let reference: Option<Vec<Vec<f64>>> = match target.sample(&mut rng, positions.len()) {
        Ok(draws) => Some(draws.iter().map(|v| v.to_vec()).collect()),
        Err(e) => {
            log::warn!("no reference sample for MMD: {e}");
            None
        }
    };
    let stats = sample_stats(&positions, reference.as_deref())?;
    let mean_log_density = positions
        .iter()
        .map(|p| target.log_density(&mpm_parvi::Vector::from_slice(p)))
        .sum::<f64>()
        / positions.len() as f64;
    let text = match format {
        Format::Jsonl => stats_jsonl(&stats, snapshot.iteration, mean_log_density),
        Format::Csv => stats_csv(&stats, snapshot.iteration, mean_log_density),
    };
    print!("{text}");
    Ok(())
}

fn stats_jsonl(stats: &SampleStats, iteration: usize, mean_log_density: f64) -> String {
    let mut lines = vec![json!({
        "record": "summary",
        "iteration": iteration,
        "count": stats.count,
        "mean": stats.mean,
        "covariance": stats.covariance,
        "mean_log_density": mean_log_density,
        "mmd": stats.mmd,
    })];
    for (axis, h) in stats.histograms.iter().enumerate() {
        lines.push(json!({"record": "histogram", "axis": axis, "edges": h.edges, "counts": h.counts}));
    }
    for (axis, k) in stats.kdes.iter().enumerate() {
        lines.push(json!({
            "record": "kde",
            "axis": axis,
            "bandwidth": k.bandwidth,
            "grid": k.grid,
            "density": k.density,
        }));
    }
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn stats_csv(stats: &SampleStats, iteration: usize, mean_log_density: f64) -> String {
    let mut out = String::from("record,axis,index,x,value\n");
    let mut row = |record: &str, axis: &str, index: &str, x: &str, value: String| {
        let _ = writeln!(out, "{record},{axis},{index},{x},{value}");
    };
    row("iteration", "", "", "", iteration.to_string());
    row("count", "", "", "", stats.count.to_string());
    row("mean_log_density", "", "", "", format_f64(mean_log_density));
    for (a, m) in stats.mean.iter().enumerate() {
        row("mean", &a.to_string(), "", "", format_f64(*m));
    }
    for (a, r) in stats.covariance.iter().enumerate() {
        for (b, c) in r.iter().enumerate() {
            row("covariance", &a.to_string(), &b.to_string(), "", format_f64(*c));
        }
    }
    if let Some(m) = stats.mmd {
        row("mmd", "", "", "", format_f64(m.mmd));
        row("mmd_lengthscale", "", "", "", format_f64(m.lengthscale));
    }
    for (a, h) in stats.histograms.iter().enumerate() {
        for (i, c) in h.counts.iter().enumerate() {
            row("histogram", &a.to_string(), &i.to_string(), &format_f64(h.edges[i]), c.to_string());
        }
    }
    for (a, k) in stats.kdes.iter().enumerate() {
        for (i, (x, y)) in k.grid.iter().zip(&k.density).enumerate() {
            row("kde", &a.to_string(), &i.to_string(), &format_f64(*x), format_f64(*y));
        }
    }
    out
}
