use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use streamtrack::data::{read_tracklets, write_tracklets, Tracklet};
use streamtrack::geom::Box3D;
use streamtrack::harness::gradsuite::run_suite;
use streamtrack::harness::{
    aggregate, load_splits, load_trained, ope_evaluate, sequence_metrics, train, EvalReport, ExperimentConfig, Profile,
};
use streamtrack::memory::{read_trajectory, write_trajectory, Tracker, TrajectoryRecord};
use streamtrack::Result;

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Parser)]
#[command(name = "streamtrack", version, about = "Streaming 3D single-object tracking on point clouds")]
struct Cli {
    /// TOML file merged over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of historical frames.
    #[arg(long, global = true)]
    frames: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: ProfileArg,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write train/test tracklet files.
    GenSynth,
    /// Train and write checkpoint, config and per-epoch log.
    Train {
        /// Train tracklet file (otherwise generated from the config).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the tracker over test tracklets and write one trajectory file each.
    Track {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Success/Precision report, from a model or from trajectory files.
    Eval {
        #[arg(long, conflicts_with = "trajectories")]
        model: Option<PathBuf>,
        /// Directory of `<track id>.jsonl` trajectories.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference gradient suite; nonzero exit on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Only checks whose name contains this.
        #[arg(long)]
        only: Option<String>,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let profile = match cli.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Paper => Profile::Paper,
    };
    let mut cfg = ExperimentConfig::load(profile, cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.frames {
        cfg.model.history = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn test_set(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<Vec<Tracklet>> {
    match data {
        Some(p) => read_tracklets(p),
        None => Ok(load_splits(cfg)?.1),
    }
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    println!(
        "success {:.2}  precision {:.2}  ({} sequences, {} frames)",
        report.success,
        report.precision,
        report.sequences.len(),
        report.frames
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::GenSynth => {
            let cfg = config(cli)?;
            let (tr, te) = load_splits(&cfg)?;
            std::fs::create_dir_all(&cli.out)?;
            write_tracklets(&tr, cli.out.join("train.jsonl"))?;
            write_tracklets(&te, cli.out.join("test.jsonl"))?;
            std::fs::write(cli.out.join("config.toml"), cfg.to_toml()?)?;
            info!("wrote {} train and {} test tracklets to {}", tr.len(), te.len(), cli.out.display());
        }
        Cmd::Train { data } => {
            let cfg = config(cli)?;
            let train_set = match data {
                Some(p) => read_tracklets(p)?,
                None => load_splits(&cfg)?.0,
            };
            let t = train(&cfg, &train_set)?;
            t.save(&cli.out, &cfg)?;
            if let Some(last) = t.log.last() {
                println!("final epoch loss {:.4}", last.total);
            }
        }
        Cmd::Track { model, data } => {
            let (cfg, t) = load_trained(model)?;
            let tracker = Tracker::new(&t.model, &t.live, cfg.tracker.clone());
            let dir = cli.out.join("trajectories");
            std::fs::create_dir_all(&dir)?;
            for tr in test_set(&cfg, data)? {
                let steps = tracker.run(&tr.stream(), &tr.frames[0].gt)?;
                let recs: Vec<TrajectoryRecord> = steps.iter().map(TrajectoryRecord::from).collect();
                write_trajectory(&dir.join(format!("{}.jsonl", tr.id)), &recs)?;
            }
            info!("trajectories in {}", dir.display());
        }
        Cmd::Eval { model, trajectories, data } => {
            let report = match (model, trajectories) {
                (Some(m), _) => {
                    let (cfg, t) = load_trained(m)?;
                    let tracker = Tracker::new(&t.model, &t.live, cfg.tracker.clone());
                    ope_evaluate(&tracker, &test_set(&cfg, data)?)?
                }
                (None, Some(dir)) => {
                    let cfg = config(cli)?;
                    let mut seqs = Vec::new();
                    for tr in test_set(&cfg, data)? {
                        let recs = read_trajectory(&dir.join(format!("{}.jsonl", tr.id)))?;
                        let pred = recs.iter().map(TrajectoryRecord::to_box).collect::<Result<Vec<Box3D>>>()?;
                        seqs.push(sequence_metrics(tr.id, &pred, &tr.gt_boxes())?);
                    }
                    aggregate(seqs)
                }
                (None, None) => {
                    return Err(streamtrack::Error::Config("eval needs --model or --trajectories".into()));
                }
            };
            write_report(&cli.out, &report)?;
        }
        Cmd::Gradcheck { instances, only } => {
            let reports = run_suite(*instances, cli.seed.unwrap_or(0), only.as_deref())?;
            let mut ok = true;
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{status:4} {:16} instances {:4} probes {:6} max rel err {:.2e}",
                    r.name, r.instances, r.probes, r.max_rel_err
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
