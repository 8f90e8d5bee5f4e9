use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dynscene::config::Config;
use dynscene::geometry::{Point3, Pose};
use dynscene::harness::{self, bench, replay, train, verify};
use dynscene::sim::dataset::{self, Dataset};
use dynscene::snapshot;
use dynscene::tokens::Action;

#[derive(Parser)]
#[command(name = "dynscene", version, about = "Incremental patch/instance/zone scene memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for the command's random source.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file or directory, depending on the command).
    #[arg(long)]
    out: PathBuf,
    /// Config override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self, seed_key: Option<&str>) -> Result<Config> {
        let mut overrides = self.overrides.clone();
        if let (Some(seed), Some(key)) = (self.seed, seed_key) {
            overrides.push(format!("{key}={seed}"));
        }
        Config::load(self.config.as_deref(), &overrides).context("loading config")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into the `--out` directory.
    GenScene {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate a dataset frame by frame and write a JSON report.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Continue from this snapshot instead of an empty map.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the final map here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Stop before this frame index.
        #[arg(long)]
        until: Option<usize>,
        /// Include per-stage wall-clock timings (makes the report non-deterministic).
        #[arg(long)]
        timings: bool,
    },
    /// Run every oracle suite; exit status 0 iff all pass.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Measure per-frame integration latency at the configured map size.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Train the merging discriminator on pairs harvested from datasets.
    TrainDiscriminator {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; repeatable.
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Where to write the training report (defaults to `<out>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the prompt text and token sidecar for an agent pose.
    EmitPrompt {
        #[command(flatten)]
        common: Common,
        /// Map snapshot to read.
        #[arg(long, conflicts_with = "dataset")]
        snapshot: Option<PathBuf>,
        /// Dataset to replay into a fresh map.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Agent position and yaw in radians: `x,y,z,yaw`.
        #[arg(long, default_value = "0,-1.4,0,0", allow_hyphen_values = true)]
        agent: String,
        #[arg(long, default_value = "")]
        instruction: String,
        /// Previous action, oldest first; repeatable (at most 4).
        #[arg(long = "history")]
        history: Vec<String>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FaultArg {
    Cull,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_agent(text: &str) -> Result<Pose> {
    let v: Vec<f64> = text.split(',').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().with_context(|| format!("agent {text:?}"))?;
    let [x, y, z, yaw] = v[..] else { bail!("agent must be x,y,z,yaw, got {text:?}") };
    Ok(Pose::from_yaw(Point3::new(x, y, z), yaw))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenScene { common } => {
            let cfg = common.config(Some("sim.seed"))?;
            let m = dataset::write_dataset(&cfg.sim, &common.out)?;
            println!("wrote {} frames ({} objects, D = {}) to {}", m.frames.len(), m.objects.len(), m.feature_dim, common.out.display());
        }
        Command::Replay { common, dataset, resume, snapshot: snap_out, until, timings } => {
            let cfg = common.config(Some("aggregator.seed"))?;
            let data = Dataset::open(&dataset)?;
            let resume = match resume {
                Some(p) => {
                    let dim = data.manifest.feature_dim;
                    Some(snapshot::load(&p, &cfg.map, harness::build_aggregator(&cfg, dim)?, harness::build_discriminator(&cfg, dim)?)?)
                }
                None => None,
            };
            let (map, report) = replay::replay(&data, &cfg, replay::ReplayOptions { timings, resume, until, ..Default::default() })?;
            write_json(&common.out, &report)?;
            if let Some(p) = snap_out {
                snapshot::save(&map, &p)?;
            }
            let s = &report.summary;
            println!(
                "{} frames: {} points, {} instances, {} zones, purity {:.4}, stale {}",
                report.totals.frames, s.live_points, s.live_instances, s.live_zones, s.purity, s.stale_instances
            );
        }
        Command::Verify { common, inject_fault } => {
            let cfg = common.config(Some("sim.seed"))?;
            let fault = inject_fault.map(|FaultArg::Cull| verify::Fault::Cull);
            let report = verify::verify(&cfg, fault);
            write_json(&common.out, &report)?;
            for s in &report.suites {
                println!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
            }
            return Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Bench { common } => {
            let cfg = common.config(Some("bench.sim.seed"))?;
            let r = bench::bench(&cfg)?;
            write_json(&common.out, &r)?;
            println!(
                "{} frames at {}..{} live points: p50 {:.2} ms, p95 {:.2} ms (budget {} ms, {})",
                r.measured_frames,
                r.min_live_points,
                r.live_points_end,
                r.total.p50_ms,
                r.total.p95_ms,
                r.budget_ms,
                if r.within_budget { "met" } else { "missed" }
            );
        }
        Command::TrainDiscriminator { common, dataset, epochs, lr, report } => {
            let mut cfg = common.config(Some("train.seed"))?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            cfg.validate()?;
            let sets = dataset.iter().map(|d| Dataset::open(d)).collect::<dynscene::Result<Vec<_>>>()?;
            let (model, r) = train::train_discriminator(&sets, &cfg)?;
            model.save(&common.out)?;
            let report_path = report.unwrap_or_else(|| {
                let mut s = common.out.clone().into_os_string();
                s.push(".report.json");
                PathBuf::from(s)
            });
            write_json(&report_path, &r)?;
            println!(
                "{} train / {} validation pairs: train accuracy {:.4}, validation accuracy {:.4}",
                r.train_pairs, r.validation_pairs, r.train_accuracy, r.validation_accuracy
            );
        }
        Command::EmitPrompt { common, snapshot: snap, dataset, agent, instruction, history } => {
            let cfg = common.config(Some("aggregator.seed"))?;
            let map = match (snap, dataset) {
                (Some(p), None) => {
                    let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
                    let dim = snapshot::peek_dim(&bytes)?;
                    snapshot::decode(&bytes, &cfg.map, harness::build_aggregator(&cfg, dim)?, harness::build_discriminator(&cfg, dim)?)?
                }
                (None, Some(d)) => replay::replay(&Dataset::open(&d)?, &cfg, replay::ReplayOptions::default())?.0,
                _ => bail!("emit-prompt needs --snapshot or --dataset"),
            };
            let history = history.iter().map(|h| Action::parse(h)).collect::<dynscene::Result<Vec<_>>>()?;
            let prompt = map.prompt(&parse_agent(&agent)?, &cfg.tokens.rays(), &instruction, &history)?;
            std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
            std::fs::write(common.out.join("prompt.txt"), prompt.text())?;
            std::fs::write(common.out.join("tokens.bin"), prompt.sidecar().encode()?)?;
            println!(
                "{} patch, {} instance, {} zone tokens written to {}",
                prompt.patch_tokens.len(),
                prompt.instance_tokens.len(),
                prompt.zone_tokens.len(),
                common.out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
