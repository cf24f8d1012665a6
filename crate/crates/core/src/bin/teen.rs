use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use teen::analysis::{estimate_policy_kl, knn_entropy, SampleCloud, DEFAULT_K};
use teen::bias_probe::bias_probe;
use teen::checkpoint;
use teen::config::TrainerConfig;
use teen::envs::EnvKind;
use teen::metrics::{append_record, read_records};
use teen::trainer::{Trainer, VISITATION_WINDOW};
use teen::verify::verify_math;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_MATH: u8 = 3;

#[derive(Parser)]
#[command(name = "teen", version, about = "Trajectory-aware ensemble exploration on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, writing metrics, visited-state logs, and checkpoints to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (default: runs/<env>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint; the config must hash-match it.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print one metrics record.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes per sub-policy (default: the run's eval_episodes).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropy and divergence report for a logged visited-state CSV.
    Analyze {
        /// CSV with columns z, s0.., a0.. as written by `train`.
        #[arg(long)]
        states: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the information identities, the discriminator bound, and the
    /// order-statistic bounds; exit 3 if any claim fails.
    VerifyMath {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo samples per order-statistic check.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final estimation bias for (N, M), (N, 1), and (1, 1) targets over several seeds.
    BiasProbe {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of seeds, counting up from --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Overrides applied on top of the config file (or the defaults).
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// four-goal-pm, one-step-bandit, or chain-walk.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total env steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ensemble_n: Option<usize>,
    #[arg(long)]
    target_m: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, base: TrainerConfig) -> Result<TrainerConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainerConfig::from_toml_str(&text)?
            }
            None => base,
        };
        if let Some(env) = &self.env {
            cfg.env = EnvKind::from_id(env)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.ensemble_n {
            cfg.ensemble_n = v;
        }
        if let Some(v) = self.target_m {
            cfg.target_m = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a TrainerConfig,
    config_hash: String,
    seed: u64,
    code_version: &'static str,
    started_unix_secs: u64,
    out_dir: String,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn write_states_csv(trainer: &Trainer, path: &Path) -> Result<()> {
    let window = (trainer.config.eval_period as usize).min(VISITATION_WINDOW);
    let mut w = csv::Writer::from_path(path)?;
    let (sd, ad) = (trainer.agent.state_dim(), trainer.agent.action_dim());
    let header = std::iter::once("z".to_string())
        .chain((0..sd).map(|i| format!("s{i}")))
        .chain((0..ad).map(|i| format!("a{i}")));
    w.write_record(header)?;
    for t in trainer.replay.recent(window) {
        let row = std::iter::once(t.z.to_string()).chain(t.state.iter().chain(&t.action).map(|v| v.to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Drops records past `step` so a resumed stream continues where the checkpoint was taken.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec = read_records(line).with_context(|| format!("parsing {}", path.display()))?;
        if rec.iter().all(|r| r.step <= step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn train(cfg_args: &ConfigArgs, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    let base = match &resume {
        Some(path) => checkpoint::read_header(&fs::read(path)?)?.config,
        None => TrainerConfig::default(),
    };
    let cfg = cfg_args.resolve(base)?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.env, cfg.seed)));
    let manifest_path = out.join("manifest.json");
    let metrics_path = out.join("metrics.jsonl");

    let mut trainer = match &resume {
        Some(path) => {
            let t = checkpoint::resume(path, &cfg)?;
            truncate_metrics(&metrics_path, t.step)?;
            t
        }
        None => {
            if manifest_path.exists() {
                bail!(teen::Error::Usage(format!(
                    "{} already holds a run; choose another --out",
                    out.display()
                )));
            }
            Trainer::new(cfg.clone())?
        }
    };
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::create_dir_all(out.join("states"))?;
    if !manifest_path.exists() {
        let manifest = RunManifest {
            config: &cfg,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            code_version: env!("CARGO_PKG_VERSION"),
            started_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            out_dir: out.display().to_string(),
        };
        write_json(&manifest, Some(&manifest_path))?;
        fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    }

    let mut metrics = OpenOptions::new().create(true).append(true).open(&metrics_path)?;
    while trainer.step < cfg.total_steps {
        let outcome = trainer.advance()?;
        if let Some(rec) = outcome.record {
            append_record(&mut metrics, &rec)?;
            write_states_csv(&trainer, &out.join(format!("states/step-{:010}.csv", rec.step)))?;
            eprintln!(
                "step {:>9}  return {:>9.3}  bias {:>8.4}  H {:>8}  disc acc {:.3}",
                rec.step,
                rec.ensemble_mean_return,
                rec.estimation_bias,
                rec.knn_state_entropy.map_or("-".into(), |h| format!("{h:.3}")),
                rec.discriminator_accuracy
            );
        }
        if cfg.checkpoint_period > 0 && trainer.step.is_multiple_of(cfg.checkpoint_period) {
            checkpoint::save(&trainer, &out.join(format!("checkpoints/step-{:010}.ckpt", trainer.step)))?;
        }
    }
    checkpoint::save(&trainer, &out.join("final.ckpt"))?;
    Ok(())
}

fn analyze(states: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    let mut reader = csv::Reader::from_path(states).with_context(|| format!("reading {}", states.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("z") {
        bail!(teen::Error::Validation("first column must be z".into()));
    }
    let sd = header.iter().filter(|h| h.starts_with('s')).count();
    let ad = header.iter().filter(|h| h.starts_with('a')).count();
    if sd == 0 || 1 + sd + ad != header.len() {
        bail!(teen::Error::Validation(format!("unexpected header {header:?}")));
    }
    let (mut labels, mut s_rows, mut sa_rows) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        labels.push(row[0].parse::<usize>().with_context(|| format!("label on line {line}"))?);
        let vals: Vec<f64> = row
            .iter()
            .skip(1)
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("value on line {line}"))?;
        s_rows.push(vals[..sd].to_vec());
        sa_rows.push(vals);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let states_cloud = SampleCloud::labeled(&s_rows, &labels)?;
    let distinct = states_cloud.dedup();
    let per_policy: Vec<_> = distinct
        .split_by_label(classes)
        .iter()
        .map(|c| knn_entropy(c, k).ok())
        .collect();
    let sa_cloud = SampleCloud::labeled(&sa_rows, &labels)?;
    let kl = match estimate_policy_kl(&sa_cloud.split_by_label(classes), k) {
        Ok(rep) => serde_json::to_value(rep)?,
        Err(e) => json!({ "not_ready": e.to_string() }),
    };
    let report = json!({
        "source": states.display().to_string(),
        "points": labels.len(),
        "distinct_states": distinct.len(),
        "k": k,
        "state_entropy": knn_entropy(&distinct, k).ok(),
        "per_policy_state_entropy": per_policy,
        "state_action_kl": kl,
    });
    write_json(&report, out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { cfg, out, resume } => train(&cfg, out, resume)?,
        Command::Eval {
            checkpoint: path,
            episodes,
            out,
        } => {
            let t = checkpoint::load(&path)?;
            let rec = t.evaluate(episodes.unwrap_or(t.config.eval_episodes))?;
            write_json(&rec, out.as_deref())?;
        }
        Command::Analyze { states, k, out } => analyze(&states, k, out.as_deref())?,
        Command::VerifyMath { seed, samples, out } => {
            let report = verify_math(seed, samples)?;
            write_json(&report, out.as_deref())?;
            for c in &report.claims {
                eprintln!("{:<26} {}", c.id, if c.passed { "pass" } else { "FAIL" });
            }
            if !report.passed() {
                return Ok(ExitCode::from(EXIT_MATH));
            }
        }
        Command::BiasProbe { cfg, seeds, out } => {
            let base = cfg.resolve(TrainerConfig {
                env: EnvKind::OneStepBandit,
                total_steps: 50_000,
                ..TrainerConfig::default()
            })?;
            let n = base.ensemble_n;
            let mut variants = vec![(n, base.target_m), (n, 1), (1, 1)];
            variants.dedup();
            let seed_list: Vec<u64> = (base.seed..base.seed + seeds).collect();
            let results = bias_probe(&base, &variants, &seed_list)?;
            write_json(&json!({ "config": base, "results": results }), out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<teen::Error>() {
        Some(teen::Error::NonFinite(_)) => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
