//! `latplan` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latplan::grpo::write_diagnostics;
use latplan::harness::ablate::{run_suite, write_ablation, Suite};
use latplan::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use latplan::harness::corpus::{read_corpus, write_corpus};
use latplan::harness::eval::{evaluate, write_eval_report};
use latplan::harness::experiment::{DataConfig, ExperimentConfig};
use latplan::imitation::{pretrain, write_training_log};
use latplan::model::PolicySnapshot;
use latplan::world::{generate_corpus, Difficulty};
use latplan::{Error, Result};

#[derive(Parser)]
#[command(name = "latplan", version, about = "Latent world-model trajectory planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario corpus (JSON lines).
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a planner on a corpus.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fine-tune a pretrained checkpoint with group-relative rollouts.
    Rft {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-step diagnostics (CSV).
        #[arg(long)]
        diag: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also score PDMS subscores.
        #[arg(long)]
        pdms: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an ablation suite and write `<suite>.csv` into `--out`.
    Ablate {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn print_config(cfg: &ExperimentConfig) {
    println!("resolved config:\n{}", cfg.to_json());
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("no such file: {}", p.display())))
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { count, difficulty, seed, out } => {
            println!(
                "resolved config:\n{}",
                serde_json::json!({"count": count, "difficulty": difficulty, "seed": seed, "out": out})
            );
            let corpus = generate_corpus(count, difficulty, seed)?;
            write_corpus(&out, &corpus)?;
            println!("wrote {} scenarios to {}", corpus.len(), out.display());
        }
        Command::Pretrain { corpus, config, out, seed, log } => {
            require_file(&corpus)?;
            let cfg = load_config(config.as_deref(), seed)?;
            print_config(&cfg);
            let train = read_corpus(&corpus)?;
            let difficulty = train.first().map_or(cfg.data.difficulty, |s| s.difficulty);
            let val = generate_corpus(cfg.data.val, difficulty, DataConfig::val_base(cfg.seed))?;
            let init = PolicySnapshot::new(cfg.model.clone(), cfg.seed)?;
            let outcome = pretrain(&init, &train, &val, &cfg.pretrain)?;
            for r in &outcome.log {
                println!(
                    "epoch {:>3}  total {:.5}  val_ade {:.4}  val_cr {:.3}",
                    r.epoch, r.total, r.val_ade, r.val_cr
                );
            }
            if let Some(p) = log {
                write_training_log(&p, &outcome.log)?;
            }
            let ck = Checkpoint {
                policy: outcome.policy,
                optimizer: Some(outcome.optimizer.clone()),
                rng: Some(outcome.rng),
                step: outcome.optimizer.step,
            };
            save_checkpoint(&out, &ck)?;
            println!("best epoch {}; wrote {}", outcome.best_epoch, out.display());
        }
        Command::Rft { ckpt, corpus, config, out, seed, diag } => {
            require_file(&ckpt)?;
            require_file(&corpus)?;
            let mut cfg = load_config(config.as_deref(), seed)?;
            let reference = load_checkpoint(&ckpt)?.policy;
            cfg.model = reference.cfg.clone();
            print_config(&cfg);
            let train = read_corpus(&corpus)?;
            let outcome = latplan::grpo::rft(&reference, &train, &cfg.rft)?;
            if let Some(last) = outcome.diagnostics.last() {
                println!(
                    "steps {}  mean_reward {:.4}  kl {:.4}  entropy {:.4}  ref_loss {:.5}",
                    outcome.diagnostics.len(),
                    last.mean_reward,
                    last.kl,
                    last.entropy,
                    last.ref_loss
                );
            }
            if let Some(p) = diag {
                write_diagnostics(&p, &outcome.diagnostics)?;
            }
            let ck = Checkpoint {
                policy: outcome.policy,
                optimizer: Some(outcome.optimizer.clone()),
                rng: Some(outcome.rng),
                step: outcome.optimizer.step,
            };
            save_checkpoint(&out, &ck)?;
            println!("wrote {}", out.display());
        }
        Command::Eval { ckpt, corpus, report, pdms, config, seed } => {
            require_file(&ckpt)?;
            require_file(&corpus)?;
            let mut cfg = load_config(config.as_deref(), seed)?;
            let pol = load_checkpoint(&ckpt)?.policy;
            cfg.model = pol.cfg.clone();
            print_config(&cfg);
            let scen = read_corpus(&corpus)?;
            let r = evaluate(&pol, &scen, pdms.then_some(&cfg.thresholds))?;
            write_eval_report(&report, &r)?;
            println!(
                "ade 1s {:.4}  2s {:.4}  3s {:.4}  avg {:.4}  collision {:.3}%{}",
                r.ade_1s,
                r.ade_2s,
                r.ade_3s,
                r.ade_avg,
                r.collision_rate,
                r.pdms_mean.map_or(String::new(), |p| format!("  pdms {p:.4}"))
            );
        }
        Command::Ablate { suite, out, config, seed, seeds } => {
            let cfg = load_config(config.as_deref(), Some(seed))?;
            print_config(&cfg);
            std::fs::create_dir_all(&out)?;
            let mut rows = Vec::new();
            for s in seed..seed + seeds.max(1) {
                for r in run_suite(suite, &cfg, s)? {
                    println!(
                        "{} seed {} {:<18} ade_avg {:.4}  collision {:.3}%  stable {}",
                        suite.as_str(),
                        r.seed,
                        r.setting,
                        r.ade_avg,
                        r.collision_rate,
                        r.stable
                    );
                    rows.push(r);
                }
            }
            let path = out.join(format!("{}.csv", suite.as_str()));
            write_ablation(&path, &rows)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Parse { .. } => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
