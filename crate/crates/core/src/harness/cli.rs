//! Command-line entry point: experiment recipes behind subcommands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::alda::model::N_Z;
use crate::alda::traverse::latent_traversal;
use crate::diffpolicy::policy::{Policy, PolicyMode};
use crate::diffpolicy::train::TrainConfig;
use crate::equiadapt::{eval_under_rotation, equi_finetune, Canonicalizer, CyclicGroup, FinetuneConfig};
use crate::factorworld::dataset::{generate, DemoDataset};
use crate::factorworld::env::Task;
use crate::factorworld::factors::FactorVector;
use crate::factorworld::perturb::Perturbation;
use crate::factorworld::render::{render, write_ppm};
use crate::numcore::Rng;

use super::config::RunConfig;
use super::recipes::{eval_policy, mig_for_policy, probe_state, train_on_demos};
use super::report::write_report;

pub const MIG_SAMPLES: usize = 5000;
pub const TRAVERSAL_STEPS: usize = 9;

#[derive(Parser)]
#[command(name = "alda-lab", about = "Train and evaluate diffusion policies with \
discrete latent association and rotation canonicalization on a synthetic tabletop.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Shared flags. Precedence: built-in defaults < --config file < flags.
#[derive(Args, Default)]
struct Common {
    /// Config file (JSON object or flat key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long)]
    group_order: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    /// Use the full-scale training budget instead of the desk default.
    #[arg(long)]
    full_scale: bool,
    /// Demo dataset directory.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Output root for run directories (also settable via ALDA_LAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model checkpoint directory (input for eval, output for training).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    overrides.push((stringify!($field).to_string(), v.to_string()));
                }
            };
        }
        flag!(task);
        flag!(seed);
        flag!(steps);
        flag!(batch);
        flag!(lr);
        flag!(episodes);
        flag!(perturbation);
        flag!(group_order);
        flag!(finetune_steps);
        if self.full_scale {
            overrides.push(("full_scale".into(), "true".into()));
        }
        if let Some(v) = &self.demos {
            overrides.push(("demos".into(), v.display().to_string()));
        }
        if let Some(v) = &self.out {
            overrides.push(("out".into(), v.display().to_string()));
        }
        if let Some(v) = &self.model {
            overrides.push(("model".into(), v.display().to_string()));
        }
        flag!(run_id);
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert demonstrations.
    GenDemos(Common),
    /// Train the latent-association diffusion policy.
    TrainAldaDp(Common),
    /// Train the plain diffusion-policy baseline.
    TrainDpBaseline(Common),
    /// Evaluate a trained policy's success rate.
    Eval(Common),
    /// Finetune a trained policy for rotation invariance.
    FinetuneEqui(Common),
    /// Evaluate a policy under every rotation in the group.
    EvalEqui(Common),
    /// Render latent-traversal image strips.
    Traverse(Common),
    /// Score disentanglement (Mutual Information Gap).
    Mig(Common),
    /// Aggregate run manifests into metrics.csv.
    Report(Common),
}

fn task_of(cfg: &RunConfig) -> Task {
    Task::parse(&cfg.task).expect("validated")
}

fn pert_of(cfg: &RunConfig) -> Perturbation {
    Perturbation::parse(&cfg.perturbation).expect("validated")
}

fn load_policy(cfg: &RunConfig) -> anyhow::Result<Policy> {
    let mut arch_rng = Rng::new(0);
    Ok(Policy::load(&cfg.model, &mut arch_rng)?)
}

fn train(cfg: &RunConfig, mode: PolicyMode) -> anyhow::Result<()> {
    let mut rng = Rng::new(cfg.seed);
    let mut policy = Policy::new(mode, &mut rng);
    if mode == PolicyMode::AldaDp {
        policy.alda.config.beta = cfg.beta;
        policy.alda.config.w_recon = cfg.w_recon;
        policy.alda.config.w_commit = cfg.w_commit;
        policy.alda.config.lambda_enc = cfg.lambda;
        policy.alda.config.lambda_dec = cfg.lambda;
    }
    let tc = TrainConfig {
        steps: cfg.steps as u64,
        batch: cfg.batch,
        lr: cfg.lr,
        seed: cfg.seed,
        log_every: 1000,
    };
    let last = train_on_demos(&mut policy, &cfg.demos, &tc, |d| {
        eprintln!(
            "step {:>7}  total {:.4}  recon {:.4}  dp {:.4}  gap {:.4}",
            d.step, d.total, d.recon, d.dp, d.mean_abs_gap
        );
    })?;
    policy.save(&cfg.model)?;
    let results = serde_json::json!({
        "method": mode.name(),
        "final_total_loss": last.as_ref().map(|d| d.total),
        "final_dp_loss": last.as_ref().map(|d| d.dp),
        "final_recon": last.as_ref().map(|d| d.recon),
        "final_commit": last.as_ref().map(|d| d.commit),
        "final_mean_abs_gap": last.as_ref().map(|d| d.mean_abs_gap),
        "model": cfg.model.display().to_string(),
    });
    let m = cfg.write_manifest(&cfg.out.join(&cfg.run_id), results)?;
    println!("trained {} -> {}", mode.name(), m.display());
    Ok(())
}

fn run(cmd: &Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenDemos(c) => {
            let cfg = c.resolve()?;
            let ds = generate(task_of(&cfg), cfg.episodes, cfg.seed);
            ds.save(&cfg.demos)?;
            let results = serde_json::json!({
                "method": "expert",
                "episodes": ds.episodes.len(),
                "total_steps": ds.total_steps(),
                "demos": cfg.demos.display().to_string(),
            });
            let m = cfg.write_manifest(&cfg.out.join(&cfg.run_id), results)?;
            println!(
                "wrote {} episodes to {} ({})",
                ds.episodes.len(),
                cfg.demos.display(),
                m.display()
            );
        }
        Cmd::TrainAldaDp(c) => train(&c.resolve()?, PolicyMode::AldaDp)?,
        Cmd::TrainDpBaseline(c) => train(&c.resolve()?, PolicyMode::PlainDp)?,
        Cmd::Eval(c) => {
            let cfg = c.resolve()?;
            let policy = load_policy(&cfg)?;
            let res = eval_policy(&policy, task_of(&cfg), pert_of(&cfg), cfg.episodes, cfg.seed)?;
            let results = serde_json::json!({
                "method": policy.mode.name(),
                "success_rate": res.success_rate,
                "mean_episode_length": res.mean_episode_length,
                "n": res.n_episodes,
            });
            let m = cfg.write_manifest(&cfg.out.join(&cfg.run_id), results)?;
            println!(
                "success_rate {:.4} over {} episodes ({})",
                res.success_rate,
                res.n_episodes,
                m.display()
            );
        }
        Cmd::FinetuneEqui(c) => {
            let cfg = c.resolve()?;
            let mut agent = load_policy(&cfg)?;
            let oracle = agent.clone();
            let group = CyclicGroup::new(cfg.group_order)?;
            let mut canon = Canonicalizer::new(group, &mut Rng::new(cfg.seed).derive(0xca10));
            let ds = DemoDataset::load(&cfg.demos)?;
            let fc = FinetuneConfig {
                beta_prior: cfg.beta_prior,
                lr: cfg.lr,
                steps: cfg.finetune_steps as u64,
                batch: cfg.batch,
                seed: cfg.seed,
                force_identity: false,
            };
            let stats = equi_finetune(&mut agent, &oracle, &mut canon, &ds, &fc)?;
            let run_dir = cfg.out.join(&cfg.run_id);
            agent.save(&run_dir.join("policy"))?;
            canon.save(&run_dir.join("canon"))?;
            let results = serde_json::json!({
                "method": format!("{}_equi", agent.mode.name()),
                "group_order": cfg.group_order,
                "steps_run": stats.steps_run,
                "initial_loss": stats.initial_loss,
                "final_loss": stats.final_loss,
                "final_act": stats.final_act,
                "final_prior": stats.final_prior,
            });
            let m = cfg.write_manifest(&run_dir, results)?;
            println!(
                "finetuned: loss {:.4} -> {:.4} ({})",
                stats.initial_loss,
                stats.final_loss,
                m.display()
            );
        }
        Cmd::EvalEqui(c) => {
            let cfg = c.resolve()?;
            let group = CyclicGroup::new(cfg.group_order)?;
            // cfg.model is either a finetune run dir (policy/ + canon/)
            // or a bare policy checkpoint (evaluated without canonicalizer)
            let (policy, canon) = if cfg.model.join("policy").is_dir() {
                let mut arch_rng = Rng::new(0);
                let p = Policy::load(&cfg.model.join("policy"), &mut arch_rng)?;
                let canon = Canonicalizer::load(&cfg.model.join("canon"), group)?;
                (p, Some(canon))
            } else {
                (load_policy(&cfg)?, None)
            };
            let res = eval_under_rotation(
                &policy,
                canon.as_ref(),
                group,
                task_of(&cfg),
                cfg.episodes,
                cfg.seed,
            )?;
            let results = serde_json::json!({
                "method": if canon.is_some() {
                    format!("{}_equi", policy.mode.name())
                } else {
                    policy.mode.name().to_string()
                },
                "success_rate": res.mean_success,
                "unrotated_success": res.per_element[0],
                "per_element": res.per_element,
                "group_order": group.n,
                "n": cfg.episodes * group.n,
            });
            let m = cfg.write_manifest(&cfg.out.join(&cfg.run_id), results)?;
            println!(
                "mean rotated success {:.4} (unrotated {:.4}) ({})",
                res.mean_success,
                res.per_element[0],
                m.display()
            );
        }
        Cmd::Traverse(c) => {
            let cfg = c.resolve()?;
            let policy = load_policy(&cfg)?;
            let f = FactorVector::training_default();
            let obs = render(&f, &probe_state(&f))
                .map_err(crate::numcore::NumError::InvalidArgument)?;
            let run_dir = cfg.out.join(&cfg.run_id);
            std::fs::create_dir_all(&run_dir)?;
            let mut files = Vec::new();
            for dim in 0..N_Z {
                let strip = latent_traversal(&policy.alda, &obs, dim, TRAVERSAL_STEPS)?;
                let path = run_dir.join(format!("traverse_dim{dim:02}.ppm"));
                write_ppm(&path, &strip.pixels, strip.width(), strip.height())?;
                files.push(path.display().to_string());
            }
            let results = serde_json::json!({
                "method": policy.mode.name(),
                "dims": N_Z,
                "steps": TRAVERSAL_STEPS,
                "files": files,
            });
            let m = cfg.write_manifest(&run_dir, results)?;
            println!("wrote {} traversal strips ({})", N_Z, m.display());
        }
        Cmd::Mig(c) => {
            let cfg = c.resolve()?;
            let policy = load_policy(&cfg)?;
            let mig = mig_for_policy(&policy, MIG_SAMPLES, cfg.seed)?;
            for f in &mig.excluded {
                eprintln!("warning: factor {f} has zero entropy; excluded from MIG");
            }
            let results = serde_json::json!({
                "method": policy.mode.name(),
                "mig": mig.score,
                "excluded_factors": mig.excluded,
                "n": MIG_SAMPLES,
            });
            let m = cfg.write_manifest(&cfg.out.join(&cfg.run_id), results)?;
            println!("mig {:.4} ({})", mig.score, m.display());
        }
        Cmd::Report(c) => {
            let cfg = c.resolve()?;
            let path = write_report(&cfg.out)?;
            print!("{}", std::fs::read_to_string(&path)?);
            println!("# wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn cli_main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    run(&cli.cmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_spec_example() {
        let cli = Cli::try_parse_from([
            "alda-lab",
            "eval",
            "--task",
            "reachgrasp",
            "--perturbation",
            "none",
            "--episodes",
            "500",
            "--seed",
            "7",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Eval(c) => {
                let cfg = c.resolve().unwrap();
                assert_eq!(cfg.task, "reachgrasp");
                assert_eq!(cfg.episodes, 500);
                assert_eq!(cfg.seed, 7);
            }
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn unknown_command_rejected() {
        assert!(Cli::try_parse_from(["alda-lab", "explode"]).is_err());
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "episodes=9\nseed=1\n").unwrap();
        let cli = Cli::try_parse_from([
            "alda-lab",
            "eval",
            "--config",
            p.to_str().unwrap(),
            "--episodes",
            "33",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Eval(c) => {
                let cfg = c.resolve().unwrap();
                assert_eq!(cfg.episodes, 33);
                assert_eq!(cfg.seed, 1);
            }
            _ => panic!("wrong command"),
        }
    }
}
