use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedpass::error::{Error, Result};
use fedpass::protocol::{ActiveParty, InferenceMode, PassiveParty};
use fedpass::runner::{
    cap_table, load_checkpoint, run_attack, run_experiment, save_checkpoint, train_system,
    Checkpoint, ExperimentConfig, RunResult, TrainedSystem,
};

#[derive(Parser)]
#[command(name = "fedpass", about = "Vertical federated learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the first configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel grid jobs for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory, overriding the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run: the first defense grid point under one seed.
    Train,
    /// Run the full defense-grid x attack x seed sweep.
    Sweep,
    /// Attack a previously saved model checkpoint.
    Attack,
    /// Verify the privacy theory numerically and emit a report.
    VerifyTheory,
    /// Aggregate persisted results into per-(defense, attack) CAP scores.
    Cap,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::from_toml_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let (strength, defense) = cfg.defense[0]
        .expand()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("empty defense grid".into()))?;
    let seed = cfg.seeds[0];
    let mut system = train_system(&cfg, &defense, seed)?;
    let accuracy = {
        let TrainedSystem {
            passives,
            active,
            test_shards,
            test_labels,
            ..
        } = &mut system;
        fedpass::protocol::evaluate(
            passives,
            active,
            test_shards,
            test_labels,
            InferenceMode::Resample,
        )?
    };
    println!(
        "trained defense={} strength={strength} seed={seed} accuracy={accuracy:.4}",
        defense.name()
    );
    std::fs::create_dir_all(&cfg.output_dir)?;
    let party = &system.passives[0];
    save_checkpoint(
        &cfg.output_dir.join("model.json"),
        &Checkpoint {
            model: party.model.clone(),
            defense: defense.clone(),
            input_shape: party.dataset.shape()[1..].to_vec(),
        },
    )?;
    println!("checkpoint written to {}", cfg.output_dir.join("model.json").display());
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let rows = run_experiment(&cfg, cli.jobs)?;
    println!(
        "sweep complete: {} rows in {}",
        rows.len(),
        cfg.output_dir.join("results.csv").display()
    );
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!(
                "run failed: defense={} strength={} attack={} seed={}: {e}",
                r.defense, r.strength, r.attack, r.seed
            );
        }
    }
    Ok(())
}

fn cmd_attack(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ckpt = load_checkpoint(&cfg.output_dir.join("model.json"))?;
    let seed = cfg.seeds[0];
    // Rebuild a system around the checkpointed passive model so the attacks
    // see the same embedding distribution the protocol would transmit.
    let defense = ckpt.defense.clone();
    let mut system = train_system(&cfg, &defense, seed)?;
    system.passives[0] = PassiveParty::new(
        1,
        system.train_shards[0].clone(),
        ckpt.model,
        defense,
        seed,
    );
    let _ = &system.active as &ActiveParty;
    if cfg.attacks.is_empty() {
        return Err(Error::Config("no attacks configured".into()));
    }
    for kind in cfg.attacks.clone() {
        let rerr = run_attack(&mut system, kind, &cfg.attack, cfg.aux_size, seed)?;
        println!("attack={} recovery_error={rerr:.6}", kind.name());
    }
    Ok(())
}

fn cmd_verify_theory(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let reports = fedpass::theory::verify_all(seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("theory.json"),
        serde_json::to_string_pretty(&reports).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    let mut all_pass = true;
    for r in &reports {
        println!("{}: {}", r.name, if r.pass { "PASS" } else { "FAIL" });
        all_pass &= r.pass;
    }
    if !all_pass {
        return Err(Error::Numerical("theory verification failed".into()));
    }
    Ok(())
}

fn cmd_cap(cli: &Cli) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let rows: Vec<RunResult> =
        serde_json::from_str(&std::fs::read_to_string(out.join("results.json"))?)
            .map_err(|e| Error::Format(format!("corrupt results.json: {e}")))?;
    let table = cap_table(&rows)?;
    let mut w = csv::Writer::from_path(out.join("cap.csv")).map_err(Error::from)?;
    w.write_record(["defense", "attack", "cap_mean", "cap_std"])
        .map_err(Error::from)?;
    for row in &table {
        w.write_record([
            row.defense.clone(),
            row.attack.clone(),
            format!("{}", row.cap_mean),
            format!("{}", row.cap_std),
        ])
        .map_err(Error::from)?;
        println!(
            "{} vs {}: cap_mean={:.6} cap_std={:.6}",
            row.defense, row.attack, row.cap_mean, row.cap_std
        );
    }
    w.flush()?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train => cmd_train(&cli),
        Command::Sweep => cmd_sweep(&cli),
        Command::Attack => cmd_attack(&cli),
        Command::VerifyTheory => cmd_verify_theory(&cli),
        Command::Cap => cmd_cap(&cli),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
