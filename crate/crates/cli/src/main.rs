mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use anyhow::bail;
use chrono::Utc;
use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, StudyCommand};
use commands::require_out;
use config::FileConfig;
use manifest::{RunManifest, RunRecord};

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Preprocess(_) => "preprocess",
        Command::Train(_) => "train",
        Command::Translate(_) => "translate",
        Command::Evaluate(_) => "evaluate",
        Command::Study { .. } => "study serve",
    }
}

fn manifest_for(cli: &Cli, started_at: chrono::DateTime<Utc>, record: &RunRecord, error: Option<String>) -> RunManifest {
    RunManifest {
        command: command_name(&cli.command).to_string(),
        argv: std::env::args().collect(),
        config: record.config.clone(),
        seed: cli.seed,
        device: cli.device.clone(),
        inputs: record.inputs.clone(),
        outputs: record.outputs.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: Utc::now(),
        status: if error.is_some() { "failed" } else { "ok" }.to_string(),
        error,
    }
}

fn dispatch(cli: &Cli, started_at: chrono::DateTime<Utc>) -> anyhow::Result<RunRecord> {
    if cli.device != "cpu" {
        bail!("device {:?} is not available; only cpu is supported", cli.device);
    }
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => {
            let dist = cfg.recipe.clone().unwrap_or_default();
            commands::simulate::run(a, cli.seed, &require_out(&cli.out)?, &dist)
        }
        Command::Preprocess(a) => commands::preprocess::run(a, &require_out(&cli.out)?),
        Command::Train(a) => commands::train::run(a, cli.seed, &require_out(&cli.out)?, &cfg),
        Command::Translate(a) => commands::translate::run(a, cli.seed, &require_out(&cli.out)?),
        Command::Evaluate(a) => {
            let metrics = cfg.metrics.clone().unwrap_or_default();
            commands::evaluate::run(a, &require_out(&cli.out)?, &metrics)
        }
        Command::Study { command: StudyCommand::Serve(a) } => commands::study::run(a, |record| {
            match &record.manifest_dir {
                Some(dir) => manifest_for(cli, started_at, record, None).write(dir),
                None => Ok(()),
            }
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let started_at = Utc::now();
    match dispatch(&cli, started_at) {
        Ok(record) => {
            if let (Some(dir), false) = (&record.manifest_dir, matches!(cli.command, Command::Study { .. })) {
                if let Err(e) = manifest_for(&cli, started_at, &record, None).write(dir) {
                    eprintln!("error: {e:#}");
                    return ExitCode::FAILURE;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(out) = &cli.out {
                let record = RunRecord { config: Value::Null, ..Default::default() };
                // A failed run still leaves a manifest where one would have gone.
                if out.is_dir() {
                    let _ = manifest_for(&cli, started_at, &record, Some(format!("{e:#}"))).write(out);
                }
            }
            ExitCode::FAILURE
        }
    }
}
