mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{RunConfig, KEYS};

fn cli() -> Command {
    let with_keys = |mut cmd: Command| {
        cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value configuration file; flags take precedence"),
        );
        for (key, default, help) in KEYS {
            let help = if default.is_empty() {
                help.to_string()
            } else {
                format!("{help} [default: {default}]")
            };
            cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").help(help));
        }
        cmd
    };
    Command::new("earseg")
        .about("Pixel-wise ear detection: training, inference, evaluation and reports")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(
            Command::new("train").about("Train a network; writes weights.bin, train_log.csv and config.txt to `out`"),
        ))
        .subcommand(with_keys(
            Command::new("infer")
                .about("Segment images; writes raw/<id>.png and masks/<id>.png (postprocessed) to `out`")
                .arg(
                    Arg::new("inputs")
                        .value_name("IMAGE")
                        .num_args(0..)
                        .action(ArgAction::Append)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("images to segment; defaults to the `dataset` records"),
                ),
        ))
        .subcommand(with_keys(
            Command::new("eval")
                .about("Score predicted masks (`pred`) or rectangles (`rects`) against the `dataset` ground truth"),
        ))
        .subcommand(with_keys(
            Command::new("report").about("Side-by-side table from per-image metrics CSVs").arg(
                Arg::new("metrics")
                    .value_name("[NAME=]CSV")
                    .num_args(1..)
                    .required(true)
                    .action(ArgAction::Append)
                    .help("per-image metrics files, optionally labelled"),
            ),
        ))
        .subcommand(with_keys(
            Command::new("synth").about("Generate a synthetic dataset with a seeded train/test split into `out`"),
        ))
        .subcommand(with_keys(
            Command::new("split").about("Write a seeded train/test split.csv for `dataset` (into `out` when set)"),
        ))
}

fn effective_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, _, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = effective_config(sub)?;
    match name {
        "train" => commands::train(&cfg),
        "infer" => {
            let inputs: Vec<PathBuf> = sub.get_many::<PathBuf>("inputs").into_iter().flatten().cloned().collect();
            commands::infer(&cfg, &inputs)
        }
        "eval" => commands::eval(&cfg),
        "report" => {
            let inputs: Vec<String> = sub.get_many::<String>("metrics").into_iter().flatten().cloned().collect();
            commands::report(&cfg, &inputs)
        }
        "synth" => commands::synth(&cfg),
        "split" => commands::split(&cfg),
        _ => unreachable!("unregistered subcommand {name}"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
