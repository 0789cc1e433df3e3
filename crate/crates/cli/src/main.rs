use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use owgl::eval::open_world_accuracy;
use owgl::experiment::{
    build_graph, run, run_sweep, sweep_table, ExperimentConfig, KEYS, SWEEP_PARAMS,
};
use owgl::graph::{load_graph, save_graph, OpenWorldSplit};

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value configuration file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, &(key, help)| {
        cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help(help)
                .help_heading("Configuration"),
        )
    })
}

fn cli() -> Command {
    let out = || {
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(clap::value_parser!(PathBuf))
    };
    Command::new("owgl")
        .about("Open-world node classification on attributed graphs")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("run")
                .about("Train and evaluate one configuration")
                .arg(out().help("run directory for report, predictions and checkpoint")),
        ))
        .subcommand(config_args(
            Command::new("sweep")
                .about("Run one experiment per value of a hyperparameter")
                .arg(
                    Arg::new("param")
                        .long("param")
                        .required(true)
                        .value_parser(SWEEP_PARAMS.iter().map(|p| p.0).collect::<Vec<_>>()),
                )
                .arg(
                    Arg::new("values")
                        .long("values")
                        .required(true)
                        .value_delimiter(',')
                        .action(ArgAction::Append)
                        .help("comma-separated values"),
                )
                .arg(out().help("directory receiving one subdirectory per value and sweep.csv")),
        ))
        .subcommand(config_args(
            Command::new("gen")
                .about("Write the configured block-model graph as a dataset directory")
                .arg(out().required(true).help("dataset directory to create")),
        ))
        .subcommand(
            Command::new("eval")
                .about("Score a predictions file against dataset labels")
                .arg(
                    Arg::new("dataset")
                        .long("dataset")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("split")
                        .long("split")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("split.json from a run directory"),
                )
                .arg(
                    Arg::new("predictions")
                        .long("predictions")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("`node,group` rows"),
                ),
        )
}

fn load_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for &(key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).with_context(|| format!("--{key}"))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_predictions(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(p) => out.push(p),
            None => bail!(
                "{}:{}: expected `node,group`, got {line:?}",
                path.display(),
                no + 1
            ),
        }
    }
    Ok(out)
}

fn eval_cmd(m: &ArgMatches) -> Result<()> {
    let g = load_graph(m.get_one::<PathBuf>("dataset").expect("required"))?;
    let split = OpenWorldSplit::load(m.get_one::<PathBuf>("split").expect("required"))?;
    let preds = read_predictions(m.get_one::<PathBuf>("predictions").expect("required"))?;
    let mut pred = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for (i, p) in preds {
        let Some(Some(y)) = g.labels.get(i) else {
            bail!("node {i} has no label in the dataset");
        };
        pred.push(p);
        truth.push(*y);
    }
    let metrics = open_world_accuracy(&pred, &truth, &split.known_classes)?;
    println!("acc_all = {}", metrics.acc_all);
    println!("acc_known = {}", metrics.acc_known);
    println!("acc_novel = {}", metrics.acc_novel);
    println!("predicted_class_count = {}", metrics.predicted_class_count);
    Ok(())
}

fn main() -> Result<()> {
    let matches = cli().get_matches();
    match matches.subcommand() {
        Some(("run", m)) => {
            let cfg = load_config(m)?;
            let report = run(&cfg, m.get_one::<PathBuf>("out").map(PathBuf::as_path))?;
            print!("{}", report.to_text());
        }
        Some(("sweep", m)) => {
            let cfg = load_config(m)?;
            let param = m.get_one::<String>("param").expect("required");
            let values: Vec<String> = m
                .get_many::<String>("values")
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            let reports = run_sweep(
                &cfg,
                param,
                &values,
                m.get_one::<PathBuf>("out").map(PathBuf::as_path),
            )?;
            print!("{}", sweep_table(param, &reports));
        }
        Some(("gen", m)) => {
            let cfg = load_config(m)?;
            let dir = m.get_one::<PathBuf>("out").expect("required");
            let g = build_graph(&cfg)?;
            save_graph(&g, dir)?;
            println!(
                "wrote {} nodes, {} edges to {}",
                g.node_count(),
                g.edges.len(),
                dir.display()
            );
        }
        Some(("eval", m)) => eval_cmd(m)?,
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}
