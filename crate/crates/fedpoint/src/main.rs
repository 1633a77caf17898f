//! Command-line entry point.
//!
//! Subcommands: `generate`, `train`, `eval`, `gradcheck`, `sampledemo`.
//! Exit codes: 0 success, 1 validation error (bad flags, bad config),
//! 2 runtime error. The environment variable `FEDPOINT_SEED` overrides the
//! configured master seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use fedpoint::checkpoint;
use fedpoint::config::{RunConfig, ALLOWED_TRAIN_FRACTIONS};
use fedpoint::experiment::{self, Mode};
use fedpoint::gradsuite;
use fedpoint::history;
use fedpoint::sampledemo;
use fedpoint_core::synth::realized_gamma;

const USAGE: &str = "\
fedpoint: federated point-transformer slide classification on synthetic data

USAGE:
    fedpoint generate   --config <file> [--force]
    fedpoint train      --config <file> [--mode <m>] [--pace <E>]
                        [--train-fraction <f>] [--split-seed <s>] [--out <dir>]
    fedpoint eval       --checkpoint <file> --data <dir> [--repeats <R>] [--out <csv>]
    fedpoint gradcheck
    fedpoint sampledemo --data <dir> --site <name> [--slide <i>] --out <csv>
    fedpoint example-config

MODES (train):
    base      FedAvg with farthest point sampling
    fcs       FedAvg with farthest cosine sampling
    dda       FedAvg + dynamic distribution adjustment (FPS)
    dda-fcs   FedAvg + DDA + FCS
    nofed     per-site local training (FPS)
    nofed-fcs per-site local training (FCS)

The FEDPOINT_SEED environment variable overrides the configured seed.
";

/// Exit with status 1 (validation) carrying a message.
struct Invalid(String);
/// Exit with status 2 (runtime failure).
struct Runtime(String);

enum CliError {
    Invalid(Invalid),
    Runtime(Runtime),
}

impl From<Invalid> for CliError {
    fn from(e: Invalid) -> Self {
        CliError::Invalid(e)
    }
}

impl From<Runtime> for CliError {
    fn from(e: Runtime) -> Self {
        CliError::Runtime(e)
    }
}

impl From<experiment::ExperimentError> for CliError {
    fn from(e: experiment::ExperimentError) -> Self {
        CliError::Runtime(Runtime(format!("{e}")))
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invalid(Invalid(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(Runtime(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Minimal flag parser: `--key value` pairs plus bare switches.
struct Flags {
    values: Vec<(String, String)>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self, Invalid> {
        let mut values = Vec::new();
        let mut switches = Vec::new();
        let mut it = args.iter().peekable();
        while let Some(arg) = it.next() {
            let Some(key) = arg.strip_prefix("--") else {
                return Err(Invalid(format!("unexpected argument {arg:?}")));
            };
            match it.peek() {
                Some(v) if !v.starts_with("--") => {
                    values.push((key.to_string(), it.next().unwrap().clone()));
                }
                _ => switches.push(key.to_string()),
            }
        }
        Ok(Flags { values, switches })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, Invalid> {
        self.get(key)
            .ok_or_else(|| Invalid(format!("missing required flag --{key}")))
    }

    fn has(&self, key: &str) -> bool {
        self.switches.iter().any(|s| s == key)
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig, Invalid> {
    let path = flags.required("config")?;
    let mut cfg = RunConfig::from_file(Path::new(path)).map_err(|e| Invalid(format!("{e}")))?;
    if let Ok(seed) = std::env::var("FEDPOINT_SEED") {
        cfg.seed = seed
            .parse()
            .map_err(|_| Invalid(format!("FEDPOINT_SEED={seed:?} is not an integer")))?;
    }
    Ok(cfg)
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(cmd) = args.first() else {
        print!("{USAGE}");
        return Err(Invalid(String::from("no subcommand given")).into());
    };
    let flags = Flags::parse(&args[1..]).map_err(CliError::Invalid)?;
    match cmd.as_str() {
        "generate" => cmd_generate(&flags),
        "train" => cmd_train(&flags),
        "eval" => cmd_eval(&flags),
        "gradcheck" => cmd_gradcheck(),
        "sampledemo" => cmd_sampledemo(&flags),
        "example-config" => {
            print!("{}", fedpoint::config::example_config());
            Ok(())
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(Invalid(format!("unknown subcommand {other:?}")).into()),
    }
}

fn cmd_generate(flags: &Flags) -> Result<(), CliError> {
    let cfg = load_config(flags)?;
    if cfg.data_dir.exists() && !flags.has("force") {
        return Err(Invalid(format!(
            "{} already exists; pass --force to overwrite",
            cfg.data_dir.display()
        ))
        .into());
    }
    let sites = experiment::generate(&cfg, flags.has("force"))?;
    println!("wrote {} sites under {}", sites.len(), cfg.data_dir.display());
    for site in &sites {
        let pos = site.slides.iter().filter(|s| s.label() == 1).count();
        let neg = site.slides.len() - pos;
        let gamma = realized_gamma(&site.slides).unwrap_or(f64::NAN);
        println!(
            "  site {}: {} slides ({} positive / {} negative), realized gamma {:.2}{}",
            site.name,
            site.slides.len(),
            pos,
            neg,
            gamma,
            if site.unseen { " [unseen]" } else { "" }
        );
    }
    Ok(())
}

fn cmd_train(flags: &Flags) -> Result<(), CliError> {
    let mut cfg = load_config(flags)?;
    let mode = Mode::parse(flags.get("mode").unwrap_or("dda-fcs"))
        .map_err(|e| Invalid(format!("{e}")))?;
    if let Some(pace) = flags.get("pace") {
        cfg.pace = pace
            .parse()
            .map_err(|_| Invalid(format!("bad --pace {pace:?}")))?;
    }
    if let Some(frac) = flags.get("train-fraction") {
        let f: f64 = frac
            .parse()
            .map_err(|_| Invalid(format!("bad --train-fraction {frac:?}")))?;
        if !ALLOWED_TRAIN_FRACTIONS.iter().any(|&a| (a - f).abs() < 1e-12) {
            return Err(Invalid(format!(
                "--train-fraction must be one of {ALLOWED_TRAIN_FRACTIONS:?}"
            ))
            .into());
        }
        cfg.train_fraction = f;
    }
    if let Some(seed) = flags.get("split-seed") {
        cfg.split_seed = seed
            .parse()
            .map_err(|_| Invalid(format!("bad --split-seed {seed:?}")))?;
    }
    if let Some(out) = flags.get("out") {
        cfg.out_dir = PathBuf::from(out);
    }
    cfg.validate().map_err(|e| Invalid(format!("{e}")))?;
    if !cfg.data_dir.exists() {
        return Err(Invalid(format!(
            "dataset directory {} does not exist (run `fedpoint generate` first)",
            cfg.data_dir.display()
        ))
        .into());
    }

    let (outcome, _data) = experiment::train(&cfg, mode)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Runtime(format!("{e}")))?;

    let mut flags_echo = cfg.echo();
    flags_echo.push((String::from("mode"), mode.name().to_string()));
    let history_path = cfg.out_dir.join(format!("{}_history.csv", mode.name()));
    history::write_history(&history_path, &flags_echo, &outcome.run.history)
        .map_err(|e| Runtime(format!("{e}")))?;

    let saved = experiment::save_checkpoints(&cfg.out_dir, mode, &outcome)?;
    println!(
        "mode {}: {} epochs, {} aggregations, history -> {}",
        mode.name(),
        cfg.epochs,
        outcome.run.sync_epochs.len(),
        history_path.display()
    );
    for (label, path) in &saved {
        println!("  checkpoint [{label}] -> {}", path.display());
    }
    if let Some((_, epoch, auc)) = &outcome.run.best_server {
        println!("  best mean validation AUC {auc:.4} at epoch {epoch}");
    }
    Ok(())
}

fn cmd_eval(flags: &Flags) -> Result<(), CliError> {
    let ckpt_path = flags.required("checkpoint").map_err(CliError::Invalid)?;
    let data_dir = flags.required("data").map_err(CliError::Invalid)?;
    let repeats: usize = match flags.get("repeats") {
        Some(r) => r
            .parse()
            .map_err(|_| Invalid(format!("bad --repeats {r:?}")))?,
        None => 1,
    };
    let ckpt = checkpoint::load(Path::new(ckpt_path)).map_err(|e| Invalid(format!("{e}")))?;
    let out = experiment::evaluate(&ckpt, Path::new(data_dir), repeats)?;

    for (site, split, auc) in &out.rows {
        match auc {
            Some(a) => println!("site {site} [{split}]: AUC {a:.4}"),
            None => println!("site {site} [{split}]: AUC N/A (single-class subset)"),
        }
    }
    if let Some(mean) = out.mean_test_auc {
        println!("mean test AUC: {mean:.4}");
    }
    if let Some(r) = &out.repeats {
        println!(
            "repeats: mean {:.4} +/- {:.4}, min {:.4}, max {:.4}, max-min {:.4}",
            r.mean, r.std, r.min, r.max, r.spread
        );
    }
    if let Some(path) = flags.get("out") {
        let echo = vec![
            (String::from("checkpoint"), ckpt_path.to_string()),
            (String::from("data"), data_dir.to_string()),
            (String::from("repeats"), repeats.to_string()),
        ];
        history::write_eval_csv(Path::new(path), &echo, &out.rows)
            .map_err(|e| Runtime(format!("{e}")))?;
        println!("report -> {path}");
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<(), CliError> {
    let mut all_ok = true;
    for check in gradsuite::run_suite() {
        let status = if check.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:>4}  {:<32} max rel err {:.3e} (tolerance {:.0e})",
            check.name, check.max_rel_err, check.tolerance
        );
        all_ok &= check.passed();
    }
    if all_ok {
        Ok(())
    } else {
        Err(Runtime(String::from("gradient checks failed")).into())
    }
}

fn cmd_sampledemo(flags: &Flags) -> Result<(), CliError> {
    let data_dir = flags.required("data").map_err(CliError::Invalid)?;
    let site_name = flags.required("site").map_err(CliError::Invalid)?;
    let out = flags.required("out").map_err(CliError::Invalid)?;
    let slide_idx: usize = match flags.get("slide") {
        Some(s) => s
            .parse()
            .map_err(|_| Invalid(format!("bad --slide {s:?}")))?,
        None => 0,
    };
    let site = fedpoint::dataset_io::read_site(&Path::new(data_dir).join(site_name))
        .map_err(|e| Invalid(format!("{e}")))?;
    let slide = site
        .slides
        .get(slide_idx)
        .ok_or_else(|| Invalid(format!("site {site_name} has no slide {slide_idx}")))?;
    sampledemo::write_sampledemo(Path::new(out), slide)?;
    println!(
        "wrote sampler comparison for site {site_name} slide {slide_idx} ({} points) -> {out}",
        slide.len()
    );
    Ok(())
}
