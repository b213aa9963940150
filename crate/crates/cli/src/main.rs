//! Command-line surface for the federated-learning simulator.
//!
//! Subcommands: `run` (execute a config), `sweep` (one run per value of a
//! config key), `validate` (check a config without computing), and
//! `spectrum` (representation diagnostics over a saved model).

mod config;
mod model_file;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use fedsim::diagnostics::{collapse_gap, representation_spectrum, spectra_csv, DEFAULT_COLLAPSE_HEAD};
use fedsim::engine::{build_environment, run_experiment_full, ExperimentConfig, RepeatedReport};
use fedsim::error::{Error, Result};

use config::{parse_config, RawConfig};
use model_file::ModelFile;
use output::{check_no_overwrite, planned_files, resolve_out_dir, write_run_outputs, EmitFlags};

const USAGE: &str = "\
fedsim - deterministic federated-learning simulator with noisy labels

USAGE:
    fedsim run <config> --out <dir> [--seed N] [--repeat N] [--threads N]
               [--emit-spectrum] [--emit-model] [--no-report] [--no-rounds-csv]
    fedsim sweep <config> --out <dir> --axis <section.key> --values <v1,v2,..>
               [--seed N] [--repeat N] [--threads N]
    fedsim validate <config>
    fedsim spectrum --model <model.json> --config <config> [--out <dir>] [--head N]
    fedsim help

Outputs land in the --out directory: report.json, rounds.csv, and optionally
spectrum.csv and model.json (suffixed _0, _1, .. when --repeat > 1), plus a
summary.csv. Existing outputs are never overwritten. If FEDSIM_OUT_ROOT is
set, relative --out paths resolve under it.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        println!("{USAGE}");
        return Err(Error::InvalidArgument("no subcommand given".into()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "run" => cmd_run(rest),
        "sweep" => cmd_sweep(rest),
        "validate" => cmd_validate(rest),
        "spectrum" => cmd_spectrum(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown subcommand `{other}`; see `fedsim help`"
        ))),
    }
}

/// Minimal flag parser: positional paths plus `--key value` and boolean
/// `--flag` options.
struct Flags {
    positional: Vec<String>,
    options: Vec<(String, Option<String>)>,
}

impl Flags {
    fn parse(args: &[String], value_flags: &[&str], bool_flags: &[&str]) -> Result<Flags> {
        let mut positional = Vec::new();
        let mut options = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            if let Some(name) = arg.strip_prefix("--") {
                if bool_flags.contains(&name) {
                    options.push((name.to_string(), None));
                } else if value_flags.contains(&name) {
                    i += 1;
                    let value = args.get(i).ok_or_else(|| {
                        Error::InvalidArgument(format!("--{name} needs a value"))
                    })?;
                    options.push((name.to_string(), Some(value.clone())));
                } else {
                    return Err(Error::InvalidArgument(format!("unknown flag --{name}")));
                }
            } else {
                positional.push(arg.clone());
            }
            i += 1;
        }
        Ok(Flags { positional, options })
    }

    fn value(&self, name: &str) -> Option<&str> {
        self.options
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn flag(&self, name: &str) -> bool {
        self.options.iter().any(|(n, v)| n == name && v.is_none())
    }

    fn parse_usize(&self, name: &str) -> Result<Option<usize>> {
        match self.value(name) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("--{name} expects an integer"))),
            None => Ok(None),
        }
    }
}

fn load_raw(path: &str) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config `{path}`: {e}")))?;
    RawConfig::parse(&text)
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn with_thread_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(f)
        }
        _ => f(),
    }
}

/// Execute `repeats` runs of one config into `dir`, returning
/// `(repeat, seed, final_f1)` rows for the summary.
fn execute_runs(
    config: &ExperimentConfig,
    repeats: usize,
    dir: &Path,
    flags: EmitFlags,
    written: &mut Vec<PathBuf>,
) -> Result<Vec<(usize, u64, f64)>> {
    let mut rows = Vec::with_capacity(repeats);
    let mut runs = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let mut derived = config.clone();
        derived.seed = config.seed + i as u64;
        let (report, final_params) = run_experiment_full(&derived)?;
        for r in &report.rounds {
            eprintln!(
                "round {}: f1 {:.4} acc {:.4} loss {:.4} time {:.3}s",
                r.round, r.test_macro_f1, r.test_accuracy, r.mean_train_loss, r.wall_time_secs
            );
        }
        let model_json = if flags.model_json {
            Some(
                ModelFile {
                    round: derived.rounds.saturating_sub(1),
                    model: derived.model.clone(),
                    params: final_params,
                }
                .to_json()?,
            )
        } else {
            None
        };
        written.extend(write_run_outputs(dir, &report, model_json, flags, i, repeats)?);
        println!("repeat {i} (seed {}): final_f1 {}", derived.seed, report.final_f1);
        rows.push((i, derived.seed, report.final_f1));
        runs.push(report);
    }
    let aggregate = RepeatedReport::from_runs(runs);
    println!(
        "final_f1 mean {} spread {} over {} repeat(s)",
        aggregate.mean_final_f1, aggregate.spread_final_f1, repeats
    );
    Ok(rows)
}

/// Everything one `run` invocation needs: the config, where outputs go, how
/// many derived-seed repeats, and which files to emit.
struct RunManifest {
    config_path: String,
    out_dir: PathBuf,
    repeats: usize,
    threads: Option<usize>,
    seed_override: Option<u64>,
    emit: EmitFlags,
}

impl RunManifest {
    fn from_flags(flags: &Flags) -> Result<Self> {
        let [config_path] = flags.positional.as_slice() else {
            return Err(Error::InvalidArgument(
                "run expects exactly one config path".into(),
            ));
        };
        let out = flags
            .value("out")
            .ok_or_else(|| Error::InvalidArgument("run needs --out <dir>".into()))?;
        Ok(RunManifest {
            config_path: config_path.clone(),
            out_dir: resolve_out_dir(Path::new(out)),
            repeats: flags.parse_usize("repeat")?.unwrap_or(1).max(1),
            threads: flags.parse_usize("threads")?,
            seed_override: flags.parse_usize("seed")?.map(|s| s as u64),
            emit: EmitFlags {
                report_json: !flags.flag("no-report"),
                rounds_csv: !flags.flag("no-rounds-csv"),
                spectrum_csv: flags.flag("emit-spectrum"),
                model_json: flags.flag("emit-model"),
            },
        })
    }
}

fn cmd_run(args: &[String]) -> Result<()> {
    let flags = Flags::parse(
        args,
        &["out", "seed", "repeat", "threads"],
        &["emit-spectrum", "emit-model", "no-report", "no-rounds-csv"],
    )?;
    let manifest = RunManifest::from_flags(&flags)?;

    let raw = load_raw(&manifest.config_path)?;
    let (mut config, warnings) = raw.build()?;
    print_warnings(&warnings);
    if let Some(seed) = manifest.seed_override {
        config.seed = seed;
    }
    if manifest.emit.spectrum_csv && !config.record_spectra {
        config.record_spectra = true;
        config.validate()?;
    }

    std::fs::create_dir_all(&manifest.out_dir)?;
    check_no_overwrite(&planned_files(&manifest.out_dir, manifest.emit, manifest.repeats))?;

    let mut written = Vec::new();
    let result = with_thread_pool(manifest.threads, || {
        execute_runs(
            &config,
            manifest.repeats,
            &manifest.out_dir,
            manifest.emit,
            &mut written,
        )
    });
    let rows = match result {
        Ok(rows) => rows,
        Err(e) => {
            if !written.is_empty() {
                eprintln!("partial outputs written:");
                for f in &written {
                    eprintln!("  {}", f.display());
                }
            }
            return Err(e);
        }
    };

    let mut summary = String::from("repeat,seed,final_f1\n");
    for (i, seed, f1) in &rows {
        summary.push_str(&format!("{i},{seed},{f1}\n"));
    }
    std::fs::write(manifest.out_dir.join("summary.csv"), summary)?;
    Ok(())
}

fn sanitize_component(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '=') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_sweep(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["out", "seed", "repeat", "threads", "axis", "values"], &[])?;
    let [config_path] = flags.positional.as_slice() else {
        return Err(Error::InvalidArgument(
            "sweep expects exactly one config path".into(),
        ));
    };
    let out = flags
        .value("out")
        .ok_or_else(|| Error::InvalidArgument("sweep needs --out <dir>".into()))?;
    let axis = flags
        .value("axis")
        .ok_or_else(|| Error::InvalidArgument("sweep needs --axis <section.key>".into()))?
        .to_string();
    let values: Vec<String> = flags
        .value("values")
        .ok_or_else(|| Error::InvalidArgument("sweep needs --values <v1,v2,..>".into()))?
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep got an empty value list".into()));
    }
    let repeats = flags.parse_usize("repeat")?.unwrap_or(1).max(1);
    let threads = flags.parse_usize("threads")?;
    let seed_override = flags.parse_usize("seed")?;

    let base = load_raw(config_path)?;
    // Build every point up front so config errors surface before compute.
    let mut points = Vec::with_capacity(values.len());
    for value in &values {
        let mut raw = base.clone();
        raw.set(&axis, value)?;
        let (mut config, warnings) = raw.build()?;
        print_warnings(&warnings);
        if let Some(seed) = seed_override {
            config.seed = seed as u64;
        }
        points.push((value.clone(), config));
    }

    let root = resolve_out_dir(Path::new(out));
    std::fs::create_dir_all(&root)?;
    let emit = EmitFlags::default();
    let summary_path = root.join("summary.csv");
    if summary_path.exists() {
        return Err(Error::InvalidArgument(format!(
            "refusing to overwrite existing output `{}`; choose a fresh --out directory",
            summary_path.display()
        )));
    }
    let mut dirs = Vec::with_capacity(points.len());
    for (value, _) in &points {
        let dir = root.join(sanitize_component(&format!("{axis}={value}")));
        std::fs::create_dir_all(&dir)?;
        let mut planned = planned_files(&dir, emit, repeats);
        planned.pop(); // per-point summary.csv is not written by sweeps
        check_no_overwrite(&planned)?;
        dirs.push(dir);
    }

    let mut summary = String::from("axis,value,repeat,seed,final_f1\n");
    let mut written = Vec::new();
    for ((value, config), dir) in points.iter().zip(&dirs) {
        println!("sweep {axis} = {value}");
        let rows = with_thread_pool(threads, || {
            execute_runs(config, repeats, dir, emit, &mut written)
        })?;
        for (i, seed, f1) in rows {
            summary.push_str(&format!("{axis},{value},{i},{seed},{f1}\n"));
        }
    }
    std::fs::write(summary_path, summary)?;
    Ok(())
}

fn cmd_validate(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &[], &[])?;
    let [config_path] = flags.positional.as_slice() else {
        return Err(Error::InvalidArgument(
            "validate expects exactly one config path".into(),
        ));
    };
    let raw = load_raw(config_path)?;
    let (config, warnings) = raw.build()?;
    print_warnings(&warnings);
    println!("config OK");
    println!("{}", serde_json::to_string_pretty(&config).map_err(Error::from)?);
    Ok(())
}

fn cmd_spectrum(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["model", "config", "out", "head"], &[])?;
    let model_path = flags
        .value("model")
        .ok_or_else(|| Error::InvalidArgument("spectrum needs --model <model.json>".into()))?;
    let config_path = flags
        .value("config")
        .ok_or_else(|| Error::InvalidArgument("spectrum needs --config <config>".into()))?;
    let out = flags.value("out").unwrap_or(".");

    let model_text = std::fs::read_to_string(model_path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read model `{model_path}`: {e}")))?;
    let model = ModelFile::from_json(&model_text)?;
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config `{config_path}`: {e}")))?;
    let (config, warnings) = parse_config(&config_text)?;
    print_warnings(&warnings);

    // Rebuild the clean test set exactly as the run saw it.
    let (_, test, _) = build_environment(&config)?;
    let record = representation_spectrum(&model.params, &model.model, test.features(), model.round)?;
    let head = flags
        .parse_usize("head")?
        .unwrap_or(DEFAULT_COLLAPSE_HEAD)
        .clamp(1, record.dim());
    let gap = collapse_gap(&record, head);

    let dir = resolve_out_dir(Path::new(out));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("spectrum.csv");
    check_no_overwrite(std::slice::from_ref(&path))?;
    std::fs::write(&path, spectra_csv(std::slice::from_ref(&record)))?;
    println!(
        "spectrum of round {}: {} singular values, collapse gap (head {head}) {}",
        model.round,
        record.dim(),
        gap
    );
    println!("wrote {}", path.display());
    Ok(())
}
