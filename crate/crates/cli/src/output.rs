//! Output-directory management: naming, the no-overwrite rule, and the
//! `FEDSIM_OUT_ROOT` environment override.

use std::path::{Path, PathBuf};

use fedsim::diagnostics::spectra_csv;
use fedsim::engine::ExperimentReport;
use fedsim::error::{Error, Result};

/// Emit switches: which files a run writes.
#[derive(Clone, Copy, Debug)]
pub struct EmitFlags {
    pub report_json: bool,
    pub rounds_csv: bool,
    pub spectrum_csv: bool,
    pub model_json: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            report_json: true,
            rounds_csv: true,
            spectrum_csv: false,
            model_json: false,
        }
    }
}

/// Resolve an output directory against `FEDSIM_OUT_ROOT` when the given path
/// is relative and the variable is set.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os("FEDSIM_OUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

/// File name with a `_i` suffix for repeated runs; repeat counts of one keep
/// the plain name.
pub fn repeat_name(base: &str, ext: &str, repeat_index: usize, repeats: usize) -> String {
    if repeats == 1 {
        format!("{base}.{ext}")
    } else {
        format!("{base}_{repeat_index}.{ext}")
    }
}

/// All files a run will write, in write order.
pub fn planned_files(dir: &Path, flags: EmitFlags, repeats: usize) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for i in 0..repeats {
        if flags.report_json {
            files.push(dir.join(repeat_name("report", "json", i, repeats)));
        }
        if flags.rounds_csv {
            files.push(dir.join(repeat_name("rounds", "csv", i, repeats)));
        }
        if flags.spectrum_csv {
            files.push(dir.join(repeat_name("spectrum", "csv", i, repeats)));
        }
        if flags.model_json {
            files.push(dir.join(repeat_name("model", "json", i, repeats)));
        }
    }
    files.push(dir.join("summary.csv"));
    files
}

/// Refuse to overwrite any existing planned output.
pub fn check_no_overwrite(files: &[PathBuf]) -> Result<()> {
    for f in files {
        if f.exists() {
            return Err(Error::InvalidArgument(format!(
                "refusing to overwrite existing output `{}`; choose a fresh --out directory",
                f.display()
            )));
        }
    }
    Ok(())
}

/// Write one repeat's outputs; returns the list of files written.
pub fn write_run_outputs(
    dir: &Path,
    report: &ExperimentReport,
    final_params_json: Option<String>,
    flags: EmitFlags,
    repeat_index: usize,
    repeats: usize,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if flags.report_json {
        let path = dir.join(repeat_name("report", "json", repeat_index, repeats));
        std::fs::write(&path, report.to_json()?)?;
        written.push(path);
    }
    if flags.rounds_csv {
        let path = dir.join(repeat_name("rounds", "csv", repeat_index, repeats));
        std::fs::write(&path, report.rounds_csv())?;
        written.push(path);
    }
    if flags.spectrum_csv {
        let spectra = report.spectra.as_deref().unwrap_or(&[]);
        let path = dir.join(repeat_name("spectrum", "csv", repeat_index, repeats));
        std::fs::write(&path, spectra_csv(spectra))?;
        written.push(path);
    }
    if flags.model_json {
        if let Some(json) = final_params_json {
            let path = dir.join(repeat_name("model", "json", repeat_index, repeats));
            std::fs::write(&path, json)?;
            written.push(path);
        }
    }
    Ok(written)
}
