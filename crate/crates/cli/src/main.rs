//! Command-line front end: dataset canonicalization, synthetic scene
//! generation, evaluation runs, viewpoint analytics, and leaderboard
//! reports.
//!
//! Exit codes: 0 success, 1 invalid arguments or config, 2 unreadable or
//! inconsistent data, 3 prediction-source failure, 4 internal error.

use clap::{Parser, Subcommand, ValueEnum};
use poseval_core::datasets::adapt::{adapt_3dpw, adapt_gpa, adapt_h36m, adapt_surreal, AdaptError};
use poseval_core::datasets::archive::write_archive_file;
use poseval_core::datasets::synth::{synth_generate, SynthSpec};
use poseval_core::datasets::{FilterReport, DEFAULT_SAMPLE_FRAMES_MM};
use poseval_core::harness::config::parse_config;
use poseval_core::harness::report::{
    build_leaderboard, render_csv, render_json, render_markdown, ResultsBundle,
};
use poseval_core::harness::{
    run_evaluation, train_grid_from_archive, viewpoint_analytics, EvalReport, HarnessError,
    SampleRecord,
};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "poseval",
    version,
    about = "Canonicalize 3D pose datasets and evaluate lifting models across them"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Markdown,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a raw dataset tree into a canonical archive
    Preprocess {
        /// One of: h36m, gpa, 3dpw, surreal
        dataset: String,
        /// Root of the raw dataset tree
        #[arg(long)]
        raw: PathBuf,
        /// Output archive path
        #[arg(long)]
        out: PathBuf,
        /// Keep a frame only once the root moved this far since the last
        /// kept frame
        #[arg(long, default_value_t = DEFAULT_SAMPLE_FRAMES_MM)]
        threshold_mm: f64,
    },
    /// Generate a synthetic archive from a YAML scene spec
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the evaluation described by a config file
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for result files
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Viewpoint analytics from saved per-sample errors
    Analyze {
        /// Archive whose train split defines the viewpoint distribution
        #[arg(long)]
        train: PathBuf,
        /// Per-sample error records written by `evaluate`
        #[arg(long)]
        errors: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_train: u64,
        #[arg(long, default_value_t = 5)]
        min_test: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Merge result bundles into a leaderboard
    Report {
        /// Result bundle JSON files (one per model)
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        /// Annotate every cell with its % change against this model's row
        #[arg(long)]
        baseline: Option<String>,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct AppError {
    code: u8,
    message: String,
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn validation(e: impl fmt::Display) -> AppError {
    AppError {
        code: 1,
        message: e.to_string(),
    }
}

fn data(e: impl fmt::Display) -> AppError {
    AppError {
        code: 2,
        message: e.to_string(),
    }
}

fn from_harness(e: HarnessError) -> AppError {
    let code = match &e {
        HarnessError::Config(_) => 1,
        HarnessError::Load(_) | HarnessError::Archive(_) | HarnessError::Normalize(_) => 2,
        HarnessError::Predict(_) => 3,
        HarnessError::Metric(_) | HarnessError::Internal(_) => 4,
    };
    AppError {
        code,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Cmd::Preprocess {
            dataset,
            raw,
            out,
            threshold_mm,
        } => preprocess(&dataset, &raw, &out, threshold_mm),
        Cmd::Synth { spec, out } => synth(&spec, &out),
        Cmd::Evaluate { config, out } => evaluate(&config, &out),
        Cmd::Analyze {
            train,
            errors,
            min_train,
            min_test,
            out,
        } => analyze(&train, &errors, min_train, min_test, &out),
        Cmd::Report {
            inputs,
            format,
            baseline,
            out,
        } => report(&inputs, format, baseline.as_deref(), out.as_deref()),
    }
}

fn preprocess(dataset: &str, raw: &Path, out: &Path, threshold_mm: f64) -> Result<(), AppError> {
    if !(threshold_mm.is_finite() && threshold_mm >= 0.0) {
        return Err(validation("--threshold-mm must be >= 0"));
    }
    let adapt: fn(&Path, f64) -> Result<_, AdaptError> = match dataset {
        "h36m" => adapt_h36m,
        "gpa" => adapt_gpa,
        "3dpw" => adapt_3dpw,
        "surreal" => adapt_surreal,
        other => {
            return Err(validation(format!(
                "unknown dataset {other:?}; expected h36m, gpa, 3dpw or surreal"
            )))
        }
    };
    let (archive, filter) = adapt(raw, threshold_mm).map_err(data)?;
    write_archive_file(&archive, out).map_err(data)?;
    print_filter_summary(&archive.manifest.dataset, &filter);
    let ranges = &archive.manifest.split_ranges;
    println!(
        "wrote {} ({} train / {} test)",
        out.display(),
        ranges.train_len(),
        ranges.test_len()
    );
    Ok(())
}

fn print_filter_summary(dataset: &str, filter: &FilterReport) {
    println!(
        "{dataset}: kept {} of {} frames (dropped: {} non-finite, {} behind camera, {} bone-length)",
        filter.kept,
        filter.input_count,
        filter.non_finite,
        filter.behind_camera,
        filter.bone_length
    );
}

fn synth(spec_path: &Path, out: &Path) -> Result<(), AppError> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| data(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SynthSpec = serde_yaml::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", spec_path.display())))?;
    let generated = synth_generate(&spec).map_err(validation)?;
    write_archive_file(&generated.archive, out).map_err(data)?;
    let ranges = &generated.archive.manifest.split_ranges;
    println!(
        "wrote {} ({} train / {} test)",
        out.display(),
        ranges.train_len(),
        ranges.test_len()
    );
    Ok(())
}

fn evaluate(config_path: &Path, out: &Path) -> Result<(), AppError> {
    let config = parse_config(config_path).map_err(validation)?;
    let report = run_evaluation(&config).map_err(from_harness)?;
    fs::create_dir_all(out).map_err(data)?;
    write_eval_outputs(config.joint_set().joint_names(), &report, out)?;

    for d in &report.datasets {
        let p1 = &d.result.protocol1;
        let p2 = &d.result.protocol2;
        println!(
            "{}: protocol1 {:.2} mm, protocol2 {:.2} mm over {} samples ({} alignment-degenerate)",
            d.dataset, p1.mean_mm, p2.mean_mm, p1.sample_count, p2.degenerate_count
        );
        if let Some(c) = &d.correlation {
            println!(
                "{}: train-views vs error rho {:.2} (p {:.3e}, sigma {:.2}, {} bins)",
                d.dataset, c.rho, c.p_value, c.sigma, c.num_bins
            );
        }
    }
    println!("results in {}", out.display());
    Ok(())
}

fn write_eval_outputs(
    joint_names: &[String],
    report: &EvalReport,
    out: &Path,
) -> Result<(), AppError> {
    let pretty = |v: &ResultsBundle| serde_json::to_string_pretty(v).expect("bundle serializes");
    fs::write(
        out.join("results_p1.json"),
        pretty(&report.bundle(1)) + "\n",
    )
    .map_err(data)?;
    fs::write(
        out.join("results_p2.json"),
        pretty(&report.bundle(2)) + "\n",
    )
    .map_err(data)?;

    let mut per_joint = String::from("joint,p1_mm,p2_mm\n");
    for (name, row) in joint_names.iter().zip(&report.per_joint) {
        per_joint.push_str(&format!("{name},{:.9},{:.9}\n", row[0], row[1]));
    }
    fs::write(out.join("per_joint.csv"), per_joint).map_err(data)?;

    for d in &report.datasets {
        let records = serde_json::to_string_pretty(&d.samples).expect("records serialize");
        fs::write(
            out.join(format!("errors_{}.json", d.dataset)),
            records + "\n",
        )
        .map_err(data)?;
        if let Some(c) = &d.correlation {
            let json = serde_json::to_string_pretty(c).expect("correlation serializes");
            fs::write(
                out.join(format!("correlation_{}.json", d.dataset)),
                json + "\n",
            )
            .map_err(data)?;
        }
        if let Some(csv) = &d.contour_csv {
            fs::write(out.join(format!("contour_{}.csv", d.dataset)), csv).map_err(data)?;
        }
    }
    Ok(())
}

fn analyze(
    train: &Path,
    errors: &Path,
    min_train: u64,
    min_test: u64,
    out: &Path,
) -> Result<(), AppError> {
    let text = fs::read_to_string(errors)
        .map_err(|e| data(format!("cannot read {}: {e}", errors.display())))?;
    let records: Vec<SampleRecord> =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", errors.display())))?;
    if records.is_empty() {
        return Err(data(format!("{}: no error records", errors.display())));
    }
    let grid = train_grid_from_archive(train).map_err(from_harness)?;
    let (correlation, contour) =
        viewpoint_analytics(&grid, &records, min_train, min_test).map_err(from_harness)?;
    fs::create_dir_all(out).map_err(data)?;
    fs::write(out.join("contour.csv"), &contour).map_err(data)?;
    match correlation {
        Some(c) => {
            let json = serde_json::to_string_pretty(&c).expect("correlation serializes");
            fs::write(out.join("correlation.json"), json + "\n").map_err(data)?;
            println!(
                "rho {:.2} (p {:.3e}, sigma {:.2}) over {} bins",
                c.rho, c.p_value, c.sigma, c.num_bins
            );
        }
        None => println!(
            "too few jointly-populated bins for a correlation (need 3 with train >= {min_train}, test >= {min_test})"
        ),
    }
    println!("results in {}", out.display());
    Ok(())
}

fn report(
    inputs: &[PathBuf],
    format: Format,
    baseline: Option<&str>,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let mut bundles = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
        let bundle: ResultsBundle =
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        bundles.push(bundle);
    }
    let rows = build_leaderboard(&bundles).map_err(validation)?;
    let text = match format {
        Format::Markdown => render_markdown(&rows, baseline).map_err(validation)?,
        Format::Csv => render_csv(&rows),
        Format::Json => render_json(&rows),
    };
    match out {
        Some(path) => fs::write(path, text).map_err(data)?,
        None => print!("{text}"),
    }
    Ok(())
}
