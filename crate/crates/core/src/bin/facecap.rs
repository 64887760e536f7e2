use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use facecap::config::{ConfigError, PipelineConfig, ProfileConfig};
use facecap::dataset::{export_training_manifest, stats_report, DatasetError, DatasetManifest, ExportMode};
use facecap::pipeline::{filter_records, make_backend, read_records, run, PipelineError, RunOptions};
use facecap::schema::SourceDataset;

#[derive(Parser)]
#[command(name = "facecap", version, about = "Caption face images from extracted attribute records")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Every caption of an image on one line.
    All,
    /// One caption per image, sampled deterministically.
    One,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the dataset filter and write one verdict per record.
    Filter {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        profile: Option<SourceDataset>,
        /// Verdict JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full captioning pipeline.
    Caption {
        #[arg(long)]
        records: Option<PathBuf>,
        /// Manifest directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the offline template fuser instead of an LLM service.
        #[arg(long)]
        mock_llm: bool,
        #[arg(long)]
        captions_per_image: Option<usize>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        profile: Option<SourceDataset>,
        /// Continue an interrupted run in the same output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many new entries.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Write training pairs from a manifest.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Also write the attribute co-occurrence table as CSV.
        #[arg(long)]
        joint_csv: Option<PathBuf>,
    },
    /// Check a configuration file and print its hash.
    ValidateConfig,
}

enum Failure {
    Config(ConfigError),
    Other { kind: &'static str, message: String },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => Failure::Config(c),
            other => Failure::Other {
                kind: other.kind(),
                message: other.to_string(),
            },
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::Other {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Other {
        kind: "io_error",
        message: format!("{}: {e}", path.display()),
    }
}

fn missing(flag: &str, key: &str) -> Failure {
    Failure::Config(ConfigError {
        path: key.to_string(),
        message: format!("pass {flag} or set {key} in the config"),
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, ConfigError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Filter { records, profile, out } => {
            if let Some(p) = profile {
                config.profile = ProfileConfig::named(p);
            }
            let records = records
                .or(config.paths.records.clone())
                .ok_or_else(|| missing("--records", "paths.records"))?;
            let input = read_records(&records)?;
            let (verdicts, counts) = filter_records(&input, &config.profile.resolve());
            let body: String = verdicts
                .iter()
                .map(|v| serde_json::to_string(v).expect("json") + "\n")
                .collect();
            fs::write(&out, body).map_err(|e| io_failure(&out, e))?;
            let counts: serde_json::Map<_, _> = counts
                .iter()
                .map(|(r, c)| (r.as_str().to_string(), json!(c)))
                .collect();
            print_json(&json!({ "input_count": input.len(), "counts": counts }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Caption {
            records,
            out,
            seed,
            mock_llm,
            captions_per_image,
            concurrency,
            profile,
            resume,
            limit,
        } => {
            if let Some(s) = seed {
                config.global_seed = s;
            }
            if mock_llm {
                config.fusion.mock = true;
            }
            if let Some(n) = captions_per_image {
                config.fusion.captions_per_image = n;
            }
            if let Some(c) = concurrency {
                config.concurrency = c;
            }
            if let Some(p) = profile {
                config.profile = ProfileConfig::named(p);
            }
            config.validate()?;
            let records = records
                .or(config.paths.records.clone())
                .ok_or_else(|| missing("--records", "paths.records"))?;
            let out = out
                .or(config.paths.out.clone())
                .ok_or_else(|| missing("--out", "paths.out"))?;
            let backend = make_backend(&config);
            let summary = run(&config, &records, &out, &RunOptions { resume, limit }, backend.as_ref())?;
            print_json(&serde_json::to_value(&summary).expect("json"));
            Ok(if summary.is_partial() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Export { manifest, mode, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let mode = match mode {
                Mode::All => ExportMode::AllCaptions,
                Mode::One => ExportMode::OnePerImage,
            };
            let n = export_training_manifest(&m, mode, &out)?;
            print_json(&json!({ "exported": n, "out": out }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats {
            manifest,
            format,
            joint_csv,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let report = stats_report(&m, &config.debias.report_pairs, &config.derive.age_categories)?;
            if let Some(path) = joint_csv {
                fs::write(&path, report.cooccurrence.joint_csv()).map_err(|e| io_failure(&path, e))?;
            }
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => print_json(&serde_json::to_value(&report).expect("json")),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig => {
            let path = cli.config.ok_or_else(|| missing("--config", "<file>"))?;
            print_json(&json!({ "ok": true, "config": path, "config_hash": config.config_hash() }));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!(
                "{}",
                json!({ "error": "config_error", "path": e.path, "message": e.message })
            );
            ExitCode::from(2)
        }
        Err(Failure::Other { kind, message }) => {
            eprintln!("{}", json!({ "error": kind, "message": message }));
            ExitCode::from(1)
        }
    }
}
