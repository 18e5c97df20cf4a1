use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gds_scan::classify::IsaMode;
use gds_scan::metrics::MnemonicWeighting;
use gds_scan::report::{run_scan, summary, Format, ScanConfig};
use gds_scan::scan::{scan_file, ScanOptions};

#[derive(Parser)]
#[command(name = "gds-scan", about = "Count vector-register instructions in x86-64 packages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a directory of .deb files (or, with --tree, of loose files).
    Scan {
        corpus_root: PathBuf,
        /// Directory or URL holding -dbgsym packages.
        #[arg(long)]
        debug_source: Option<String>,
        /// Packages index supplying package metadata.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "both")]
        format: Format,
        #[arg(long, default_value = "encoding")]
        isa_mode: IsaMode,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long, default_value = "corpus-count")]
        mnemonic_weighting: MnemonicWeighting,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = gds_scan::corpus::DEFAULT_REQUEST_DELAY_MS)]
        request_delay_ms: u64,
        /// Scan plain directory trees; every root counts as one package.
        #[arg(long)]
        tree: bool,
        /// Further roots for --tree.
        #[arg(long = "also", requires = "tree")]
        extra_roots: Vec<PathBuf>,
    },
    /// Scan one binary file.
    ScanBinary {
        file: PathBuf,
        /// List every target instruction.
        #[arg(long)]
        hits: bool,
        /// Scan even if the file fails the binary-file rules.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value = "encoding")]
        isa_mode: IsaMode,
    },
    Version,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Scan {
            corpus_root,
            debug_source,
            index,
            out,
            format,
            isa_mode,
            top_k,
            mnemonic_weighting,
            jobs,
            request_delay_ms,
            tree,
            extra_roots,
        } => {
            let mut config = ScanConfig::new(corpus_root, out);
            config.debug_source = debug_source;
            config.index = index;
            config.format = format;
            config.isa_mode = isa_mode;
            config.top_k = top_k;
            config.mnemonic_weighting = mnemonic_weighting;
            config.jobs = jobs.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            config.request_delay_ms = request_delay_ms;
            config.tree = tree;
            config.extra_roots = extra_roots;
            match run_scan(&config) {
                Ok(outcome) => {
                    emit(&summary(&outcome.report, top_k, mnemonic_weighting));
                    for warning in &outcome.warnings {
                        log::warn!("{warning}");
                    }
                    if !outcome.warnings.is_empty() {
                        eprintln!("{} warnings; see manifest.json", outcome.warnings.len());
                    }
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::ScanBinary {
            file,
            hits,
            force,
            isa_mode,
        } => {
            let options = ScanOptions {
                isa_mode,
                keep_hits: hits,
            };
            match scan_file(&file, force, options) {
                Ok(scan) => {
                    let mut doc = serde_json::json!({ "report": scan.report });
                    if hits {
                        doc["hits"] = serde_json::to_value(&scan.hits).expect("hits serialize");
                    }
                    emit(&format!("{}\n", serde_json::to_string_pretty(&doc).expect("report serializes")));
                    for warning in &scan.warnings {
                        eprintln!("warning: {warning}");
                    }
                    ExitCode::from(if scan.warnings.is_empty() { 0 } else { 2 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Version => {
            emit(&format!("{} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")));
            ExitCode::SUCCESS
        }
    }
}

/// Writes to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}
