//! Command-line interface.

use crate::config::{parse_override, GenerationConfig, SpeciesMix};
use crate::error::{PipelineError, Result};
use crate::filter::run_filter_stage;
use crate::generate::{generate, rebuild_edges, GenerateOptions, CONFIG_SNAPSHOT, EDGES_DIR, REPORT_DIR};
use crate::inpaint::{run_inpaint_stage, InpaintClient};
use crate::manifest::DatasetManifest;
use crate::preview::contact_sheet;
use crate::stats::{dataset_stats, default_manifest};
use crate::validate::validate_dataset;
use clap::{Args, Parser, Subcommand};
use leafgen_core::edges::EdgeMode;
use leafgen_core::metrics::DeviationMetric;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "leafgen", version, about = "Synthetic leaf-on-millimeter-paper dataset pipeline")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set render.gamma_max=1.8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More logging (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render leaves, masks, edge maps and annotations.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_leaves: Option<usize>,
        #[arg(long)]
        passes: Option<usize>,
        /// `512` or `640x480`.
        #[arg(long)]
        resolution: Option<String>,
        #[arg(long)]
        gamma_min: Option<f64>,
        #[arg(long)]
        gamma_max: Option<f64>,
        /// e.g. `beech=0.5,oak=0.5`.
        #[arg(long)]
        species_mix: Option<String>,
        /// Stop after this many leaves, leaving a resumable partial run.
        #[arg(long, hide = true)]
        limit: Option<usize>,
    },
    /// Recompute edge maps from stored images and masks.
    Edges {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<EdgeMode>,
        /// Destination directory inside the dataset.
        #[arg(long, default_value = EDGES_DIR)]
        dest: String,
    },
    /// Send datapoints through the inpainting service.
    Inpaint {
        #[command(flatten)]
        common: Common,
        /// `http(s)://host/path` or `mock:identity|perturb|flaky:N|down`.
        #[arg(long)]
        endpoint: Option<String>,
        /// In-flight request cap.
        #[arg(long)]
        max_in_flight: Option<usize>,
        #[arg(long)]
        retries: Option<u32>,
        #[arg(long)]
        timeout_secs: Option<f64>,
    },
    /// Drop datapoints whose predicted mask deviates from the ground truth.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        deviation_metric: Option<DeviationMetric>,
        /// `baseline` or a directory of `<id>.png` masks.
        #[arg(long)]
        predictions: Option<String>,
    },
    /// Print dataset statistics as JSON.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Manifest file to summarize (default: the most processed one).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Re-check manifest invariants and the mask/area consistency rule.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Render a contact sheet of the first N datapoints.
    Preview {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 160)]
        tile: usize,
        /// Output PNG (default: report/preview.png in the dataset).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Edges { common, .. }
            | Command::Inpaint { common, .. }
            | Command::Filter { common, .. }
            | Command::Stats { common, .. }
            | Command::Validate { common }
            | Command::Preview { common, .. } => common,
        }
    }
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || PipelineError::Usage(format!("resolution `{s}` is not N or WxH"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

/// Effective configuration: defaults, then the config file (for stages after
/// `generate`, the dataset's snapshot when no file is given), then `--set`,
/// then flags.
fn load_config(cli: &Cli) -> Result<GenerationConfig> {
    let overrides = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let common = cli.command.common();
    let snapshot = match (&cli.config, &cli.command, &common.out) {
        (None, Command::Generate { .. }, _) => None,
        (None, _, Some(out)) => Some(out.join(CONFIG_SNAPSHOT)).filter(|p| p.is_file()),
        _ => None,
    };
    let file = cli.config.clone().or(snapshot);
    let mut cfg = GenerationConfig::load(file.as_deref(), &overrides)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::Generate { seed, n_leaves, passes, resolution, gamma_min, gamma_max, species_mix, .. } => {
            if let Some(s) = seed {
                cfg.master_seed = *s;
            }
            if let Some(n) = n_leaves {
                cfg.n_leaves = *n;
            }
            if let Some(p) = passes {
                cfg.passes_per_leaf = *p;
            }
            if let Some(r) = resolution {
                (cfg.render.width, cfg.render.height) = parse_resolution(r)?;
            }
            if let Some(g) = gamma_min {
                cfg.render.gamma_min = *g;
            }
            if let Some(g) = gamma_max {
                cfg.render.gamma_max = *g;
            }
            if let Some(m) = species_mix {
                cfg.species_mix = SpeciesMix::parse(m)?;
            }
        }
        Command::Edges { mode: Some(m), .. } => cfg.edges.mode = *m,
        Command::Inpaint { endpoint, max_in_flight, retries, timeout_secs, .. } => {
            if let Some(e) = endpoint {
                cfg.inpaint.endpoint = e.clone();
            }
            if let Some(n) = max_in_flight {
                cfg.inpaint.max_in_flight = *n;
            }
            if let Some(r) = retries {
                cfg.inpaint.retries = *r;
            }
            if let Some(t) = timeout_secs {
                cfg.inpaint.timeout_secs = *t;
            }
        }
        Command::Filter { threshold, deviation_metric, predictions, .. } => {
            if let Some(t) = threshold {
                cfg.filter.threshold = *t;
            }
            if let Some(m) = deviation_metric {
                cfg.filter.deviation_metric = *m;
            }
            if let Some(p) = predictions {
                cfg.filter.predictions = p.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out).map_err(|e| PipelineError::io("<stdout>", e))
}

fn require_dataset(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::Usage(format!("dataset directory {} does not exist", dir.display())))
    }
}

/// Runs a parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Generate { limit, .. } => {
            let s = generate(&cfg, &GenerateOptions { limit: *limit })?;
            log::info!(
                "{} leaves rendered, {} resumed, {} failed",
                s.rendered_leaves,
                s.resumed_leaves,
                s.failures.len()
            );
            if !s.failures.is_empty() {
                return Err(PipelineError::GenerationFailed(format!(
                    "{} leaves failed; see {}",
                    s.failures.len(),
                    out.join(crate::generate::ERRORS_LOG).display()
                )));
            }
            Ok(())
        }
        Command::Edges { dest, .. } => {
            require_dataset(&out)?;
            if dest == EDGES_DIR {
                let snap = GenerationConfig::load(Some(&out.join(CONFIG_SNAPSHOT)), &[])?;
                if snap.edges != cfg.edges {
                    return Err(PipelineError::Usage(format!(
                        "edge settings differ from the dataset's; write them elsewhere with --dest (not `{EDGES_DIR}`)"
                    )));
                }
            }
            let n = rebuild_edges(&out, &cfg.edges, dest, cfg.jobs)?;
            log::info!("wrote {n} edge maps to {}", out.join(dest).display());
            Ok(())
        }
        Command::Inpaint { .. } => {
            require_dataset(&out)?;
            let client = InpaintClient::from_config(&cfg.inpaint)?;
            let (_, report) = run_inpaint_stage(&out, &cfg.inpaint, &client)?;
            log::info!("inpainted {} of {} datapoints via {}", report.inpainted, report.entries, report.backend);
            if report.failed > 0 {
                log::warn!("{} datapoints kept their rendered images; see {}/inpaint_report.json", report.failed, REPORT_DIR);
            }
            Ok(())
        }
        Command::Filter { .. } => {
            require_dataset(&out)?;
            let o = run_filter_stage(&out, &cfg.filter)?;
            let r = &o.report;
            log::info!(
                "threshold {}: kept {}, rejected {}, unscored {} (rejection rate {:.3})",
                r.threshold,
                r.kept,
                r.rejected,
                r.unscored,
                r.rejection_rate
            );
            Ok(())
        }
        Command::Stats { manifest, .. } => {
            require_dataset(&out)?;
            let path = manifest.as_ref().map(|m| if m.is_absolute() { m.clone() } else { out.join(m) }).unwrap_or_else(|| default_manifest(&out));
            print_json(&dataset_stats(&path)?)
        }
        Command::Validate { .. } => {
            require_dataset(&out)?;
            let r = validate_dataset(&out)?;
            print_json(&r)?;
            if r.is_clean() {
                Ok(())
            } else {
                Err(PipelineError::Validation(format!("{} invariant violations", r.violations.len())))
            }
        }
        Command::Preview { n, tile, output, .. } => {
            require_dataset(&out)?;
            if *tile == 0 {
                return Err(PipelineError::Usage("--tile must be > 0".into()));
            }
            let m = DatasetManifest::read(&default_manifest(&out))?;
            let dest = output.clone().unwrap_or_else(|| out.join(REPORT_DIR).join("preview.png"));
            let k = contact_sheet(&out, &m, *n, *tile, &dest)?;
            log::info!("contact sheet of {k} datapoints written to {}", dest.display());
            Ok(())
        }
    }
}

/// Machine-readable error line for stderr.
pub fn error_json(e: &PipelineError) -> String {
    serde_json::json!({
        "error": { "category": e.category(), "exit_code": e.exit_code(), "message": e.to_string() }
    })
    .to_string()
}
