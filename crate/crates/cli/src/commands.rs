use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rotwin_core::{build_rotation_set, emit_results, replicate_dataset, run_study};

use crate::analysis::{analyze, hierarchy_text, render_text, AnalyzeOptions};
use crate::config::load_config;
use crate::dataset::{parse_dataset, write_dataset};
use crate::error::{CliError, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "rotwin", version, about = "Rotation win ratio, net benefit and win odds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyse a CSV dataset and report estimates, decomposition and rotations.
    Analyze(AnalyzeArgs),
    /// Run the Monte Carlo study in the [study] section.
    Simulate(SimulateArgs),
    /// Print the rotation set of the configured hierarchy.
    Rotations(ConfigArg),
    /// Check a configuration file and, optionally, a dataset.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bootstrap replicates (0 disables).
    #[arg(long, value_name = "B")]
    pub bootstrap: Option<usize>,
    /// Compare within strata and combine by weight.
    #[arg(long)]
    pub stratified: bool,
    /// Drop strata too small to analyse instead of failing.
    #[arg(long)]
    pub exclude_small_strata: bool,
    /// Print the JSON report instead of the text tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full-size trials (600 per arm) and 5000 replicates.
    #[arg(long)]
    pub paper_scale: bool,
    /// Write replicate REP of every cell as CSV instead of running the study.
    #[arg(long, value_name = "REP")]
    pub export_data: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Executes a parsed command, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let io = |source: std::io::Error| CliError::Write {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match cli.command {
        Command::Analyze(a) => {
            let cfg = load_config(&a.config)?;
            let analysis = cfg.require_analysis()?;
            let subjects = parse_dataset(&a.data, &analysis.endpoints)?;
            let opts = AnalyzeOptions {
                data_name: file_name(&a.data),
                config_name: file_name(&a.config),
                stratified: a.stratified,
                exclude_small_strata: a.exclude_small_strata,
                bootstrap: a.bootstrap,
                seed: a.seed,
            };
            let report = analyze(&subjects, analysis, &opts)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            let text = render_text(&report);
            if let Some(dir) = &a.out {
                create_dir(dir)?;
                write_file(&dir.join(REPORT_JSON), json.as_bytes())?;
                write_file(&dir.join(REPORT_TXT), text.as_bytes())?;
            }
            out.write_all(if a.json { json.as_bytes() } else { text.as_bytes() }).map_err(io)?;
        }
        Command::Simulate(s) => {
            let cfg = load_config(&s.config)?;
            let study = cfg
                .require_study()?
                .study_config(s.paper_scale, s.seed)
                .map_err(|m| CliError::Config {
                    file: cfg.name.clone(),
                    message: m,
                })?;
            create_dir(&s.out)?;
            if let Some(rep) = s.export_data {
                for (i, (key, design)) in study.cells()?.into_iter().enumerate() {
                    let data = replicate_dataset(study.seed, &design, rep)?;
                    let path = s.out.join(format!("data_cell{}_rep{rep}.csv", i + 1));
                    let file = File::create(&path).map_err(|source| CliError::Write {
                        path: path.clone(),
                        source,
                    })?;
                    write_dataset(BufWriter::new(file), &data, &design.endpoints())
                        .map_err(|e| CliError::Analysis(format!("writing {}: {e}", path.display())))?;
                    writeln!(out, "{}  {}", path.display(), key.label()).map_err(io)?;
                }
                return Ok(());
            }
            let result = run_study(&study)?;
            let (csv, manifest) = emit_results(&result, &s.out)?;
            out.write_all(render_study(&result).as_bytes()).map_err(io)?;
            writeln!(out, "\nwrote {} and {}", csv.display(), manifest.display()).map_err(io)?;
            let aborted: Vec<String> = result
                .cells
                .iter()
                .filter_map(|c| c.aborted.as_ref().map(|m| format!("{}: {m}", c.key.label())))
                .collect();
            if !aborted.is_empty() {
                return Err(CliError::Analysis(format!("aborted cells: {}", aborted.join("; "))));
            }
        }
        Command::Rotations(c) => {
            let cfg = load_config(&c.config)?;
            let a = cfg.require_analysis()?;
            let rs = build_rotation_set(&a.hierarchy, a.rotation_cap)?;
            let ids = a.endpoint_ids();
            let blocks: Vec<Vec<String>> = a
                .hierarchy
                .blocks()
                .iter()
                .map(|b| b.iter().map(|&e| ids[e].to_string()).collect())
                .collect();
            let mut text = format!("{}: {} rotations\n", hierarchy_text(&blocks), rs.len());
            for (k, order) in rs.orders().iter().enumerate() {
                let names: Vec<&str> = order.iter().map(|&e| ids[e]).collect();
                let _ = writeln!(text, "{:>4}  {}", k + 1, names.join(" > "));
            }
            out.write_all(text.as_bytes()).map_err(io)?;
        }
        Command::Validate(v) => {
            let cfg = load_config(&v.config)?;
            let mut text = format!("{}: ok (schema_version {})\n", cfg.name, cfg.schema_version);
            if let Some(a) = &cfg.analysis {
                let rs = build_rotation_set(&a.hierarchy, a.rotation_cap)?;
                let _ = writeln!(text, "  {} endpoints, {} rotations", a.endpoints.len(), rs.len());
            }
            if let Some(s) = &cfg.study {
                let c = s.study_config(false, None).map_err(|m| CliError::Config {
                    file: cfg.name.clone(),
                    message: m,
                })?;
                let _ = writeln!(text, "  study: {} cells, {} replicates", c.cells()?.len(), c.replicates);
            }
            if let Some(d) = &v.data {
                let a = cfg.require_analysis()?;
                let subjects = parse_dataset(d, &a.endpoints)?;
                let t = subjects.iter().filter(|s| s.arm == rotwin_core::Arm::Treatment).count();
                let _ = writeln!(
                    text,
                    "{}: ok ({} subjects: {t} treated, {} control)",
                    d.display(),
                    subjects.len(),
                    subjects.len() - t
                );
                let mut strata = std::collections::BTreeMap::<&str, (usize, usize)>::new();
                for s in &subjects {
                    let e = strata.entry(s.stratum.as_str()).or_default();
                    match s.arm {
                        rotwin_core::Arm::Treatment => e.0 += 1,
                        rotwin_core::Arm::Control => e.1 += 1,
                    }
                }
                let min = a.stratification.min_per_arm;
                let small: Vec<&str> = strata
                    .iter()
                    .filter(|(_, (t, c))| *t < min || *c < min)
                    .map(|(k, _)| *k)
                    .collect();
                let _ = writeln!(text, "  {} strata", strata.len());
                if !small.is_empty() {
                    let _ = writeln!(
                        text,
                        "  warning: {} strata have fewer than {min} subjects in an arm ({}); a stratified analysis needs --exclude-small-strata",
                        small.len(),
                        small.join(", ")
                    );
                }
            }
            out.write_all(text.as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

fn fmt_rate(r: Option<&rotwin_core::study::Rate>) -> String {
    r.map_or_else(|| "NA".into(), |r| format!("{:.4} ({:.4})", r.value, r.mc_se))
}

/// Per-cell rejection and coverage table.
pub fn render_study(r: &rotwin_core::StudyResult) -> String {
    let mut out = String::new();
    for c in &r.cells {
        let _ = writeln!(
            out,
            "{}  [{} replicates, {} failed]",
            c.key.label(),
            c.replicates,
            c.failures
        );
        if let Some(m) = &c.aborted {
            let _ = writeln!(out, "  aborted: {m}");
            continue;
        }
        let w = c.rows.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "  {:<w$}  {:>17}  {:>17}", "Method", "Rejection (SE)", "Coverage (SE)");
        for m in &c.rows {
            let _ = writeln!(
                out,
                "  {:<w$}  {:>17}  {:>17}",
                m.method,
                fmt_rate(Some(&m.rejection)),
                fmt_rate(m.coverage.as_ref())
            );
        }
    }
    out
}
