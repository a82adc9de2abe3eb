//! `analyze`: compare, infer, decompose, and render the report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rotwin_core::compare::{count_wins_losses_with, decompose_weighted, rotation_table, CountOptions, PairwiseResults};
use rotwin_core::inference::{bootstrap_ci, BootstrapInterval, BootstrapStratum, Scale, WinStatistics};
use rotwin_core::{
    build_rotation_set, stratified_inference, win_statistics, Arm, EndpointSpec, InferenceResult, RotationSet,
    StratifiedInput, StratumInput, Subject,
};
use serde::Serialize;

use crate::config::{AnalysisConfig, WeightScheme, Weights};
use crate::error::{CliError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Command-line overrides on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub data_name: String,
    pub config_name: String,
    /// Forces a stratified analysis even if the file does not ask for one.
    pub stratified: bool,
    pub exclude_small_strata: bool,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool: Tool,
    pub inputs: Inputs,
    pub settings: Settings,
    pub counts: Counts,
    pub estimates: Vec<MeasureReport>,
    pub bootstrap: Option<BootstrapReport>,
    pub decomposition: DecompositionReport,
    pub rotations: Vec<RotationReport>,
    pub strata: Vec<StratumReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inputs {
    pub data: String,
    pub config: String,
    pub treated: usize,
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub alpha: f64,
    pub endpoints: Vec<EndpointSpec>,
    pub hierarchy: Vec<Vec<String>>,
    pub rotations: usize,
    pub stratified: bool,
    pub weights: Option<Weights>,
}

/// Weighted totals over all rotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    pub wins: f64,
    pub losses: f64,
    pub ties: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureReport {
    pub measure: &'static str,
    /// `None` when undefined (for example a ratio without losses).
    pub estimate: Option<f64>,
    pub scale: Option<Scale>,
    pub std_error: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    /// Why no interval or test could be computed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub replicates: usize,
    pub seed: u64,
    pub degenerate: usize,
    pub rwr: BootstrapInterval,
    pub rnb: BootstrapInterval,
    pub rwo: BootstrapInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub blocks: Vec<BlockReport>,
    pub wins_pct: f64,
    pub ties_pct: f64,
    pub losses_pct: f64,
    pub overall_wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub block: usize,
    pub endpoints: Vec<String>,
    pub wins: f64,
    pub losses: f64,
    pub wins_pct: f64,
    pub ties_pct: f64,
    pub losses_pct: f64,
    pub block_wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationReport {
    pub rotation: usize,
    pub order: Vec<String>,
    /// Endpoint-level win ratios in declaration order.
    pub endpoint_wr: Vec<EndpointWr>,
    pub overall_wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointWr {
    pub endpoint: String,
    pub wins: f64,
    pub losses: f64,
    pub wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumReport {
    pub label: String,
    pub treated: usize,
    pub control: usize,
    pub weight: Option<f64>,
    pub excluded: bool,
}

struct Group<'a> {
    label: String,
    treated: Vec<&'a Subject>,
    control: Vec<&'a Subject>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn weight_for(weights: &Weights, g: &Group<'_>) -> std::result::Result<f64, String> {
    match weights {
        Weights::Scheme(WeightScheme::Equal) => Ok(1.0),
        Weights::Scheme(WeightScheme::InverseSize) => Ok(1.0 / (g.treated.len() + g.control.len()) as f64),
        Weights::Table(t) => t
            .get(&g.label)
            .copied()
            .ok_or_else(|| format!("stratum '{}' has no entry in stratification.weights", g.label)),
    }
}

fn measure_report(label: &'static str, point: Option<f64>, r: &rotwin_core::Result<InferenceResult>) -> MeasureReport {
    match r {
        Ok(r) => MeasureReport {
            measure: label,
            estimate: finite(r.estimate),
            scale: Some(r.scale),
            std_error: finite(r.std_error()),
            ci_lower: finite(r.ci_lower),
            ci_upper: finite(r.ci_upper),
            z: finite(r.z),
            p_value: finite(r.p_value),
            error: None,
        },
        Err(e) => MeasureReport {
            measure: label,
            estimate: point,
            scale: None,
            std_error: None,
            ci_lower: None,
            ci_upper: None,
            z: None,
            p_value: None,
            error: Some(e.to_string()),
        },
    }
}

fn estimates(ws: &WinStatistics) -> Vec<MeasureReport> {
    let (w, l, t) = (ws.wins, ws.losses, ws.ties);
    let total = w + l + t;
    let rwr = (l > 0.0).then(|| w / l);
    let rnb = (total > 0.0).then(|| (w - l) / total);
    let rwo = (l + 0.5 * t > 0.0).then(|| (w + 0.5 * t) / (l + 0.5 * t));
    vec![
        measure_report("RWR", rwr, &ws.rwr),
        measure_report("RNB", rnb, &ws.rnb),
        measure_report("RWO", rwo, &ws.rwo),
    ]
}

/// Runs the full analysis. A pure function of its inputs.
pub fn analyze(subjects: &[Subject], config: &AnalysisConfig, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let specs = &config.endpoints;
    for s in subjects {
        s.check(specs)?;
    }
    let rs: RotationSet = build_rotation_set(&config.hierarchy, config.rotation_cap)?;
    let ids = config.endpoint_ids();
    let stratified = config.stratification.enabled || opts.stratified;
    let exclude_small = config.stratification.exclude_small || opts.exclude_small_strata;
    let min = config.stratification.min_per_arm;
    let mut warnings = Vec::new();

    let mut by_label: BTreeMap<&str, Group<'_>> = BTreeMap::new();
    for s in subjects {
        let key = if stratified { s.stratum.as_str() } else { "all" };
        let g = by_label.entry(key).or_insert_with(|| Group {
            label: key.to_string(),
            treated: Vec::new(),
            control: Vec::new(),
        });
        match s.arm {
            Arm::Treatment => g.treated.push(s),
            Arm::Control => g.control.push(s),
        }
    }

    let mut strata_report = Vec::new();
    let mut groups = Vec::new();
    let mut small = Vec::new();
    for (_, g) in by_label {
        let undersized = g.treated.len() < min || g.control.len() < min;
        if stratified && undersized {
            small.push(format!("{} ({} treated, {} control)", g.label, g.treated.len(), g.control.len()));
        }
        let excluded = stratified && undersized && exclude_small;
        let weight = if excluded || !stratified {
            None
        } else {
            Some(weight_for(&config.stratification.weights, &g).map_err(|m| CliError::Config {
                file: opts.config_name.clone(),
                message: m,
            })?)
        };
        strata_report.push(StratumReport {
            label: g.label.clone(),
            treated: g.treated.len(),
            control: g.control.len(),
            weight,
            excluded,
        });
        if !excluded {
            groups.push((g, weight.unwrap_or(1.0)));
        }
    }
    if !small.is_empty() {
        if !exclude_small {
            return Err(CliError::Analysis(format!(
                "{} strata have fewer than {min} subjects in an arm: {}. Exclude them with --exclude-small-strata \
                 (or stratification.exclude_small = true)",
                small.len(),
                small.join(", ")
            )));
        }
        warnings.push(format!(
            "excluded {} strata with fewer than {min} subjects in an arm: {}",
            small.len(),
            small.join(", ")
        ));
    }
    if groups.is_empty() {
        return Err(CliError::Analysis("no stratum is large enough to analyse".into()));
    }

    let owned: Vec<(Vec<Subject>, Vec<Subject>)> = groups
        .iter()
        .map(|(g, _)| {
            (
                g.treated.iter().map(|s| (*s).clone()).collect(),
                g.control.iter().map(|s| (*s).clone()).collect(),
            )
        })
        .collect();
    let results: Vec<PairwiseResults> = owned
        .iter()
        .map(|(t, c)| count_wins_losses_with(t, c, &rs, specs, CountOptions { table_limit: 0 }))
        .collect::<rotwin_core::Result<_>>()?;

    let ws = if stratified {
        let input = StratifiedInput {
            strata: groups
                .iter()
                .zip(&results)
                .map(|((g, w), r)| StratumInput {
                    label: g.label.clone(),
                    weight: *w,
                    counts: &r.counts,
                    summary: &r.summary,
                })
                .collect(),
        };
        stratified_inference(&input, config.alpha)?
    } else {
        win_statistics(&results[0].counts, &results[0].summary, config.alpha)?
    };
    if ws.wins + ws.losses == 0.0 {
        warnings.push("every pairwise comparison is tied; estimates are degenerate".into());
    }
    let estimates = estimates(&ws);
    for m in &estimates {
        if let Some(e) = &m.error {
            warnings.push(format!("{}: {e}", m.measure));
        }
    }

    let weighted: Vec<(f64, &rotwin_core::WinCounts)> =
        groups.iter().zip(&results).map(|((_, w), r)| (*w, &r.counts)).collect();
    let d = decompose_weighted(&weighted, &config.hierarchy)?;
    let decomposition = DecompositionReport {
        blocks: d
            .rows
            .iter()
            .map(|r| BlockReport {
                block: r.block + 1,
                endpoints: r.endpoints.iter().map(|&e| ids[e].to_string()).collect(),
                wins: r.wins,
                losses: r.losses,
                wins_pct: r.wins_pct,
                ties_pct: r.ties_pct,
                losses_pct: r.losses_pct,
                block_wr: r.block_wr,
            })
            .collect(),
        wins_pct: d.wins_pct,
        ties_pct: d.ties_pct,
        losses_pct: d.losses_pct,
        overall_wr: d.overall_wr,
    };
    let rotations = rotation_table(&weighted, &rs)
        .into_iter()
        .map(|r| RotationReport {
            rotation: r.rotation + 1,
            order: r.order.iter().map(|&e| ids[e].to_string()).collect(),
            endpoint_wr: r
                .endpoints
                .iter()
                .map(|l| EndpointWr {
                    endpoint: ids[l.endpoint].to_string(),
                    wins: l.wins,
                    losses: l.losses,
                    wr: l.wr,
                })
                .collect(),
            overall_wr: r.overall_wr,
        })
        .collect();

    let b = opts.bootstrap.unwrap_or(config.bootstrap.replicates);
    let seed = opts.seed.unwrap_or(config.bootstrap.seed);
    let bootstrap = if b > 0 {
        let strata: Vec<BootstrapStratum<'_>> = groups
            .iter()
            .zip(&owned)
            .map(|((g, w), (t, c))| BootstrapStratum {
                label: g.label.clone(),
                weight: *w,
                treated: t,
                controls: c,
            })
            .collect();
        match bootstrap_ci(&strata, &rs, specs, b, seed, config.alpha) {
            Ok(r) => {
                if let Some(w) = &r.warning {
                    warnings.push(format!("bootstrap: {w}"));
                }
                Some(BootstrapReport {
                    replicates: r.replicates,
                    seed,
                    degenerate: r.degenerate,
                    rwr: r.rwr,
                    rnb: r.rnb,
                    rwo: r.rwo,
                })
            }
            Err(rotwin_core::Error::Config(m)) => {
                return Err(CliError::Config {
                    file: opts.config_name.clone(),
                    message: m,
                })
            }
            Err(e) => {
                warnings.push(format!("bootstrap: {e}"));
                None
            }
        }
    } else {
        None
    };

    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: Tool {
            name: "rotwin",
            version: env!("CARGO_PKG_VERSION"),
        },
        inputs: Inputs {
            data: opts.data_name.clone(),
            config: opts.config_name.clone(),
            treated: subjects.iter().filter(|s| s.arm == Arm::Treatment).count(),
            control: subjects.iter().filter(|s| s.arm == Arm::Control).count(),
        },
        settings: Settings {
            alpha: config.alpha,
            endpoints: specs.clone(),
            hierarchy: config
                .hierarchy
                .blocks()
                .iter()
                .map(|b| b.iter().map(|&e| ids[e].to_string()).collect())
                .collect(),
            rotations: rs.len(),
            stratified,
            weights: stratified.then(|| config.stratification.weights.clone()),
        },
        counts: Counts {
            wins: ws.wins,
            losses: ws.losses,
            ties: ws.ties,
        },
        estimates,
        bootstrap,
        decomposition,
        rotations,
        strata: strata_report,
        warnings,
    })
}

// ---- text rendering -------------------------------------------------------

/// Fixed four-decimal formatting used by every numeric table cell.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        None => "NA".into(),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf" } else { "-inf" }.into(),
        Some(v) => format!("{v:.4}"),
    }
}

pub fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(v) if v < 1e-4 => format!("{v:.3e}"),
        other => fmt_num(other),
    }
}

/// Left-aligns the first `text_cols` columns, right-aligns the rest.
fn table(out: &mut String, headers: &[String], rows: &[Vec<String>], text_cols: usize) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i < text_cols {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "  {}", parts.join("  ").trim_end());
    };
    line(out, headers);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(out, &rule);
    for r in rows {
        line(out, r);
    }
}

fn h(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn hierarchy_text(blocks: &[Vec<String>]) -> String {
    blocks
        .iter()
        .map(|b| if b.len() == 1 { b[0].clone() } else { format!("{{{}}}", b.join(", ")) })
        .collect::<Vec<_>>()
        .join(" > ")
}

pub fn render_text(r: &AnalysisReport) -> String {
    let mut out = String::new();
    let level = 100.0 * (1.0 - r.settings.alpha);
    let _ = writeln!(out, "Rotation win statistics ({} {})", r.tool.name, r.tool.version);
    let _ = writeln!(out, "Data:       {} ({} treated, {} control)", r.inputs.data, r.inputs.treated, r.inputs.control);
    let _ = writeln!(
        out,
        "Hierarchy:  {} ({} rotations)",
        hierarchy_text(&r.settings.hierarchy),
        r.settings.rotations
    );
    let used = r.strata.iter().filter(|s| !s.excluded).count();
    if r.settings.stratified {
        let _ = writeln!(out, "Strata:     {used} analysed, {} excluded", r.strata.len() - used);
    } else {
        let _ = writeln!(out, "Strata:     unstratified");
    }
    let _ = writeln!(
        out,
        "Totals:     wins {}  losses {}  ties {}",
        fmt_num(Some(r.counts.wins)),
        fmt_num(Some(r.counts.losses)),
        fmt_num(Some(r.counts.ties))
    );

    let _ = writeln!(out, "\nEstimates ({level}% Wald intervals, two-sided tests)");
    let rows: Vec<Vec<String>> = r
        .estimates
        .iter()
        .map(|m| {
            vec![
                m.measure.to_string(),
                fmt_num(m.estimate),
                fmt_num(m.ci_lower),
                fmt_num(m.ci_upper),
                fmt_p(m.p_value),
            ]
        })
        .collect();
    table(&mut out, &h(&["Measure", "Estimate", "Lower", "Upper", "p-value"]), &rows, 1);

    if let Some(b) = &r.bootstrap {
        let _ = writeln!(
            out,
            "\nBootstrap percentile intervals (B = {}, seed {})",
            b.replicates, b.seed
        );
        let rows: Vec<Vec<String>> = [("RWR", b.rwr), ("RNB", b.rnb), ("RWO", b.rwo)]
            .iter()
            .map(|(m, i)| vec![m.to_string(), fmt_num(Some(i.lower)), fmt_num(Some(i.upper))])
            .collect();
        table(&mut out, &h(&["Measure", "Lower", "Upper"]), &rows, 1);
    }

    let _ = writeln!(out, "\nBlock decomposition");
    let d = &r.decomposition;
    let mut rows: Vec<Vec<String>> = d
        .blocks
        .iter()
        .map(|b| {
            vec![
                b.block.to_string(),
                b.endpoints.join(", "),
                fmt_num(Some(b.wins_pct)),
                fmt_num(Some(b.ties_pct)),
                fmt_num(Some(b.losses_pct)),
                fmt_num(b.block_wr),
            ]
        })
        .collect();
    rows.push(vec![
        "Overall".into(),
        String::new(),
        fmt_num(Some(d.wins_pct)),
        fmt_num(Some(d.ties_pct)),
        fmt_num(Some(d.losses_pct)),
        fmt_num(d.overall_wr),
    ]);
    table(
        &mut out,
        &h(&["Block", "Endpoints", "Wins (%)", "Ties (%)", "Losses (%)", "Block WR"]),
        &rows,
        2,
    );

    let _ = writeln!(out, "\nRotations (endpoint-level win ratios)");
    let mut headers = h(&["Rotation", "Order"]);
    headers.extend(r.settings.endpoints.iter().map(|e| e.id.clone()));
    headers.push("Overall WR".into());
    let rows: Vec<Vec<String>> = r
        .rotations
        .iter()
        .map(|rot| {
            let mut row = vec![rot.rotation.to_string(), rot.order.join(" > ")];
            row.extend(rot.endpoint_wr.iter().map(|e| fmt_num(e.wr)));
            row.push(fmt_num(rot.overall_wr));
            row
        })
        .collect();
    table(&mut out, &headers, &rows, 2);

    if r.settings.stratified {
        let _ = writeln!(out, "\nStrata");
        let rows: Vec<Vec<String>> = r
            .strata
            .iter()
            .map(|s| {
                vec![
                    s.label.clone(),
                    s.treated.to_string(),
                    s.control.to_string(),
                    fmt_num(s.weight),
                    if s.excluded { "yes" } else { "no" }.into(),
                ]
            })
            .collect();
        table(&mut out, &h(&["Stratum", "Treated", "Control", "Weight", "Excluded"]), &rows, 1);
    }

    let _ = writeln!(out, "\nWarnings");
    if r.warnings.is_empty() {
        let _ = writeln!(out, "  none");
    }
    for w in &r.warnings {
        let _ = writeln!(out, "  - {w}");
    }
    out
}
