//! Monte Carlo runner: rejection rates, interval coverage and mean
//! estimates over a grid of simulation scenarios.
//!
//! Every cell of the grid reuses the same dataset seed, so neighbouring
//! cells are compared on common random numbers. All per-order and fixed
//! order comparators are evaluated in the same pairwise pass as the
//! rotation statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{count_wins_losses_with, Arm, CountOptions, PairwiseResults, Subject, WinCounts};
use crate::error::{Error, Result};
use crate::hierarchy::{build_rotation_set, RotationSet, DEFAULT_ROTATION_CAP};
use crate::inference::{rwr_inference, win_statistics, InferenceResult, DEFAULT_ALPHA};
use crate::rng::{derive_seed, substream};
use crate::simgen::{first_event, logrank_test, Design, GapEffect};

/// Largest tolerated fraction of failed replicates before a cell is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;
pub const DEFAULT_REFERENCE_MULTIPLIER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RWR")]
    Rwr,
    #[serde(rename = "RNB")]
    Rnb,
    #[serde(rename = "RWO")]
    Rwo,
    /// Standard win ratio under each rotation taken as a fixed order;
    /// also yields the best/worst/random-order rows.
    #[serde(rename = "WR-per-order")]
    WrPerOrder,
    /// Recurrent design: death, recurrence count, first recurrence.
    #[serde(rename = "WR-F")]
    WrFirst,
    /// Recurrent design: death, recurrence count, last recurrence.
    #[serde(rename = "WR-L")]
    WrLast,
    #[serde(rename = "logrank")]
    LogRank,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rwr,
        Method::Rnb,
        Method::Rwo,
        Method::WrPerOrder,
        Method::WrFirst,
        Method::WrLast,
        Method::LogRank,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Rwr => "RWR",
            Method::Rnb => "RNB",
            Method::Rwo => "RWO",
            Method::WrPerOrder => "WR-per-order",
            Method::WrFirst => "WR-F",
            Method::WrLast => "WR-L",
            Method::LogRank => "logrank",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label().eq_ignore_ascii_case(s))
    }
}

/// Values swept by the study. `None` keeps the base design's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub study_days: Option<Vec<f64>>,
    pub alpha_nonfatal: Option<Vec<Vec<f64>>>,
    pub alpha_death: Option<Vec<f64>>,
    pub max_recurrences: Option<Vec<usize>>,
    pub gap_effect: Option<Vec<GapEffect>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub design: Design,
    #[serde(default)]
    pub grid: Grid,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Size of the pooled run behind the coverage reference, as a multiple
    /// of `replicates`. Only used for non-null cells; zero skips coverage there.
    #[serde(default = "default_reference_multiplier")]
    pub reference_multiplier: usize,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_reference_multiplier() -> usize {
    DEFAULT_REFERENCE_MULTIPLIER
}

/// Coordinates of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub study_days: f64,
    pub alpha_death: f64,
    /// Copula design only.
    pub alpha_nonfatal: Option<Vec<f64>>,
    /// Recurrent design only.
    pub max_recurrences: Option<usize>,
    pub gap_effect: Option<GapEffect>,
}

impl CellKey {
    pub fn label(&self) -> String {
        let mut parts = vec![format!("study_days={}", self.study_days), format!("alpha_d={}", self.alpha_death)];
        if let Some(a) = &self.alpha_nonfatal {
            let a: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            parts.push(format!("alpha_h=({})", a.join(",")));
        }
        if let Some(j) = self.max_recurrences {
            parts.push(format!("J={j}"));
        }
        if let Some(g) = self.gap_effect {
            parts.push(format!("gap_effect={}", gap_label(g)));
        }
        parts.join(";")
    }
}

fn gap_label(g: GapEffect) -> &'static str {
    match g {
        GapEffect::Homogeneous => "homogeneous",
        GapEffect::Heterogeneous => "heterogeneous",
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        let g = &self.grid;
        let empty = [
            ("study_days", g.study_days.as_ref().map(Vec::len)),
            ("alpha_nonfatal", g.alpha_nonfatal.as_ref().map(Vec::len)),
            ("alpha_death", g.alpha_death.as_ref().map(Vec::len)),
            ("max_recurrences", g.max_recurrences.as_ref().map(Vec::len)),
            ("gap_effect", g.gap_effect.as_ref().map(Vec::len)),
        ];
        for (name, len) in empty {
            if len == Some(0) {
                return Err(Error::config(format!("grid axis `{name}` is empty")));
            }
        }
        match &self.design {
            Design::Copula(_) => {
                if g.max_recurrences.is_some() || g.gap_effect.is_some() {
                    return Err(Error::config("recurrence grid axes need the frailty design"));
                }
                if self.methods.iter().any(|m| matches!(m, Method::WrFirst | Method::WrLast)) {
                    return Err(Error::config("WR-F / WR-L need the frailty design"));
                }
            }
            Design::Frailty(_) => {
                if g.alpha_nonfatal.is_some() {
                    return Err(Error::config("alpha_nonfatal grid axis needs the copula design"));
                }
            }
        }
        self.design.validate()?;
        for (_, d) in self.cells()? {
            d.validate()?;
        }
        Ok(())
    }

    /// Resolved scenarios in grid order (last axis varies fastest).
    pub fn cells(&self) -> Result<Vec<(CellKey, Design)>> {
        let g = &self.grid;
        let base = &self.design;
        let days = g.study_days.clone().unwrap_or_else(|| vec![base.censoring().study_days]);
        let mut out = Vec::new();
        match base {
            Design::Copula(s) => {
                let ad = g.alpha_death.clone().unwrap_or_else(|| vec![s.alpha_death]);
                let ah = g.alpha_nonfatal.clone().unwrap_or_else(|| vec![s.alpha_nonfatal.clone()]);
                for &d in &days {
                    for &a in &ad {
                        for h in &ah {
                            let mut c = s.clone();
                            c.censoring.study_days = d;
                            c.alpha_death = a;
                            c.alpha_nonfatal = h.clone();
                            let key = CellKey {
                                study_days: d,
                                alpha_death: a,
                                alpha_nonfatal: Some(h.clone()),
                                max_recurrences: None,
                                gap_effect: None,
                            };
                            out.push((key, Design::Copula(c)));
                        }
                    }
                }
            }
            Design::Frailty(s) => {
                let ad = g.alpha_death.clone().unwrap_or_else(|| vec![s.alpha_death]);
                let js = g.max_recurrences.clone().unwrap_or_else(|| vec![s.max_recurrences()]);
                let explicit = g.alpha_death.is_some() || g.max_recurrences.is_some() || g.gap_effect.is_some();
                let effects: Vec<Option<GapEffect>> = match &g.gap_effect {
                    Some(v) => v.iter().copied().map(Some).collect(),
                    None if explicit => vec![Some(GapEffect::Homogeneous)],
                    None => vec![None],
                };
                for &d in &days {
                    for &a in &ad {
                        for &e in &effects {
                            for &j in &js {
                                let mut c = s.clone();
                                c.censoring.study_days = d;
                                if let Some(e) = e {
                                    c.alpha_death = a;
                                    c.alpha_recurrent = (0..j)
                                        .map(|k| match e {
                                            GapEffect::Homogeneous => a,
                                            GapEffect::Heterogeneous if k == 0 => a,
                                            GapEffect::Heterogeneous => 0.0,
                                        })
                                        .collect();
                                }
                                let key = CellKey {
                                    study_days: d,
                                    alpha_death: c.alpha_death,
                                    alpha_nonfatal: None,
                                    max_recurrences: Some(c.max_recurrences()),
                                    gap_effect: e,
                                };
                                out.push((key, Design::Frailty(c)));
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A proportion with its Monte Carlo standard error `sqrt(r(1−r)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub value: f64,
    pub mc_se: f64,
    pub n: usize,
}

impl Rate {
    pub fn from_hits(hits: usize, n: usize) -> Self {
        let value = if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
        Self {
            value,
            mc_se: (value * (1.0 - value) / n as f64).sqrt(),
            n,
        }
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mean {
    pub value: f64,
    pub mc_se: f64,
}

impl Mean {
    fn of(xs: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = if finite.len() > 1 {
            finite.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self {
            value: mean,
            mc_se: (var / n).sqrt(),
        })
    }
}

/// How the coverage target of a method was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Null scenario: the no-effect value.
    Null,
    /// Ratio of win/loss totals pooled over a separate large simulation run.
    PooledPlugIn { replicates: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    /// Method label; per-order rows are `WR[a>b>...]`.
    pub method: String,
    pub rejection: Rate,
    pub coverage: Option<Rate>,
    pub reference: Option<f64>,
    pub mean_estimate: Option<Mean>,
    /// Rows derived from per-order results (best / worst / random order).
    pub derived_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub key: CellKey,
    pub design: Design,
    pub replicates: usize,
    pub failures: usize,
    /// First failure message, if any replicate failed.
    pub first_failure: Option<String>,
    /// Set when failures exceed the tolerated fraction; `rows` is then empty.
    pub aborted: Option<String>,
    pub reference_source: Option<ReferenceSource>,
    pub rows: Vec<MethodRow>,
}

impl CellResult {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

/// Everything the study records about one replicate.
#[derive(Debug, Clone, Default)]
struct Replicate {
    /// Keyed by row label: (rejects, covers reference, estimate).
    outcomes: BTreeMap<String, (bool, Option<bool>, f64)>,
    /// Index into the per-order labels picked for the random-order row.
    random_order: Option<usize>,
}

/// Rotation layout of one design: hierarchy rotations first, then fixed
/// orders for WR-F / WR-L.
struct Layout {
    rotations: RotationSet,
    p: usize,
    order_labels: Vec<String>,
    first_index: Option<usize>,
    last_index: Option<usize>,
}

fn layout(design: &Design) -> Result<Layout> {
    let specs = design.endpoints();
    let base = build_rotation_set(&design.hierarchy(), DEFAULT_ROTATION_CAP)?;
    let p = base.len();
    let mut orders = base.orders().to_vec();
    let mut first_index = None;
    let mut last_index = None;
    if let Design::Frailty(_) = design {
        first_index = Some(orders.len());
        orders.push(vec![0, 1, 2]);
        last_index = Some(orders.len());
        orders.push(vec![0, 1, 3]);
    }
    let order_labels = base
        .orders()
        .iter()
        .map(|o| {
            let ids: Vec<&str> = o.iter().map(|&e| specs[e].id.as_str()).collect();
            format!("WR[{}]", ids.join(">"))
        })
        .collect();
    Ok(Layout {
        rotations: RotationSet::from_orders(orders)?,
        p,
        order_labels,
        first_index,
        last_index,
    })
}

fn split_arms(subjects: Vec<Subject>) -> (Vec<Subject>, Vec<Subject>) {
    subjects.into_iter().partition(|s| s.arm == Arm::Treatment)
}

fn pairwise(design: &Design, lay: &Layout, subjects: &[Subject]) -> Result<(Vec<Subject>, Vec<Subject>, PairwiseResults)> {
    let (t, c) = split_arms(subjects.to_vec());
    let specs = design.endpoints();
    let out = count_wins_losses_with(&t, &c, &lay.rotations, &specs, CountOptions { table_limit: 0 })?;
    Ok((t, c, out))
}

/// Coverage targets keyed by row label.
type References = BTreeMap<String, f64>;

fn null_references(lay: &Layout) -> References {
    let mut r = References::new();
    r.insert("RWR".into(), 1.0);
    r.insert("RNB".into(), 0.0);
    r.insert("RWO".into(), 1.0);
    for l in &lay.order_labels {
        r.insert(l.clone(), 1.0);
    }
    r.insert("WR-F".into(), 1.0);
    r.insert("WR-L".into(), 1.0);
    r
}

fn pooled_references(design: &Design, lay: &Layout, replicates: usize, seed: u64) -> Result<References> {
    let per: Vec<Result<WinCounts>> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let data = design.generate(seed, b)?;
            Ok(pairwise(design, lay, &data)?.2.counts)
        })
        .collect();
    let k = lay.rotations.len();
    let mut wins = vec![0u128; k];
    let mut losses = vec![0u128; k];
    let mut pairs = 0u128;
    for c in per {
        let c = c?;
        for r in 0..k {
            wins[r] += c.wins[r] as u128;
            losses[r] += c.losses[r] as u128;
        }
        pairs += c.pairs() as u128;
    }
    let p = lay.p;
    let w: f64 = wins[..p].iter().map(|&x| x as f64).sum();
    let l: f64 = losses[..p].iter().map(|&x| x as f64).sum();
    let total = p as f64 * pairs as f64;
    let ties = total - w - l;
    let mut r = References::new();
    r.insert("RWR".into(), w / l);
    r.insert("RNB".into(), (w - l) / total);
    r.insert("RWO".into(), (w + 0.5 * ties) / (l + 0.5 * ties));
    for (i, label) in lay.order_labels.iter().enumerate() {
        r.insert(label.clone(), wins[i] as f64 / losses[i] as f64);
    }
    if let (Some(f), Some(l)) = (lay.first_index, lay.last_index) {
        r.insert("WR-F".into(), wins[f] as f64 / losses[f] as f64);
        r.insert("WR-L".into(), wins[l] as f64 / losses[l] as f64);
    }
    Ok(r)
}

fn record(out: &mut Replicate, label: &str, res: &InferenceResult, refs: &References) {
    let covers = refs.get(label).map(|&v| res.covers(v));
    out.outcomes.insert(label.to_string(), (res.rejects(), covers, res.estimate));
}

fn run_replicate(
    config: &StudyConfig,
    design: &Design,
    lay: &Layout,
    refs: &References,
    cell_index: u64,
    b: u64,
) -> Result<Replicate> {
    let data = replicate_dataset(config.seed, design, b)?;
    let (t, c, pw) = pairwise(design, lay, &data)?;
    let alpha = config.alpha;
    let methods = &config.methods;
    let mut out = Replicate::default();

    let rot: Vec<usize> = (0..lay.p).collect();
    if methods.iter().any(|m| matches!(m, Method::Rwr | Method::Rnb | Method::Rwo)) {
        let counts = pw.counts.select(&rot);
        let summary = pw.summary.select(&rot);
        let stats = win_statistics(&counts, &summary, alpha)?;
        for (m, r) in [(Method::Rwr, stats.rwr), (Method::Rnb, stats.rnb), (Method::Rwo, stats.rwo)] {
            if methods.contains(&m) {
                record(&mut out, m.label(), &r?, refs);
            }
        }
    }
    let single = |k: usize| -> Result<InferenceResult> {
        rwr_inference(&pw.counts.select(&[k]), &pw.summary.select(&[k]), alpha)
    };
    if methods.contains(&Method::WrPerOrder) {
        for (k, label) in lay.order_labels.iter().enumerate() {
            record(&mut out, label, &single(k)?, refs);
        }
        let mut rng = substream(config.seed, &[0x5252, cell_index], b);
        out.random_order = Some(rng.random_range(0..lay.p));
    }
    for (m, idx) in [(Method::WrFirst, lay.first_index), (Method::WrLast, lay.last_index)] {
        if let (true, Some(k)) = (methods.contains(&m), idx) {
            record(&mut out, m.label(), &single(k)?, refs);
        }
    }
    if methods.contains(&Method::LogRank) {
        let a: Vec<(f64, bool)> = t.iter().map(first_event).collect();
        let z: Vec<(f64, bool)> = c.iter().map(first_event).collect();
        let lr = logrank_test(&a, &z)?;
        out.outcomes
            .insert(Method::LogRank.label().into(), (lr.p_value < alpha, None, lr.statistic));
    }
    Ok(out)
}

fn summarize(label: &str, reps: &[&Replicate], refs: &References) -> MethodRow {
    let rows: Vec<&(bool, Option<bool>, f64)> = reps.iter().filter_map(|r| r.outcomes.get(label)).collect();
    let n = rows.len();
    let rejection = Rate::from_hits(rows.iter().filter(|r| r.0).count(), n);
    let coverage = if rows.iter().all(|r| r.1.is_some()) && n > 0 {
        Some(Rate::from_hits(rows.iter().filter(|r| r.1 == Some(true)).count(), n))
    } else {
        None
    };
    let estimates: Vec<f64> = rows.iter().map(|r| r.2).collect();
    MethodRow {
        method: label.to_string(),
        rejection,
        coverage,
        reference: refs.get(label).copied(),
        mean_estimate: Mean::of(&estimates),
        derived_from: None,
    }
}

fn run_cell(config: &StudyConfig, index: usize, key: CellKey, design: Design) -> Result<CellResult> {
    let lay = layout(&design)?;
    let (refs, reference_source) = if design.is_null() {
        (null_references(&lay), Some(ReferenceSource::Null))
    } else if config.reference_multiplier == 0 {
        (References::new(), None)
    } else {
        let n = config.reference_multiplier * config.replicates;
        let seed = derive_seed(config.seed, &[0x5EF, index as u64]);
        (
            pooled_references(&design, &lay, n, seed)?,
            Some(ReferenceSource::PooledPlugIn { replicates: n, seed }),
        )
    };

    let results: Vec<Result<Replicate>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|b| run_replicate(config, &design, &lay, &refs, index as u64, b))
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    let first_failure = results.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
    let ok: Vec<&Replicate> = results.iter().filter_map(|r| r.as_ref().ok()).collect();

    let mut cell = CellResult {
        key,
        design,
        replicates: config.replicates,
        failures,
        first_failure,
        aborted: None,
        reference_source,
        rows: Vec::new(),
    };
    if failures as f64 > MAX_FAILURE_FRACTION * config.replicates as f64 || ok.is_empty() {
        cell.aborted = Some(format!(
            "{failures} of {} replicates failed (limit {:.0}%)",
            config.replicates,
            100.0 * MAX_FAILURE_FRACTION
        ));
        return Ok(cell);
    }

    for m in [Method::Rwr, Method::Rnb, Method::Rwo] {
        if config.methods.contains(&m) {
            cell.rows.push(summarize(m.label(), &ok, &refs));
        }
    }
    if config.methods.contains(&Method::WrPerOrder) {
        let per: Vec<MethodRow> = lay.order_labels.iter().map(|l| summarize(l, &ok, &refs)).collect();
        // Ties resolve to the earliest order, keeping the choice deterministic.
        let best = per
            .iter()
            .reduce(|a, b| if b.rejection.value > a.rejection.value { b } else { a })
            .expect("at least one order");
        let worst = per
            .iter()
            .reduce(|a, b| if b.rejection.value < a.rejection.value { b } else { a })
            .expect("at least one order");
        let mut b = best.clone();
        b.method = "WR-B".into();
        b.derived_from = Some(best.method.clone());
        let mut w = worst.clone();
        w.method = "WR-W".into();
        w.derived_from = Some(worst.method.clone());

        let picks: Vec<&(bool, Option<bool>, f64)> = ok
            .iter()
            .map(|r| &r.outcomes[&lay.order_labels[r.random_order.expect("set with per-order results")]])
            .collect();
        let n = picks.len();
        let r = MethodRow {
            method: "WR-R".into(),
            rejection: Rate::from_hits(picks.iter().filter(|x| x.0).count(), n),
            coverage: if picks.iter().all(|x| x.1.is_some()) {
                Some(Rate::from_hits(picks.iter().filter(|x| x.1 == Some(true)).count(), n))
            } else {
                None
            },
            reference: None,
            mean_estimate: None,
            derived_from: Some("random order per replicate".into()),
        };
        cell.rows.extend(per);
        cell.rows.push(b);
        cell.rows.push(w);
        cell.rows.push(r);
    }
    for m in [Method::WrFirst, Method::WrLast, Method::LogRank] {
        if config.methods.contains(&m) && ok.iter().any(|r| r.outcomes.contains_key(m.label())) {
            cell.rows.push(summarize(m.label(), &ok, &refs));
        }
    }
    Ok(cell)
}

/// The dataset a study with `seed` analyses as replicate `b` of a cell.
/// Cells share random numbers, so only the design decides the outcome.
pub fn replicate_dataset(seed: u64, design: &Design, b: u64) -> Result<Vec<Subject>> {
    design.generate(derive_seed(seed, &[0xDA7A]), b)
}

/// Runs every cell of the grid. Cells whose failures exceed the tolerance
/// are returned with `aborted` set rather than failing the whole study.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let cells = config
        .cells()?
        .into_iter()
        .enumerate()
        .map(|(i, (key, design))| run_cell(config, i, key, design))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        config: config.clone(),
        cells,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    generator: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a StudyConfig,
    cells: Vec<ManifestCell<'a>>,
    csv: &'static str,
}

#[derive(Debug, Serialize)]
struct ManifestCell<'a> {
    cell: String,
    replicates: usize,
    failures: usize,
    first_failure: &'a Option<String>,
    aborted: &'a Option<String>,
    reference_source: &'a Option<ReferenceSource>,
}

pub const RESULTS_CSV: &str = "results.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Writes `results.csv` (long format: one row per cell × method × metric)
/// and `manifest.json` into `dir`, creating it if needed.
pub fn emit_results(result: &StudyResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(RESULTS_CSV);
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_error)?;
    w.write_record([
        "cell",
        "design",
        "n_per_arm",
        "study_days",
        "alpha_death",
        "alpha_nonfatal",
        "max_recurrences",
        "gap_effect",
        "method",
        "metric",
        "value",
        "mc_se",
    ])
    .map_err(csv_error)?;
    for cell in &result.cells {
        let k = &cell.key;
        let design = match cell.design {
            Design::Copula(_) => "copula",
            Design::Frailty(_) => "frailty",
        };
        let ah = k
            .alpha_nonfatal
            .as_ref()
            .map(|a| a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("/"))
            .unwrap_or_default();
        let prefix = [
            k.label(),
            design.to_string(),
            cell.design.n_per_arm().to_string(),
            k.study_days.to_string(),
            k.alpha_death.to_string(),
            ah,
            k.max_recurrences.map(|j| j.to_string()).unwrap_or_default(),
            k.gap_effect.map(|g| gap_label(g).to_string()).unwrap_or_default(),
        ];
        for row in &cell.rows {
            let mut metrics: Vec<(&str, f64, Option<f64>)> =
                vec![("rejection_rate", row.rejection.value, Some(row.rejection.mc_se))];
            if let Some(c) = row.coverage {
                metrics.push(("coverage", c.value, Some(c.mc_se)));
            }
            if let Some(m) = row.mean_estimate {
                metrics.push(("mean_estimate", m.value, Some(m.mc_se)));
            }
            if let Some(r) = row.reference {
                metrics.push(("reference", r, None));
            }
            metrics.push(("replicates_used", row.rejection.n as f64, None));
            for (metric, value, se) in metrics {
                let mut rec: Vec<String> = prefix.to_vec();
                rec.push(row.method.clone());
                rec.push(metric.into());
                rec.push(value.to_string());
                rec.push(se.map(|s| s.to_string()).unwrap_or_default());
                w.write_record(&rec).map_err(csv_error)?;
            }
        }
    }
    w.flush()?;

    let manifest = Manifest {
        schema_version: 1,
        generator: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: result.config.seed,
        config: &result.config,
        cells: result
            .cells
            .iter()
            .map(|c| ManifestCell {
                cell: c.key.label(),
                replicates: c.replicates,
                failures: c.failures,
                first_failure: &c.first_failure,
                aborted: &c.aborted,
                reference_source: &c.reference_source,
            })
            .collect(),
        csv: RESULTS_CSV,
    };
    let manifest_path = dir.join(MANIFEST_JSON);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok((csv_path, manifest_path))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::analysis(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{CopulaScenario, FrailtyScenario};

    fn small_copula() -> StudyConfig {
        StudyConfig {
            design: Design::Copula(CopulaScenario::standard([0.3, 0.05, 0.05], 750.0, 40)),
            grid: Grid::default(),
            replicates: 20,
            alpha: 0.05,
            methods: Method::ALL.iter().copied().filter(|m| !matches!(m, Method::WrFirst | Method::WrLast)).collect(),
            seed: 11,
            reference_multiplier: 2,
        }
    }

    #[test]
    fn best_random_worst_ordering() {
        let r = run_study(&small_copula()).unwrap();
        let cell = &r.cells[0];
        assert!(cell.aborted.is_none());
        let b = cell.row("WR-B").unwrap().rejection.value;
        let w = cell.row("WR-W").unwrap().rejection.value;
        let rr = cell.row("WR-R").unwrap().rejection.value;
        assert!(b >= rr && rr >= w);
        assert_eq!(cell.rows.iter().filter(|r| r.method.starts_with("WR[")).count(), 6);
        for row in &cell.rows {
            assert!((0.0..=1.0).contains(&row.rejection.value));
        }
    }

    #[test]
    fn grid_expands_in_order() {
        let mut c = small_copula();
        c.grid.study_days = Some(vec![250.0, 500.0]);
        c.grid.alpha_nonfatal = Some(vec![vec![0.1; 3], vec![0.2; 3], vec![0.3; 3]]);
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].0.study_days, 250.0);
        assert_eq!(cells[3].0.study_days, 500.0);

        let mut f = StudyConfig {
            design: Design::Frailty(FrailtyScenario::standard(0.1, 2, GapEffect::Homogeneous, 20)),
            methods: vec![Method::Rwr, Method::WrFirst, Method::WrLast],
            ..small_copula()
        };
        f.grid.max_recurrences = Some(vec![2, 3]);
        f.grid.gap_effect = Some(vec![GapEffect::Heterogeneous]);
        let cells = f.cells().unwrap();
        match &cells[1].1 {
            Design::Frailty(s) => assert_eq!(s.alpha_recurrent, vec![0.1, 0.0, 0.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small_copula();
        c.replicates = 0;
        assert!(c.validate().is_err());
        let mut c = small_copula();
        c.grid.study_days = Some(vec![]);
        assert!(c.validate().is_err());
        let mut c = small_copula();
        c.methods.push(Method::WrFirst);
        assert!(c.validate().is_err());
    }

    #[test]
    fn emitted_files_are_deterministic() {
        let mut c = small_copula();
        c.replicates = 5;
        c.methods = vec![Method::Rwr, Method::LogRank];
        let dir = tempfile::tempdir().unwrap();
        let a = run_study(&c).unwrap();
        let (csv1, _) = emit_results(&a, &dir.path().join("a")).unwrap();
        let b = run_study(&c).unwrap();
        let (csv2, _) = emit_results(&b, &dir.path().join("b")).unwrap();
        let x = fs::read(csv1).unwrap();
        assert_eq!(x, fs::read(csv2).unwrap());
        let text = String::from_utf8(x).unwrap();
        // header + RWR(rejection, coverage, mean, reference, n) + logrank(rejection, mean, n)
        assert_eq!(text.lines().count(), 1 + 5 + 3);
    }

    #[test]
    fn rate_standard_error() {
        let r = Rate::from_hits(50, 1000);
        assert!((r.mc_se - (0.05f64 * 0.95 / 1000.0).sqrt()).abs() < 1e-15);
    }
}
