//! The TOML configuration file shared by every subcommand.
//!
//! ```toml
//! schema_version = 1
//! alpha = 0.05
//! hierarchy = [["death"], ["mi", "stroke"], ["hf"]]
//!
//! [[endpoints]]
//! id = "death"
//! kind = "time_to_event"
//! ```
//!
//! Top-level keys must precede the first `[table]` header, as usual in TOML.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rotwin_core::hierarchy::{validate_hierarchy, DEFAULT_ROTATION_CAP};
use rotwin_core::simgen::{CensoringScheme, CopulaScenario, FrailtyScenario, GapEffect};
use rotwin_core::study::{Grid, DEFAULT_REFERENCE_MULTIPLIER};
use rotwin_core::{Design, Direction, EndpointKind, EndpointSpec, Hierarchy, Method, StudyConfig};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

const DESK_N_PER_ARM: usize = 200;
const DESK_REPLICATES: usize = 1000;
const FULL_N_PER_ARM: usize = 600;
const FULL_REPLICATES: usize = 5000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_cap")]
    rotation_cap: usize,
    /// Blocks of endpoint ids, highest priority first.
    #[serde(default)]
    hierarchy: Vec<Vec<Spanned<String>>>,
    #[serde(default)]
    endpoints: Vec<RawEndpoint>,
    #[serde(default)]
    stratification: Stratification,
    #[serde(default)]
    bootstrap: BootstrapSettings,
    study: Option<StudySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEndpoint {
    id: Spanned<String>,
    kind: EndpointKind,
    /// Defaults to `larger_wins` for time-to-event endpoints; required otherwise.
    direction: Option<Direction>,
    #[serde(default)]
    margin: f64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_cap() -> usize {
    DEFAULT_ROTATION_CAP
}

fn default_min_per_arm() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stratification {
    /// Compare within the `stratum` column and combine by weight.
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub weights: Weights,
    /// Strata with fewer subjects in either arm cannot be analysed.
    #[serde(default = "default_min_per_arm")]
    pub min_per_arm: usize,
    /// Drop undersized strata (with a warning) instead of failing.
    #[serde(default)]
    pub exclude_small: bool,
}

impl Default for Stratification {
    fn default() -> Self {
        Self {
            enabled: false,
            weights: Weights::default(),
            min_per_arm: default_min_per_arm(),
            exclude_small: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Scheme(WeightScheme),
    /// Explicit weight per stratum label.
    Table(BTreeMap<String, f64>),
}

impl Default for Weights {
    fn default() -> Self {
        Weights::Scheme(WeightScheme::Equal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w = 1` for every stratum.
    Equal,
    /// `w = 1 / (N_t + N_c)`.
    InverseSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    /// Zero disables the bootstrap.
    #[serde(default)]
    pub replicates: usize,
    #[serde(default = "default_boot_seed")]
    pub seed: u64,
}

fn default_boot_seed() -> u64 {
    1
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 0,
            seed: default_boot_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Copula,
    Frailty,
}

/// Monte Carlo settings. Unset scenario parameters take the standard
/// simulation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub design: DesignKind,
    pub n_per_arm: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub methods: Option<Vec<Method>>,
    pub reference_multiplier: Option<usize>,
    pub study_days: Option<f64>,
    pub accrual_days: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub alpha_death: Option<f64>,
    pub lambda_death: Option<f64>,
    // copula design
    pub alpha_nonfatal: Option<Vec<f64>>,
    pub lambda_nonfatal: Option<Vec<f64>>,
    pub beta: Option<f64>,
    // frailty design
    pub max_recurrences: Option<usize>,
    pub gap_effect: Option<GapEffect>,
    pub lambda_recurrent: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(default)]
    pub grid: Grid,
}

impl StudySection {
    /// Resolves defaults. `paper_scale` forces the full-size sample and
    /// replicate count; `seed` overrides the file's seed.
    pub fn study_config(&self, paper_scale: bool, seed: Option<u64>) -> std::result::Result<StudyConfig, String> {
        let (n, reps) = if paper_scale {
            (FULL_N_PER_ARM, FULL_REPLICATES)
        } else {
            (
                self.n_per_arm.unwrap_or(DESK_N_PER_ARM),
                self.replicates.unwrap_or(DESK_REPLICATES),
            )
        };
        let days = self.study_days.unwrap_or(1000.0);
        let mut censoring = CensoringScheme::standard(days);
        if let Some(a) = self.accrual_days {
            censoring.accrual_days = a;
        }
        if let Some(d) = self.dropout_rate {
            censoring.dropout_rate = d;
        }
        let alpha_death = self.alpha_death.unwrap_or(0.0);

        let design = match self.design {
            DesignKind::Copula => {
                if self.max_recurrences.is_some() || self.gap_effect.is_some() || self.gamma.is_some() {
                    return Err("max_recurrences, gap_effect and gamma apply to the frailty design only".into());
                }
                let mut s = CopulaScenario::standard([0.0; 3], days, n);
                if let Some(l) = &self.lambda_nonfatal {
                    s.lambda_nonfatal = l.clone();
                }
                s.alpha_nonfatal = self
                    .alpha_nonfatal
                    .clone()
                    .unwrap_or_else(|| vec![0.0; s.lambda_nonfatal.len()]);
                s.alpha_death = alpha_death;
                if let Some(l) = self.lambda_death {
                    s.lambda_death = l;
                }
                if let Some(b) = self.beta {
                    s.beta = b;
                }
                s.censoring = censoring;
                Design::Copula(s)
            }
            DesignKind::Frailty => {
                if self.alpha_nonfatal.is_some() || self.lambda_nonfatal.is_some() || self.beta.is_some() {
                    return Err("alpha_nonfatal, lambda_nonfatal and beta apply to the copula design only".into());
                }
                let mut s = FrailtyScenario::standard(
                    alpha_death,
                    self.max_recurrences.unwrap_or(3),
                    self.gap_effect.unwrap_or(GapEffect::Homogeneous),
                    n,
                );
                if let Some(l) = self.lambda_death {
                    s.lambda_death = l;
                }
                if let Some(l) = self.lambda_recurrent {
                    s.lambda_recurrent = l;
                }
                if let Some(g) = self.gamma {
                    s.gamma = g;
                }
                s.censoring = censoring;
                Design::Frailty(s)
            }
        };
        Ok(StudyConfig {
            design,
            grid: self.grid.clone(),
            replicates: reps,
            alpha: self.alpha.unwrap_or(0.05),
            methods: self.methods.clone().unwrap_or_else(|| default_methods(self.design)),
            seed: seed.or(self.seed).unwrap_or(1),
            reference_multiplier: self.reference_multiplier.unwrap_or(DEFAULT_REFERENCE_MULTIPLIER),
        })
    }
}

/// Every method that applies to the design.
fn default_methods(design: DesignKind) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| design == DesignKind::Frailty || !matches!(m, Method::WrFirst | Method::WrLast))
        .collect()
}

/// Endpoint and hierarchy settings needed to analyse a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub endpoints: Vec<EndpointSpec>,
    pub hierarchy: Hierarchy,
    pub alpha: f64,
    pub rotation_cap: usize,
    pub stratification: Stratification,
    pub bootstrap: BootstrapSettings,
}

impl AnalysisConfig {
    pub fn endpoint_ids(&self) -> Vec<&str> {
        self.endpoints.iter().map(|e| e.id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub name: String,
    pub schema_version: u32,
    /// `None` when the file declares no endpoints.
    pub analysis: Option<AnalysisConfig>,
    pub study: Option<StudySection>,
}

impl ConfigFile {
    pub fn require_analysis(&self) -> Result<&AnalysisConfig> {
        self.analysis.as_ref().ok_or_else(|| CliError::Config {
            file: self.name.clone(),
            message: "no [[endpoints]] declared; analysis needs endpoints and a hierarchy".into(),
        })
    }

    pub fn require_study(&self) -> Result<&StudySection> {
        self.study.as_ref().ok_or_else(|| CliError::Config {
            file: self.name.clone(),
            message: "no [study] section declared".into(),
        })
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

pub fn parse_config(text: &str, name: &str) -> Result<ConfigFile> {
    let err = |message: String| CliError::Config {
        file: name.to_string(),
        message,
    };
    let at = |span: std::ops::Range<usize>, message: String| {
        let (line, col) = position(text, span.start);
        err(format!("line {line}, column {col}: {message}"))
    };

    // toml's own messages already carry line and column
    let raw: RawConfig = toml::from_str(text).map_err(|e| err(e.to_string().trim_end().to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(err(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            raw.schema_version
        )));
    }
    if !(raw.alpha > 0.0 && raw.alpha < 1.0) {
        return Err(err(format!("alpha must lie in (0, 1), got {}", raw.alpha)));
    }
    if raw.stratification.min_per_arm < 2 {
        return Err(err("stratification.min_per_arm must be at least 2".into()));
    }
    if let Weights::Table(t) = &raw.stratification.weights {
        if let Some((k, w)) = t.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(err(format!("stratification.weights: stratum '{k}' has nonpositive weight {w}")));
        }
    }
    if raw.bootstrap.replicates != 0 && raw.bootstrap.replicates < 100 {
        return Err(err(format!(
            "bootstrap.replicates must be 0 (off) or at least 100, got {}",
            raw.bootstrap.replicates
        )));
    }

    let analysis = if raw.endpoints.is_empty() {
        if let Some(first) = raw.hierarchy.iter().flatten().next() {
            return Err(at(first.span(), "hierarchy given but no [[endpoints]] declared".into()));
        }
        None
    } else {
        let mut endpoints = Vec::with_capacity(raw.endpoints.len());
        let mut index: HashMap<&str, usize> = HashMap::new();
        for e in &raw.endpoints {
            let id = e.id.get_ref();
            if id.is_empty() {
                return Err(at(e.id.span(), "endpoint id must not be empty".into()));
            }
            if index.insert(id.as_str(), endpoints.len()).is_some() {
                return Err(at(e.id.span(), format!("endpoint id '{id}' is declared twice")));
            }
            let direction = match (e.direction, e.kind) {
                (Some(d), _) => d,
                (None, EndpointKind::TimeToEvent) => Direction::LargerWins,
                (None, kind) => {
                    return Err(at(
                        e.id.span(),
                        format!("endpoint '{id}' ({kind}) needs an explicit direction"),
                    ))
                }
            };
            if !(e.margin >= 0.0 && e.margin.is_finite()) {
                return Err(at(e.id.span(), format!("endpoint '{id}' has invalid margin {}", e.margin)));
            }
            endpoints.push(EndpointSpec::new(id.clone(), e.kind, direction).with_margin(e.margin));
        }
        if raw.hierarchy.is_empty() {
            return Err(err("endpoints declared but no hierarchy given".into()));
        }
        let mut seen = HashMap::new();
        let mut blocks = Vec::with_capacity(raw.hierarchy.len());
        for block in &raw.hierarchy {
            let mut b = Vec::with_capacity(block.len());
            for id in block {
                let Some(&i) = index.get(id.get_ref().as_str()) else {
                    return Err(at(id.span(), format!("hierarchy names unknown endpoint '{}'", id.get_ref())));
                };
                if seen.insert(i, ()).is_some() {
                    return Err(at(id.span(), format!("endpoint '{}' appears twice in the hierarchy", id.get_ref())));
                }
                b.push(i);
            }
            blocks.push(b);
        }
        let hierarchy = Hierarchy::unchecked(blocks);
        let report = validate_hierarchy(&hierarchy, &endpoints, raw.rotation_cap);
        if !report.is_valid() {
            let ids: Vec<&str> = endpoints.iter().map(|e| e.id.as_str()).collect();
            let msgs: Vec<String> = report.findings.iter().map(|f| describe(f, &ids)).collect();
            return Err(err(format!("invalid hierarchy: {}", msgs.join("; "))));
        }
        Some(AnalysisConfig {
            endpoints,
            hierarchy,
            alpha: raw.alpha,
            rotation_cap: raw.rotation_cap,
            stratification: raw.stratification,
            bootstrap: raw.bootstrap,
        })
    };

    if let Some(s) = &raw.study {
        s.study_config(false, None)
            .and_then(|c| c.validate().map_err(|e| e.to_string()))
            .map_err(|m| err(format!("[study]: {m}")))?;
    }

    Ok(ConfigFile {
        name: name.to_string(),
        schema_version: raw.schema_version,
        analysis,
        study: raw.study,
    })
}

/// Finding text with endpoint ids in place of indices.
fn describe(f: &rotwin_core::hierarchy::Finding, ids: &[&str]) -> String {
    use rotwin_core::hierarchy::Finding;
    match f {
        Finding::MissingIndex { index } => format!("endpoint '{}' is not assigned to any block", ids[*index]),
        Finding::EmptyBlock { block } => format!("block {} is empty", block + 1),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
hierarchy = [["death"], ["mi", "stroke"]]

[[endpoints]]
id = "death"
kind = "time_to_event"

[[endpoints]]
id = "mi"
kind = "time_to_event"

[[endpoints]]
id = "stroke"
kind = "time_to_event"
"#;

    #[test]
    fn parses_minimal_config() {
        let c = parse_config(BASE, "c.toml").unwrap();
        let a = c.analysis.unwrap();
        assert_eq!(a.hierarchy.blocks(), &[vec![0], vec![1, 2]]);
        assert_eq!(a.alpha, 0.05);
        assert_eq!(a.stratification.weights, Weights::Scheme(WeightScheme::Equal));
        assert!(c.study.is_none());
    }

    #[test]
    fn unknown_endpoint_is_located() {
        let text = BASE.replace("\"stroke\"]]", "\"strok\"]]");
        let e = parse_config(&text, "c.toml").unwrap_err().to_string();
        assert!(e.contains("line 3, column"), "{e}");
        assert!(e.contains("'strok'"), "{e}");
    }

    #[test]
    fn missing_block_and_cap_are_reported() {
        let text = BASE.replace("[[\"death\"], [\"mi\", \"stroke\"]]", "[[\"death\"], [\"mi\"]]");
        let e = parse_config(&text, "c.toml").unwrap_err().to_string();
        assert!(e.contains("'stroke' is not assigned"), "{e}");

        let text = BASE.replace("schema_version = 1", "schema_version = 1\nrotation_cap = 1");
        let e = parse_config(&text, "c.toml").unwrap_err().to_string();
        assert!(e.contains("exceed the cap"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_config("schema_version = \n", "c.toml").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        let e = parse_config("schema_version = 2", "c.toml").unwrap_err().to_string();
        assert!(e.contains("schema_version 2"), "{e}");
    }

    #[test]
    fn weight_forms() {
        let text = format!("{BASE}\n[stratification]\nenabled = true\nweights = \"inverse_size\"\n");
        let a = parse_config(&text, "c").unwrap().analysis.unwrap();
        assert_eq!(a.stratification.weights, Weights::Scheme(WeightScheme::InverseSize));
        let text = format!("{BASE}\n[stratification]\nweights = {{ a = 1.0, b = 2.5 }}\n");
        let a = parse_config(&text, "c").unwrap().analysis.unwrap();
        assert!(matches!(a.stratification.weights, Weights::Table(ref t) if t["b"] == 2.5));
        let text = format!("{BASE}\n[stratification]\nweights = {{ a = -1.0 }}\n");
        assert!(parse_config(&text, "c").is_err());
    }

    #[test]
    fn study_section_defaults_and_scale() {
        let text = "schema_version = 1\n[study]\ndesign = \"copula\"\nalpha_nonfatal = [0.15, 0.15, 0.15]\n";
        let c = parse_config(text, "c").unwrap();
        let s = c.study.unwrap();
        let desk = s.study_config(false, None).unwrap();
        assert_eq!(desk.design.n_per_arm(), 200);
        assert_eq!(desk.replicates, 1000);
        let full = s.study_config(true, Some(9)).unwrap();
        assert_eq!(full.design.n_per_arm(), 600);
        assert_eq!(full.replicates, 5000);
        assert_eq!(full.seed, 9);

        let bad = "schema_version = 1\n[study]\ndesign = \"copula\"\ngamma = 0.2\n";
        assert!(parse_config(bad, "c").is_err());
    }
}
