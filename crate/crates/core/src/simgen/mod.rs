//! Synthetic trial data for the two simulation designs.
//!
//! * [`CopulaScenario`]: one fatal and several non-fatal time-to-event
//!   endpoints with exponential margins coupled by a Gumbel–Hougaard copula.
//! * [`FrailtyScenario`]: a fatal event and a recurrent non-fatal event whose
//!   gap times share a Gamma frailty with the death time.
//!
//! Both designs apply uniform accrual, exponential dropout and
//! administrative censoring at the end of the study. Every subject draws
//! from its own substream, so a dataset depends only on the scenario, the
//! seed and the replicate index.

mod copula;
mod logrank;

pub use copula::{gumbel_exponential_times, positive_stable};
pub use logrank::{logrank_test, LogRankResult};

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{Arm, Outcome, Subject};
use crate::error::{Error, Result};
use crate::hierarchy::{Direction, EndpointKind, EndpointSpec, Hierarchy};
use crate::rng::substream;

/// Entry, dropout and study-end rules shared by both designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringScheme {
    pub study_days: f64,
    pub accrual_days: f64,
    /// Exponential dropout hazard per day; zero disables dropout.
    pub dropout_rate: f64,
}

impl CensoringScheme {
    pub fn standard(study_days: f64) -> Self {
        Self {
            study_days,
            accrual_days: 200.0,
            dropout_rate: 0.00016,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.accrual_days >= 0.0 && self.study_days > self.accrual_days) {
            return Err(Error::config(format!(
                "need study_days > accrual_days >= 0 (got {} and {})",
                self.study_days, self.accrual_days
            )));
        }
        if !(self.dropout_rate >= 0.0) {
            return Err(Error::config("dropout_rate must be nonnegative"));
        }
        Ok(())
    }

    /// `min(study_days − entry, dropout)` measured from the subject's entry.
    pub fn censor_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let entry = self.accrual_days * rng.random::<f64>();
        let dropout = if self.dropout_rate > 0.0 {
            Exp::new(self.dropout_rate).expect("validated rate").sample(rng)
        } else {
            f64::INFINITY
        };
        (self.study_days - entry).min(dropout)
    }
}

/// Gumbel–Hougaard copula design: death plus non-fatal events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaScenario {
    pub lambda_death: f64,
    pub lambda_nonfatal: Vec<f64>,
    /// Copula parameter; Kendall's tau between any two times is `1 − 1/β`.
    pub beta: f64,
    /// Log-hazard reduction on death for treated subjects.
    pub alpha_death: f64,
    pub alpha_nonfatal: Vec<f64>,
    pub censoring: CensoringScheme,
    pub n_per_arm: usize,
}

impl CopulaScenario {
    /// Baseline hazards and dependence of the multiple time-to-event design
    /// with the given non-fatal effects.
    pub fn standard(alpha_nonfatal: [f64; 3], study_days: f64, n_per_arm: usize) -> Self {
        Self {
            lambda_death: 0.0008,
            lambda_nonfatal: vec![0.002, 0.0015, 0.001],
            beta: 1.1,
            alpha_death: 0.2,
            alpha_nonfatal: alpha_nonfatal.to_vec(),
            censoring: CensoringScheme::standard(study_days),
            n_per_arm,
        }
    }

    /// Same design with every treatment effect set to zero.
    pub fn standard_null(study_days: f64, n_per_arm: usize) -> Self {
        Self {
            alpha_death: 0.0,
            ..Self::standard([0.0; 3], study_days, n_per_arm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0) {
            return Err(Error::config(format!("copula beta must be >= 1, got {}", self.beta)));
        }
        if self.lambda_nonfatal.len() != self.alpha_nonfatal.len() {
            return Err(Error::config("lambda_nonfatal and alpha_nonfatal differ in length"));
        }
        if self.lambda_nonfatal.len() + 1 > 32 {
            return Err(Error::config("too many non-fatal endpoints"));
        }
        if !(self.lambda_death >= 0.0) || self.lambda_nonfatal.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::config("hazards must be nonnegative"));
        }
        if self.n_per_arm == 0 {
            return Err(Error::config("n_per_arm must be positive"));
        }
        self.censoring.validate()
    }

    pub fn is_null(&self) -> bool {
        self.alpha_death == 0.0 && self.alpha_nonfatal.iter().all(|a| *a == 0.0)
    }

    /// `death`, then `nonfatal1..K`, all survival-type.
    pub fn endpoints(&self) -> Vec<EndpointSpec> {
        std::iter::once(EndpointSpec::survival("death"))
            .chain((1..=self.lambda_nonfatal.len()).map(|k| EndpointSpec::survival(format!("nonfatal{k}"))))
            .collect()
    }

    /// Death first, all non-fatal endpoints in one equal-priority block.
    pub fn hierarchy(&self) -> Hierarchy {
        Hierarchy::unchecked(vec![vec![0], (1..=self.lambda_nonfatal.len()).collect()])
    }
}

/// Latent (uncensored) event times of one copula-design subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCopula {
    pub death: f64,
    pub nonfatal: Vec<f64>,
}

fn treated_factor(arm: Arm, alpha: f64) -> f64 {
    match arm {
        Arm::Treatment => (-alpha).exp(),
        Arm::Control => 1.0,
    }
}

/// Latent times for one subject; hazards are `λ · exp(−α Z)`.
pub fn sample_copula_subject<R: Rng + ?Sized>(
    scenario: &CopulaScenario,
    arm: Arm,
    rng: &mut R,
) -> LatentCopula {
    let hazards: Vec<f64> = std::iter::once(scenario.lambda_death * treated_factor(arm, scenario.alpha_death))
        .chain(
            scenario
                .lambda_nonfatal
                .iter()
                .zip(&scenario.alpha_nonfatal)
                .map(|(l, a)| l * treated_factor(arm, *a)),
        )
        .collect();
    let times = gumbel_exponential_times(rng, &hazards, scenario.beta);
    LatentCopula {
        death: times[0],
        nonfatal: times[1..].to_vec(),
    }
}

/// Fatal and recurrent-event design with a shared Gamma frailty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyScenario {
    pub lambda_death: f64,
    pub lambda_recurrent: f64,
    /// Frailty variance; the frailty is Gamma with shape and rate `1/γ`.
    pub gamma: f64,
    pub alpha_death: f64,
    /// Treatment effect on each gap time; its length is the maximum number of recurrences.
    pub alpha_recurrent: Vec<f64>,
    pub censoring: CensoringScheme,
    pub n_per_arm: usize,
}

/// How the treatment acts on the recurrent gap times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapEffect {
    /// Every gap shares the effect on death.
    Homogeneous,
    /// Only the first gap is affected.
    Heterogeneous,
}

impl FrailtyScenario {
    pub fn standard(alpha_death: f64, max_recurrences: usize, effect: GapEffect, n_per_arm: usize) -> Self {
        let alpha_recurrent = (0..max_recurrences)
            .map(|j| match effect {
                GapEffect::Homogeneous => alpha_death,
                GapEffect::Heterogeneous if j == 0 => alpha_death,
                GapEffect::Heterogeneous => 0.0,
            })
            .collect();
        Self {
            lambda_death: 0.0008,
            lambda_recurrent: 0.01,
            gamma: 0.2,
            alpha_death,
            alpha_recurrent,
            censoring: CensoringScheme::standard(1000.0),
            n_per_arm,
        }
    }

    pub fn max_recurrences(&self) -> usize {
        self.alpha_recurrent.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config(format!("frailty gamma must be > 0, got {}", self.gamma)));
        }
        if self.alpha_recurrent.is_empty() {
            return Err(Error::config("at least one recurrence (J >= 1) is required"));
        }
        if !(self.lambda_death >= 0.0 && self.lambda_recurrent >= 0.0) {
            return Err(Error::config("hazards must be nonnegative"));
        }
        if self.n_per_arm == 0 {
            return Err(Error::config("n_per_arm must be positive"));
        }
        self.censoring.validate()
    }

    pub fn is_null(&self) -> bool {
        self.alpha_death == 0.0 && self.alpha_recurrent.iter().all(|a| *a == 0.0)
    }

    /// `death`, `nre` (fewer is better), `frt`, `lrt`.
    pub fn endpoints(&self) -> Vec<EndpointSpec> {
        frailty_endpoints()
    }

    /// Death, then recurrence count, then first and last recurrence time at equal priority.
    pub fn hierarchy(&self) -> Hierarchy {
        Hierarchy::unchecked(vec![vec![0], vec![1], vec![2, 3]])
    }
}

pub fn frailty_endpoints() -> Vec<EndpointSpec> {
    vec![
        EndpointSpec::survival("death"),
        EndpointSpec::new("nre", EndpointKind::EventCount, Direction::SmallerWins),
        EndpointSpec::survival("frt"),
        EndpointSpec::survival("lrt"),
    ]
}

/// Latent times of one frailty-design subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecurrent {
    pub frailty: f64,
    pub death: f64,
    /// Gap times `U_1..U_J`.
    pub gaps: Vec<f64>,
}

impl LatentRecurrent {
    /// Event times `T_j = U_1 + ... + U_j`.
    pub fn event_times(&self) -> Vec<f64> {
        self.gaps
            .iter()
            .scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect()
    }
}

pub fn sample_frailty_subject<R: Rng + ?Sized>(
    scenario: &FrailtyScenario,
    arm: Arm,
    rng: &mut R,
) -> LatentRecurrent {
    let shape = 1.0 / scenario.gamma;
    let frailty = Gamma::new(shape, scenario.gamma)
        .expect("validated frailty variance")
        .sample(rng);
    let mut exp = |rate: f64| -> f64 {
        if rate > 0.0 {
            Exp::new(rate).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        }
    };
    let death = exp(scenario.lambda_death * treated_factor(arm, scenario.alpha_death) * frailty);
    let gaps = scenario
        .alpha_recurrent
        .iter()
        .map(|a| exp(scenario.lambda_recurrent * treated_factor(arm, *a) * frailty))
        .collect();
    LatentRecurrent {
        frailty,
        death,
        gaps,
    }
}

/// Latent data of either design.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Copula(LatentCopula),
    Recurrent(LatentRecurrent),
}

/// Observed outcomes after censoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub outcomes: Vec<Outcome>,
    /// `min(C, D)`: time under observation.
    pub followup: f64,
}

/// Censors latent outcomes at `censor` (days since entry).
///
/// Death censors every non-fatal endpoint. For recurrent events the
/// outcomes are the number of observed recurrences, the first recurrence
/// time and the last recurrence time, the latter two censored at follow-up
/// when no recurrence was observed.
pub fn observe(latent: &Latent, censor: f64) -> Observed {
    match latent {
        Latent::Copula(l) => {
            let followup = l.death.min(censor);
            let mut outcomes = Vec::with_capacity(1 + l.nonfatal.len());
            outcomes.push(Outcome::TimeToEvent {
                time: followup,
                event: l.death <= censor,
            });
            for &h in &l.nonfatal {
                outcomes.push(if h < l.death && h <= censor {
                    Outcome::TimeToEvent { time: h, event: true }
                } else {
                    Outcome::TimeToEvent {
                        time: followup,
                        event: false,
                    }
                });
            }
            Observed { outcomes, followup }
        }
        Latent::Recurrent(l) => {
            let followup = l.death.min(censor);
            let seen: Vec<f64> = l
                .event_times()
                .into_iter()
                .take_while(|&t| t <= followup && t < l.death)
                .collect();
            let at = |t: Option<&f64>| match t {
                Some(&time) => Outcome::TimeToEvent { time, event: true },
                None => Outcome::TimeToEvent {
                    time: followup,
                    event: false,
                },
            };
            Observed {
                outcomes: vec![
                    Outcome::TimeToEvent {
                        time: followup,
                        event: l.death <= censor,
                    },
                    Outcome::EventCount {
                        count: seen.len() as u32,
                    },
                    at(seen.first()),
                    at(seen.last()),
                ],
                followup,
            }
        }
    }
}

/// Draws a censoring time from `scheme` and applies it.
pub fn apply_censoring<R: Rng + ?Sized>(latent: &Latent, scheme: &CensoringScheme, rng: &mut R) -> Observed {
    let c = scheme.censor_time(rng);
    observe(latent, c)
}

/// Either simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    Copula(CopulaScenario),
    Frailty(FrailtyScenario),
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        match self {
            Design::Copula(s) => s.validate(),
            Design::Frailty(s) => s.validate(),
        }
    }

    pub fn endpoints(&self) -> Vec<EndpointSpec> {
        match self {
            Design::Copula(s) => s.endpoints(),
            Design::Frailty(s) => s.endpoints(),
        }
    }

    pub fn hierarchy(&self) -> Hierarchy {
        match self {
            Design::Copula(s) => s.hierarchy(),
            Design::Frailty(s) => s.hierarchy(),
        }
    }

    pub fn n_per_arm(&self) -> usize {
        match self {
            Design::Copula(s) => s.n_per_arm,
            Design::Frailty(s) => s.n_per_arm,
        }
    }

    pub fn set_n_per_arm(&mut self, n: usize) {
        match self {
            Design::Copula(s) => s.n_per_arm = n,
            Design::Frailty(s) => s.n_per_arm = n,
        }
    }

    pub fn censoring(&self) -> &CensoringScheme {
        match self {
            Design::Copula(s) => &s.censoring,
            Design::Frailty(s) => &s.censoring,
        }
    }

    pub fn is_null(&self) -> bool {
        match self {
            Design::Copula(s) => s.is_null(),
            Design::Frailty(s) => s.is_null(),
        }
    }

    /// Latent data and censoring for subject `index` (treated `0..n`, control `n..2n`).
    fn subject(&self, seed: u64, replicate: u64, index: usize) -> Subject {
        let n = self.n_per_arm();
        let arm = if index < n { Arm::Treatment } else { Arm::Control };
        let mut rng = substream(seed, &[replicate], index as u64);
        let (latent, scheme) = match self {
            Design::Copula(s) => (Latent::Copula(sample_copula_subject(s, arm, &mut rng)), &s.censoring),
            Design::Frailty(s) => (Latent::Recurrent(sample_frailty_subject(s, arm, &mut rng)), &s.censoring),
        };
        let obs = apply_censoring(&latent, scheme, &mut rng);
        let id = match arm {
            Arm::Treatment => format!("T{:05}", index + 1),
            Arm::Control => format!("C{:05}", index - n + 1),
        };
        Subject {
            id,
            arm,
            stratum: "all".into(),
            outcomes: obs.outcomes,
            followup: Some(obs.followup),
        }
    }

    /// One simulated trial: `n_per_arm` treated subjects followed by `n_per_arm` controls.
    pub fn generate(&self, seed: u64, replicate: u64) -> Result<Vec<Subject>> {
        self.validate()?;
        let total = 2 * self.n_per_arm();
        Ok((0..total)
            .into_par_iter()
            .map(|i| self.subject(seed, replicate, i))
            .collect())
    }
}

/// Time to the first observed event over all time-to-event endpoints,
/// censored at the subject's earliest censoring time when none occurred.
pub fn first_event(subject: &Subject) -> (f64, bool) {
    let mut first_event: Option<f64> = None;
    let mut censor = subject.followup.unwrap_or(f64::INFINITY);
    for o in &subject.outcomes {
        if let Outcome::TimeToEvent { time, event } = *o {
            if event {
                first_event = Some(first_event.map_or(time, |f: f64| f.min(time)));
            } else {
                censor = censor.min(time);
            }
        }
    }
    match first_event {
        Some(t) => (t, true),
        None => (censor, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_dropout_no_accrual_censors_at_study_end() {
        let scheme = CensoringScheme {
            study_days: 500.0,
            accrual_days: 0.0,
            dropout_rate: 0.0,
        };
        let mut rng = substream(1, &[], 0);
        for _ in 0..100 {
            assert_eq!(scheme.censor_time(&mut rng), 500.0);
        }
    }

    #[test]
    fn death_censors_nonfatal_events() {
        let latent = Latent::Copula(LatentCopula {
            death: 100.0,
            nonfatal: vec![150.0, 400.0, 120.0],
        });
        let obs = observe(&latent, 300.0);
        assert_eq!(obs.followup, 100.0);
        assert_eq!(obs.outcomes[0], Outcome::TimeToEvent { time: 100.0, event: true });
        for o in &obs.outcomes[1..] {
            assert_eq!(*o, Outcome::TimeToEvent { time: 100.0, event: false });
        }
    }

    #[test]
    fn recurrences_observed_until_censoring() {
        let latent = Latent::Recurrent(LatentRecurrent {
            frailty: 1.0,
            death: 900.0,
            gaps: vec![100.0, 200.0],
        });
        let obs = observe(&latent, 250.0);
        assert_eq!(obs.followup, 250.0);
        assert_eq!(
            obs.outcomes,
            vec![
                Outcome::TimeToEvent { time: 250.0, event: false },
                Outcome::EventCount { count: 1 },
                Outcome::TimeToEvent { time: 100.0, event: true },
                Outcome::TimeToEvent { time: 100.0, event: true },
            ]
        );
        let none = observe(&latent, 50.0);
        assert_eq!(none.outcomes[1], Outcome::EventCount { count: 0 });
        assert_eq!(none.outcomes[3], Outcome::TimeToEvent { time: 50.0, event: false });
    }

    #[test]
    fn generation_is_seeded() {
        let d = Design::Copula(CopulaScenario::standard([0.15; 3], 750.0, 30));
        let a = d.generate(5, 0).unwrap();
        let b = d.generate(5, 0).unwrap();
        let c = d.generate(5, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.iter().filter(|s| s.arm == Arm::Treatment).count(), 30);
        for s in &a {
            s.check(&d.endpoints()).unwrap();
        }
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = CopulaScenario::standard([0.1; 3], 750.0, 10);
        s.beta = 0.9;
        assert!(s.validate().is_err());
        let mut f = FrailtyScenario::standard(0.1, 2, GapEffect::Homogeneous, 10);
        f.gamma = 0.0;
        assert!(f.validate().is_err());
        f.gamma = 0.2;
        f.censoring.accrual_days = 2000.0;
        assert!(f.validate().is_err());
    }

    #[test]
    fn first_event_time() {
        let s = Subject {
            id: "x".into(),
            arm: Arm::Control,
            stratum: String::new(),
            outcomes: vec![
                Outcome::TimeToEvent { time: 300.0, event: false },
                Outcome::TimeToEvent { time: 120.0, event: true },
                Outcome::TimeToEvent { time: 80.0, event: true },
            ],
            followup: Some(300.0),
        };
        assert_eq!(first_event(&s), (80.0, true));
    }
}
