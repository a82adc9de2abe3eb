//! Point estimates, Wald intervals and tests for the rotation win ratio,
//! net benefit and win odds, unstratified or stratified.
//!
//! All three measures are functions of the total wins `N_+` and total losses
//! `N_-` over the rotation set. Their asymptotic variances come from
//! `Λ = G Σ Gᵀ`, the covariance of `(N_+, N_-)`, via the delta method. Tests
//! recompute `Λ` with every covariance entry centred at the null value
//! `(θ_t^(k) + θ_c^(k)) / 2`.

mod bootstrap;
mod covariance;

pub use bootstrap::{bootstrap_ci, BootstrapInterval, BootstrapResult, BootstrapStratum};
pub use covariance::{covariance_matrix, estimate_theta, CovarianceMatrix, ThetaVector};

use serde::Serialize;

use crate::compare::{PairSummary, WinCounts};
use crate::error::{Error, Result};
use crate::stats::{normal_quantile, two_sided_p};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Measure {
    #[serde(rename = "RWR")]
    WinRatio,
    #[serde(rename = "RNB")]
    NetBenefit,
    #[serde(rename = "RWO")]
    WinOdds,
}

impl Measure {
    pub fn label(self) -> &'static str {
        match self {
            Measure::WinRatio => "RWR",
            Measure::NetBenefit => "RNB",
            Measure::WinOdds => "RWO",
        }
    }

    /// Value of the measure under no treatment effect.
    pub fn null_value(self) -> f64 {
        match self {
            Measure::NetBenefit => 0.0,
            _ => 1.0,
        }
    }
}

/// Why a point estimate cannot support an interval or test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    NoLosses,
    NoWins,
    NoInformativePairs,
}

impl Degeneracy {
    pub fn message(self) -> &'static str {
        match self {
            Degeneracy::NoLosses => "degenerate: no losses",
            Degeneracy::NoWins => "degenerate: no wins",
            Degeneracy::NoInformativePairs => "degenerate: every comparison is tied",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointEstimate {
    /// `+inf` when there are no losses.
    pub value: f64,
    pub degenerate: Option<Degeneracy>,
}

/// `Σ_k n_t^(k) / Σ_k n_c^(k)`.
pub fn rwr_estimate(counts: &WinCounts) -> PointEstimate {
    ratio_estimate(counts.total_wins() as f64, counts.total_losses() as f64)
}

fn ratio_estimate(wins: f64, losses: f64) -> PointEstimate {
    let degenerate = if wins == 0.0 && losses == 0.0 {
        Some(Degeneracy::NoInformativePairs)
    } else if losses == 0.0 {
        Some(Degeneracy::NoLosses)
    } else if wins == 0.0 {
        Some(Degeneracy::NoWins)
    } else {
        None
    };
    let value = if losses == 0.0 {
        if wins == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        wins / losses
    };
    PointEstimate { value, degenerate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub measure: Measure,
    pub estimate: f64,
    /// Scale on which the Wald interval is built.
    pub scale: Scale,
    /// Variance of the estimate on `scale`.
    pub variance: f64,
    /// Same, with the covariance centred at the null.
    pub null_variance: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Null-centred test statistic.
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub stratified: bool,
}

impl InferenceResult {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn rejects(&self) -> bool {
        self.p_value < self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub z: f64,
    pub null_variance: f64,
    pub p_value: f64,
}

/// One stratum's contribution to a (possibly single-stratum) analysis.
#[derive(Debug, Clone)]
pub struct StratumInput<'a> {
    pub label: String,
    pub weight: f64,
    pub counts: &'a WinCounts,
    pub summary: &'a PairSummary,
}

#[derive(Debug, Clone, Default)]
pub struct StratifiedInput<'a> {
    pub strata: Vec<StratumInput<'a>>,
}

/// RWR, RNB and RWO from the same pairwise results. Each measure fails
/// independently when its own estimate is degenerate.
#[derive(Debug)]
pub struct WinStatistics {
    pub wins: f64,
    pub losses: f64,
    pub ties: f64,
    pub rwr: Result<InferenceResult>,
    pub rnb: Result<InferenceResult>,
    pub rwo: Result<InferenceResult>,
}

/// Weighted totals and the collapsed covariances `Λ` (observed and null-centred).
#[derive(Debug, Clone, Copy)]
struct Moments {
    wins: f64,
    losses: f64,
    /// `p Σ_s w^(s) N_t^(s) N_c^(s)`.
    total: f64,
    lambda: [f64; 3],
    lambda_null: [f64; 3],
    stratified: bool,
}

impl Moments {
    fn from_strata(input: &StratifiedInput<'_>, stratified: bool) -> Result<Self> {
        let Some(first) = input.strata.first() else {
            return Err(Error::analysis("no strata supplied"));
        };
        let p = first.counts.num_rotations();
        let mut m = Moments {
            wins: 0.0,
            losses: 0.0,
            total: 0.0,
            lambda: [0.0; 3],
            lambda_null: [0.0; 3],
            stratified,
        };
        for s in &input.strata {
            if !(s.weight > 0.0) || !s.weight.is_finite() {
                return Err(Error::config(format!(
                    "stratum '{}' has nonpositive weight {}",
                    s.label, s.weight
                )));
            }
            if s.counts.n_treated < 2 || s.counts.n_control < 2 {
                return Err(Error::analysis(format!(
                    "stratum '{}' has {} treated and {} control subjects; at least 2 per arm are needed (exclude it)",
                    s.label, s.counts.n_treated, s.counts.n_control
                )));
            }
            if s.counts.num_rotations() != p || s.summary.rotations != p {
                return Err(Error::analysis(format!(
                    "stratum '{}' was compared under a different rotation set",
                    s.label
                )));
            }
            let theta = estimate_theta(s.counts);
            let lam = covariance_matrix(s.summary, &theta)?.collapse();
            let lam0 = covariance_matrix(s.summary, &theta.null_centered())?.collapse();
            let w = s.weight;
            let w2 = w * w;
            m.wins += w * s.counts.total_wins() as f64;
            m.losses += w * s.counts.total_losses() as f64;
            m.total += w * (s.counts.pairs() * p as u64) as f64;
            for r in 0..3 {
                m.lambda[r] += w2 * lam[r];
                m.lambda_null[r] += w2 * lam0[r];
            }
        }
        Ok(m)
    }

    fn ties(&self) -> f64 {
        self.total - self.wins - self.losses
    }

    /// `Λ11 + Λ22 − 2Λ12`.
    fn contrast(lam: [f64; 3]) -> f64 {
        lam[0] + lam[1] - 2.0 * lam[2]
    }

    fn rwr(&self, alpha: f64) -> Result<InferenceResult> {
        let est = ratio_estimate(self.wins, self.losses);
        if let Some(d) = est.degenerate {
            return Err(Error::inference(d.message()));
        }
        // Ω = D Λ D with D = diag(1/N_+, 1/N_-)
        let [l11, l22, l12] = self.lambda;
        let variance = l11 / (self.wins * self.wins) + l22 / (self.losses * self.losses)
            - 2.0 * l12 / (self.wins * self.losses);
        let nu0 = (self.wins + self.losses) / 2.0;
        let null_variance = Self::contrast(self.lambda_null) / (nu0 * nu0);
        self.finish(Measure::WinRatio, est.value, Scale::Log, variance, null_variance, alpha)
    }

    fn rnb(&self, alpha: f64) -> Result<InferenceResult> {
        let estimate = (self.wins - self.losses) / self.total;
        let t2 = self.total * self.total;
        let variance = Self::contrast(self.lambda) / t2;
        let null_variance = Self::contrast(self.lambda_null) / t2;
        self.finish(Measure::NetBenefit, estimate, Scale::Linear, variance, null_variance, alpha)
    }

    fn rwo(&self, alpha: f64) -> Result<InferenceResult> {
        let ties = self.ties();
        let num = self.wins + 0.5 * ties;
        let den = self.losses + 0.5 * ties;
        if den == 0.0 {
            return Err(Error::inference(Degeneracy::NoLosses.message()));
        }
        if num == 0.0 {
            return Err(Error::inference(Degeneracy::NoWins.message()));
        }
        let estimate = num / den;
        let delta = |eta: f64| {
            let f = 1.0 / eta + 1.0 / (self.total - eta);
            f * f / 4.0
        };
        let variance = Self::contrast(self.lambda) * delta(num);
        let null_variance = Self::contrast(self.lambda_null) * delta(self.total / 2.0);
        self.finish(Measure::WinOdds, estimate, Scale::Log, variance, null_variance, alpha)
    }

    fn finish(
        &self,
        measure: Measure,
        estimate: f64,
        scale: Scale,
        variance: f64,
        null_variance: f64,
        alpha: f64,
    ) -> Result<InferenceResult> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::inference(format!(
                "{}: nonpositive variance estimate {variance:e} (numerically degenerate data)",
                measure.label()
            )));
        }
        if !(null_variance > 0.0) || !null_variance.is_finite() {
            return Err(Error::inference(format!(
                "{}: degenerate null variance {null_variance:e}",
                measure.label()
            )));
        }
        let q = normal_quantile(1.0 - alpha / 2.0);
        let half = q * variance.sqrt();
        let (ci_lower, ci_upper, z) = match scale {
            Scale::Log => {
                let l = estimate.ln();
                ((l - half).exp(), (l + half).exp(), l / null_variance.sqrt())
            }
            Scale::Linear => (
                estimate - half,
                estimate + half,
                estimate / null_variance.sqrt(),
            ),
        };
        Ok(InferenceResult {
            measure,
            estimate,
            scale,
            variance,
            null_variance,
            ci_lower,
            ci_upper,
            z,
            p_value: two_sided_p(z),
            alpha,
            stratified: self.stratified,
        })
    }
}

fn single<'a>(counts: &'a WinCounts, summary: &'a PairSummary) -> StratifiedInput<'a> {
    StratifiedInput {
        strata: vec![StratumInput {
            label: "all".into(),
            weight: 1.0,
            counts,
            summary,
        }],
    }
}

/// Wald interval on the log scale and null-centred test for the RWR.
pub fn rwr_inference(
    counts: &WinCounts,
    summary: &PairSummary,
    alpha: f64,
) -> Result<InferenceResult> {
    Moments::from_strata(&single(counts, summary), false)?.rwr(alpha)
}

/// Two-sided test of `log(RWR) = 0`.
pub fn rwr_test(summary: &PairSummary, counts: &WinCounts) -> Result<TestResult> {
    let r = rwr_inference(counts, summary, DEFAULT_ALPHA)?;
    Ok(TestResult {
        z: r.z,
        null_variance: r.null_variance,
        p_value: r.p_value,
    })
}

/// Net benefit (linear-scale interval) and win odds (log-scale interval).
pub fn rnb_rwo_inference(
    counts: &WinCounts,
    summary: &PairSummary,
    alpha: f64,
) -> Result<(InferenceResult, InferenceResult)> {
    let m = Moments::from_strata(&single(counts, summary), false)?;
    Ok((m.rnb(alpha)?, m.rwo(alpha)?))
}

/// All three measures for one unstratified comparison.
pub fn win_statistics(
    counts: &WinCounts,
    summary: &PairSummary,
    alpha: f64,
) -> Result<WinStatistics> {
    let m = Moments::from_strata(&single(counts, summary), false)?;
    Ok(m.all(alpha))
}

/// All three measures with within-stratum comparisons combined by weight.
pub fn stratified_inference(input: &StratifiedInput<'_>, alpha: f64) -> Result<WinStatistics> {
    let m = Moments::from_strata(input, true)?;
    Ok(m.all(alpha))
}

impl Moments {
    fn all(&self, alpha: f64) -> WinStatistics {
        WinStatistics {
            wins: self.wins,
            losses: self.losses,
            ties: self.ties(),
            rwr: self.rwr(alpha),
            rnb: self.rnb(alpha),
            rwo: self.rwo(alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compare::{count_wins_losses, Arm, Outcome, Subject};
    use crate::hierarchy::{build_rotation_set, EndpointSpec, Hierarchy};

    fn counts(wins: Vec<u64>, losses: Vec<u64>, n: usize) -> WinCounts {
        WinCounts {
            n_treated: n,
            n_control: n,
            wins_at: wins.iter().map(|&w| vec![w]).collect(),
            losses_at: losses.iter().map(|&l| vec![l]).collect(),
            wins,
            losses,
        }
    }

    #[test]
    fn rwr_point_estimate() {
        let c = counts(vec![3, 5], vec![1, 3], 2);
        assert_eq!(rwr_estimate(&c).value, 2.0);
        assert_eq!(rwr_estimate(&c.swapped()).value, 0.5);
        assert_eq!(rwr_estimate(&counts(vec![3], vec![1], 2)).value, 3.0);

        let none = rwr_estimate(&counts(vec![4], vec![0], 2));
        assert_eq!(none.value, f64::INFINITY);
        assert_eq!(none.degenerate, Some(Degeneracy::NoLosses));
    }

    #[test]
    fn rnb_rwo_arithmetic() {
        // N_+=8, N_-=4 out of 18 pair-rotations, so N_0=6
        let m = Moments {
            wins: 8.0,
            losses: 4.0,
            total: 18.0,
            lambda: [1.0, 1.0, 0.0],
            lambda_null: [1.0, 1.0, 0.0],
            stratified: false,
        };
        assert!((m.rnb(0.05).unwrap().estimate - 4.0 / 18.0).abs() < 1e-15);
        assert!((m.rwo(0.05).unwrap().estimate - 11.0 / 7.0).abs() < 1e-15);
    }

    fn tte_subjects(arm: Arm, rows: &[[(f64, bool); 2]]) -> Vec<Subject> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| Subject {
                id: format!("{arm:?}{i}"),
                arm,
                stratum: "s".into(),
                outcomes: r
                    .iter()
                    .map(|&(time, event)| Outcome::TimeToEvent { time, event })
                    .collect(),
                followup: None,
            })
            .collect()
    }

    #[test]
    fn all_ties_are_degenerate_except_rnb_point() {
        let row = [(10.0, false), (10.0, false)];
        let t = tte_subjects(Arm::Treatment, &[row; 3]);
        let c = tte_subjects(Arm::Control, &[row; 3]);
        let specs = [EndpointSpec::survival("a"), EndpointSpec::survival("b")];
        let rs = build_rotation_set(&Hierarchy::new(vec![vec![0, 1]]).unwrap(), 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        let stats = win_statistics(&out.counts, &out.summary, 0.05).unwrap();
        assert!(stats.rwr.is_err());
        // RNB = 0 and RWO = 1 but the variance is zero
        assert!(stats.rnb.unwrap_err().to_string().contains("nonpositive variance"));
        assert!(stats.rwo.is_err());
        assert_eq!(stats.ties, 18.0);
    }

    #[test]
    fn all_wins_refuse_interval() {
        let t = tte_subjects(Arm::Treatment, &[[(900.0, false), (900.0, false)]; 3]);
        let c = tte_subjects(Arm::Control, &[[(100.0, true), (100.0, true)]; 3]);
        let specs = [EndpointSpec::survival("a"), EndpointSpec::survival("b")];
        let rs = build_rotation_set(&Hierarchy::singletons(2), 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        let err = rwr_inference(&out.counts, &out.summary, 0.05).unwrap_err();
        assert_eq!(err.to_string(), "inference error: degenerate: no losses");
        assert!(rwr_test(&out.summary, &out.counts).is_err());
    }

    #[test]
    fn nonpositive_weight_is_config_error() {
        let t = tte_subjects(Arm::Treatment, &[[(5.0, true), (1.0, true)], [(2.0, true), (3.0, true)]]);
        let c = tte_subjects(Arm::Control, &[[(4.0, true), (2.0, true)], [(1.0, true), (9.0, false)]]);
        let specs = [EndpointSpec::survival("a"), EndpointSpec::survival("b")];
        let rs = build_rotation_set(&Hierarchy::singletons(2), 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        let input = StratifiedInput {
            strata: vec![StratumInput { label: "x".into(), weight: 0.0, counts: &out.counts, summary: &out.summary }],
        };
        assert!(matches!(stratified_inference(&input, 0.05), Err(Error::Config(_))));
    }

    #[test]
    fn undersized_stratum_is_named() {
        let t = tte_subjects(Arm::Treatment, &[[(5.0, true), (1.0, true)]]);
        let c = tte_subjects(Arm::Control, &[[(4.0, true), (2.0, true)], [(1.0, true), (9.0, false)]]);
        let specs = [EndpointSpec::survival("a"), EndpointSpec::survival("b")];
        let rs = build_rotation_set(&Hierarchy::singletons(2), 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        let input = StratifiedInput {
            strata: vec![StratumInput { label: "clinic-7".into(), weight: 1.0, counts: &out.counts, summary: &out.summary }],
        };
        let err = stratified_inference(&input, 0.05).unwrap_err();
        assert!(matches!(err, Error::Analysis(_)));
        assert!(err.to_string().contains("clinic-7"));
    }
}
