//! Two-sample log-rank test.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::chi2_1_sf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRankResult {
    /// Chi-square statistic with one degree of freedom.
    pub statistic: f64,
    pub p_value: f64,
    /// Observed and expected events in the treatment arm.
    pub observed: f64,
    pub expected: f64,
    pub variance: f64,
}

/// Log-rank test between two samples of `(time, event)` observations.
/// Subjects censored at an event time are counted as at risk at that time.
pub fn logrank_test(treated: &[(f64, bool)], controls: &[(f64, bool)]) -> Result<LogRankResult> {
    let mut all: Vec<(f64, bool, bool)> = treated
        .iter()
        .map(|&(t, e)| (t, e, true))
        .chain(controls.iter().map(|&(t, e)| (t, e, false)))
        .collect();
    if !all.iter().any(|x| x.1) {
        return Err(Error::analysis("log-rank test needs at least one event"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk = all.len() as f64;
    let mut at_risk_t = treated.len() as f64;
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let time = all[i].0;
        let (mut d, mut d_t, mut leaving, mut leaving_t) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == time {
            let (_, event, is_t) = all[i];
            leaving += 1.0;
            if is_t {
                leaving_t += 1.0;
            }
            if event {
                d += 1.0;
                if is_t {
                    d_t += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = at_risk_t / at_risk;
            observed += d_t;
            expected += d * frac;
            if at_risk > 1.0 {
                variance += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
            }
        }
        at_risk -= leaving;
        at_risk_t -= leaving_t;
    }
    let statistic = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    Ok(LogRankResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        observed,
        expected,
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arms() {
        let x = [(1.0, true), (2.0, false), (3.0, true), (4.0, true)];
        let r = logrank_test(&x, &x).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // T: events at 1 and 3; C: event at 2, censored at 4.
        // t=1: n=4, n_T=2, d=1 -> E=0.5, V=0.25
        // t=2: n=3, n_T=1, d=1 -> E=1/3, V=2/9
        // t=3: n=2, n_T=1, d=1 -> E=0.5, V=0.25
        // O=2, E=4/3, V=13/18, chi2 = (2/3)^2 / (13/18) = 8/13
        let t = [(1.0, true), (3.0, true)];
        let c = [(2.0, true), (4.0, false)];
        let r = logrank_test(&t, &c).unwrap();
        assert!((r.expected - 4.0 / 3.0).abs() < 1e-15);
        assert!((r.variance - 13.0 / 18.0).abs() < 1e-15);
        assert!((r.statistic - 8.0 / 13.0).abs() < 1e-14);
    }

    #[test]
    fn no_events_is_an_error() {
        assert!(logrank_test(&[(1.0, false)], &[(2.0, false)]).is_err());
    }
}
