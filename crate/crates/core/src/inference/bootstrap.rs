//! Percentile bootstrap for RWR, RNB and RWO.
//!
//! Subjects are resampled with replacement within arm (and within stratum),
//! so every replicate keeps the observed arm sizes. A replicate's totals are
//! `Σ_i Σ_j m_i m_j W(i, j)` where `m` are resampling multiplicities and
//! `W(i, j)` the wins of the original pair summed over rotations, so the
//! pairwise comparisons are run only once.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{count_wins_losses, Subject};
use crate::error::{Error, Result};
use crate::hierarchy::{EndpointSpec, RotationSet};
use crate::rng::substream;

/// Subjects of one stratum, split by arm.
#[derive(Debug, Clone)]
pub struct BootstrapStratum<'a> {
    pub label: String,
    pub weight: f64,
    pub treated: &'a [Subject],
    pub controls: &'a [Subject],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    /// Replicates without any loss; excluded from every interval.
    pub degenerate: usize,
    pub alpha: f64,
    pub rwr: BootstrapInterval,
    pub rnb: BootstrapInterval,
    pub rwo: BootstrapInterval,
    pub warning: Option<String>,
}

struct PairTotals {
    weight: f64,
    n_t: usize,
    n_c: usize,
    wins: Vec<u16>,
    losses: Vec<u16>,
}

/// Percentile intervals from `replicates` stratified resamples.
pub fn bootstrap_ci(
    strata: &[BootstrapStratum<'_>],
    rotations: &RotationSet,
    specs: &[EndpointSpec],
    replicates: usize,
    seed: u64,
    alpha: f64,
) -> Result<BootstrapResult> {
    if replicates < 100 {
        return Err(Error::config(format!(
            "bootstrap needs at least 100 replicates, got {replicates}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if rotations.len() > u16::MAX as usize {
        return Err(Error::config("too many rotations for bootstrap"));
    }
    let mut totals = Vec::with_capacity(strata.len());
    for s in strata {
        if !(s.weight > 0.0) {
            return Err(Error::config(format!(
                "stratum '{}' has nonpositive weight {}",
                s.label, s.weight
            )));
        }
        let out = count_wins_losses(s.treated, s.controls, rotations, specs)?;
        let table = out.table.ok_or_else(|| {
            Error::analysis(format!(
                "stratum '{}' is too large to bootstrap from a stored pair table",
                s.label
            ))
        })?;
        let (wins, losses) = table.rotation_totals();
        totals.push(PairTotals {
            weight: s.weight,
            n_t: s.treated.len(),
            n_c: s.controls.len(),
            wins,
            losses,
        });
    }
    let p = rotations.len() as f64;

    let draws: Vec<Option<[f64; 3]>> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, &[0xB007, b], 0);
            let mut wins = 0.0;
            let mut losses = 0.0;
            let mut total = 0.0;
            for st in &totals {
                let mt = multiplicities(&mut rng, st.n_t);
                let mc = multiplicities(&mut rng, st.n_c);
                let (mut w, mut l) = (0u64, 0u64);
                for (i, &m_i) in mt.iter().enumerate() {
                    if m_i == 0 {
                        continue;
                    }
                    let row_w = &st.wins[i * st.n_c..(i + 1) * st.n_c];
                    let row_l = &st.losses[i * st.n_c..(i + 1) * st.n_c];
                    let (mut rw, mut rl) = (0u64, 0u64);
                    for j in 0..st.n_c {
                        rw += mc[j] as u64 * row_w[j] as u64;
                        rl += mc[j] as u64 * row_l[j] as u64;
                    }
                    w += m_i as u64 * rw;
                    l += m_i as u64 * rl;
                }
                wins += st.weight * w as f64;
                losses += st.weight * l as f64;
                total += st.weight * p * (st.n_t * st.n_c) as f64;
            }
            if losses == 0.0 {
                return None;
            }
            let ties = total - wins - losses;
            Some([
                wins / losses,
                (wins - losses) / total,
                (wins + 0.5 * ties) / (losses + 0.5 * ties),
            ])
        })
        .collect();

    let kept: Vec<[f64; 3]> = draws.iter().flatten().copied().collect();
    let degenerate = replicates - kept.len();
    if kept.is_empty() {
        return Err(Error::inference("every bootstrap replicate was degenerate"));
    }
    let interval = |m: usize| {
        let mut v: Vec<f64> = kept.iter().map(|d| d[m]).collect();
        v.sort_by(f64::total_cmp);
        BootstrapInterval {
            lower: quantile_sorted(&v, alpha / 2.0),
            upper: quantile_sorted(&v, 1.0 - alpha / 2.0),
        }
    };
    let warning = (degenerate * 10 > replicates).then(|| {
        format!("{degenerate} of {replicates} bootstrap replicates had no losses and were skipped")
    });
    Ok(BootstrapResult {
        replicates,
        degenerate,
        alpha,
        rwr: interval(0),
        rnb: interval(1),
        rwo: interval(2),
        warning,
    })
}

fn multiplicities<R: Rng>(rng: &mut R, n: usize) -> Vec<u32> {
    let mut m = vec![0u32; n];
    for _ in 0..n {
        m[rng.random_range(0..n)] += 1;
    }
    m
}

/// Linear interpolation between order statistics (Hyndman–Fan type 7).
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.1), 1.4);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
    }

    #[test]
    fn too_few_replicates() {
        let rs = RotationSet::from_orders(vec![vec![0]]).unwrap();
        assert!(bootstrap_ci(&[], &rs, &[], 99, 1, 0.05).is_err());
    }
}
