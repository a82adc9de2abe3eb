//! U-statistic covariance of the win/loss count vector.

use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{PairSummary, WinCounts};
use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Plug-in win and loss probabilities, laid out as
/// `(θ_t^(1..p), θ_c^(1..p))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaVector {
    pub n_treated: usize,
    pub n_control: usize,
    pub values: Vec<f64>,
}

impl ThetaVector {
    pub fn rotations(&self) -> usize {
        self.values.len() / 2
    }

    pub fn win(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn loss(&self, k: usize) -> f64 {
        self.values[self.rotations() + k]
    }

    /// Null-hypothesis centering: both entries of rotation `k` replaced by
    /// `(θ_t^(k) + θ_c^(k)) / 2`.
    pub fn null_centered(&self) -> Self {
        let p = self.rotations();
        let mut values = vec![0.0; 2 * p];
        for k in 0..p {
            let m = (self.win(k) + self.loss(k)) / 2.0;
            values[k] = m;
            values[p + k] = m;
        }
        Self {
            n_treated: self.n_treated,
            n_control: self.n_control,
            values,
        }
    }
}

/// `θ̂_d^(k) = n_d^(k) / (N_t N_c)`.
pub fn estimate_theta(counts: &WinCounts) -> ThetaVector {
    let pairs = counts.pairs() as f64;
    let values = counts
        .wins
        .iter()
        .chain(&counts.losses)
        .map(|&n| n as f64 / pairs)
        .collect();
    ThetaVector {
        n_treated: counts.n_treated,
        n_control: counts.n_control,
        values,
    }
}

/// Covariance of `(n_t^(1..p), n_c^(1..p))` on the count scale.
///
/// `first[a,b]` and `second[a,b]` are the treated-side and control-side
/// components; `values = first / N_t + second / N_c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceMatrix {
    pub dim: usize,
    pub values: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.dim + b]
    }

    pub fn rotations(&self) -> usize {
        self.dim / 2
    }

    /// `G Σ Gᵀ` as `(Λ11, Λ22, Λ12)`: covariance of total wins and total losses.
    pub fn collapse(&self) -> [f64; 3] {
        let p = self.rotations();
        let mut ww = CompensatedSum::default();
        let mut ll = CompensatedSum::default();
        let mut wl = CompensatedSum::default();
        for a in 0..p {
            for b in 0..p {
                ww.add(self.get(a, b));
                ll.add(self.get(p + a, p + b));
                wl.add(self.get(a, p + b));
            }
        }
        [ww.value(), ll.value(), wl.value()]
    }
}

/// Covariance of the count vector, centred at `theta`.
///
/// Uses the identity
/// `Σ_j Σ_{j'≠j} x_ij y_ij' = (Σ_j x_ij)(Σ_j y_ij) − Σ_j x_ij y_ij`
/// on the centred indicators so each entry costs `O(N_t + N_c)` given the
/// row, column and joint sums in `summary`.
pub fn covariance_matrix(summary: &PairSummary, theta: &ThetaVector) -> Result<CovarianceMatrix> {
    let n_t = summary.n_treated;
    let n_c = summary.n_control;
    if n_t < 2 || n_c < 2 {
        return Err(Error::inference(format!(
            "insufficient subjects for variance estimation (treatment {n_t}, control {n_c}; need at least 2 each)"
        )));
    }
    let dim = summary.dim();
    if theta.values.len() != dim {
        return Err(Error::inference(format!(
            "theta has {} entries but the pair summary has {dim}",
            theta.values.len()
        )));
    }
    let th = &theta.values;
    let pairs = (n_t * n_c) as f64;
    let nt = n_t as f64;
    let nc = n_c as f64;
    let scale1 = pairs / (nc - 1.0);
    let scale2 = pairs / (nt - 1.0);

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .into_par_iter()
        .map(|a| {
            let mut first = vec![0.0; dim];
            let mut second = vec![0.0; dim];
            for b in a..dim {
                // Σ_ij (F_a − θ_a)(F_b − θ_b)
                let mut diag = CompensatedSum::default();
                diag.add(summary.joint[a * dim + b] as f64);
                diag.add(-th[b] * summary.totals[a] as f64);
                diag.add(-th[a] * summary.totals[b] as f64);
                diag.add(pairs * th[a] * th[b]);
                let diag = diag.value();

                let mut rs = CompensatedSum::default();
                for i in 0..n_t {
                    let ra = summary.row_sums[i * dim + a] as f64 - nc * th[a];
                    let rb = summary.row_sums[i * dim + b] as f64 - nc * th[b];
                    rs.add(ra * rb);
                }
                let mut cs = CompensatedSum::default();
                for j in 0..n_c {
                    let ca = summary.col_sums[j * dim + a] as f64 - nt * th[a];
                    let cb = summary.col_sums[j * dim + b] as f64 - nt * th[b];
                    cs.add(ca * cb);
                }
                first[b] = scale1 * (rs.value() - diag);
                second[b] = scale2 * (cs.value() - diag);
            }
            (first, second)
        })
        .collect();

    let mut first = vec![0.0; dim * dim];
    let mut second = vec![0.0; dim * dim];
    for (a, (f, s)) in rows.into_iter().enumerate() {
        for b in a..dim {
            first[a * dim + b] = f[b];
            first[b * dim + a] = f[b];
            second[a * dim + b] = s[b];
            second[b * dim + a] = s[b];
        }
    }
    let values = first
        .iter()
        .zip(&second)
        .map(|(f, s)| f / nt + s / nc)
        .collect();
    Ok(CovarianceMatrix {
        dim,
        values,
        first,
        second,
    })
}
