//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's counting or variance code; the
//! oracles work directly from the definitions with dense indicator arrays.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotwin_core::{Arm, Direction, EndpointKind, EndpointSpec, Outcome, Subject};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// +1 treated better, −1 control better, 0 undecided.
pub fn oracle_endpoint(a: &Outcome, b: &Outcome, spec: &EndpointSpec) -> i8 {
    let sign = |x: f64| -> i8 {
        if x > spec.margin {
            1
        } else if -x > spec.margin {
            -1
        } else {
            0
        }
    };
    let flip = |s: i8| match spec.direction {
        Direction::LargerWins => s,
        Direction::SmallerWins => -s,
    };
    match (a, b) {
        (Outcome::TimeToEvent { time: ta, event: ea }, Outcome::TimeToEvent { time: tb, event: eb }) => {
            // The earlier time must be an observed event for the later one to prevail.
            let a_longer = *eb && ta - tb > spec.margin;
            let b_longer = *ea && tb - ta > spec.margin;
            let s = if a_longer {
                1
            } else if b_longer {
                -1
            } else {
                0
            };
            flip(s)
        }
        (Outcome::EventCount { count: x }, Outcome::EventCount { count: y }) => flip(sign(*x as f64 - *y as f64)),
        (Outcome::Continuous { value: x }, Outcome::Continuous { value: y }) => flip(sign(x - y)),
        _ => panic!("mismatched outcome kinds"),
    }
}

/// Dense indicators `W[k][i][j]`, `L[k][i][j]` for every rotation order.
pub struct Dense {
    pub n_t: usize,
    pub n_c: usize,
    pub w: Vec<Vec<Vec<f64>>>,
    pub l: Vec<Vec<Vec<f64>>>,
}

impl Dense {
    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn wins(&self, k: usize) -> u64 {
        self.w[k].iter().flatten().sum::<f64>() as u64
    }

    pub fn losses(&self, k: usize) -> u64 {
        self.l[k].iter().flatten().sum::<f64>() as u64
    }

    /// `F` for coordinate `a` of `(n_t^(1..p), n_c^(1..p))`.
    pub fn f(&self, a: usize) -> &Vec<Vec<f64>> {
        let p = self.p();
        if a < p {
            &self.w[a]
        } else {
            &self.l[a - p]
        }
    }
}

pub fn oracle_pairs(t: &[Subject], c: &[Subject], orders: &[Vec<usize>], specs: &[EndpointSpec]) -> Dense {
    let mut w = vec![vec![vec![0.0; c.len()]; t.len()]; orders.len()];
    let mut l = w.clone();
    for (k, order) in orders.iter().enumerate() {
        for (i, a) in t.iter().enumerate() {
            for (j, b) in c.iter().enumerate() {
                let decided = order
                    .iter()
                    .map(|&e| oracle_endpoint(&a.outcomes[e], &b.outcomes[e], &specs[e]))
                    .find(|&s| s != 0)
                    .unwrap_or(0);
                match decided {
                    1 => w[k][i][j] = 1.0,
                    -1 => l[k][i][j] = 1.0,
                    _ => {}
                }
            }
        }
    }
    Dense {
        n_t: t.len(),
        n_c: c.len(),
        w,
        l,
    }
}

/// Plug-in `θ̂` in `(t^(1..p), c^(1..p))` order.
pub fn oracle_theta(d: &Dense) -> Vec<f64> {
    let pairs = (d.n_t * d.n_c) as f64;
    (0..2 * d.p())
        .map(|a| d.f(a).iter().flatten().sum::<f64>() / pairs)
        .collect()
}

/// Literal triple sums for every `(a, b)`; returns `Σ` (2p × 2p, row-major).
pub fn oracle_sigma(d: &Dense, theta: &[f64]) -> Vec<f64> {
    let dim = 2 * d.p();
    let (nt, nc) = (d.n_t, d.n_c);
    let pairs = (nt * nc) as f64;
    let mut out = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            let (fa, fb) = (d.f(a), d.f(b));
            let mut s1 = 0.0;
            for i in 0..nt {
                for j in 0..nc {
                    for jp in 0..nc {
                        if jp != j {
                            s1 += (fa[i][j] - theta[a]) * (fb[i][jp] - theta[b]);
                        }
                    }
                }
            }
            let mut s2 = 0.0;
            for j in 0..nc {
                for i in 0..nt {
                    for ip in 0..nt {
                        if ip != i {
                            s2 += (fa[i][j] - theta[a]) * (fb[ip][j] - theta[b]);
                        }
                    }
                }
            }
            let sigma1 = pairs / (nc as f64 - 1.0) * s1;
            let sigma2 = pairs / (nt as f64 - 1.0) * s2;
            out[a * dim + b] = sigma1 / nt as f64 + sigma2 / nc as f64;
        }
    }
    out
}

/// `G Σ Gᵀ` as a 2×2 matrix.
pub fn oracle_lambda(sigma: &[f64], p: usize) -> [[f64; 2]; 2] {
    let dim = 2 * p;
    let mut lam = [[0.0; 2]; 2];
    for a in 0..dim {
        for b in 0..dim {
            lam[a / p][b / p] += sigma[a * dim + b];
        }
    }
    lam
}

pub struct OracleRwr {
    pub estimate: f64,
    pub log_variance: f64,
    pub null_log_variance: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Log-scale delta method `Ω = D Λ D` with the null variance obtained by
/// substituting the pooled `θ0` everywhere.
pub fn oracle_rwr(d: &Dense, alpha: f64) -> OracleRwr {
    let p = d.p();
    let pairs = (d.n_t * d.n_c) as f64;
    let theta = oracle_theta(d);
    let omega = |theta: &[f64]| {
        let lam = oracle_lambda(&oracle_sigma(d, theta), p);
        let nu_t: f64 = pairs * theta[..p].iter().sum::<f64>();
        let nu_c: f64 = pairs * theta[p..].iter().sum::<f64>();
        let dd = [1.0 / nu_t, 1.0 / nu_c];
        dd[0] * dd[0] * lam[0][0] + dd[1] * dd[1] * lam[1][1] - 2.0 * dd[0] * dd[1] * lam[0][1]
    };
    let var = omega(&theta);
    let mut theta0 = theta.clone();
    for k in 0..p {
        let m = (theta[k] + theta[p + k]) / 2.0;
        theta0[k] = m;
        theta0[p + k] = m;
    }
    let var0 = omega(&theta0);
    let est = theta[..p].iter().sum::<f64>() / theta[p..].iter().sum::<f64>();
    let z = normal_quantile(1.0 - alpha / 2.0);
    let se = var.sqrt();
    let stat = est.ln() / var0.sqrt();
    OracleRwr {
        estimate: est,
        log_variance: var,
        null_log_variance: var0,
        ci: ((est.ln() - z * se).exp(), (est.ln() + z * se).exp()),
        p_value: 2.0 * (1.0 - normal_cdf(stat.abs())),
    }
}

/// Random outcomes for the given endpoint kinds, drawn from a small grid so
/// that exact ties and censoring are frequent.
pub fn random_subjects<R: Rng>(rng: &mut R, arm: Arm, n: usize, specs: &[EndpointSpec]) -> Vec<Subject> {
    (0..n)
        .map(|i| Subject {
            id: format!("{}{i}", if arm == Arm::Treatment { "t" } else { "c" }),
            arm,
            stratum: "s".into(),
            outcomes: specs
                .iter()
                .map(|s| match s.kind {
                    EndpointKind::TimeToEvent => Outcome::TimeToEvent {
                        time: rng.random_range(1..8) as f64,
                        event: rng.random_bool(0.6),
                    },
                    EndpointKind::EventCount => Outcome::EventCount {
                        count: rng.random_range(0..4),
                    },
                    EndpointKind::Continuous => Outcome::Continuous {
                        value: rng.random_range(0..6) as f64 * 0.5,
                    },
                })
                .collect(),
            followup: None,
        })
        .collect()
}

pub fn random_specs<R: Rng>(rng: &mut R, q: usize) -> Vec<EndpointSpec> {
    (0..q)
        .map(|e| {
            let kind = [EndpointKind::TimeToEvent, EndpointKind::EventCount, EndpointKind::Continuous]
                [rng.random_range(0..3)];
            let dir = if rng.random_bool(0.5) {
                Direction::LargerWins
            } else {
                Direction::SmallerWins
            };
            let margin = if kind == EndpointKind::Continuous && rng.random_bool(0.3) {
                0.5
            } else {
                0.0
            };
            EndpointSpec::new(format!("e{e}"), kind, dir).with_margin(margin)
        })
        .collect()
}

/// Random partition of `0..q` into consecutive-after-shuffle blocks.
pub fn random_blocks<R: Rng>(rng: &mut R, q: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..q).collect();
    idx.shuffle(rng);
    let mut blocks = Vec::new();
    let mut rest = &idx[..];
    while !rest.is_empty() {
        let size = rng.random_range(1..=rest.len().min(3));
        blocks.push(rest[..size].to_vec());
        rest = &rest[size..];
    }
    blocks
}

/// Kendall's tau-a for continuous data without ties, via merge-sort inversion counting.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = ys.clone();
    let discordant = inversions(&mut ys, &mut buf);
    let total = (n as f64) * (n as f64 - 1.0) / 2.0;
    (total - 2.0 * discordant as f64) / total
}

fn inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        inversions(l, bl) + inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// One-sample Kolmogorov–Smirnov statistic against `cdf`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic KS critical value at level 1% for effective size `n`.
pub fn ks_critical_1pct(n: f64) -> f64 {
    1.627_624 / n.sqrt()
}

/// Writes straight to the stderr handle so the line survives libtest's
/// output capture and shows up in every test log.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("[{}] {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}
