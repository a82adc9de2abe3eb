//! Correlated exponential event times through the Gumbel–Hougaard copula.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use std::f64::consts::PI;

/// Positive stable variate with Laplace transform `exp(-s^index)`,
/// `0 < index <= 1` (Kanter / Chambers–Mallows–Stuck representation).
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, index: f64) -> f64 {
    if index >= 1.0 {
        return 1.0;
    }
    let u: f64 = PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = index;
    let left = (a * u).sin() / u.sin().powf(1.0 / a);
    let right = ((1.0 - a) * u).sin() / e;
    left * right.powf((1.0 - a) / a)
}

/// Draws one vector of event times with exponential margins of rates
/// `hazards` coupled by a Gumbel–Hougaard copula with parameter `beta >= 1`:
///
/// `P(T_1 > y_1, ...) = exp(-[Σ (h_i y_i)^β]^(1/β))`.
///
/// Marshall–Olkin construction: with `V` positive stable of index `1/β` and
/// iid unit exponentials `E_i`, `T_i = (E_i / V)^(1/β) / h_i`.
pub fn gumbel_exponential_times<R: Rng + ?Sized>(
    rng: &mut R,
    hazards: &[f64],
    beta: f64,
) -> Vec<f64> {
    let inv_beta = 1.0 / beta;
    let v = positive_stable(rng, inv_beta);
    hazards
        .iter()
        .map(|&h| {
            let e: f64 = Exp1.sample(rng);
            let s = (e / v).powf(inv_beta);
            if h > 0.0 {
                s / h
            } else {
                f64::INFINITY
            }
        })
        .collect()
}
