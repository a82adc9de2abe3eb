//! Pairwise comparison of treated and control subjects under every rotation.
//!
//! [`count_wins_losses`] runs all `N_t × N_c` comparisons once, evaluates each
//! rotation's ordering on the per-endpoint results, and produces
//!
//! * [`WinCounts`]: per-rotation wins, losses and ties plus attribution to
//!   the deciding position,
//! * [`PairSummary`]: row, column and joint sums of the win/loss indicators,
//!   which is everything the covariance estimator needs,
//! * optionally a [`PairTable`] holding the indicators themselves at two bits
//!   per pair per rotation.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Direction, EndpointKind, EndpointSpec, Hierarchy, RotationSet};

/// Pair tables above this many `pairs × rotations` are not materialised.
pub const DEFAULT_TABLE_LIMIT: usize = 1 << 26;

const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

/// One observed endpoint value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    TimeToEvent { time: f64, event: bool },
    EventCount { count: u32 },
    Continuous { value: f64 },
}

impl Outcome {
    pub fn kind(&self) -> EndpointKind {
        match self {
            Outcome::TimeToEvent { .. } => EndpointKind::TimeToEvent,
            Outcome::EventCount { .. } => EndpointKind::EventCount,
            Outcome::Continuous { .. } => EndpointKind::Continuous,
        }
    }

    fn value_and_event(&self) -> (f64, bool) {
        match *self {
            Outcome::TimeToEvent { time, event } => (time, event),
            Outcome::EventCount { count } => (count as f64, false),
            Outcome::Continuous { value } => (value, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub arm: Arm,
    pub stratum: String,
    pub outcomes: Vec<Outcome>,
    /// Subject-level follow-up in days, when known.
    pub followup: Option<f64>,
}

impl Subject {
    /// Checks outcome count, kinds and value ranges against `specs`.
    pub fn check(&self, specs: &[EndpointSpec]) -> Result<()> {
        if self.outcomes.len() != specs.len() {
            return Err(Error::config(format!(
                "subject '{}' has {} outcomes, expected {}",
                self.id,
                self.outcomes.len(),
                specs.len()
            )));
        }
        for (o, spec) in self.outcomes.iter().zip(specs) {
            if o.kind() != spec.kind {
                return Err(kind_mismatch(&spec.id, spec.kind, o.kind()));
            }
            if let Outcome::TimeToEvent { time, .. } = *o {
                if !(time >= 0.0) {
                    return Err(Error::config(format!(
                        "subject '{}': negative time on endpoint '{}'",
                        self.id, spec.id
                    )));
                }
                if let Some(f) = self.followup {
                    if time > f {
                        return Err(Error::config(format!(
                            "subject '{}': time {time} on '{}' exceeds follow-up {f}",
                            self.id, spec.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn kind_mismatch(id: &str, expected: EndpointKind, found: EndpointKind) -> Error {
    Error::config(format!(
        "endpoint '{id}' expects {expected} outcomes, found {found}"
    ))
}

/// Result of comparing two outcomes on one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    AWins,
    BWins,
    Tie,
}

impl Comparison {
    pub fn swap(self) -> Self {
        match self {
            Comparison::AWins => Comparison::BWins,
            Comparison::BWins => Comparison::AWins,
            Comparison::Tie => Comparison::Tie,
        }
    }
}

/// Compares two outcomes on one endpoint.
///
/// Time-to-event outcomes follow the usual censoring rule: with larger times
/// favourable, `a` wins only if `b`'s event was observed and `a`'s observed
/// time (event or censoring) exceeds it by more than the margin. Counts and
/// continuous values win when they differ by more than the margin in the
/// favourable direction.
pub fn compare_endpoint(a: &Outcome, b: &Outcome, spec: &EndpointSpec) -> Result<Comparison> {
    if a.kind() != spec.kind {
        return Err(kind_mismatch(&spec.id, spec.kind, a.kind()));
    }
    if b.kind() != spec.kind {
        return Err(kind_mismatch(&spec.id, spec.kind, b.kind()));
    }
    let (av, ae) = a.value_and_event();
    let (bv, be) = b.value_and_event();
    Ok(compare_raw(spec.kind, spec.direction, spec.margin, av, ae, bv, be))
}

#[inline]
fn compare_raw(
    kind: EndpointKind,
    direction: Direction,
    margin: f64,
    av: f64,
    ae: bool,
    bv: f64,
    be: bool,
) -> Comparison {
    match kind {
        EndpointKind::TimeToEvent => match direction {
            Direction::LargerWins => {
                if be && av > bv + margin {
                    Comparison::AWins
                } else if ae && bv > av + margin {
                    Comparison::BWins
                } else {
                    Comparison::Tie
                }
            }
            Direction::SmallerWins => {
                if ae && bv > av + margin {
                    Comparison::AWins
                } else if be && av > bv + margin {
                    Comparison::BWins
                } else {
                    Comparison::Tie
                }
            }
        },
        EndpointKind::EventCount | EndpointKind::Continuous => {
            let diff = match direction {
                Direction::LargerWins => av - bv,
                Direction::SmallerWins => bv - av,
            };
            if diff > margin {
                Comparison::AWins
            } else if -diff > margin {
                Comparison::BWins
            } else {
                Comparison::Tie
            }
        }
    }
}

/// Outcome of a treated-vs-control pair, from the treated subject's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairResult {
    Win,
    Loss,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOutcome {
    pub result: PairResult,
    /// Position within the order of the first determinate endpoint.
    pub deciding_position: Option<usize>,
}

/// Walks `order` and stops at the first determinate endpoint.
/// `treated` is the reference side of the result.
pub fn compare_pair(
    treated: &Subject,
    control: &Subject,
    order: &[usize],
    specs: &[EndpointSpec],
) -> Result<PairOutcome> {
    for (pos, &e) in order.iter().enumerate() {
        let spec = specs
            .get(e)
            .ok_or_else(|| Error::config(format!("order references unknown endpoint {e}")))?;
        let a = treated.outcomes.get(e).ok_or_else(|| {
            Error::config(format!("subject '{}' lacks endpoint {e}", treated.id))
        })?;
        let b = control.outcomes.get(e).ok_or_else(|| {
            Error::config(format!("subject '{}' lacks endpoint {e}", control.id))
        })?;
        match compare_endpoint(a, b, spec)? {
            Comparison::AWins => {
                return Ok(PairOutcome {
                    result: PairResult::Win,
                    deciding_position: Some(pos),
                })
            }
            Comparison::BWins => {
                return Ok(PairOutcome {
                    result: PairResult::Loss,
                    deciding_position: Some(pos),
                })
            }
            Comparison::Tie => {}
        }
    }
    Ok(PairOutcome {
        result: PairResult::Tie,
        deciding_position: None,
    })
}

/// Per-rotation win/loss/tie counts with attribution to deciding positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinCounts {
    pub n_treated: usize,
    pub n_control: usize,
    /// Treatment wins per rotation.
    pub wins: Vec<u64>,
    /// Treatment losses per rotation.
    pub losses: Vec<u64>,
    /// `wins_at[k][pos]`: wins decided at position `pos` of rotation `k`.
    pub wins_at: Vec<Vec<u64>>,
    pub losses_at: Vec<Vec<u64>>,
}

impl WinCounts {
    pub fn num_rotations(&self) -> usize {
        self.wins.len()
    }

    pub fn pairs(&self) -> u64 {
        (self.n_treated * self.n_control) as u64
    }

    pub fn ties(&self, k: usize) -> u64 {
        self.pairs() - self.wins[k] - self.losses[k]
    }

    /// Pairs still undecided after position `pos` of rotation `k`.
    pub fn residual_ties(&self, k: usize, pos: usize) -> u64 {
        let decided: u64 = self.wins_at[k][..=pos]
            .iter()
            .zip(&self.losses_at[k][..=pos])
            .map(|(w, l)| w + l)
            .sum();
        self.pairs() - decided
    }

    pub fn total_wins(&self) -> u64 {
        self.wins.iter().sum()
    }

    pub fn total_losses(&self) -> u64 {
        self.losses.iter().sum()
    }

    pub fn total_ties(&self) -> u64 {
        self.pairs() * self.num_rotations() as u64 - self.total_wins() - self.total_losses()
    }

    /// Counts seen from the control arm: wins and losses exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            n_treated: self.n_control,
            n_control: self.n_treated,
            wins: self.losses.clone(),
            losses: self.wins.clone(),
            wins_at: self.losses_at.clone(),
            losses_at: self.wins_at.clone(),
        }
    }

    /// Keeps only the rotations at `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            n_treated: self.n_treated,
            n_control: self.n_control,
            wins: indices.iter().map(|&k| self.wins[k]).collect(),
            losses: indices.iter().map(|&k| self.losses[k]).collect(),
            wins_at: indices.iter().map(|&k| self.wins_at[k].clone()).collect(),
            losses_at: indices.iter().map(|&k| self.losses_at[k].clone()).collect(),
        }
    }
}

/// Win and loss indicators for every pair and rotation, two bits per entry.
///
/// Rows are treated subjects; each row holds one bitset over controls for
/// the wins and one for the losses of every rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairTable {
    n_treated: usize,
    n_control: usize,
    rotations: usize,
    words_per_row: usize,
    wins: Vec<u64>,
    losses: Vec<u64>,
}

impl PairTable {
    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn num_rotations(&self) -> usize {
        self.rotations
    }

    #[inline]
    fn offset(&self, k: usize, i: usize) -> usize {
        (i * self.rotations + k) * self.words_per_row
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> PairResult {
        let at = self.offset(k, i) + j / 64;
        let bit = 1u64 << (j % 64);
        if self.wins[at] & bit != 0 {
            PairResult::Win
        } else if self.losses[at] & bit != 0 {
            PairResult::Loss
        } else {
            PairResult::Tie
        }
    }

    /// Win (`loss = false`) or loss indicator as 0/1.
    #[inline]
    pub fn indicator(&self, k: usize, loss: bool, i: usize, j: usize) -> u8 {
        let at = self.offset(k, i) + j / 64;
        let words = if loss { &self.losses } else { &self.wins };
        ((words[at] >> (j % 64)) & 1) as u8
    }

    /// Wins and losses summed over all rotations, per pair, row-major.
    pub fn rotation_totals(&self) -> (Vec<u16>, Vec<u16>) {
        let mut w = vec![0u16; self.n_treated * self.n_control];
        let mut l = vec![0u16; self.n_treated * self.n_control];
        for i in 0..self.n_treated {
            for k in 0..self.rotations {
                let off = self.offset(k, i);
                for_each_bit(&self.wins[off..off + self.words_per_row], |j| {
                    w[i * self.n_control + j] += 1
                });
                for_each_bit(&self.losses[off..off + self.words_per_row], |j| {
                    l[i * self.n_control + j] += 1
                });
            }
        }
        (w, l)
    }
}

#[inline]
fn for_each_bit(words: &[u64], mut f: impl FnMut(usize)) {
    for (w, &word) in words.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let t = bits.trailing_zeros() as usize;
            f(w * 64 + t);
            bits &= bits - 1;
        }
    }
}

/// Sufficient statistics of the pair indicators for covariance estimation.
///
/// Indicator index `a` runs over `2p` entries: wins of rotations `0..p`
/// followed by losses of rotations `0..p`, matching the layout of the
/// count vector `(n_t^(1..p), n_c^(1..p))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSummary {
    pub n_treated: usize,
    pub n_control: usize,
    pub rotations: usize,
    /// Sum of indicator `a` over all pairs.
    pub totals: Vec<u64>,
    /// `row_sums[i * 2p + a]`: sum over controls for treated subject `i`.
    pub row_sums: Vec<u32>,
    /// `col_sums[j * 2p + a]`: sum over treated subjects for control `j`.
    pub col_sums: Vec<u32>,
    /// `joint[a * 2p + b]`: number of pairs where both indicators are one.
    pub joint: Vec<u64>,
}

impl PairSummary {
    pub fn dim(&self) -> usize {
        2 * self.rotations
    }

    /// Keeps only the rotations at `indices`, preserving the wins-then-losses layout.
    pub fn select(&self, indices: &[usize]) -> Self {
        let p = self.rotations;
        let old = self.dim();
        let map: Vec<usize> = indices
            .iter()
            .copied()
            .chain(indices.iter().map(|&k| k + p))
            .collect();
        let dim = map.len();
        let pick = |src: &[u32], n: usize| {
            let mut out = Vec::with_capacity(n * dim);
            for r in 0..n {
                out.extend(map.iter().map(|&a| src[r * old + a]));
            }
            out
        };
        let mut joint = Vec::with_capacity(dim * dim);
        for &a in &map {
            joint.extend(map.iter().map(|&b| self.joint[a * old + b]));
        }
        Self {
            n_treated: self.n_treated,
            n_control: self.n_control,
            rotations: indices.len(),
            totals: map.iter().map(|&a| self.totals[a]).collect(),
            row_sums: pick(&self.row_sums, self.n_treated),
            col_sums: pick(&self.col_sums, self.n_control),
            joint,
        }
    }
}

/// Everything produced by one comparison pass.
#[derive(Debug, Clone)]
pub struct PairwiseResults {
    pub counts: WinCounts,
    pub summary: PairSummary,
    /// Present unless the table would exceed the configured limit.
    pub table: Option<PairTable>,
}

#[derive(Debug, Clone, Copy)]
pub struct CountOptions {
    /// Largest `pairs × rotations` for which the pair table is kept.
    pub table_limit: usize,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self {
            table_limit: DEFAULT_TABLE_LIMIT,
        }
    }
}

/// Column-major endpoint data for one arm.
struct Columns {
    values: Vec<Vec<f64>>,
    events: Vec<Vec<bool>>,
}

fn columns(subjects: &[Subject], endpoints: &[usize], specs: &[EndpointSpec]) -> Result<Columns> {
    let mut values = vec![Vec::with_capacity(subjects.len()); specs.len()];
    let mut events = vec![Vec::with_capacity(subjects.len()); specs.len()];
    for s in subjects {
        for &e in endpoints {
            let spec = &specs[e];
            let o = s.outcomes.get(e).ok_or_else(|| {
                Error::config(format!("subject '{}' lacks endpoint '{}'", s.id, spec.id))
            })?;
            if o.kind() != spec.kind {
                return Err(kind_mismatch(&spec.id, spec.kind, o.kind()));
            }
            let (v, ev) = o.value_and_event();
            values[e].push(v);
            events[e].push(ev);
        }
    }
    Ok(Columns { values, events })
}

struct Chunk {
    rows: std::ops::Range<usize>,
    wins_at: Vec<Vec<u64>>,
    losses_at: Vec<Vec<u64>>,
    wins: Vec<u64>,
    losses: Vec<u64>,
    row_sums: Vec<u32>,
    col_sums: Vec<u32>,
    joint: Vec<u64>,
}

/// Runs every treated-vs-control comparison under every rotation.
pub fn count_wins_losses(
    treated: &[Subject],
    controls: &[Subject],
    rotations: &RotationSet,
    specs: &[EndpointSpec],
) -> Result<PairwiseResults> {
    count_wins_losses_with(treated, controls, rotations, specs, CountOptions::default())
}

pub fn count_wins_losses_with(
    treated: &[Subject],
    controls: &[Subject],
    rotations: &RotationSet,
    specs: &[EndpointSpec],
    options: CountOptions,
) -> Result<PairwiseResults> {
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::analysis(format!(
            "both arms must be nonempty (treatment {}, control {})",
            treated.len(),
            controls.len()
        )));
    }
    if rotations.is_empty() {
        return Err(Error::config("empty rotation set"));
    }
    if rotations.num_endpoints() > specs.len() {
        return Err(Error::config(format!(
            "rotations reference endpoint {} but only {} are defined",
            rotations.num_endpoints() - 1,
            specs.len()
        )));
    }
    if specs.len() > 32 {
        return Err(Error::config("at most 32 endpoints are supported"));
    }

    let mut used: Vec<usize> = rotations.orders().iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();

    let tcols = columns(treated, &used, specs)?;
    let ccols = columns(controls, &used, specs)?;

    let n_t = treated.len();
    let n_c = controls.len();
    let p = rotations.len();
    let dim = 2 * p;
    let wpr = n_c.div_ceil(64);
    let keep_table = n_t
        .checked_mul(n_c)
        .and_then(|x| x.checked_mul(p))
        .is_some_and(|x| x <= options.table_limit);

    let ctx = RowContext {
        specs,
        used: &used,
        orders: rotations.orders(),
        tcols: &tcols,
        ccols: &ccols,
        n_c,
        wpr,
    };

    let starts: Vec<usize> = (0..n_t).step_by(ROW_CHUNK).collect();
    let mut counts = WinCounts {
        n_treated: n_t,
        n_control: n_c,
        wins: vec![0; p],
        losses: vec![0; p],
        wins_at: rotations.orders().iter().map(|o| vec![0; o.len()]).collect(),
        losses_at: rotations.orders().iter().map(|o| vec![0; o.len()]).collect(),
    };
    let mut summary = PairSummary {
        n_treated: n_t,
        n_control: n_c,
        rotations: p,
        totals: vec![0; dim],
        row_sums: Vec::with_capacity(n_t * dim),
        col_sums: vec![0; n_c * dim],
        joint: vec![0; dim * dim],
    };
    let mut table_wins = Vec::new();
    let mut table_losses = Vec::new();

    // Fixed chunk boundaries and an in-order merge keep the result
    // independent of the number of worker threads.
    let chunks: Vec<Chunk> = starts
        .par_iter()
        .map(|&s| ctx.process(s..(s + ROW_CHUNK).min(n_t), keep_table))
        .collect();

    for chunk in chunks {
        for k in 0..p {
            for (acc, v) in counts.wins_at[k].iter_mut().zip(&chunk.wins_at[k]) {
                *acc += v;
            }
            for (acc, v) in counts.losses_at[k].iter_mut().zip(&chunk.losses_at[k]) {
                *acc += v;
            }
        }
        summary.row_sums.extend_from_slice(&chunk.row_sums);
        for (acc, v) in summary.col_sums.iter_mut().zip(&chunk.col_sums) {
            *acc += v;
        }
        for (acc, v) in summary.joint.iter_mut().zip(&chunk.joint) {
            *acc += v;
        }
        if keep_table {
            debug_assert_eq!(chunk.wins.len(), chunk.rows.len() * p * wpr);
            table_wins.extend_from_slice(&chunk.wins);
            table_losses.extend_from_slice(&chunk.losses);
        }
    }
    for k in 0..p {
        counts.wins[k] = counts.wins_at[k].iter().sum();
        counts.losses[k] = counts.losses_at[k].iter().sum();
    }
    for a in 0..dim {
        summary.totals[a] = summary.joint[a * dim + a];
    }

    let table = keep_table.then(|| PairTable {
        n_treated: n_t,
        n_control: n_c,
        rotations: p,
        words_per_row: wpr,
        wins: table_wins,
        losses: table_losses,
    });
    Ok(PairwiseResults {
        counts,
        summary,
        table,
    })
}

struct RowContext<'a> {
    specs: &'a [EndpointSpec],
    used: &'a [usize],
    orders: &'a [Vec<usize>],
    tcols: &'a Columns,
    ccols: &'a Columns,
    n_c: usize,
    wpr: usize,
}

/// Bits needed for per-column counts within one chunk (at most `ROW_CHUNK` rows).
const PLANES: usize = (usize::BITS - ROW_CHUNK.leading_zeros()) as usize;

/// Win and loss bitsets over controls for treated value `(av, ae)` on one endpoint.
fn fill_endpoint(spec: &EndpointSpec, av: f64, ae: bool, bv: &[f64], be: &[bool], win: &mut [u64], loss: &mut [u64]) {
    let m = spec.margin;
    let mut set = |j: usize, a_wins: bool, b_wins: bool| {
        win[j / 64] |= (a_wins as u64) << (j % 64);
        loss[j / 64] |= (b_wins as u64) << (j % 64);
    };
    match (spec.kind, spec.direction) {
        (EndpointKind::TimeToEvent, Direction::LargerWins) => {
            for j in 0..bv.len() {
                set(j, be[j] && av > bv[j] + m, ae && bv[j] > av + m);
            }
        }
        (EndpointKind::TimeToEvent, Direction::SmallerWins) => {
            for j in 0..bv.len() {
                set(j, ae && bv[j] > av + m, be[j] && av > bv[j] + m);
            }
        }
        (_, Direction::LargerWins) => {
            for j in 0..bv.len() {
                let d = av - bv[j];
                set(j, d > m, -d > m);
            }
        }
        (_, Direction::SmallerWins) => {
            for j in 0..bv.len() {
                let d = bv[j] - av;
                set(j, d > m, -d > m);
            }
        }
    }
}

impl RowContext<'_> {
    fn process(&self, rows: std::ops::Range<usize>, keep_table: bool) -> Chunk {
        debug_assert!(rows.len() <= ROW_CHUNK);
        let p = self.orders.len();
        let dim = 2 * p;
        let wpr = self.wpr;
        let n_rows = rows.len();
        let mut chunk = Chunk {
            rows: rows.clone(),
            wins_at: self.orders.iter().map(|o| vec![0; o.len()]).collect(),
            losses_at: self.orders.iter().map(|o| vec![0; o.len()]).collect(),
            wins: Vec::with_capacity(if keep_table { n_rows * p * wpr } else { 0 }),
            losses: Vec::with_capacity(if keep_table { n_rows * p * wpr } else { 0 }),
            row_sums: Vec::with_capacity(n_rows * dim),
            col_sums: vec![0; self.n_c * dim],
            joint: vec![0; dim * dim],
        };

        // bits[a * wpr + w]: indicator a (wins then losses) for this row
        let mut bits = vec![0u64; dim * wpr];
        // per-endpoint win / loss bitsets for this row
        let n_e = self.specs.len();
        let mut ew = vec![0u64; n_e * wpr];
        let mut el = vec![0u64; n_e * wpr];
        // bit-sliced column counters: planes[(a * wpr + w) * PLANES + b]
        let mut planes = vec![0u64; dim * wpr * PLANES];
        let tail = if self.n_c % 64 == 0 { !0u64 } else { (1u64 << (self.n_c % 64)) - 1 };
        let mut undecided = vec![0u64; wpr];

        for i in rows {
            for &e in self.used {
                let (w, l) = (&mut ew[e * wpr..(e + 1) * wpr], &mut el[e * wpr..(e + 1) * wpr]);
                w.fill(0);
                l.fill(0);
                fill_endpoint(
                    &self.specs[e],
                    self.tcols.values[e][i],
                    self.tcols.events[e][i],
                    &self.ccols.values[e],
                    &self.ccols.events[e],
                    w,
                    l,
                );
            }

            for (k, order) in self.orders.iter().enumerate() {
                undecided.fill(!0);
                undecided[wpr - 1] = tail;
                let (head, rest) = bits.split_at_mut(p * wpr);
                let wbits = &mut head[k * wpr..(k + 1) * wpr];
                let lbits = &mut rest[k * wpr..(k + 1) * wpr];
                wbits.fill(0);
                lbits.fill(0);
                for (pos, &e) in order.iter().enumerate() {
                    let (we, le) = (&ew[e * wpr..(e + 1) * wpr], &el[e * wpr..(e + 1) * wpr]);
                    let (mut nw, mut nl) = (0u32, 0u32);
                    for w in 0..wpr {
                        let win = undecided[w] & we[w];
                        let loss = undecided[w] & le[w];
                        wbits[w] |= win;
                        lbits[w] |= loss;
                        undecided[w] &= !(we[w] | le[w]);
                        nw += win.count_ones();
                        nl += loss.count_ones();
                    }
                    chunk.wins_at[k][pos] += nw as u64;
                    chunk.losses_at[k][pos] += nl as u64;
                }
            }

            for a in 0..dim {
                let ba = &bits[a * wpr..(a + 1) * wpr];
                chunk
                    .row_sums
                    .push(ba.iter().map(|w| w.count_ones()).sum::<u32>());
                for (w, &word) in ba.iter().enumerate() {
                    let counter = &mut planes[(a * wpr + w) * PLANES..(a * wpr + w + 1) * PLANES];
                    let mut carry = word;
                    for plane in counter.iter_mut() {
                        if carry == 0 {
                            break;
                        }
                        let next = *plane & carry;
                        *plane ^= carry;
                        carry = next;
                    }
                }
                for b in a..dim {
                    let bb = &bits[b * wpr..(b + 1) * wpr];
                    let both: u64 = ba
                        .iter()
                        .zip(bb)
                        .map(|(x, y)| (x & y).count_ones() as u64)
                        .sum();
                    chunk.joint[a * dim + b] += both;
                    if b != a {
                        chunk.joint[b * dim + a] += both;
                    }
                }
            }

            if keep_table {
                for k in 0..p {
                    chunk.wins.extend_from_slice(&bits[k * wpr..(k + 1) * wpr]);
                }
                for k in 0..p {
                    chunk
                        .losses
                        .extend_from_slice(&bits[(p + k) * wpr..(p + k + 1) * wpr]);
                }
            }
        }

        for a in 0..dim {
            for w in 0..wpr {
                let counter = &planes[(a * wpr + w) * PLANES..(a * wpr + w + 1) * PLANES];
                for (b, &plane) in counter.iter().enumerate() {
                    for_each_bit(&[plane], |t| chunk.col_sums[(w * 64 + t) * dim + a] += 1 << b);
                }
            }
        }
        chunk
    }
}

/// One block's row of the decomposition table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRow {
    pub block: usize,
    pub endpoints: Vec<usize>,
    /// Wins decided inside the block, summed over rotations (weighted when stratified).
    pub wins: f64,
    pub losses: f64,
    /// Pairs still tied after the block, taken from the first rotation.
    pub residual_ties: f64,
    pub wins_pct: f64,
    pub ties_pct: f64,
    pub losses_pct: f64,
    /// `wins / losses`; `None` when the block decided no losses.
    pub block_wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub rows: Vec<BlockRow>,
    pub wins_pct: f64,
    pub ties_pct: f64,
    pub losses_pct: f64,
    pub overall_wr: Option<f64>,
}

/// Block-level decomposition of wins, losses and ties.
///
/// Win and loss percentages aggregate every rotation's deciding-position
/// counts over the block's positions and divide by `p · N_t · N_c`. Tie
/// percentages are residual ties after the block, which do not depend on
/// the rotation.
pub fn decompose(counts: &WinCounts, hierarchy: &Hierarchy) -> Result<Decomposition> {
    decompose_weighted(&[(1.0, counts)], hierarchy)
}

/// Decomposition over strata with per-stratum weights applied to every count.
pub fn decompose_weighted(
    strata: &[(f64, &WinCounts)],
    hierarchy: &Hierarchy,
) -> Result<Decomposition> {
    let q = hierarchy.num_endpoints();
    let Some((_, first)) = strata.first() else {
        return Err(Error::analysis("no strata to decompose"));
    };
    let p = first.num_rotations();
    for (_, c) in strata {
        if c.num_rotations() != p || c.wins_at.iter().any(|w| w.len() != q) {
            return Err(Error::config(
                "win counts were not produced under this hierarchy",
            ));
        }
    }

    let pairs: f64 = strata.iter().map(|(w, c)| w * c.pairs() as f64).sum();
    let total = pairs * p as f64;
    let mut rows = Vec::with_capacity(hierarchy.num_blocks());
    for (b, (start, end)) in hierarchy.block_ranges().into_iter().enumerate() {
        let mut wins = 0.0;
        let mut losses = 0.0;
        let mut residual = 0.0;
        for (w, c) in strata {
            let sw: u64 = c.wins_at.iter().map(|r| r[start..end].iter().sum::<u64>()).sum();
            let sl: u64 = c
                .losses_at
                .iter()
                .map(|r| r[start..end].iter().sum::<u64>())
                .sum();
            wins += w * sw as f64;
            losses += w * sl as f64;
            residual += w * c.residual_ties(0, end - 1) as f64;
        }
        rows.push(BlockRow {
            block: b,
            endpoints: hierarchy.blocks()[b].clone(),
            wins,
            losses,
            residual_ties: residual,
            wins_pct: 100.0 * wins / total,
            ties_pct: 100.0 * residual / pairs,
            losses_pct: 100.0 * losses / total,
            block_wr: (losses > 0.0).then(|| wins / losses),
        });
    }
    let wins: f64 = rows.iter().map(|r| r.wins).sum();
    let losses: f64 = rows.iter().map(|r| r.losses).sum();
    let ties_pct = rows.last().map_or(100.0, |r| r.ties_pct);
    Ok(Decomposition {
        wins_pct: 100.0 * wins / total,
        ties_pct,
        losses_pct: 100.0 * losses / total,
        overall_wr: (losses > 0.0).then(|| wins / losses),
        rows,
    })
}

/// Endpoint-level results of one rotation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointLevel {
    pub endpoint: usize,
    pub position: usize,
    pub wins: f64,
    pub losses: f64,
    pub wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationRow {
    pub rotation: usize,
    pub order: Vec<usize>,
    /// Ordered by endpoint index, not by position.
    pub endpoints: Vec<EndpointLevel>,
    pub overall_wr: Option<f64>,
}

/// Endpoint-level and overall win ratio for every rotation.
pub fn rotation_table(strata: &[(f64, &WinCounts)], rotations: &RotationSet) -> Vec<RotationRow> {
    rotations
        .orders()
        .iter()
        .enumerate()
        .map(|(k, order)| {
            let mut endpoints: Vec<EndpointLevel> = order
                .iter()
                .enumerate()
                .map(|(pos, &e)| {
                    let wins: f64 = strata.iter().map(|(w, c)| w * c.wins_at[k][pos] as f64).sum();
                    let losses: f64 =
                        strata.iter().map(|(w, c)| w * c.losses_at[k][pos] as f64).sum();
                    EndpointLevel {
                        endpoint: e,
                        position: pos,
                        wins,
                        losses,
                        wr: (losses > 0.0).then(|| wins / losses),
                    }
                })
                .collect();
            endpoints.sort_by_key(|l| l.endpoint);
            let wins: f64 = strata.iter().map(|(w, c)| w * c.wins[k] as f64).sum();
            let losses: f64 = strata.iter().map(|(w, c)| w * c.losses[k] as f64).sum();
            RotationRow {
                rotation: k,
                order: order.clone(),
                endpoints,
                overall_wr: (losses > 0.0).then(|| wins / losses),
            }
        })
        .collect()
}

impl fmt::Display for PairResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairResult::Win => "win",
            PairResult::Loss => "loss",
            PairResult::Tie => "tie",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_rotation_set;

    fn tte(time: f64, event: bool) -> Outcome {
        Outcome::TimeToEvent { time, event }
    }

    fn subject(id: &str, arm: Arm, outcomes: Vec<Outcome>) -> Subject {
        Subject {
            id: id.into(),
            arm,
            stratum: String::new(),
            outcomes,
            followup: None,
        }
    }

    #[test]
    fn censored_time_to_event_rule() {
        let spec = EndpointSpec::survival("death");
        assert_eq!(
            compare_endpoint(&tte(400.0, false), &tte(300.0, true), &spec).unwrap(),
            Comparison::AWins
        );
        assert_eq!(
            compare_endpoint(&tte(250.0, false), &tte(300.0, true), &spec).unwrap(),
            Comparison::Tie
        );
        assert_eq!(
            compare_endpoint(&tte(300.0, true), &tte(300.0, true), &spec).unwrap(),
            Comparison::Tie
        );
        assert_eq!(
            compare_endpoint(&tte(300.0, true), &tte(400.0, false), &spec).unwrap(),
            Comparison::BWins
        );
        let sooner = EndpointSpec::new("recovery", EndpointKind::TimeToEvent, Direction::SmallerWins);
        assert_eq!(
            compare_endpoint(&tte(100.0, true), &tte(200.0, false), &sooner).unwrap(),
            Comparison::AWins
        );
        assert_eq!(
            compare_endpoint(&tte(100.0, false), &tte(200.0, true), &sooner).unwrap(),
            Comparison::Tie
        );
    }

    #[test]
    fn counts_and_margins() {
        let fewer = EndpointSpec::new("hosp", EndpointKind::EventCount, Direction::SmallerWins);
        let two = Outcome::EventCount { count: 2 };
        assert_eq!(compare_endpoint(&two, &two, &fewer).unwrap(), Comparison::Tie);
        assert_eq!(
            compare_endpoint(&Outcome::EventCount { count: 1 }, &two, &fewer).unwrap(),
            Comparison::AWins
        );

        let cont = EndpointSpec::new("kccq", EndpointKind::Continuous, Direction::LargerWins).with_margin(5.0);
        let v = |x| Outcome::Continuous { value: x };
        assert_eq!(compare_endpoint(&v(103.0), &v(100.0), &cont).unwrap(), Comparison::Tie);
        assert_eq!(compare_endpoint(&v(106.0), &v(100.0), &cont).unwrap(), Comparison::AWins);
        assert_eq!(compare_endpoint(&v(100.0), &v(106.0), &cont).unwrap(), Comparison::BWins);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let spec = EndpointSpec::survival("death");
        let err = compare_endpoint(&Outcome::EventCount { count: 1 }, &tte(1.0, true), &spec);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn pair_walk_short_circuits() {
        let specs = vec![
            EndpointSpec::survival("death"),
            EndpointSpec::new("hosp", EndpointKind::EventCount, Direction::SmallerWins),
        ];
        let i = subject("i", Arm::Treatment, vec![tte(500.0, true), Outcome::EventCount { count: 9 }]);
        let j = subject("j", Arm::Control, vec![tte(200.0, true), Outcome::EventCount { count: 0 }]);
        let r = compare_pair(&i, &j, &[0, 1], &specs).unwrap();
        assert_eq!(r, PairOutcome { result: PairResult::Win, deciding_position: Some(0) });

        let same = compare_pair(&i, &i, &[0, 1], &specs).unwrap();
        assert_eq!(same, PairOutcome { result: PairResult::Tie, deciding_position: None });

        // tie on death (both censored), i has more hospitalisations
        let i2 = subject("i2", Arm::Treatment, vec![tte(700.0, false), Outcome::EventCount { count: 3 }]);
        let j2 = subject("j2", Arm::Control, vec![tte(650.0, false), Outcome::EventCount { count: 1 }]);
        let r = compare_pair(&i2, &j2, &[0, 1], &specs).unwrap();
        assert_eq!(r, PairOutcome { result: PairResult::Loss, deciding_position: Some(1) });
    }

    fn single_endpoint_fixture() -> (Vec<Subject>, Vec<Subject>, Vec<EndpointSpec>) {
        let specs = vec![EndpointSpec::new("y", EndpointKind::Continuous, Direction::LargerWins)];
        let v = |x| vec![Outcome::Continuous { value: x }];
        // treated {3, 5} vs control {1, 4}: 3>1, 3<4, 5>1, 5>4 -> 3 wins, 1 loss
        let t = vec![subject("t1", Arm::Treatment, v(3.0)), subject("t2", Arm::Treatment, v(5.0))];
        let c = vec![subject("c1", Arm::Control, v(1.0)), subject("c2", Arm::Control, v(4.0))];
        (t, c, specs)
    }

    #[test]
    fn three_wins_one_loss() {
        let (t, c, specs) = single_endpoint_fixture();
        let rs = build_rotation_set(&Hierarchy::singletons(1), 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        assert_eq!(out.counts.wins, vec![3]);
        assert_eq!(out.counts.losses, vec![1]);
        assert_eq!(out.counts.ties(0), 0);
        let table = out.table.unwrap();
        assert_eq!(table.get(0, 0, 1), PairResult::Loss);
        assert_eq!(table.get(0, 1, 1), PairResult::Win);
        assert_eq!(out.summary.row_sums, vec![1, 1, 2, 0]);
        assert_eq!(out.summary.col_sums, vec![2, 0, 1, 1]);

        let d = decompose(&out.counts, &Hierarchy::singletons(1)).unwrap();
        assert_eq!(d.rows.len(), 1);
        assert_eq!(d.rows[0].wins_pct, 75.0);
        assert_eq!(d.rows[0].ties_pct, 0.0);
        assert_eq!(d.rows[0].losses_pct, 25.0);
        assert_eq!(d.rows[0].block_wr, Some(3.0));
    }

    #[test]
    fn all_ties() {
        let specs = vec![EndpointSpec::survival("a"), EndpointSpec::survival("b")];
        let s = |id: &str, arm| subject(id, arm, vec![tte(10.0, false), tte(10.0, false)]);
        let t = vec![s("t1", Arm::Treatment), s("t2", Arm::Treatment)];
        let c = vec![s("c1", Arm::Control), s("c2", Arm::Control), s("c3", Arm::Control)];
        let h = Hierarchy::new(vec![vec![0, 1]]).unwrap();
        let rs = build_rotation_set(&h, 720).unwrap();
        let out = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        for k in 0..2 {
            assert_eq!((out.counts.wins[k], out.counts.losses[k], out.counts.ties(k)), (0, 0, 6));
        }
        let d = decompose(&out.counts, &h).unwrap();
        assert_eq!(d.rows[0].wins_pct, 0.0);
        assert_eq!(d.rows[0].ties_pct, 100.0);
        assert_eq!(d.rows[0].block_wr, None);
    }

    #[test]
    fn empty_arm_is_an_analysis_error() {
        let (t, _, specs) = single_endpoint_fixture();
        let rs = build_rotation_set(&Hierarchy::singletons(1), 720).unwrap();
        assert!(matches!(
            count_wins_losses(&t, &[], &rs, &specs),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn table_limit_drops_table_only() {
        let (t, c, specs) = single_endpoint_fixture();
        let rs = build_rotation_set(&Hierarchy::singletons(1), 720).unwrap();
        let full = count_wins_losses(&t, &c, &rs, &specs).unwrap();
        let streamed =
            count_wins_losses_with(&t, &c, &rs, &specs, CountOptions { table_limit: 1 }).unwrap();
        assert!(streamed.table.is_none());
        assert_eq!(full.counts, streamed.counts);
        assert_eq!(full.summary, streamed.summary);
    }
}
