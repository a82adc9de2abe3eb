//! Endpoint definitions, block hierarchies and rotation sets.
//!
//! A [`Hierarchy`] is an ordered list of blocks. Blocks are strictly
//! prioritized against each other while the endpoints inside a block share
//! equal priority. Equal priority is realised by enumerating every ordering
//! of each block; the Cartesian product of those orderings is the
//! [`RotationSet`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of rotations (6!).
pub const DEFAULT_ROTATION_CAP: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    TimeToEvent,
    EventCount,
    Continuous,
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointKind::TimeToEvent => "time_to_event",
            EndpointKind::EventCount => "event_count",
            EndpointKind::Continuous => "continuous",
        })
    }
}

/// Which side of a comparison is favourable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LargerWins,
    SmallerWins,
}

/// One endpoint: its type, favourable direction and tie margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub id: String,
    pub kind: EndpointKind,
    pub direction: Direction,
    /// Differences of at most `margin` (outcome units) are ties.
    #[serde(default)]
    pub margin: f64,
}

impl EndpointSpec {
    pub fn new(id: impl Into<String>, kind: EndpointKind, direction: Direction) -> Self {
        Self {
            id: id.into(),
            kind,
            direction,
            margin: 0.0,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    /// Survival-type endpoint where a later event is better.
    pub fn survival(id: impl Into<String>) -> Self {
        Self::new(id, EndpointKind::TimeToEvent, Direction::LargerWins)
    }
}

/// Ordered blocks of endpoint indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    blocks: Vec<Vec<usize>>,
}

impl Hierarchy {
    /// Builds a hierarchy and checks that the blocks partition `0..q`,
    /// where `q` is the number of indices supplied.
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let h = Self::unchecked(blocks);
        let q = h.blocks.iter().map(Vec::len).sum();
        h.check_partition(q)?;
        Ok(h)
    }

    /// Builds a hierarchy without validation; see [`validate_hierarchy`].
    pub fn unchecked(blocks: Vec<Vec<usize>>) -> Self {
        Self { blocks }
    }

    /// One block per endpoint, in index order: a fully prioritized hierarchy.
    pub fn singletons(q: usize) -> Self {
        Self {
            blocks: (0..q).map(|i| vec![i]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_endpoints(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Half-open position ranges `[start, end)` each block occupies in any rotation.
    pub fn block_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = (start, start + b.len());
                start += b.len();
                r
            })
            .collect()
    }

    /// Closed-form rotation count, saturating at `u128::MAX`.
    pub fn rotation_count(&self) -> u128 {
        self.blocks
            .iter()
            .map(|b| factorial(b.len()))
            .fold(1u128, |acc, f| acc.saturating_mul(f))
    }

    fn check_partition(&self, q: usize) -> Result<()> {
        let findings = partition_findings(&self.blocks, q);
        match findings.into_iter().next() {
            None => Ok(()),
            Some(f) => Err(Error::config(format!("invalid hierarchy: {f}"))),
        }
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |acc, k| acc.saturating_mul(k))
}

/// The list of endpoint orderings generated by a hierarchy.
///
/// Orders are generated with lexicographic permutations inside each block
/// and the last block varying fastest, so rotation indices are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationSet {
    orders: Vec<Vec<usize>>,
}

impl RotationSet {
    /// Wraps an arbitrary list of endpoint orderings, for instance a set of
    /// fixed single-order hierarchies evaluated in one comparison pass.
    /// Orders may omit endpoints but must not repeat one.
    pub fn from_orders(orders: Vec<Vec<usize>>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::config("rotation set must contain at least one order"));
        }
        for (k, order) in orders.iter().enumerate() {
            let distinct: BTreeSet<_> = order.iter().collect();
            if distinct.len() != order.len() {
                return Err(Error::config(format!("order {k} repeats an endpoint")));
            }
        }
        Ok(Self { orders })
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// Largest endpoint index referenced plus one.
    pub fn num_endpoints(&self) -> usize {
        self.orders
            .iter()
            .flat_map(|o| o.iter().copied())
            .max()
            .map_or(0, |m| m + 1)
    }

    /// A new set holding only the orders at `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            orders: indices.iter().map(|&k| self.orders[k].clone()).collect(),
        }
    }
}

/// Enumerates the rotation set of `hierarchy`, refusing when it would hold
/// more than `cap` orders.
pub fn build_rotation_set(hierarchy: &Hierarchy, cap: usize) -> Result<RotationSet> {
    hierarchy.check_partition(hierarchy.num_endpoints())?;
    let count = hierarchy.rotation_count();
    if count > cap as u128 {
        return Err(Error::RotationCap { count, cap });
    }

    let per_block: Vec<Vec<Vec<usize>>> = hierarchy
        .blocks
        .iter()
        .map(|b| lexicographic_permutations(b))
        .collect();

    let mut orders = Vec::with_capacity(count as usize);
    let mut cursor = vec![0usize; per_block.len()];
    loop {
        let order: Vec<usize> = cursor
            .iter()
            .zip(&per_block)
            .flat_map(|(&c, perms)| perms[c].iter().copied())
            .collect();
        orders.push(order);

        // odometer increment, last block fastest
        let mut r = per_block.len();
        loop {
            if r == 0 {
                return Ok(RotationSet { orders });
            }
            r -= 1;
            cursor[r] += 1;
            if cursor[r] < per_block[r].len() {
                break;
            }
            cursor[r] = 0;
        }
    }
}

fn lexicographic_permutations(block: &[usize]) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = block.to_vec();
    current.sort_unstable();
    let mut out = vec![current.clone()];
    while next_permutation(&mut current) {
        out.push(current.clone());
    }
    out
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// A single problem found by [`validate_hierarchy`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    EmptyBlock { block: usize },
    DuplicateIndex { index: usize },
    OutOfRange { index: usize, num_endpoints: usize },
    MissingIndex { index: usize },
    RotationCapExceeded { count: u128, cap: usize },
    DuplicateEndpointId { id: String },
    NegativeMargin { id: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyBlock { block } => write!(f, "block {block} is empty"),
            Finding::DuplicateIndex { index } => {
                write!(f, "endpoint {index} appears more than once")
            }
            Finding::OutOfRange {
                index,
                num_endpoints,
            } => write!(
                f,
                "endpoint {index} is out of range ({num_endpoints} endpoints defined)"
            ),
            Finding::MissingIndex { index } => {
                write!(f, "endpoint {index} is not assigned to any block")
            }
            Finding::RotationCapExceeded { count, cap } => {
                write!(f, "{count} rotations exceed the cap of {cap}")
            }
            Finding::DuplicateEndpointId { id } => write!(f, "endpoint id '{id}' is not unique"),
            Finding::NegativeMargin { id } => write!(f, "endpoint '{id}' has a negative margin"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Lints a hierarchy against its endpoint specs. Never fails; an empty
/// report means the configuration is usable.
pub fn validate_hierarchy(
    hierarchy: &Hierarchy,
    specs: &[EndpointSpec],
    cap: usize,
) -> ValidationReport {
    let mut findings = partition_findings(&hierarchy.blocks, specs.len());

    let mut seen = BTreeSet::new();
    for spec in specs {
        if !seen.insert(spec.id.as_str()) {
            findings.push(Finding::DuplicateEndpointId {
                id: spec.id.clone(),
            });
        }
        if !(spec.margin >= 0.0) {
            findings.push(Finding::NegativeMargin {
                id: spec.id.clone(),
            });
        }
    }

    let count = hierarchy.rotation_count();
    if count > cap as u128 {
        findings.push(Finding::RotationCapExceeded { count, cap });
    }
    ValidationReport { findings }
}

fn partition_findings(blocks: &[Vec<usize>], q: usize) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = vec![false; q];
    let mut reported = BTreeSet::new();
    for (b, block) in blocks.iter().enumerate() {
        if block.is_empty() {
            findings.push(Finding::EmptyBlock { block: b });
        }
        for &index in block {
            if index >= q {
                findings.push(Finding::OutOfRange {
                    index,
                    num_endpoints: q,
                });
            } else if seen[index] {
                if reported.insert(index) {
                    findings.push(Finding::DuplicateIndex { index });
                }
            } else {
                seen[index] = true;
            }
        }
    }
    for (index, present) in seen.iter().enumerate() {
        if !present {
            findings.push(Finding::MissingIndex { index });
        }
    }
    findings
}
