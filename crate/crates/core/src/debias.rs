//! Probabilistic label dropping for correlated attributes, plus the
//! co-occurrence statistics used to audit those correlations.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{Attribute, AttributeFlags, AttributeRecord, Vocabulary, ATTRIBUTE_COUNT};

/// Drop `target` with probability `drop_probability` whenever it is set
/// together with every attribute in `conditions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebiasRule {
    pub target: Attribute,
    pub conditions: Vec<Attribute>,
    pub drop_probability: f64,
}

impl DebiasRule {
    /// Attractive is dropped 80% of the time when it co-occurs with heavy makeup.
    pub fn attractive_makeup() -> Self {
        Self {
            target: Attribute::Attractive,
            conditions: vec![Attribute::HeavyMakeup],
            drop_probability: 0.8,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.conditions.contains(&self.target) {
            return Err(format!("target `{}` cannot also be a condition", self.target.id()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!(
                "drop_probability {} outside [0, 1]",
                self.drop_probability
            ));
        }
        Ok(())
    }

    fn applies_to(&self, flags: &AttributeFlags) -> bool {
        flags.get(self.target) && self.conditions.iter().all(|c| flags.get(*c))
    }
}

pub fn default_rules() -> Vec<DebiasRule> {
    vec![DebiasRule::attractive_makeup()]
}

/// Applies `rules` in order, calling `draw` for a uniform `[0, 1)` sample
/// only when a rule's conditions hold. Returns the new flags and the labels
/// that were dropped.
pub fn apply_rules_with(
    flags: &AttributeFlags,
    rules: &[DebiasRule],
    mut draw: impl FnMut() -> f64,
) -> (AttributeFlags, Vec<Attribute>) {
    let mut out = *flags;
    let mut dropped = Vec::new();
    for rule in rules {
        if rule.applies_to(&out) && draw() < rule.drop_probability {
            out.set(rule.target, false);
            dropped.push(rule.target);
        }
    }
    (out, dropped)
}

pub fn apply_debias_flags(
    flags: &AttributeFlags,
    rules: &[DebiasRule],
    rng: &mut impl Rng,
) -> (AttributeFlags, Vec<Attribute>) {
    apply_rules_with(flags, rules, || rng.random::<f64>())
}

/// Returns a copy of `record` with rule targets possibly cleared. Only
/// attribute flags change; `is_blurry` is never a rule target in practice
/// and is left untouched.
pub fn apply_debias(record: &AttributeRecord, rules: &[DebiasRule], rng: &mut impl Rng) -> AttributeRecord {
    let (flags, _) = apply_debias_flags(&record.attributes, rules, rng);
    AttributeRecord {
        attributes: flags,
        ..record.clone()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DebiasError {
    #[error("co-occurrence statistics need at least one record")]
    EmptyInput,
}

/// Mergeable attribute counters. Shards can be counted independently and
/// reduced in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceCounter {
    total: u64,
    marginal: [u64; ATTRIBUTE_COUNT],
    joint: Vec<u64>,
}

impl Default for CooccurrenceCounter {
    fn default() -> Self {
        Self {
            total: 0,
            marginal: [0; ATTRIBUTE_COUNT],
            joint: vec![0; ATTRIBUTE_COUNT * ATTRIBUTE_COUNT],
        }
    }
}

impl CooccurrenceCounter {
    pub fn add(&mut self, flags: &AttributeFlags) {
        self.total += 1;
        let set: Vec<usize> = flags.iter_set().map(|a| a.index()).collect();
        for (k, &i) in set.iter().enumerate() {
            self.marginal[i] += 1;
            for &j in &set[k + 1..] {
                self.joint[i * ATTRIBUTE_COUNT + j] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CooccurrenceCounter) {
        self.total += other.total;
        for (a, b) in self.marginal.iter_mut().zip(other.marginal.iter()) {
            *a += b;
        }
        for (a, b) in self.joint.iter_mut().zip(other.joint.iter()) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn marginal(&self, a: Attribute) -> u64 {
        self.marginal[a.index()]
    }

    /// Records where both `a` and `b` are set. `joint(a, a)` is the marginal.
    pub fn joint(&self, a: Attribute, b: Attribute) -> u64 {
        let (i, j) = (a.index().min(b.index()), a.index().max(b.index()));
        if i == j {
            self.marginal[i]
        } else {
            self.joint[i * ATTRIBUTE_COUNT + j]
        }
    }

    /// `P(target | given)`, or `None` when `given` never occurs.
    pub fn conditional(&self, target: Attribute, given: Attribute) -> Option<f64> {
        let denom = self.marginal(given);
        (denom > 0).then(|| self.joint(target, given) as f64 / denom as f64)
    }

    pub fn report(&self, pairs: &[ConditionalPair]) -> Result<CooccurrenceReport, DebiasError> {
        if self.total == 0 {
            return Err(DebiasError::EmptyInput);
        }
        let marginals = Attribute::ALL
            .iter()
            .map(|a| (a.id().to_string(), self.marginal(*a)))
            .collect();
        let mut joint = Vec::new();
        for (k, a) in Attribute::ALL.iter().enumerate() {
            for b in &Attribute::ALL[k + 1..] {
                let count = self.joint(*a, *b);
                if count > 0 {
                    joint.push(PairCount { a: *a, b: *b, count });
                }
            }
        }
        let conditionals = pairs
            .iter()
            .map(|p| ConditionalStat {
                target: p.target,
                given: p.given,
                joint: self.joint(p.target, p.given),
                given_count: self.marginal(p.given),
                probability: self.conditional(p.target, p.given),
            })
            .collect();
        Ok(CooccurrenceReport {
            total: self.total,
            marginals,
            joint,
            conditionals,
        })
    }
}

/// A conditional probability `P(target | given)` to include in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalPair {
    pub target: Attribute,
    pub given: Attribute,
}

pub fn default_conditional_pairs() -> Vec<ConditionalPair> {
    vec![
        ConditionalPair { target: Attribute::HeavyMakeup, given: Attribute::Attractive },
        ConditionalPair { target: Attribute::Attractive, given: Attribute::HeavyMakeup },
        ConditionalPair { target: Attribute::Male, given: Attribute::Attractive },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub a: Attribute,
    pub b: Attribute,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStat {
    pub target: Attribute,
    pub given: Attribute,
    pub joint: u64,
    pub given_count: u64,
    pub probability: Option<f64>,
}

/// Counts over a record population. `joint` lists only non-zero pairs, in
/// canonical attribute order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceReport {
    pub total: u64,
    pub marginals: BTreeMap<String, u64>,
    pub joint: Vec<PairCount>,
    pub conditionals: Vec<ConditionalStat>,
}

impl CooccurrenceReport {
    pub fn joint_count(&self, a: Attribute, b: Attribute) -> u64 {
        let (a, b) = if a.index() <= b.index() { (a, b) } else { (b, a) };
        self.joint
            .iter()
            .find(|p| p.a == a && p.b == b)
            .map_or(0, |p| p.count)
    }

    pub fn conditional(&self, target: Attribute, given: Attribute) -> Option<f64> {
        self.conditionals
            .iter()
            .find(|c| c.target == target && c.given == given)
            .and_then(|c| c.probability)
    }

    /// Joint counts as CSV: `a,b,count`, one row per non-zero pair.
    pub fn joint_csv(&self) -> String {
        let mut out = String::from("a,b,count\n");
        for p in &self.joint {
            out.push_str(&format!("{},{},{}\n", p.a.id(), p.b.id(), p.count));
        }
        out
    }
}

impl fmt::Display for CooccurrenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.total)?;
        for c in &self.conditionals {
            match c.probability {
                Some(p) => writeln!(
                    f,
                    "P({} | {}) = {:.4} ({}/{})",
                    c.target.label(),
                    c.given.label(),
                    p,
                    c.joint,
                    c.given_count
                )?,
                None => writeln!(f, "P({} | {}) = n/a (no `{}`)", c.target.label(), c.given.label(), c.given.label())?,
            }
        }
        let mut top: Vec<&PairCount> = self.joint.iter().collect();
        top.sort_by_key(|p| std::cmp::Reverse(p.count));
        writeln!(f, "most frequent pairs:")?;
        for p in top.iter().take(10) {
            writeln!(f, "  {} + {}: {}", p.a.label(), p.b.label(), p.count)?;
        }
        Ok(())
    }
}

/// Single-pass co-occurrence counts over a record stream.
pub fn cooccurrence_stats<'a, I>(records: I, pairs: &[ConditionalPair]) -> Result<CooccurrenceReport, DebiasError>
where
    I: IntoIterator<Item = &'a AttributeRecord>,
{
    let mut counter = CooccurrenceCounter::default();
    for r in records {
        counter.add(&r.attributes);
    }
    counter.report(pairs)
}
