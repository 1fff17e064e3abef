//! Reads association rules out of a trained autoencoder.
//!
//! For every combination of up to `max_antecedents` features and every joint
//! assignment of their classes, a test vector is built: the chosen class
//! slots hold 1, their sibling slots 0, and every other feature holds a
//! uniform distribution. The network reconstructs the vector. If each marked
//! slot comes back with probability at least `similarity_threshold`, every
//! other feature whose most likely class clears the threshold (strictly)
//! becomes the consequent of a rule whose antecedent is the marked items.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonet::{NetError, TrainedAutoencoder};
use crate::transact::{Feature, Layout, TransactionTable};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// `feature = class`, by index into a table's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub feature: usize,
    pub class: usize,
}

impl Item {
    pub fn new(feature: usize, class: usize) -> Self {
        Self { feature, class }
    }

    pub fn render(&self, features: &[Feature]) -> String {
        let f = &features[self.feature];
        format!("{}={}", f.name, f.class_values[self.class])
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}={}", self.feature, self.class)
    }
}

/// Horn clause `X -> y`: a nonempty antecedent over distinct features and a
/// single consequent item on a feature outside the antecedent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    antecedent: Vec<Item>,
    consequent: Item,
}

impl Rule {
    /// The antecedent is stored sorted by feature.
    pub fn new(mut antecedent: Vec<Item>, consequent: Item) -> Result<Self, ExtractError> {
        if antecedent.is_empty() {
            return Err(ExtractError::InvalidRule("empty antecedent".into()));
        }
        antecedent.sort();
        if antecedent.windows(2).any(|w| w[0].feature == w[1].feature) {
            return Err(ExtractError::InvalidRule(
                "antecedent repeats a feature".into(),
            ));
        }
        if antecedent.iter().any(|i| i.feature == consequent.feature) {
            return Err(ExtractError::InvalidRule(
                "consequent feature appears in the antecedent".into(),
            ));
        }
        Ok(Self {
            antecedent,
            consequent,
        })
    }

    pub fn antecedent(&self) -> &[Item] {
        &self.antecedent
    }

    pub fn consequent(&self) -> Item {
        self.consequent
    }

    pub fn items(&self) -> impl Iterator<Item = Item> + '_ {
        self.antecedent
            .iter()
            .copied()
            .chain(std::iter::once(self.consequent))
    }

    pub fn render(&self, features: &[Feature]) -> String {
        let lhs: Vec<String> = self.antecedent.iter().map(|i| i.render(features)).collect();
        format!("{} -> {}", lhs.join(", "), self.consequent.render(features))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lhs: Vec<String> = self.antecedent.iter().map(Item::to_string).collect();
        write!(f, "{} -> {}", lhs.join(", "), self.consequent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub similarity_threshold: f64,
    pub max_antecedents: usize,
    /// When set, only these features are marked in test vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markable_features: Option<BTreeSet<usize>>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.8,
            max_antecedents: 2,
            markable_features: None,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self, layout: &Layout) -> Result<(), ExtractError> {
        let t = self.similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ExtractError::Config(format!(
                "similarity threshold {t} outside (0, 1]"
            )));
        }
        if self.max_antecedents == 0 {
            return Err(ExtractError::Config("max_antecedents must be >= 1".into()));
        }
        if let Some(&f) = self
            .markable_features
            .as_ref()
            .and_then(|m| m.iter().find(|&&f| f >= layout.n_features()))
        {
            return Err(ExtractError::LayoutMismatch(format!(
                "markable feature {f} but the network has {} features",
                layout.n_features()
            )));
        }
        Ok(())
    }

    fn markable(&self, layout: &Layout) -> Vec<usize> {
        match &self.markable_features {
            Some(m) => m.iter().copied().collect(),
            None => (0..layout.n_features()).collect(),
        }
    }
}

/// Anything that maps a probability vector over the layout to a reconstruction.
pub trait Reconstruct {
    fn layout(&self) -> &Layout;
    fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, NetError>;
}

impl Reconstruct for TrainedAutoencoder {
    fn layout(&self) -> &Layout {
        TrainedAutoencoder::layout(self)
    }

    fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.forward(input)
    }
}

impl<R: Reconstruct + ?Sized> Reconstruct for &R {
    fn layout(&self) -> &Layout {
        (**self).layout()
    }

    fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        (**self).reconstruct(input)
    }
}

/// Wraps a reconstructor and counts forward passes.
#[derive(Debug)]
pub struct CountingReconstructor<R> {
    inner: R,
    calls: AtomicUsize,
}

impl<R> CountingReconstructor<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<R: Reconstruct> Reconstruct for CountingReconstructor<R> {
    fn layout(&self) -> &Layout {
        self.inner.layout()
    }

    fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.reconstruct(input)
    }
}

/// Every feature's slots set to `1/k` for its `k` classes.
pub fn equal_prob_vector(layout: &Layout) -> Vec<f64> {
    let mut v = vec![0.0; layout.width()];
    for f in 0..layout.n_features() {
        let k = layout.class_count(f);
        v[layout.range(f)].fill(1.0 / k as f64);
    }
    v
}

/// A probe for the network and the items it marks.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVector {
    pub vector: Vec<f64>,
    pub marked: Vec<Item>,
}

/// One test vector per joint class assignment of `subset`, enumerated with
/// the last feature varying fastest.
pub fn generate_test_vectors(layout: &Layout, subset: &[usize]) -> Vec<TestVector> {
    let base = equal_prob_vector(layout);
    let mut out = Vec::new();
    let mut classes = vec![0usize; subset.len()];
    loop {
        let mut vector = base.clone();
        let mut marked = Vec::with_capacity(subset.len());
        for (&f, &c) in subset.iter().zip(&classes) {
            vector[layout.range(f)].fill(0.0);
            vector[layout.slot(f, c)] = 1.0;
            marked.push(Item::new(f, c));
        }
        out.push(TestVector { vector, marked });

        // odometer increment
        let mut pos = subset.len();
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            classes[pos] += 1;
            if classes[pos] < layout.class_count(subset[pos]) {
                break;
            }
            classes[pos] = 0;
        }
    }
}

/// All subsets of `candidates` with 1..=`max_size` elements, by size then
/// lexicographically.
pub fn feature_subsets(candidates: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    let n = candidates.len();
    let mut out = Vec::new();
    for size in 1..=max_size.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| candidates[i]).collect());
            let Some(i) = (0..size).rev().find(|&i| idx[i] < n - size + i) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Number of test vectors (forward passes) extraction performs: the sum over
/// nonempty feature subsets of size at most `max_antecedents` of the product
/// of their class counts.
pub fn count_test_vectors(layout: &Layout, max_antecedents: usize) -> u128 {
    count_for_classes(layout.class_counts(), max_antecedents)
}

fn count_for_classes(counts: &[usize], max_antecedents: usize) -> u128 {
    // elementary symmetric polynomials e_1..e_a of the class counts
    let a = max_antecedents.min(counts.len());
    let mut e = vec![0u128; a + 1];
    e[0] = 1;
    for &c in counts {
        for k in (1..=a).rev() {
            e[k] += e[k - 1] * c as u128;
        }
    }
    e[1..].iter().sum()
}

fn rules_for_subset<R: Reconstruct + ?Sized>(
    net: &R,
    subset: &[usize],
    threshold: f64,
) -> Result<Vec<Rule>, ExtractError> {
    let layout = net.layout();
    let mut rules = Vec::new();
    for tv in generate_test_vectors(layout, subset) {
        let out = net.reconstruct(&tv.vector)?;
        if out.len() != layout.width() {
            return Err(ExtractError::LayoutMismatch(format!(
                "reconstruction has {} slots, layout has {}",
                out.len(),
                layout.width()
            )));
        }
        if tv
            .marked
            .iter()
            .any(|it| out[layout.slot(it.feature, it.class)] < threshold)
        {
            continue;
        }
        for f in (0..layout.n_features()).filter(|f| !subset.contains(f)) {
            let slots = &out[layout.range(f)];
            let (best, p) = slots
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, &p)| {
                    if p > acc.1 {
                        (c, p)
                    } else {
                        acc
                    }
                });
            if p > threshold {
                rules.push(Rule::new(tv.marked.clone(), Item::new(f, best))?);
            }
        }
    }
    Ok(rules)
}

fn dedup_in_order(batches: impl IntoIterator<Item = Vec<Rule>>) -> Vec<Rule> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rule in batches.into_iter().flatten() {
        if seen.insert(rule.clone()) {
            out.push(rule);
        }
    }
    out
}

/// Rules in canonical order: subset enumeration order, then class
/// assignment order, then consequent feature.
pub fn extract_rules<R: Reconstruct + ?Sized>(
    net: &R,
    config: &ExtractionConfig,
) -> Result<Vec<Rule>, ExtractError> {
    let layout = net.layout();
    config.validate(layout)?;
    let subsets = feature_subsets(&config.markable(layout), config.max_antecedents);
    let batches = subsets
        .iter()
        .map(|s| rules_for_subset(net, s, config.similarity_threshold))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dedup_in_order(batches))
}

/// Same result as [`extract_rules`], with feature subsets processed in parallel.
pub fn extract_rules_parallel<R: Reconstruct + Sync + ?Sized>(
    net: &R,
    config: &ExtractionConfig,
) -> Result<Vec<Rule>, ExtractError> {
    let layout = net.layout();
    config.validate(layout)?;
    let subsets = feature_subsets(&config.markable(layout), config.max_antecedents);
    let batches = subsets
        .par_iter()
        .map(|s| rules_for_subset(net, s, config.similarity_threshold))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dedup_in_order(batches))
}

/// Item as it appears in rule files: names instead of indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub feature: String,
    pub class: String,
}

/// Rule as it appears in rule files, optionally with measured quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub antecedent: Vec<ItemRecord>,
    pub consequent: ItemRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zhang: Option<f64>,
}

fn item_record(item: Item, features: &[Feature]) -> ItemRecord {
    let f = &features[item.feature];
    ItemRecord {
        feature: f.name.clone(),
        class: f.class_values[item.class].clone(),
    }
}

impl RuleRecord {
    pub fn from_rule(rule: &Rule, features: &[Feature]) -> Self {
        Self {
            antecedent: rule
                .antecedent
                .iter()
                .map(|&i| item_record(i, features))
                .collect(),
            consequent: item_record(rule.consequent, features),
            support: None,
            confidence: None,
            zhang: None,
        }
    }

    /// Resolves names against `table`.
    pub fn to_rule(&self, table: &TransactionTable) -> Result<Rule, ExtractError> {
        let resolve = |r: &ItemRecord| -> Result<Item, ExtractError> {
            let f = table.feature_index(&r.feature).ok_or_else(|| {
                ExtractError::LayoutMismatch(format!("unknown feature `{}`", r.feature))
            })?;
            let c = table.class_index(f, &r.class).ok_or_else(|| {
                ExtractError::LayoutMismatch(format!(
                    "feature `{}` has no class `{}`",
                    r.feature, r.class
                ))
            })?;
            Ok(Item::new(f, c))
        };
        let antecedent = self
            .antecedent
            .iter()
            .map(resolve)
            .collect::<Result<Vec<_>, _>>()?;
        Rule::new(antecedent, resolve(&self.consequent)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(counts: &[usize]) -> Layout {
        Layout::new(counts.to_vec()).unwrap()
    }

    /// Returns a fixed output for one input, and a uniform vector otherwise.
    struct Stub {
        layout: Layout,
        input: Vec<f64>,
        output: Vec<f64>,
    }

    impl Reconstruct for Stub {
        fn layout(&self) -> &Layout {
            &self.layout
        }

        fn reconstruct(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
            let same = input
                .iter()
                .zip(&self.input)
                .all(|(a, b)| (a - b).abs() < 0.01);
            Ok(if same {
                self.output.clone()
            } else {
                equal_prob_vector(&self.layout)
            })
        }
    }

    fn fig2_stub() -> Stub {
        Stub {
            layout: layout(&[2, 3]),
            input: vec![1.0, 0.0, 0.33, 0.33, 0.33],
            output: vec![0.8, 0.2, 0.9, 0.04, 0.06],
        }
    }

    #[test]
    fn equal_probabilities() {
        let third = 1.0 / 3.0;
        assert_eq!(
            equal_prob_vector(&layout(&[2, 3])),
            vec![0.5, 0.5, third, third, third]
        );
        assert_eq!(equal_prob_vector(&layout(&[1])), vec![1.0]);
        assert_eq!(equal_prob_vector(&layout(&[4])), vec![0.25; 4]);
    }

    #[test]
    fn marking_one_feature() {
        let tvs = generate_test_vectors(&layout(&[2, 3]), &[0]);
        assert_eq!(tvs.len(), 2);
        let third = 1.0 / 3.0;
        assert_eq!(tvs[0].vector, vec![1.0, 0.0, third, third, third]);
        assert_eq!(tvs[0].marked, vec![Item::new(0, 0)]);
        assert_eq!(tvs[1].vector, vec![0.0, 1.0, third, third, third]);
    }

    #[test]
    fn marking_two_features_gives_product() {
        let tvs = generate_test_vectors(&layout(&[2, 3]), &[0, 1]);
        assert_eq!(tvs.len(), 6);
        assert_eq!(tvs[1].marked, vec![Item::new(0, 0), Item::new(1, 1)]);
        assert_eq!(tvs[1].vector, vec![1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn subsets_in_canonical_order() {
        assert_eq!(
            feature_subsets(&[0, 1, 2], 2),
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );
        assert_eq!(feature_subsets(&[4, 7], 5), vec![vec![4], vec![7], vec![4, 7]]);
        assert_eq!(feature_subsets(&[], 2), Vec::<Vec<usize>>::new());
        assert_eq!(feature_subsets(&[0, 1, 2, 3], 4).len(), 15);
    }

    #[test]
    fn test_vector_counts() {
        assert_eq!(count_test_vectors(&layout(&[2, 3]), 2), 11);
        assert_eq!(count_test_vectors(&layout(&[7]), 1), 7);
        assert_eq!(count_test_vectors(&layout(&[5; 6]), 1), 30);
        assert_eq!(count_test_vectors(&layout(&[2, 3, 4]), 2), 35);
        // larger `a` than feature count saturates
        assert_eq!(count_test_vectors(&layout(&[2, 3]), 9), 11);
    }

    #[test]
    fn figure_two_example() {
        let stub = fig2_stub();
        let cfg = ExtractionConfig::default();
        let rules = extract_rules(&stub, &cfg).unwrap();
        assert_eq!(rules, vec![Rule::new(vec![Item::new(0, 0)], Item::new(1, 0)).unwrap()]);
    }

    #[test]
    fn threshold_one_yields_nothing_on_interior_outputs() {
        let stub = fig2_stub();
        let cfg = ExtractionConfig {
            similarity_threshold: 1.0,
            ..Default::default()
        };
        assert!(extract_rules(&stub, &cfg).unwrap().is_empty());
    }

    #[test]
    fn markable_allow_list_restricts_antecedents() {
        let stub = fig2_stub();
        let cfg = ExtractionConfig {
            markable_features: Some([1].into()),
            ..Default::default()
        };
        assert!(extract_rules(&stub, &cfg).unwrap().is_empty());
        let bad = ExtractionConfig {
            markable_features: Some([5].into()),
            ..Default::default()
        };
        assert!(matches!(
            extract_rules(&stub, &bad),
            Err(ExtractError::LayoutMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        let l = layout(&[2]);
        for t in [0.0, -0.1, 1.5, f64::NAN] {
            let c = ExtractionConfig {
                similarity_threshold: t,
                ..Default::default()
            };
            assert!(c.validate(&l).is_err());
        }
        let c = ExtractionConfig {
            max_antecedents: 0,
            ..Default::default()
        };
        assert!(c.validate(&l).is_err());
    }

    #[test]
    fn rule_invariants_enforced() {
        assert!(Rule::new(vec![], Item::new(0, 0)).is_err());
        assert!(Rule::new(vec![Item::new(0, 0), Item::new(0, 1)], Item::new(1, 0)).is_err());
        assert!(Rule::new(vec![Item::new(0, 0)], Item::new(0, 1)).is_err());
        let r = Rule::new(vec![Item::new(2, 0), Item::new(1, 1)], Item::new(0, 0)).unwrap();
        assert_eq!(r.antecedent(), &[Item::new(1, 1), Item::new(2, 0)]);
    }

    #[test]
    fn counting_wrapper_counts_forward_passes() {
        let stub = CountingReconstructor::new(fig2_stub());
        extract_rules(&stub, &ExtractionConfig::default()).unwrap();
        assert_eq!(stub.calls() as u128, count_test_vectors(stub.layout(), 2));
    }

    #[test]
    fn record_round_trip() {
        let t = TransactionTable::from_labels(&["f1", "f2"], &[vec!["a", "c"], vec!["b", "d"]])
            .unwrap();
        let r = Rule::new(vec![Item::new(0, 0)], Item::new(1, 0)).unwrap();
        let rec = RuleRecord::from_rule(&r, t.features());
        assert_eq!(rec.consequent.class, "c");
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"antecedent":[{"feature":"f1","class":"a"}],"consequent":{"feature":"f2","class":"c"}}"#
        );
        assert_eq!(rec.to_rule(&t).unwrap(), r);
        assert_eq!(r.render(t.features()), "f1=a -> f2=c");
    }
}
