//! Exhaustive rule mining: vertical (tid-bitset) frequent-itemset search,
//! rule generation from the itemsets, and a brute-force enumeration oracle.

use std::collections::HashMap;

use thiserror::Error;

use crate::extract::{count_test_vectors, feature_subsets, generate_test_vectors, Item, Rule};
use crate::quality::{support, RuleCounts};
use crate::transact::TransactionTable;

/// Largest number of (antecedent, consequent) combinations the brute-force
/// oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("min_support must be in (0, 1], got {0}")]
    InvalidSupport(f64),
    #[error("min_confidence must be in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("max_antecedents must be at least 1")]
    InvalidAntecedents,
    #[error("brute force would enumerate up to {0} combinations (limit {BRUTE_FORCE_LIMIT})")]
    GuardExceeded(u128),
    #[error("cannot derive a support threshold from an empty rule set")]
    EmptyRules,
}

/// Items over distinct features, sorted by feature, with their row count.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequentItemset {
    pub items: Vec<Item>,
    pub count: usize,
    pub support: f64,
}

/// A mined rule with the exact row counts behind its measures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredRule {
    pub rule: Rule,
    pub counts: RuleCounts,
}

fn meets(count: usize, rows: usize, min_support: f64) -> bool {
    rows > 0 && count as f64 / rows as f64 >= min_support
}

fn check_support(min_support: f64) -> Result<(), BaselineError> {
    if min_support > 0.0 && min_support <= 1.0 {
        Ok(())
    } else {
        Err(BaselineError::InvalidSupport(min_support))
    }
}

fn check_confidence(min_confidence: f64) -> Result<(), BaselineError> {
    if (0.0..=1.0).contains(&min_confidence) {
        Ok(())
    } else {
        Err(BaselineError::InvalidConfidence(min_confidence))
    }
}

struct Bits(Vec<u64>);

impl Bits {
    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Every itemset with support at least `min_support`.
pub fn mine_frequent(
    table: &TransactionTable,
    min_support: f64,
) -> Result<Vec<FrequentItemset>, BaselineError> {
    mine_frequent_up_to(table, min_support, usize::MAX)
}

/// [`mine_frequent`] restricted to itemsets of at most `max_len` items.
/// Output is sorted by length, then by items.
pub fn mine_frequent_up_to(
    table: &TransactionTable,
    min_support: f64,
    max_len: usize,
) -> Result<Vec<FrequentItemset>, BaselineError> {
    check_support(min_support)?;
    let n = table.n_rows();
    let words = n.div_ceil(64);
    let mut singles: Vec<(Item, Bits)> = Vec::new();
    for (f, feature) in table.features().iter().enumerate() {
        for c in 0..feature.class_values.len() {
            let mut bits = vec![0u64; words];
            for (r, row) in table.rows().iter().enumerate() {
                if row[f] == c {
                    bits[r / 64] |= 1 << (r % 64);
                }
            }
            let bits = Bits(bits);
            if meets(bits.count(), n, min_support) {
                singles.push((Item::new(f, c), bits));
            }
        }
    }

    let mut out = Vec::new();
    let mut prefix = Vec::new();
    for (i, (item, bits)) in singles.iter().enumerate() {
        prefix.push(*item);
        grow(&singles, i, bits, &mut prefix, n, min_support, max_len, &mut out);
        prefix.pop();
    }
    out.sort_by(|a: &FrequentItemset, b| {
        (a.items.len(), &a.items).cmp(&(b.items.len(), &b.items))
    });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn grow(
    singles: &[(Item, Bits)],
    last: usize,
    bits: &Bits,
    prefix: &mut Vec<Item>,
    rows: usize,
    min_support: f64,
    max_len: usize,
    out: &mut Vec<FrequentItemset>,
) {
    let count = bits.count();
    out.push(FrequentItemset {
        items: prefix.clone(),
        count,
        support: count as f64 / rows as f64,
    });
    if prefix.len() >= max_len {
        return;
    }
    let last_feature = singles[last].0.feature;
    for (j, (item, other)) in singles.iter().enumerate().skip(last + 1) {
        if item.feature == last_feature {
            continue;
        }
        let joint = bits.and(other);
        if meets(joint.count(), rows, min_support) {
            prefix.push(*item);
            grow(singles, j, &joint, prefix, rows, min_support, max_len, out);
            prefix.pop();
        }
    }
}

/// Single-consequent rules from frequent itemsets, sorted by rule.
///
/// Antecedent counts come from the itemsets themselves (downward closure);
/// an antecedent missing from `itemsets` is counted on `table`.
pub fn rules_from_itemsets(
    itemsets: &[FrequentItemset],
    table: &TransactionTable,
    min_confidence: f64,
    max_antecedents: usize,
) -> Result<Vec<ScoredRule>, BaselineError> {
    check_confidence(min_confidence)?;
    if max_antecedents == 0 {
        return Err(BaselineError::InvalidAntecedents);
    }
    let counts: HashMap<&[Item], usize> = itemsets
        .iter()
        .map(|s| (s.items.as_slice(), s.count))
        .collect();
    let count_of = |items: &[Item]| -> usize {
        counts.get(items).copied().unwrap_or_else(|| {
            table
                .rows()
                .iter()
                .filter(|row| items.iter().all(|i| row[i.feature] == i.class))
                .count()
        })
    };
    let mut rules = Vec::new();
    for set in itemsets {
        if set.items.len() < 2 || set.items.len() - 1 > max_antecedents {
            continue;
        }
        for k in 0..set.items.len() {
            let consequent = set.items[k];
            let antecedent: Vec<Item> = set
                .items
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, &it)| it)
                .collect();
            let rule_counts = RuleCounts {
                rows: table.n_rows(),
                antecedent: count_of(&antecedent),
                consequent: count_of(&[consequent]),
                both: set.count,
            };
            if rule_counts.confidence() >= min_confidence {
                let rule = Rule::new(antecedent, consequent)
                    .expect("itemset items lie on distinct features");
                rules.push(ScoredRule {
                    rule,
                    counts: rule_counts,
                });
            }
        }
    }
    rules.sort_by(|a, b| a.rule.cmp(&b.rule));
    Ok(rules)
}

/// Frequent itemsets followed by rule generation, for the thresholds given.
pub fn mine_rules(
    table: &TransactionTable,
    min_support: f64,
    min_confidence: f64,
    max_antecedents: usize,
) -> Result<Vec<ScoredRule>, BaselineError> {
    if max_antecedents == 0 {
        return Err(BaselineError::InvalidAntecedents);
    }
    let itemsets = mine_frequent_up_to(table, min_support, max_antecedents + 1)?;
    rules_from_itemsets(&itemsets, table, min_confidence, max_antecedents)
}

/// Every observed rule with support at least `min_support` and confidence
/// at least `min_confidence`, by direct enumeration of all antecedents and
/// consequents. `min_support = 0` keeps every rule seen in at least one row.
pub fn brute_force_implications(
    table: &TransactionTable,
    min_support: f64,
    min_confidence: f64,
    max_antecedents: usize,
) -> Result<Vec<ScoredRule>, BaselineError> {
    if !(0.0..=1.0).contains(&min_support) {
        return Err(BaselineError::InvalidSupport(min_support));
    }
    check_confidence(min_confidence)?;
    if max_antecedents == 0 {
        return Err(BaselineError::InvalidAntecedents);
    }
    let layout = table.layout();
    let bound = count_test_vectors(&layout, max_antecedents) * layout.width() as u128;
    if bound > BRUTE_FORCE_LIMIT {
        return Err(BaselineError::GuardExceeded(bound));
    }
    let n = table.n_rows();
    let mut item_counts: Vec<Vec<usize>> = table
        .features()
        .iter()
        .map(|f| vec![0; f.class_values.len()])
        .collect();
    for row in table.rows() {
        for (f, &c) in row.iter().enumerate() {
            item_counts[f][c] += 1;
        }
    }
    let all: Vec<usize> = (0..table.n_features()).collect();
    let mut rules = Vec::new();
    for subset in feature_subsets(&all, max_antecedents) {
        for tv in generate_test_vectors(&layout, &subset) {
            let matching: Vec<&Vec<usize>> = table
                .rows()
                .iter()
                .filter(|row| tv.marked.iter().all(|i| row[i.feature] == i.class))
                .collect();
            for f in all.iter().copied().filter(|f| !subset.contains(f)) {
                let mut tally = vec![0usize; layout.class_count(f)];
                for row in &matching {
                    tally[row[f]] += 1;
                }
                for (c, &both) in tally.iter().enumerate() {
                    let counts = RuleCounts {
                        rows: n,
                        antecedent: matching.len(),
                        consequent: item_counts[f][c],
                        both,
                    };
                    if both > 0
                        && meets(both, n, min_support)
                        && counts.confidence() >= min_confidence
                    {
                        let rule = Rule::new(tv.marked.clone(), Item::new(f, c))
                            .expect("subset features are distinct from the consequent");
                        rules.push(ScoredRule { rule, counts });
                    }
                }
            }
        }
    }
    rules.sort_by(|a, b| a.rule.cmp(&b.rule));
    Ok(rules)
}

/// Half the mean support of `rules` on `table`.
pub fn coupled_support_threshold(
    rules: &[Rule],
    table: &TransactionTable,
) -> Result<f64, BaselineError> {
    if rules.is_empty() {
        return Err(BaselineError::EmptyRules);
    }
    let total: f64 = rules.iter().map(|r| support(r, table)).sum();
    Ok(total / rules.len() as f64 / 2.0)
}
