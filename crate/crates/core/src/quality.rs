//! Rule-quality measures over a transaction table.
//!
//! Every measure is computed from exact row counts and divided once at the
//! end. Zero denominators yield 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::extract::{Item, ItemRecord, Rule, RuleRecord};
use crate::transact::TransactionTable;

fn matches(row: &[usize], items: &[Item]) -> bool {
    items.iter().all(|i| row[i.feature] == i.class)
}

/// Row counts behind every per-rule measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleCounts {
    pub rows: usize,
    /// Rows containing the antecedent.
    pub antecedent: usize,
    /// Rows containing the consequent.
    pub consequent: usize,
    /// Rows containing both.
    pub both: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl RuleCounts {
    pub fn of(rule: &Rule, table: &TransactionTable) -> Self {
        let c = rule.consequent();
        let mut counts = Self {
            rows: table.n_rows(),
            ..Self::default()
        };
        for row in table.rows() {
            let x = matches(row, rule.antecedent());
            let y = row[c.feature] == c.class;
            counts.antecedent += x as usize;
            counts.consequent += y as usize;
            counts.both += (x && y) as usize;
        }
        counts
    }

    pub fn support(&self) -> f64 {
        ratio(self.both, self.rows)
    }

    pub fn confidence(&self) -> f64 {
        ratio(self.both, self.antecedent)
    }

    pub fn coverage(&self) -> f64 {
        ratio(self.antecedent, self.rows)
    }

    /// `(conf(X->Y) - conf(!X->Y)) / max(conf(X->Y), conf(!X->Y))`.
    pub fn zhang(&self) -> f64 {
        let without_x = self.rows - self.antecedent;
        if without_x == 0 {
            return 0.0;
        }
        let with = self.confidence();
        let without = ratio(self.consequent - self.both, without_x);
        let max = with.max(without);
        if max == 0.0 {
            0.0
        } else {
            (with - without) / max
        }
    }
}

pub fn support(rule: &Rule, table: &TransactionTable) -> f64 {
    RuleCounts::of(rule, table).support()
}

pub fn confidence(rule: &Rule, table: &TransactionTable) -> f64 {
    RuleCounts::of(rule, table).confidence()
}

pub fn rule_coverage(rule: &Rule, table: &TransactionTable) -> f64 {
    RuleCounts::of(rule, table).coverage()
}

pub fn zhang(rule: &Rule, table: &TransactionTable) -> f64 {
    RuleCounts::of(rule, table).zhang()
}

/// Fraction of rows matched by at least one rule's antecedent.
pub fn data_coverage(rules: &[Rule], table: &TransactionTable) -> f64 {
    let hit = table
        .rows()
        .iter()
        .filter(|row| rules.iter().any(|r| matches(row, r.antecedent())))
        .count();
    ratio(hit, table.n_rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleQuality {
    pub antecedent: Vec<ItemRecord>,
    pub consequent: ItemRecord,
    pub support: f64,
    pub confidence: f64,
    pub rule_coverage: f64,
    pub zhang: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateQuality {
    pub rule_count: usize,
    pub mean_support: f64,
    pub mean_confidence: f64,
    pub mean_coverage: f64,
    pub mean_zhang: f64,
    pub data_coverage: f64,
}

impl AggregateQuality {
    /// Unweighted mean of several aggregates (one per repeated run).
    pub fn macro_mean(runs: &[AggregateQuality]) -> AggregateQuality {
        if runs.is_empty() {
            return AggregateQuality::default();
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&AggregateQuality) -> f64| runs.iter().map(f).sum::<f64>() / n;
        AggregateQuality {
            rule_count: (runs.iter().map(|r| r.rule_count).sum::<usize>() as f64 / n).round()
                as usize,
            mean_support: mean(|r| r.mean_support),
            mean_confidence: mean(|r| r.mean_confidence),
            mean_coverage: mean(|r| r.mean_coverage),
            mean_zhang: mean(|r| r.mean_zhang),
            data_coverage: mean(|r| r.data_coverage),
        }
    }
}

/// Per-rule and aggregate quality of a rule set, plus optional stage timings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleQualityReport {
    pub per_rule: Vec<RuleQuality>,
    pub aggregate: AggregateQuality,
    /// Wall-clock seconds per pipeline stage.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

pub fn evaluate(rules: &[Rule], table: &TransactionTable) -> RuleQualityReport {
    let features = table.features();
    let per_rule: Vec<RuleQuality> = rules
        .iter()
        .map(|r| {
            let c = RuleCounts::of(r, table);
            let rec = RuleRecord::from_rule(r, features);
            RuleQuality {
                antecedent: rec.antecedent,
                consequent: rec.consequent,
                support: c.support(),
                confidence: c.confidence(),
                rule_coverage: c.coverage(),
                zhang: c.zhang(),
            }
        })
        .collect();
    let n = per_rule.len();
    let mean = |f: fn(&RuleQuality) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_rule.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let aggregate = AggregateQuality {
        rule_count: n,
        mean_support: mean(|q| q.support),
        mean_confidence: mean(|q| q.confidence),
        mean_coverage: mean(|q| q.rule_coverage),
        mean_zhang: mean(|q| q.zhang),
        data_coverage: data_coverage(rules, table),
    };
    RuleQualityReport {
        per_rule,
        aggregate,
        timings: BTreeMap::new(),
    }
}

impl RuleQualityReport {
    /// Rules with their measured support, confidence and Zhang's metric.
    pub fn records(&self) -> Vec<RuleRecord> {
        self.per_rule
            .iter()
            .map(|q| RuleRecord {
                antecedent: q.antecedent.clone(),
                consequent: q.consequent.clone(),
                support: Some(q.support),
                confidence: Some(q.confidence),
                zhang: Some(q.zhang),
            })
            .collect()
    }

    /// Aligned text summary followed by one line per rule.
    pub fn render_table(&self) -> String {
        let a = &self.aggregate;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>9} {:>11} {:>9} {:>10} {:>9}",
            "# Rules", "Support", "Confidence", "Coverage", "Data Cov.", "Zhang"
        );
        let _ = writeln!(
            out,
            "{:>8} {:>9.4} {:>11.4} {:>9.4} {:>10.4} {:>9.4}",
            a.rule_count, a.mean_support, a.mean_confidence, a.mean_coverage, a.data_coverage,
            a.mean_zhang
        );
        if !self.per_rule.is_empty() {
            out.push('\n');
            let _ = writeln!(
                out,
                "{:>9} {:>11} {:>9} {:>9}  rule",
                "support", "confidence", "coverage", "zhang"
            );
            for q in &self.per_rule {
                let lhs: Vec<String> = q
                    .antecedent
                    .iter()
                    .map(|i| format!("{}={}", i.feature, i.class))
                    .collect();
                let _ = writeln!(
                    out,
                    "{:>9.4} {:>11.4} {:>9.4} {:>9.4}  {} -> {}={}",
                    q.support,
                    q.confidence,
                    q.rule_coverage,
                    q.zhang,
                    lhs.join(", "),
                    q.consequent.feature,
                    q.consequent.class
                );
            }
        }
        out
    }
}
