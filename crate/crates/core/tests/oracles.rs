//! Cross-module checks against independently coded oracles.

use std::collections::BTreeMap;

use kgarm_core::autonet::{
    bce_loss, train, NetworkShape, TrainedAutoencoder, TrainingConfig,
};
use kgarm_core::baseline::brute_force_implications;
use kgarm_core::extract::{extract_rules, ExtractionConfig, Item, Rule};
use kgarm_core::graph::{load_graph_str, EnrichOptions};
use kgarm_core::quality;
use kgarm_core::synth::{generate, PlantedRule, SyntheticSpec};
use kgarm_core::transact::{
    build_transactions, discretize_equal_frequency, one_hot_encode, Enrichment, Layout, Reading,
    SensorSeries,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const WATER_NET: &str = r#"{
  "ontology": {
    "classes": ["Pipe", "Junction", "Tank"],
    "relations": [{"name": "connected_to", "from": "Pipe", "to": "Junction"}],
    "properties": ["length", "diameter", "elevation", "material"],
    "owned": {"Pipe": ["length", "diameter"], "Junction": ["elevation"]}
  },
  "nodes": [
    {"id": "P1", "labels": ["Pipe"], "props": {"length": 850, "diameter": 0.3}},
    {"id": "J2", "labels": ["Junction"], "props": {"elevation": 12.5}},
    {"id": "T3", "labels": ["Tank"], "props": {"material": "steel"}}
  ],
  "edges": [
    {"id": "e1", "from": "P1", "to": "J2", "labels": ["connected_to"], "props": {}},
    {"id": "e2", "from": "J2", "to": "T3", "labels": ["connected_to"], "props": {}}
  ],
  "bindings": {"s_pressure": "P1", "s_flow": "J2", "s_level": "T3"}
}"#;

#[test]
fn depth_one_features_match_hand_enumeration() {
    let bundle = load_graph_str(WATER_NET).unwrap();
    let mut readings = Vec::new();
    for t in 0..6i64 {
        readings.push(("s_pressure", t * 60, Reading::Num(t as f64)));
        readings.push(("s_flow", t * 60, Reading::Num(10.0 - t as f64)));
        readings.push(("s_level", t * 60, Reading::Cat(if t % 2 == 0 { "hi" } else { "lo" }.into())));
    }
    let series = SensorSeries::from_readings(readings).unwrap();
    let table = build_transactions(
        &series,
        Some(Enrichment {
            graph: &bundle.graph,
            binding: &bundle.binding,
            options: EnrichOptions {
                depth: 1,
                edge_properties: false,
            },
        }),
        3,
    )
    .unwrap();
    let names: Vec<&str> = table.features().iter().map(|f| f.name.as_str()).collect();
    let expected = [
        "s_flow",
        "s_level",
        "s_pressure",
        // J2: neighbors P1 and T3
        "s_flow.n1:P1.Pipe.diameter",
        "s_flow.n1:P1.Pipe.length",
        "s_flow.n1:T3.Tank.material",
        "s_flow.self.Junction.elevation",
        "s_flow.self.type",
        // T3: neighbor J2
        "s_level.n1:J2.Junction.elevation",
        "s_level.self.Tank.material",
        "s_level.self.type",
        // P1: neighbor J2
        "s_pressure.n1:J2.Junction.elevation",
        "s_pressure.self.Pipe.diameter",
        "s_pressure.self.Pipe.length",
        "s_pressure.self.type",
    ];
    assert_eq!(names, expected);
    let elevation = table.feature_index("s_flow.self.Junction.elevation").unwrap();
    assert_eq!(table.features()[elevation].class_values, vec!["12.5-12.5"]);
    let kind = table.feature_index("s_level.self.type").unwrap();
    assert_eq!(table.features()[kind].class_values, vec!["Tank"]);
}

#[test]
fn standard_normal_bins_are_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
    let d = discretize_equal_frequency(&values, 10).unwrap();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let mut per_bin = vec![0usize; d.labels.len()];
    for &c in &d.assignment {
        per_bin[c] += 1;
    }
    // continuous samples have no duplicates, so every bin is exact
    assert_eq!(per_bin, vec![100; 10]);
    for (k, edge) in d.edges.iter().enumerate() {
        assert_eq!(*edge, sorted[(k + 1) * 100 - 1]);
    }
}

/// Straight-line forward pass over the public layer parameters.
#[allow(clippy::needless_range_loop)]
fn forward_oracle(net: &TrainedAutoencoder, input: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut a = input.to_vec();
    for (li, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let mut s = layer.bias[o];
            for i in 0..layer.in_dim {
                s += layer.weights[o * layer.in_dim + i] * a[i];
            }
            z[o] = s;
        }
        if li + 1 < layers.len() {
            for v in &mut z {
                *v = v.tanh();
            }
        } else {
            let layout = net.layout();
            for f in 0..layout.n_features() {
                let r = layout.range(f);
                let m = z[r.clone()].iter().cloned().fold(f64::MIN, f64::max);
                let total: f64 = z[r.clone()].iter().map(|v| (v - m).exp()).sum();
                for i in r {
                    z[i] = (z[i] - m).exp() / total;
                }
            }
        }
        a = z;
    }
    a
}

fn random_net(rng: &mut ChaCha8Rng, counts: Vec<usize>) -> TrainedAutoencoder {
    let layout = Layout::new(counts).unwrap();
    let shape = NetworkShape::default_for(layout).unwrap();
    TrainedAutoencoder::initialize(
        shape,
        TrainingConfig {
            seed: rng.random(),
            ..TrainingConfig::default()
        },
    )
}

#[test]
fn forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let nf = rng.random_range(2..6);
        let counts = (0..nf).map(|_| rng.random_range(2..5)).collect();
        let net = random_net(&mut rng, counts);
        let input: Vec<f64> = (0..net.shape().input_dim)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let got = net.forward(&input).unwrap();
        let want = forward_oracle(&net, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn bce_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(1..20);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let mut total = 0.0;
        for i in 0..n {
            total += if y[i] == 1.0 { -p[i].ln() } else { -(1.0 - p[i]).ln() };
        }
        let oracle = total / n as f64;
        assert!((bce_loss(&p, &y).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn six_column_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = random_net(&mut rng, vec![2, 2, 2]);
    assert_eq!(net.shape().input_dim, 6);
    let inputs: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
    let targets = vec![1., 0., 0., 1., 1., 0., 0., 1., 0., 1., 1., 0.];
    let (_, grad) = net.loss_and_gradient(&inputs, &targets).unwrap();
    let base = net.flat_params();
    let loss = |net: &TrainedAutoencoder| {
        let a = bce_loss(&net.forward(&inputs[..6]).unwrap(), &targets[..6]).unwrap();
        let b = bce_loss(&net.forward(&inputs[6..]).unwrap(), &targets[6..]).unwrap();
        (a + b) / 2.0
    };
    let h = 1e-5;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        net.set_flat_params(&p).unwrap();
        let up = loss(&net);
        p[i] -= 2.0 * h;
        net.set_flat_params(&p).unwrap();
        let down = loss(&net);
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4, "parameter {i}: {} vs {numeric}", grad[i]);
    }
}

#[test]
fn converged_net_recovers_exact_implication() {
    let spec = SyntheticSpec {
        features: 3,
        classes: 2,
        rows: 2000,
        planted: vec![PlantedRule {
            antecedent: vec![Item::new(0, 0)],
            consequent: Item::new(1, 0),
            confidence: 1.0,
        }],
        seed: 5,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let table = build_transactions(&data.series, None, 2).unwrap();
    let matrix = one_hot_encode(&table).unwrap();
    let config = TrainingConfig {
        epochs: 20,
        seed: 5,
        ..TrainingConfig::default()
    };
    let net = train(&matrix, NetworkShape::default_for(table.layout()).unwrap(), config).unwrap();
    let rules = extract_rules(
        &net,
        &ExtractionConfig {
            similarity_threshold: 0.8,
            max_antecedents: 1,
            markable_features: None,
        },
    )
    .unwrap();
    let planted = data.planted_records(&spec)[0].to_rule(&table).unwrap();
    assert!(rules.contains(&planted), "rules: {rules:?}");
    let exact: Vec<Rule> = brute_force_implications(&table, 0.0, 1.0, 1)
        .unwrap()
        .into_iter()
        .map(|r| r.rule)
        .collect();
    assert!(exact.contains(&planted));
    assert_eq!(quality::confidence(&planted, &table), 1.0);
}

#[test]
fn quality_report_counts_match_row_scan() {
    let spec = SyntheticSpec {
        features: 4,
        classes: 3,
        rows: 300,
        planted: vec![],
        seed: 6,
        ..SyntheticSpec::default()
    };
    let table = generate(&spec).unwrap().table;
    let rules = vec![
        Rule::new(vec![Item::new(0, 1)], Item::new(2, 2)).unwrap(),
        Rule::new(vec![Item::new(1, 0), Item::new(3, 1)], Item::new(0, 0)).unwrap(),
    ];
    let report = quality::evaluate(&rules, &table);
    for (rule, q) in rules.iter().zip(&report.per_rule) {
        let mut counts = BTreeMap::from([("x", 0usize), ("xy", 0)]);
        for row in table.rows() {
            let x = rule.antecedent().iter().all(|i| row[i.feature] == i.class);
            let y = row[rule.consequent().feature] == rule.consequent().class;
            *counts.get_mut("x").unwrap() += x as usize;
            *counts.get_mut("xy").unwrap() += (x && y) as usize;
        }
        assert_eq!(q.support, counts["xy"] as f64 / 300.0);
        assert_eq!(q.rule_coverage, counts["x"] as f64 / 300.0);
        assert_eq!(q.confidence, counts["xy"] as f64 / counts["x"] as f64);
    }
}
