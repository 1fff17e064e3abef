//! Static property graph describing an IoT system, its ontology, and the
//! binding from sensor ids to graph nodes.
//!
//! The graph is read-only once loaded. Enrichment reads node labels and
//! properties around the node a sensor is bound to and turns them into
//! `(feature, value)` pairs that [`crate::transact`] appends to transactions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("graph integrity: {0}")]
    Integrity(String),
    #[error("sensor `{0}` is not bound to a graph node")]
    UnboundSensor(String),
}

/// A property value: graph documents allow numbers and strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for PropValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropValue::Number(x) => write!(f, "{x}"),
            PropValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for PropValue {
    fn from(x: f64) -> Self {
        PropValue::Number(x)
    }
}

impl From<&str> for PropValue {
    fn from(s: &str) -> Self {
        PropValue::Text(s.to_string())
    }
}

/// Schema of a property graph: classes, relations with their endpoint
/// classes, property names, and which properties each class or relation owns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ontology {
    classes: BTreeSet<String>,
    relations: BTreeSet<String>,
    properties: BTreeSet<String>,
    relation_signature: BTreeMap<String, (String, String)>,
    owned_properties: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn new(
        classes: BTreeSet<String>,
        relation_signature: BTreeMap<String, (String, String)>,
        properties: BTreeSet<String>,
        owned_properties: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, GraphError> {
        for (rel, (from, to)) in &relation_signature {
            for class in [from, to] {
                if !classes.contains(class) {
                    return Err(GraphError::Integrity(format!(
                        "relation `{rel}` references unknown class `{class}`"
                    )));
                }
            }
        }
        let relations: BTreeSet<String> = relation_signature.keys().cloned().collect();
        for (owner, props) in &owned_properties {
            if !classes.contains(owner) && !relations.contains(owner) {
                return Err(GraphError::Integrity(format!(
                    "property owner `{owner}` is neither a class nor a relation"
                )));
            }
            if let Some(p) = props.iter().find(|p| !properties.contains(*p)) {
                return Err(GraphError::Integrity(format!(
                    "`{owner}` owns undeclared property `{p}`"
                )));
            }
        }
        Ok(Self {
            classes,
            relations,
            properties,
            relation_signature,
            owned_properties,
        })
    }

    pub fn classes(&self) -> &BTreeSet<String> {
        &self.classes
    }

    pub fn relations(&self) -> &BTreeSet<String> {
        &self.relations
    }

    pub fn properties(&self) -> &BTreeSet<String> {
        &self.properties
    }

    pub fn relation_signature(&self) -> &BTreeMap<String, (String, String)> {
        &self.relation_signature
    }

    pub fn owned_properties(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.owned_properties
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Node {
    pub labels: BTreeSet<String>,
    pub props: BTreeMap<String, PropValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub labels: BTreeSet<String>,
    pub props: BTreeMap<String, PropValue>,
}

/// Labeled property graph. Node and edge ids share one namespace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PropertyGraph {
    nodes: BTreeMap<String, Node>,
    edges: BTreeMap<String, Edge>,
}

impl PropertyGraph {
    pub fn new(
        nodes: BTreeMap<String, Node>,
        edges: BTreeMap<String, Edge>,
    ) -> Result<Self, GraphError> {
        for (id, edge) in &edges {
            if nodes.contains_key(id) {
                return Err(GraphError::Integrity(format!(
                    "id `{id}` used for both a node and an edge"
                )));
            }
            for end in [&edge.from, &edge.to] {
                if !nodes.contains_key(end) {
                    return Err(GraphError::Integrity(format!(
                        "edge `{id}` references missing node `{end}`"
                    )));
                }
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &BTreeMap<String, Node> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<String, Edge> {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Undirected adjacency: node id -> [(edge id, neighbor id)].
    fn adjacency(&self) -> BTreeMap<&str, Vec<(&str, &str)>> {
        let mut adj: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (id, e) in &self.edges {
            adj.entry(e.from.as_str())
                .or_default()
                .push((id.as_str(), e.to.as_str()));
            adj.entry(e.to.as_str())
                .or_default()
                .push((id.as_str(), e.from.as_str()));
        }
        adj
    }

    /// Shortest hop distance from `start` to every node within `depth` hops,
    /// treating edges as undirected.
    pub fn hops_from(&self, start: &str, depth: usize) -> BTreeMap<String, usize> {
        let adj = self.adjacency();
        let mut dist = BTreeMap::new();
        if !self.nodes.contains_key(start) {
            return dist;
        }
        dist.insert(start.to_string(), 0);
        let mut queue = VecDeque::from([(start, 0usize)]);
        while let Some((node, d)) = queue.pop_front() {
            if d == depth {
                continue;
            }
            for &(_, next) in adj.get(node).map(Vec::as_slice).unwrap_or(&[]) {
                if !dist.contains_key(next) {
                    dist.insert(next.to_string(), d + 1);
                    queue.push_back((next, d + 1));
                }
            }
        }
        dist
    }
}

/// Total map from sensor ids to graph nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Binding {
    sensor_to_node: BTreeMap<String, String>,
}

impl Binding {
    pub fn new(
        sensor_to_node: BTreeMap<String, String>,
        graph: &PropertyGraph,
    ) -> Result<Self, GraphError> {
        if let Some((s, n)) = sensor_to_node
            .iter()
            .find(|(_, n)| graph.node(n).is_none())
        {
            return Err(GraphError::Integrity(format!(
                "sensor `{s}` is bound to missing node `{n}`"
            )));
        }
        Ok(Self { sensor_to_node })
    }

    pub fn node_for(&self, sensor: &str) -> Option<&str> {
        self.sensor_to_node.get(sensor).map(String::as_str)
    }

    pub fn sensors(&self) -> impl Iterator<Item = &str> {
        self.sensor_to_node.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sensor_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor_to_node.is_empty()
    }

    /// Fails with the first sensor that has no entry.
    pub fn check_total<'a>(
        &self,
        sensors: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), GraphError> {
        for s in sensors {
            if !self.sensor_to_node.contains_key(s) {
                return Err(GraphError::UnboundSensor(s.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Label,
    Property,
}

/// A label or property key that the ontology does not declare.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub owner: String,
    pub kind: ViolationKind,
    pub name: String,
}

/// Lists every label outside `classes ∪ relations` and every property key
/// outside `properties`. An empty result means the graph conforms.
pub fn validate_schema(graph: &PropertyGraph, ontology: &Ontology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |owner: &str,
                     labels: &BTreeSet<String>,
                     props: &BTreeMap<String, PropValue>| {
        for l in labels {
            if !ontology.classes.contains(l) && !ontology.relations.contains(l) {
                out.push(Violation {
                    owner: owner.to_string(),
                    kind: ViolationKind::Label,
                    name: l.clone(),
                });
            }
        }
        for p in props.keys() {
            if !ontology.properties.contains(p) {
                out.push(Violation {
                    owner: owner.to_string(),
                    kind: ViolationKind::Property,
                    name: p.clone(),
                });
            }
        }
    };
    for (id, n) in &graph.nodes {
        check(id, &n.labels, &n.props);
    }
    for (id, e) in &graph.edges {
        check(id, &e.labels, &e.props);
    }
    out
}

/// Graph, ontology and binding as loaded from one document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphBundle {
    pub graph: PropertyGraph,
    pub ontology: Ontology,
    pub binding: Binding,
}

#[derive(Serialize, Deserialize)]
struct RelationDoc {
    name: String,
    from: String,
    to: String,
}

#[derive(Serialize, Deserialize)]
struct OntologyDoc {
    #[serde(default)]
    classes: Vec<String>,
    #[serde(default)]
    relations: Vec<RelationDoc>,
    #[serde(default)]
    properties: Vec<String>,
    #[serde(default)]
    owned: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    props: BTreeMap<String, PropValue>,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    id: String,
    from: String,
    to: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    props: BTreeMap<String, PropValue>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    ontology: OntologyDoc,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    bindings: BTreeMap<String, String>,
}

fn unique_set(items: Vec<String>) -> BTreeSet<String> {
    items.into_iter().collect()
}

impl GraphBundle {
    fn from_doc(doc: GraphDoc) -> Result<Self, GraphError> {
        let mut signature = BTreeMap::new();
        for r in doc.ontology.relations {
            if signature.insert(r.name.clone(), (r.from, r.to)).is_some() {
                return Err(GraphError::Integrity(format!(
                    "relation `{}` declared twice",
                    r.name
                )));
            }
        }
        let ontology = Ontology::new(
            unique_set(doc.ontology.classes),
            signature,
            unique_set(doc.ontology.properties),
            doc.ontology
                .owned
                .into_iter()
                .map(|(k, v)| (k, unique_set(v)))
                .collect(),
        )?;

        let mut nodes = BTreeMap::new();
        for n in doc.nodes {
            let node = Node {
                labels: unique_set(n.labels),
                props: n.props,
            };
            if nodes.insert(n.id.clone(), node).is_some() {
                return Err(GraphError::Integrity(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut edges = BTreeMap::new();
        for e in doc.edges {
            let edge = Edge {
                from: e.from,
                to: e.to,
                labels: unique_set(e.labels),
                props: e.props,
            };
            if edges.insert(e.id.clone(), edge).is_some() {
                return Err(GraphError::Integrity(format!("duplicate edge id `{}`", e.id)));
            }
        }
        let graph = PropertyGraph::new(nodes, edges)?;
        let binding = Binding::new(doc.bindings, &graph)?;
        Ok(Self {
            graph,
            ontology,
            binding,
        })
    }

    fn to_doc(&self) -> GraphDoc {
        let o = &self.ontology;
        GraphDoc {
            ontology: OntologyDoc {
                classes: o.classes.iter().cloned().collect(),
                relations: o
                    .relation_signature
                    .iter()
                    .map(|(name, (from, to))| RelationDoc {
                        name: name.clone(),
                        from: from.clone(),
                        to: to.clone(),
                    })
                    .collect(),
                properties: o.properties.iter().cloned().collect(),
                owned: o
                    .owned_properties
                    .iter()
                    .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                    .collect(),
            },
            nodes: self
                .graph
                .nodes
                .iter()
                .map(|(id, n)| NodeDoc {
                    id: id.clone(),
                    labels: n.labels.iter().cloned().collect(),
                    props: n.props.clone(),
                })
                .collect(),
            edges: self
                .graph
                .edges
                .iter()
                .map(|(id, e)| EdgeDoc {
                    id: id.clone(),
                    from: e.from.clone(),
                    to: e.to.clone(),
                    labels: e.labels.iter().cloned().collect(),
                    props: e.props.clone(),
                })
                .collect(),
            bindings: self.binding.sensor_to_node.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("graph document serializes")
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), GraphError> {
        serde_json::to_writer_pretty(writer, &self.to_doc())?;
        Ok(())
    }
}

/// Parses a graph document and checks referential integrity.
pub fn load_graph<R: Read>(source: R) -> Result<GraphBundle, GraphError> {
    let doc: GraphDoc = serde_json::from_reader(source)?;
    GraphBundle::from_doc(doc)
}

pub fn load_graph_str(source: &str) -> Result<GraphBundle, GraphError> {
    load_graph(source.as_bytes())
}

/// One enrichment item: fully qualified feature name and its raw value.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticItem {
    pub feature: String,
    pub value: PropValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnrichOptions {
    /// Neighborhood radius in (undirected) hops.
    pub depth: usize,
    /// Also emit properties of edges traversed inside the neighborhood.
    pub edge_properties: bool,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        Self {
            depth: 1,
            edge_properties: false,
        }
    }
}

fn label_part(labels: &BTreeSet<String>) -> String {
    if labels.is_empty() {
        "_".to_string()
    } else {
        labels.iter().cloned().collect::<Vec<_>>().join(":")
    }
}

/// Semantic items for the node bound to `sensor`, using node properties only.
pub fn semantic_items_for_sensor(
    graph: &PropertyGraph,
    binding: &Binding,
    sensor: &str,
    depth: usize,
) -> Result<Vec<SemanticItem>, GraphError> {
    semantic_items_with(
        graph,
        binding,
        sensor,
        EnrichOptions {
            depth,
            edge_properties: false,
        },
    )
}

/// Feature names:
/// - `self.type` holds the bound node's label (`self.type.<label>` per label
///   when the node has several),
/// - `self.<labels>.<prop>` for the bound node's properties,
/// - `n<hop>:<node>.<labels>.<prop>` for a neighbor at shortest distance `hop`,
/// - `e<hop>:<edge>.<labels>.<prop>` for edge properties when enabled.
///
/// The result is sorted by feature name.
pub fn semantic_items_with(
    graph: &PropertyGraph,
    binding: &Binding,
    sensor: &str,
    opts: EnrichOptions,
) -> Result<Vec<SemanticItem>, GraphError> {
    let root = binding
        .node_for(sensor)
        .ok_or_else(|| GraphError::UnboundSensor(sensor.to_string()))?;
    let node = graph
        .node(root)
        .ok_or_else(|| GraphError::Integrity(format!("bound node `{root}` missing")))?;

    let mut items = Vec::new();
    match node.labels.len() {
        0 => {}
        1 => items.push(SemanticItem {
            feature: "self.type".to_string(),
            value: PropValue::Text(node.labels.iter().next().unwrap().clone()),
        }),
        _ => items.extend(node.labels.iter().map(|l| SemanticItem {
            feature: format!("self.type.{l}"),
            value: PropValue::Text(l.clone()),
        })),
    }
    let own = label_part(&node.labels);
    for (p, v) in &node.props {
        items.push(SemanticItem {
            feature: format!("self.{own}.{p}"),
            value: v.clone(),
        });
    }

    if opts.depth > 0 {
        let hops = graph.hops_from(root, opts.depth);
        for (id, &hop) in &hops {
            if hop == 0 {
                continue;
            }
            let n = &graph.nodes[id];
            let lp = label_part(&n.labels);
            for (p, v) in &n.props {
                items.push(SemanticItem {
                    feature: format!("n{hop}:{id}.{lp}.{p}"),
                    value: v.clone(),
                });
            }
        }
        if opts.edge_properties {
            for (id, e) in &graph.edges {
                // traversed: both ends in range, nearer end strictly inside
                let (Some(&a), Some(&b)) = (hops.get(&e.from), hops.get(&e.to)) else {
                    continue;
                };
                let hop = a.min(b) + 1;
                if hop > opts.depth {
                    continue;
                }
                let lp = label_part(&e.labels);
                for (p, v) in &e.props {
                    items.push(SemanticItem {
                        feature: format!("e{hop}:{id}.{lp}.{p}"),
                        value: v.clone(),
                    });
                }
            }
        }
    }

    items.sort_by(|a, b| a.feature.cmp(&b.feature));
    Ok(items)
}

/// Picks a random bound node and walks outward through its first, second, ...
/// neighbors, collecting sensors bound to the visited nodes until `count`
/// sensors are gathered or the component is exhausted. Returned sorted.
pub fn sample_sensors(
    graph: &PropertyGraph,
    binding: &Binding,
    count: usize,
    seed: u64,
) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors: Vec<&str> = binding.sensors().collect();
    let Some(&start_sensor) = sensors.choose(&mut rng) else {
        return Vec::new();
    };
    let start = binding.node_for(start_sensor).unwrap();

    let mut by_node: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in &sensors {
        by_node.entry(binding.node_for(s).unwrap()).or_default().push(s);
    }

    let hops = graph.hops_from(start, usize::MAX);
    let mut order: Vec<(usize, &str)> = hops.iter().map(|(n, &h)| (h, n.as_str())).collect();
    order.sort();

    let mut picked = Vec::new();
    'outer: for (_, node) in order {
        for s in by_node.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            if picked.len() == count {
                break 'outer;
            }
            picked.push(s.to_string());
        }
    }
    picked.sort();
    picked
}
