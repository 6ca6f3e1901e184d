//! The data-analysis DAG: the provenance record of an interactive session.
//!
//! Nodes are data (observed or not) and queries (with their observed
//! outcomes and the seed that drew their randomization). Node ids are dense
//! and in insertion order, so the prefix of the node list up to stage `i` is
//! the information available at that stage.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetRecord;
use crate::error::{Error, Result};
use crate::pivots::InferenceRecord;
use crate::queries::{
    build_design, main_effects, Feature, QueryOutcome, QuerySpec, ThresholdQuery,
};

pub const SESSION_VERSION: u32 = 1;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Scalar,
    Vector { len: usize },
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector { len } => len,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataNode {
    pub id: NodeId,
    pub stage: u32,
    pub shape: Shape,
    pub name: Option<String>,
    /// Row-major for matrices. Present iff the node is observed.
    pub values: Option<Vec<f64>>,
}

impl DataNode {
    pub fn observed(&self) -> bool {
        self.values.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryNode {
    pub id: NodeId,
    pub stage: u32,
    pub spec: QuerySpec,
    pub outcome: QueryOutcome,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Data(DataNode),
    Query(QueryNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Data(d) => d.id,
            Node::Query(q) => q.id,
        }
    }

    pub fn stage(&self) -> u32 {
        match self {
            Node::Data(d) => d.stage,
            Node::Query(q) => q.stage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    GaussianMean,
    GaussianRegression,
    EmpiricalBootstrap,
}

/// The functional of the data-generating law that inference is about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    /// The mean of the response (in units of √n·μ for pivots).
    Mean,
    /// Coefficients of the response on the listed design columns.
    Coefficients { features: Vec<Feature> },
}

impl Target {
    pub fn dimension(&self) -> usize {
        match self {
            Target::Mean => 1,
            Target::Coefficients { features } => features.len(),
        }
    }
}

/// The statistical model attached to a session. It may change between
/// stages as the analyst revises it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// σ, treated as known (or plugged in) by the Gaussian families.
    pub noise_scale: f64,
    /// Hypothesized mean μ for `gaussian-mean`.
    #[serde(default)]
    pub mean: f64,
    /// Hypothesized coefficients for `gaussian-regression`; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    pub target: Target,
}

impl ModelSpec {
    pub fn gaussian_mean(mean: f64, noise_scale: f64) -> Result<Self> {
        let m = Self {
            family: ModelFamily::GaussianMean,
            noise_scale,
            mean,
            coefficients: None,
            target: Target::Mean,
        };
        m.validate(usize::MAX)?;
        Ok(m)
    }

    pub fn gaussian_regression(features: Vec<Feature>, noise_scale: f64) -> Result<Self> {
        let m = Self {
            family: ModelFamily::GaussianRegression,
            noise_scale,
            mean: 0.0,
            coefficients: None,
            target: Target::Coefficients { features },
        };
        m.validate(usize::MAX)?;
        Ok(m)
    }

    pub fn validate(&self, data_dimension: usize) -> Result<()> {
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("model noise scale must be positive"));
        }
        if self.target.dimension() > data_dimension {
            return Err(Error::invalid("target dimension exceeds data dimension"));
        }
        if let Some(c) = &self.coefficients {
            if c.len() != self.target.dimension() {
                return Err(Error::invalid(
                    "one hypothesized coefficient per target feature required",
                ));
            }
        }
        Ok(())
    }

    pub fn null_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .clone()
            .unwrap_or_else(|| vec![0.0; self.target.dimension()])
    }
}

/// Values for data nodes, keyed by node id.
pub type Assignment = BTreeMap<NodeId, Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dag {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    stage_counter: u32,
    pub model: Option<ModelSpec>,
    pub dataset: Option<DatasetRecord>,
    pub inference: Vec<InferenceRecord>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn stage(&self) -> u32 {
        self.stage_counter
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn data_node(&self, id: NodeId) -> Result<&DataNode> {
        match self.node(id)? {
            Node::Data(d) => Ok(d),
            Node::Query(_) => Err(Error::InvalidDag(format!("node {id} is a query, not data"))),
        }
    }

    pub fn query_node(&self, id: NodeId) -> Result<&QueryNode> {
        match self.node(id)? {
            Node::Query(q) => Ok(q),
            Node::Data(_) => Err(Error::InvalidDag(format!("node {id} is data, not a query"))),
        }
    }

    pub fn query_nodes(&self) -> impl Iterator<Item = &QueryNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Query(q) => Some(q),
            Node::Data(_) => None,
        })
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter(|(_, c)| *c == id)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn add_data_node(
        &mut self,
        shape: Shape,
        values: Option<Vec<f64>>,
        name: Option<String>,
    ) -> Result<NodeId> {
        if let Some(v) = &values {
            if v.len() != shape.len() {
                return Err(Error::DimensionMismatch {
                    expected: shape.len(),
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("data node values".into()));
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Data(DataNode {
            id,
            stage: self.stage_counter,
            shape,
            name,
            values,
        }));
        Ok(id)
    }

    pub fn add_matrix(&mut self, x: &DMatrix<f64>, name: Option<String>) -> Result<NodeId> {
        let values: Vec<f64> = x.transpose().iter().copied().collect();
        self.add_data_node(
            Shape::Matrix {
                rows: x.nrows(),
                cols: x.ncols(),
            },
            Some(values),
            name,
        )
    }

    pub fn add_vector(&mut self, y: &[f64], name: Option<String>) -> Result<NodeId> {
        self.add_data_node(Shape::Vector { len: y.len() }, Some(y.to_vec()), name)
    }

    /// Records an already computed query outcome.
    pub fn record_query(
        &mut self,
        parents: &[NodeId],
        spec: QuerySpec,
        outcome: QueryOutcome,
        seed: u64,
    ) -> Result<NodeId> {
        if parents.is_empty() {
            return Err(Error::InvalidDag(
                "a query needs at least one parent".into(),
            ));
        }
        for &p in parents {
            self.node(p)?;
        }
        let mut sorted = parents.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        spec.check_outcome(&outcome)?;
        let id = self.nodes.len();
        self.stage_counter += 1;
        self.nodes.push(Node::Query(QueryNode {
            id,
            stage: self.stage_counter,
            spec,
            outcome,
            seed,
        }));
        self.edges.extend(sorted.into_iter().map(|p| (p, id)));
        if let Err(e) = self.resolve_inputs(id) {
            self.nodes.pop();
            self.edges.retain(|(_, c)| *c != id);
            self.stage_counter -= 1;
            return Err(e);
        }
        Ok(id)
    }

    /// Solves a query on the observed parent data with randomization drawn
    /// from `seed`, then records it.
    pub fn run_query(&mut self, parents: &[NodeId], spec: QuerySpec, seed: u64) -> Result<NodeId> {
        let inputs = self.inputs_from(parents)?;
        let outcome = execute(&spec, &inputs, seed)?;
        self.record_query(parents, spec, outcome, seed)
    }

    /// Re-runs a recorded query from its stored data and seed.
    pub fn replay_query(&self, id: NodeId) -> Result<QueryOutcome> {
        let q = self.query_node(id)?;
        let inputs = self.resolve_inputs(id)?;
        execute(&q.spec, &inputs, q.seed)
    }

    /// The response vector and (optional) design matrix feeding a query.
    pub fn resolve_inputs(&self, id: NodeId) -> Result<QueryInputs> {
        self.inputs_from(&self.parents(id))
    }

    fn inputs_from(&self, parents: &[NodeId]) -> Result<QueryInputs> {
        let mut response = None;
        let mut design = None;
        for &p in parents {
            if let Node::Data(d) = self.node(p)? {
                match d.shape {
                    Shape::Vector { .. } if response.is_none() => response = Some(p),
                    Shape::Matrix { .. } if design.is_none() => design = Some(p),
                    _ => {}
                }
            }
        }
        let response = response
            .ok_or_else(|| Error::InvalidDag("query has no response-vector parent".into()))?;
        Ok(QueryInputs {
            y: self.vector(response)?,
            x: design.map(|d| self.matrix(d)).transpose()?,
            response,
            design,
        })
    }

    pub fn vector(&self, id: NodeId) -> Result<DVector<f64>> {
        let d = self.data_node(id)?;
        let v = d
            .values
            .as_ref()
            .ok_or_else(|| Error::InvalidDag(format!("data node {id} is not observed")))?;
        Ok(DVector::from_column_slice(v))
    }

    pub fn matrix(&self, id: NodeId) -> Result<DMatrix<f64>> {
        let d = self.data_node(id)?;
        let Shape::Matrix { rows, cols } = d.shape else {
            return Err(Error::InvalidDag(format!("data node {id} is not a matrix")));
        };
        let v = d
            .values
            .as_ref()
            .ok_or_else(|| Error::InvalidDag(format!("data node {id} is not observed")))?;
        Ok(DMatrix::from_row_slice(rows, cols, v))
    }

    /// Σ over queries of log K(q_j; t): the log probability, over the
    /// randomization, of reproducing each recorded outcome at the assigned
    /// data. Deterministic queries contribute 0 or −∞.
    pub fn selective_log_weight(&self, assignment: &Assignment) -> Result<f64> {
        let mut total = 0.0;
        for q in self.query_nodes() {
            let inputs = self.assigned_inputs(q.id, assignment)?;
            total += query_log_weight(&q.spec, &q.outcome, &inputs)?;
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        Ok(total)
    }

    fn assigned_inputs(&self, id: NodeId, assignment: &Assignment) -> Result<QueryInputs> {
        let mut inputs = self.resolve_inputs_shape(id)?;
        let values = |node: NodeId| {
            assignment
                .get(&node)
                .ok_or_else(|| Error::invalid(format!("assignment missing data node {node}")))
        };
        let v = values(inputs.response)?;
        if v.len() != inputs.y.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.y.len(),
                found: v.len(),
            });
        }
        inputs.y = DVector::from_column_slice(v);
        if let (Some(d), Some(x)) = (inputs.design, inputs.x.as_mut()) {
            let v = values(d)?;
            if v.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    found: v.len(),
                });
            }
            *x = DMatrix::from_row_slice(x.nrows(), x.ncols(), v);
        }
        Ok(inputs)
    }

    /// Like `resolve_inputs` but tolerates unobserved nodes (zeros).
    fn resolve_inputs_shape(&self, id: NodeId) -> Result<QueryInputs> {
        let mut response = None;
        let mut design = None;
        for p in self.parents(id) {
            if let Node::Data(d) = self.node(p)? {
                match d.shape {
                    Shape::Vector { len } if response.is_none() => response = Some((p, len)),
                    Shape::Matrix { rows, cols } if design.is_none() => {
                        design = Some((p, rows, cols))
                    }
                    _ => {}
                }
            }
        }
        let (response, len) = response
            .ok_or_else(|| Error::InvalidDag("query has no response-vector parent".into()))?;
        Ok(QueryInputs {
            y: DVector::zeros(len),
            x: design.map(|(_, r, c)| DMatrix::zeros(r, c)),
            response,
            design: design.map(|d| d.0),
        })
    }

    /// Acyclicity, referential integrity, unique dense ids and stage
    /// monotonicity, checked by a topological sort.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id() != i {
                return Err(Error::InvalidDag(format!(
                    "node at position {i} has id {}",
                    n.id()
                )));
            }
        }
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(p, c) in &self.edges {
            if p >= n || c >= n {
                return Err(Error::InvalidDag(format!(
                    "edge ({p}, {c}) references a missing node"
                )));
            }
            if let Node::Query(q) = &self.nodes[c] {
                if q.stage <= self.nodes[p].stage() {
                    return Err(Error::InvalidDag(format!(
                        "query {c} is not at a later stage than parent {p}"
                    )));
                }
            }
            indegree[c] += 1;
        }
        let mut stack: Vec<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(v) = stack.pop() {
            visited += 1;
            for &(p, c) in &self.edges {
                if p == v {
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        stack.push(c);
                    }
                }
            }
        }
        if visited != n {
            return Err(Error::InvalidDag("graph has a cycle".into()));
        }
        for node in &self.nodes {
            match node {
                Node::Query(q) => {
                    if self.parents(q.id).is_empty() {
                        return Err(Error::InvalidDag(format!("query {} has no parents", q.id)));
                    }
                    q.spec.check_outcome(&q.outcome)?;
                }
                Node::Data(d) => {
                    if let Some(v) = &d.values {
                        if v.len() != d.shape.len() || v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::InvalidDag(format!(
                                "data node {} values invalid",
                                d.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SessionFile::from(self);
        serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SessionFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Dag::try_from(file)
    }

    /// Text rendering: one line per node, queries indented under their stage.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            match node {
                Node::Data(d) => {
                    let shape = match d.shape {
                        Shape::Scalar => "scalar".to_string(),
                        Shape::Vector { len } => format!("vector[{len}]"),
                        Shape::Matrix { rows, cols } => format!("matrix[{rows}x{cols}]"),
                    };
                    out.push_str(&format!(
                        "[{}] data {} {} (stage {}{})\n",
                        d.id,
                        d.name.as_deref().unwrap_or("-"),
                        shape,
                        d.stage,
                        if d.observed() { ", observed" } else { "" }
                    ));
                }
                Node::Query(q) => {
                    let parents: Vec<String> =
                        self.parents(q.id).iter().map(|p| p.to_string()).collect();
                    out.push_str(&format!(
                        "{}[{}] stage {} {} <- [{}] seed {}\n",
                        "  ".repeat(q.stage as usize),
                        q.id,
                        q.stage,
                        q.spec.name(),
                        parents.join(", "),
                        q.seed
                    ));
                    let sel: Vec<String> = q
                        .outcome
                        .selected
                        .iter()
                        .zip(&q.outcome.signs)
                        .map(|(j, s)| format!("{j}{}", if *s > 0 { "+" } else { "-" }))
                        .collect();
                    out.push_str(&format!(
                        "{}selected: {{{}}}\n",
                        "  ".repeat(q.stage as usize + 1),
                        sel.join(", ")
                    ));
                }
            }
        }
        out
    }
}

/// Observed inputs of a query.
#[derive(Debug, Clone)]
pub struct QueryInputs {
    pub y: DVector<f64>,
    pub x: Option<DMatrix<f64>>,
    pub response: NodeId,
    pub design: Option<NodeId>,
}

impl QueryInputs {
    fn design(&self) -> Result<&DMatrix<f64>> {
        self.x
            .as_ref()
            .ok_or_else(|| Error::InvalidDag("query needs a design-matrix parent".into()))
    }
}

/// The design a regression query operates on: standardized raw columns, or
/// the recorded feature list for the LASSO.
pub fn query_design(spec: &QuerySpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match spec {
        QuerySpec::Lasso(q) => match &q.features {
            Some(f) => build_design(x, f),
            None => build_design(x, &main_effects(x.ncols())),
        },
        _ => build_design(x, &main_effects(x.ncols())),
    }
}

fn execute(spec: &QuerySpec, inputs: &QueryInputs, seed: u64) -> Result<QueryOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        QuerySpec::Threshold(q) => Ok(q.solve(inputs.y.as_slice(), &mut rng)),
        QuerySpec::MarginalScreen(q) => {
            let design = query_design(spec, inputs.design()?)?;
            q.solve(&design, &inputs.y, &mut rng)
        }
        QuerySpec::Lasso(q) => {
            let design = query_design(spec, inputs.design()?)?;
            Ok(q.solve(&design, &inputs.y, &mut rng)?.1)
        }
    }
}

fn query_log_weight(spec: &QuerySpec, outcome: &QueryOutcome, inputs: &QueryInputs) -> Result<f64> {
    let indicator = |hit: bool| if hit { 0.0 } else { f64::NEG_INFINITY };
    match spec {
        QuerySpec::Threshold(q) => {
            let t = ThresholdQuery::statistic(inputs.y.as_slice());
            let selected = !outcome.selected.is_empty();
            Ok(match &q.randomization {
                None => indicator((t > q.tau) == selected),
                Some(g) if selected => g.log_selection_weight(q.tau, t),
                Some(g) => g.log_cdf(q.tau - t),
            })
        }
        QuerySpec::MarginalScreen(q) => {
            let design = query_design(spec, inputs.design()?)?;
            let t = q.statistics(&design, &inputs.y)?;
            match &q.randomization {
                None => {
                    let hit = q
                        .solve_stat(&t, &vec![0.0; t.len()])
                        .map(|o| o.same_event(outcome))
                        .unwrap_or(false);
                    Ok(indicator(hit))
                }
                Some(g) => {
                    let mut total = 0.0;
                    let mut sel = outcome.selected.iter().zip(&outcome.signs).peekable();
                    for (j, &tj) in t.iter().enumerate() {
                        match sel.peek() {
                            Some((&k, &s)) if k == j => {
                                sel.next();
                                total += g.log_sf(q.c - s as f64 * tj);
                            }
                            _ => {
                                let a = tj.abs();
                                let mass = g.cdf(q.c - a) - g.cdf(-q.c - a);
                                total += mass.max(0.0).ln();
                            }
                        }
                    }
                    Ok(total)
                }
            }
        }
        QuerySpec::Lasso(q) => match &q.randomization {
            None => {
                let design = query_design(spec, inputs.design()?)?;
                let p = design.ncols();
                let (_, out) = q.solve_with_omega(&design, &inputs.y, &vec![0.0; p])?;
                Ok(indicator(out.same_event(outcome)))
            }
            Some(_) => Err(Error::Unsupported(
                "the selection probability of a randomized LASSO outcome has no closed form".into(),
            )),
        },
    }
}

// ---- session file ----

#[derive(Serialize, Deserialize)]
struct SessionFile {
    version: u32,
    nodes: Vec<NodeRecord>,
    edges: Vec<(NodeId, NodeId)>,
    model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<DatasetRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inference: Vec<InferenceRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NodeKind {
    Data,
    Query,
}

#[derive(Serialize, Deserialize)]
struct DataSpec {
    shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    observed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    kind: NodeKind,
    stage: u32,
    spec: serde_json::Value,
    outcome: Option<QueryOutcome>,
    seed: Option<u64>,
}

impl From<&Dag> for SessionFile {
    fn from(dag: &Dag) -> Self {
        let nodes = dag
            .nodes
            .iter()
            .map(|n| match n {
                Node::Data(d) => NodeRecord {
                    id: d.id,
                    kind: NodeKind::Data,
                    stage: d.stage,
                    spec: serde_json::to_value(DataSpec {
                        shape: d.shape,
                        name: d.name.clone(),
                        observed: d.observed(),
                        values: d.values.clone(),
                    })
                    .expect("data spec serializes"),
                    outcome: None,
                    seed: None,
                },
                Node::Query(q) => NodeRecord {
                    id: q.id,
                    kind: NodeKind::Query,
                    stage: q.stage,
                    spec: serde_json::to_value(&q.spec).expect("query spec serializes"),
                    outcome: Some(q.outcome.clone()),
                    seed: Some(q.seed),
                },
            })
            .collect();
        SessionFile {
            version: SESSION_VERSION,
            nodes,
            edges: dag.edges.clone(),
            model: dag.model.clone(),
            dataset: dag.dataset.clone(),
            inference: dag.inference.clone(),
        }
    }
}

impl TryFrom<SessionFile> for Dag {
    type Error = Error;

    fn try_from(file: SessionFile) -> Result<Self> {
        if file.version != SESSION_VERSION {
            return Err(Error::InvalidDag(format!(
                "unsupported session version {}",
                file.version
            )));
        }
        let bad = |id: NodeId, what: &str| Error::InvalidDag(format!("node {id}: {what}"));
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for rec in file.nodes {
            let node = match rec.kind {
                NodeKind::Data => {
                    let spec: DataSpec = serde_json::from_value(rec.spec)
                        .map_err(|e| bad(rec.id, &e.to_string()))?;
                    if spec.observed != spec.values.is_some() {
                        return Err(bad(rec.id, "observed flag disagrees with stored values"));
                    }
                    Node::Data(DataNode {
                        id: rec.id,
                        stage: rec.stage,
                        shape: spec.shape,
                        name: spec.name,
                        values: spec.values,
                    })
                }
                NodeKind::Query => Node::Query(QueryNode {
                    id: rec.id,
                    stage: rec.stage,
                    spec: serde_json::from_value(rec.spec)
                        .map_err(|e| bad(rec.id, &e.to_string()))?,
                    outcome: rec.outcome.ok_or_else(|| bad(rec.id, "missing outcome"))?,
                    seed: rec.seed.ok_or_else(|| bad(rec.id, "missing seed"))?,
                }),
            };
            nodes.push(node);
        }
        let stage_counter = nodes.iter().map(Node::stage).max().unwrap_or(0);
        let dag = Dag {
            nodes,
            edges: file.edges,
            stage_counter,
            model: file.model,
            dataset: file.dataset,
            inference: file.inference,
        };
        dag.validate()?;
        Ok(dag)
    }
}
