//! Linear Gaussian path models: nodes with structural roles, weighted edges,
//! validation, and the built-in scenario presets.
//!
//! All variables are standardized to unit variance, so every edge weight is a
//! path coefficient in [-1, 1] and the model is fully described by its DAG.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural role a node plays in the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Instrument,
    Treatment,
    Outcome,
    Selection,
    Confounder,
    Other,
}

/// A node as it appears in a model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub role: NodeRole,
    #[serde(default)]
    pub latent: bool,
}

/// A weighted directed edge as it appears in a model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub coef: f64,
}

/// JSON model document: either an explicit graph or a preset by name.
#[derive(Deserialize)]
#[serde(untagged)]
enum ModelDoc {
    Preset {
        preset: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Graph {
        nodes: Vec<NodeSpec>,
        edges: Vec<EdgeSpec>,
    },
}

/// The built-in selection scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Instrument Z, confounded treatment T, outcome Y; selection S depends
    /// on T alone.
    Baseline,
    /// Baseline plus a direct effect of S on Y, making S a mediator.
    Mediator,
    /// Mediator variant where a second confounder W drives both S and Y.
    ConfoundedMediator,
    /// Baseline where the treatment-outcome confounder U also drives S.
    TreatmentConfounder,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Baseline,
        Scenario::Mediator,
        Scenario::ConfoundedMediator,
        Scenario::TreatmentConfounder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::Mediator => "mediator",
            Scenario::ConfoundedMediator => "confounded_mediator",
            Scenario::TreatmentConfounder => "treatment_confounder",
        }
    }

    /// Parameter names this scenario understands.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Scenario::Baseline => &["pi", "beta", "gamma", "delta1", "delta2"],
            Scenario::Mediator => &["pi", "beta", "gamma", "tau", "delta1", "delta2"],
            Scenario::ConfoundedMediator => {
                &["pi", "beta", "gamma", "tau", "delta1", "delta2", "delta3", "delta4"]
            }
            Scenario::TreatmentConfounder => {
                &["pi", "beta", "gamma", "delta1", "delta2", "delta3"]
            }
        }
    }

    /// Nodes of the preset graph in declaration (= topological) order.
    pub fn nodes(self) -> &'static [(&'static str, NodeRole, bool)] {
        use NodeRole::*;
        match self {
            Scenario::Baseline | Scenario::Mediator | Scenario::TreatmentConfounder => &[
                ("Z", Instrument, false),
                ("U", Confounder, true),
                ("T", Treatment, false),
                ("S", Selection, false),
                ("Y", Outcome, false),
            ],
            Scenario::ConfoundedMediator => &[
                ("Z", Instrument, false),
                ("U", Confounder, true),
                ("W", Confounder, true),
                ("T", Treatment, false),
                ("S", Selection, false),
                ("Y", Outcome, false),
            ],
        }
    }

    /// Edges of the preset graph, each tagged with its parameter name.
    pub fn edges(self) -> &'static [(&'static str, &'static str, &'static str)] {
        match self {
            Scenario::Baseline => &[
                ("Z", "T", "pi"),
                ("U", "T", "delta1"),
                ("U", "Y", "delta2"),
                ("T", "Y", "beta"),
                ("T", "S", "gamma"),
            ],
            Scenario::Mediator => &[
                ("Z", "T", "pi"),
                ("U", "T", "delta1"),
                ("U", "Y", "delta2"),
                ("T", "Y", "beta"),
                ("T", "S", "gamma"),
                ("S", "Y", "tau"),
            ],
            Scenario::ConfoundedMediator => &[
                ("Z", "T", "pi"),
                ("U", "T", "delta1"),
                ("U", "Y", "delta2"),
                ("T", "Y", "beta"),
                ("T", "S", "gamma"),
                ("S", "Y", "tau"),
                ("W", "S", "delta3"),
                ("W", "Y", "delta4"),
            ],
            Scenario::TreatmentConfounder => &[
                ("Z", "T", "pi"),
                ("U", "T", "delta1"),
                ("U", "Y", "delta2"),
                ("T", "Y", "beta"),
                ("T", "S", "gamma"),
                ("U", "S", "delta3"),
            ],
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter values for a preset scenario. Fields a scenario does not use
/// are simply ignored by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresetParams {
    pub pi: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
}

impl Default for PresetParams {
    /// Defaults are chosen so every preset standardizes feasibly.
    fn default() -> Self {
        PresetParams {
            pi: 0.5,
            beta: 0.4,
            gamma: 0.6,
            tau: 0.2,
            delta1: 0.5,
            delta2: 0.5,
            delta3: 0.3,
            delta4: 0.3,
        }
    }
}

impl PresetParams {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "pi" => Some(self.pi),
            "beta" => Some(self.beta),
            "gamma" => Some(self.gamma),
            "tau" => Some(self.tau),
            "delta1" => Some(self.delta1),
            "delta2" => Some(self.delta2),
            "delta3" => Some(self.delta3),
            "delta4" => Some(self.delta4),
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        match name {
            "pi" => self.pi = value,
            "beta" => self.beta = value,
            "gamma" => self.gamma = value,
            "tau" => self.tau = value,
            "delta1" => self.delta1 = value,
            "delta2" => self.delta2 = value,
            "delta3" => self.delta3 = value,
            "delta4" => self.delta4 = value,
            _ => return false,
        }
        true
    }

    /// Apply overrides, rejecting names the scenario does not use.
    pub fn with_overrides(
        scenario: Scenario,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<PresetParams> {
        let mut params = PresetParams::default();
        for (name, &value) in overrides {
            if !scenario.param_names().contains(&name.as_str()) {
                return Err(Error::UnknownParam {
                    name: name.clone(),
                    valid: scenario.param_names(),
                });
            }
            params.set(name, value);
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub coef: f64,
}

/// A validated path model: an acyclic weighted digraph over standardized
/// variables with exactly one instrument, treatment, outcome, and selection
/// node.
#[derive(Debug, Clone)]
pub struct PathModel {
    names: Vec<String>,
    roles: Vec<NodeRole>,
    latent: Vec<bool>,
    edges: Vec<Edge>,
    parents: Vec<Vec<(usize, f64)>>,
    topo: Vec<usize>,
    instrument: usize,
    treatment: usize,
    outcome: usize,
    selection: usize,
    preset: Option<(Scenario, PresetParams)>,
}

impl PathModel {
    /// Build one of the named presets with parameter overrides.
    pub fn preset(scenario: Scenario, overrides: &BTreeMap<String, f64>) -> Result<PathModel> {
        let params = PresetParams::with_overrides(scenario, overrides)?;
        Self::preset_with(scenario, params)
    }

    /// Build a preset from an explicit parameter struct.
    pub fn preset_with(scenario: Scenario, params: PresetParams) -> Result<PathModel> {
        let nodes = scenario
            .nodes()
            .iter()
            .map(|&(name, role, latent)| NodeSpec { name: name.to_string(), role, latent })
            .collect();
        let edges = scenario
            .edges()
            .iter()
            .map(|&(from, to, param)| EdgeSpec {
                from: from.to_string(),
                to: to.to_string(),
                coef: params.get(param).expect("preset edge parameter"),
            })
            .collect();
        let mut model = Self::from_parts(nodes, edges)?;
        model.preset = Some((scenario, params));
        Ok(model)
    }

    /// Parse a JSON model document (explicit graph or preset form).
    pub fn from_json(text: &str) -> Result<PathModel> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Json(e.to_string()))?;
        match doc {
            ModelDoc::Preset { preset, params } => {
                Self::preset(preset.parse::<Scenario>()?, &params)
            }
            ModelDoc::Graph { nodes, edges } => Self::from_parts(nodes, edges),
        }
    }

    /// Build and validate a model from node and edge lists.
    pub fn from_parts(nodes: Vec<NodeSpec>, edges: Vec<EdgeSpec>) -> Result<PathModel> {
        let n = nodes.len();
        let mut names = Vec::with_capacity(n);
        let mut roles = Vec::with_capacity(n);
        let mut latent = Vec::with_capacity(n);
        for node in &nodes {
            if names.contains(&node.name) {
                return Err(Error::DuplicateNode(node.name.clone()));
            }
            names.push(node.name.clone());
            roles.push(node.role);
            latent.push(node.latent);
        }

        let index_of = |name: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };

        let mut resolved: Vec<Edge> = Vec::with_capacity(edges.len());
        for edge in &edges {
            let from = index_of(&edge.from)?;
            let to = index_of(&edge.to)?;
            if !edge.coef.is_finite() || edge.coef.abs() > 1.0 {
                return Err(Error::CoefficientOutOfRange {
                    from: edge.from.clone(),
                    to: edge.to.clone(),
                    coef: edge.coef,
                });
            }
            if resolved.iter().any(|e| e.from == from && e.to == to) {
                return Err(Error::DuplicateEdge(edge.from.clone(), edge.to.clone()));
            }
            resolved.push(Edge { from, to, coef: edge.coef });
        }

        let unique_role = |role: NodeRole, label: &'static str| -> Result<usize> {
            let hits: Vec<usize> =
                (0..n).filter(|&i| roles[i] == role).collect();
            if hits.len() != 1 {
                return Err(Error::RoleCount { role: label, count: hits.len() });
            }
            Ok(hits[0])
        };
        let instrument = unique_role(NodeRole::Instrument, "instrument")?;
        let treatment = unique_role(NodeRole::Treatment, "treatment")?;
        let outcome = unique_role(NodeRole::Outcome, "outcome")?;
        let selection = unique_role(NodeRole::Selection, "selection")?;

        // Kahn's algorithm: a leftover node means a cycle (self-loops included).
        let mut indegree = vec![0usize; n];
        for e in &resolved {
            indegree[e.to] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = queue.pop() {
            topo.push(v);
            for e in resolved.iter().filter(|e| e.from == v) {
                indegree[e.to] -= 1;
                if indegree[e.to] == 0 {
                    queue.push(e.to);
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| names[i].clone())
                .collect();
            return Err(Error::Cycle(stuck));
        }

        // Selection must sit downstream of treatment.
        let mut reach = vec![false; n];
        let mut stack = vec![treatment];
        while let Some(v) = stack.pop() {
            for e in resolved.iter().filter(|e| e.from == v) {
                if !reach[e.to] {
                    reach[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        if !reach[selection] {
            return Err(Error::SelectionNotDownstream {
                selection: names[selection].clone(),
                treatment: names[treatment].clone(),
            });
        }

        let mut parents = vec![Vec::new(); n];
        for e in &resolved {
            parents[e.to].push((e.from, e.coef));
        }

        Ok(PathModel {
            names,
            roles,
            latent,
            edges: resolved,
            parents,
            topo,
            instrument,
            treatment,
            outcome,
            selection,
            preset: None,
        })
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn role(&self, i: usize) -> NodeRole {
        self.roles[i]
    }

    pub fn is_latent(&self, i: usize) -> bool {
        self.latent[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Direct parents of `i` with their coefficients.
    pub fn parents(&self, i: usize) -> &[(usize, f64)] {
        &self.parents[i]
    }

    /// Node indices in a topological order.
    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn instrument(&self) -> usize {
        self.instrument
    }

    pub fn treatment(&self) -> usize {
        self.treatment
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn selection(&self) -> usize {
        self.selection
    }

    /// Coefficient on the edge `from -> to`, if that edge exists.
    pub fn edge_coef(&self, from: usize, to: usize) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.coef)
    }

    /// Direct effect of treatment on outcome (0 when no such edge exists).
    pub fn direct_effect(&self) -> f64 {
        self.edge_coef(self.treatment, self.outcome).unwrap_or(0.0)
    }

    /// The scenario this model was built from, if any.
    pub fn scenario(&self) -> Option<Scenario> {
        self.preset.map(|(s, _)| s)
    }

    /// Parameters of the preset this model was built from, if any.
    pub fn preset_params(&self) -> Option<&PresetParams> {
        self.preset.as_ref().map(|(_, p)| p)
    }
}
