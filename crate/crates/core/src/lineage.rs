//! Directed, labeled relationship graph between characters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const MAX_LABEL_CHARS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineageError {
    #[error("a character cannot be related to itself ({0})")]
    SelfLoop(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("relationship label must be 1..={MAX_LABEL_CHARS} characters after trimming, got {0:?}")]
    BadLabel(String),
    #[error("no edge {from} -> {to}")]
    UnknownEdge { from: String, to: String },
    #[error("edge {from} -> {to} listed more than once")]
    DuplicateEdge { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Neighbor {
    pub direction: Direction,
    pub other_id: String,
    pub label: String,
}

/// Serialized form: sorted node list and sorted edge triples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub graph_id: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl TreeDocument {
    /// Sorts nodes and edges in place.
    pub fn canonicalize(mut self) -> Self {
        self.nodes.sort();
        self.nodes.dedup();
        self.edges.sort();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeDocument", into = "TreeDocument")]
pub struct LineageGraph {
    graph_id: String,
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), String>,
}

fn normalize_label(label: &str) -> Result<String, LineageError> {
    let trimmed = label.trim();
    if trimmed.is_empty() || trimmed.chars().count() > MAX_LABEL_CHARS {
        return Err(LineageError::BadLabel(label.to_owned()));
    }
    Ok(trimmed.to_owned())
}

impl LineageGraph {
    pub fn new(graph_id: impl Into<String>) -> Self {
        Self { graph_id: graph_id.into(), nodes: BTreeSet::new(), edges: BTreeMap::new() }
    }

    pub fn graph_id(&self) -> &str {
        &self.graph_id
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges
            .iter()
            .map(|((from, to), label)| Edge { from: from.clone(), to: to.clone(), label: label.clone() })
    }

    pub fn label(&self, from: &str, to: &str) -> Option<&str> {
        self.edges.get(&(from.to_owned(), to.to_owned())).map(String::as_str)
    }

    pub fn add_node(&self, id: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.nodes.insert(id.into());
        next
    }

    /// Removes a node along with every incident edge.
    pub fn remove_node(&self, id: &str) -> Result<Self, LineageError> {
        if !self.contains(id) {
            return Err(LineageError::UnknownNode(id.into()));
        }
        let mut next = self.clone();
        next.nodes.remove(id);
        next.edges.retain(|(from, to), _| from != id && to != id);
        Ok(next)
    }

    /// Adds or relabels the edge `from -> to`.
    pub fn link(&self, from: &str, to: &str, label: &str) -> Result<Self, LineageError> {
        if from == to {
            return Err(LineageError::SelfLoop(from.into()));
        }
        for id in [from, to] {
            if !self.contains(id) {
                return Err(LineageError::UnknownNode(id.into()));
            }
        }
        let label = normalize_label(label)?;
        let mut next = self.clone();
        next.edges.insert((from.to_owned(), to.to_owned()), label);
        Ok(next)
    }

    pub fn unlink(&self, from: &str, to: &str) -> Result<Self, LineageError> {
        let mut next = self.clone();
        next.edges
            .remove(&(from.to_owned(), to.to_owned()))
            .ok_or_else(|| LineageError::UnknownEdge { from: from.into(), to: to.into() })?;
        Ok(next)
    }

    /// Incident edges of `id`, outgoing first, each group ordered by the other id.
    pub fn neighbors(&self, id: &str) -> Result<Vec<Neighbor>, LineageError> {
        if !self.contains(id) {
            return Err(LineageError::UnknownNode(id.into()));
        }
        let mut out: Vec<Neighbor> = self
            .edges
            .iter()
            .filter_map(|((from, to), label)| {
                if from == id {
                    Some(Neighbor { direction: Direction::Outgoing, other_id: to.clone(), label: label.clone() })
                } else if to == id {
                    Some(Neighbor { direction: Direction::Incoming, other_id: from.clone(), label: label.clone() })
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Subgraph of `id`, its neighbors and the edges touching `id`.
    pub fn incident_subgraph(&self, id: &str) -> Result<Self, LineageError> {
        let mut sub = Self::new(self.graph_id.clone()).add_node(id);
        for n in self.neighbors(id)? {
            sub.nodes.insert(n.other_id.clone());
            let key = match n.direction {
                Direction::Outgoing => (id.to_owned(), n.other_id),
                Direction::Incoming => (n.other_id, id.to_owned()),
            };
            sub.edges.insert(key, n.label);
        }
        Ok(sub)
    }

    /// Union of nodes and edges; labels from `other` win on shared pairs.
    pub fn merge(&self, other: &LineageGraph) -> Self {
        let mut next = self.clone();
        next.nodes.extend(other.nodes.iter().cloned());
        next.edges.extend(other.edges.iter().map(|(k, v)| (k.clone(), v.clone())));
        next
    }

    pub fn check_invariants(&self) -> Result<(), LineageError> {
        for ((from, to), label) in &self.edges {
            if from == to {
                return Err(LineageError::SelfLoop(from.clone()));
            }
            for id in [from, to] {
                if !self.nodes.contains(id) {
                    return Err(LineageError::UnknownNode(id.clone()));
                }
            }
            if normalize_label(label)? != *label {
                return Err(LineageError::BadLabel(label.clone()));
            }
        }
        Ok(())
    }

    pub fn export(&self) -> TreeDocument {
        TreeDocument { graph_id: self.graph_id.clone(), nodes: self.nodes.iter().cloned().collect(), edges: self.edges().collect() }
    }

    /// Rebuilds a graph, rejecting any document that breaks a graph invariant.
    pub fn import(doc: TreeDocument) -> Result<Self, LineageError> {
        let mut graph = Self::new(doc.graph_id);
        graph.nodes.extend(doc.nodes);
        for edge in doc.edges {
            if graph.edges.contains_key(&(edge.from.clone(), edge.to.clone())) {
                return Err(LineageError::DuplicateEdge { from: edge.from, to: edge.to });
            }
            graph = graph.link(&edge.from, &edge.to, &edge.label)?;
        }
        Ok(graph)
    }
}

impl TryFrom<TreeDocument> for LineageGraph {
    type Error = LineageError;

    fn try_from(doc: TreeDocument) -> Result<Self, Self::Error> {
        LineageGraph::import(doc)
    }
}

impl From<LineageGraph> for TreeDocument {
    fn from(graph: LineageGraph) -> Self {
        graph.export()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> LineageGraph {
        LineageGraph::new("g").add_node("A").add_node("B")
    }

    #[test]
    fn relink_replaces_label() {
        let g = abc().link("A", "B", "mentor").unwrap().link("A", "B", "father").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.label("A", "B"), Some("father"));
    }

    #[test]
    fn link_errors() {
        let g = abc();
        assert_eq!(g.link("A", "A", "twin"), Err(LineageError::SelfLoop("A".into())));
        assert_eq!(g.link("A", "C", "rival"), Err(LineageError::UnknownNode("C".into())));
        assert!(matches!(g.link("A", "B", "  "), Err(LineageError::BadLabel(_))));
        assert!(matches!(g.link("A", "B", &"x".repeat(41)), Err(LineageError::BadLabel(_))));
        assert!(g.link("A", "B", &"x".repeat(40)).is_ok());
    }

    #[test]
    fn unlink_is_directed() {
        let g = abc().link("A", "B", "mentor").unwrap().link("B", "A", "pupil").unwrap();
        let g = g.unlink("A", "B").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.label("B", "A"), Some("pupil"));
        assert!(matches!(g.unlink("A", "B"), Err(LineageError::UnknownEdge { .. })));
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn neighbors_order() {
        let g = LineageGraph::new("g").add_node("A").add_node("B").add_node("C").add_node("D").add_node("Z");
        let g = g.link("A", "C", "rival").unwrap().link("A", "B", "mentor").unwrap().link("D", "A", "sister").unwrap();
        let n = g.neighbors("A").unwrap();
        let got: Vec<_> = n.iter().map(|n| (n.direction, n.other_id.as_str(), n.label.as_str())).collect();
        assert_eq!(
            got,
            [
                (Direction::Outgoing, "B", "mentor"),
                (Direction::Outgoing, "C", "rival"),
                (Direction::Incoming, "D", "sister")
            ]
        );
        assert!(g.neighbors("Z").unwrap().is_empty());
        assert!(g.neighbors("Q").is_err());
    }

    #[test]
    fn import_rejects_bad_documents() {
        let doc = TreeDocument {
            graph_id: "g".into(),
            nodes: vec!["A".into(), "B".into()],
            edges: vec![
                Edge { from: "A".into(), to: "B".into(), label: "x".into() },
                Edge { from: "A".into(), to: "B".into(), label: "y".into() },
            ],
        };
        assert!(matches!(LineageGraph::import(doc), Err(LineageError::DuplicateEdge { .. })));
        let json = r#"{"graph_id":"g","nodes":["A"],"edges":[{"from":"A","to":"B","label":"x"}]}"#;
        assert!(serde_json::from_str::<LineageGraph>(json).is_err());
    }

    #[test]
    fn subgraph_and_merge() {
        let g = LineageGraph::new("g").add_node("A").add_node("B").add_node("C");
        let g = g.link("A", "B", "mentor").unwrap().link("B", "C", "rival").unwrap();
        let sub = g.incident_subgraph("A").unwrap();
        assert_eq!(sub.node_count(), 2);
        assert_eq!(sub.edge_count(), 1);
        assert_eq!(LineageGraph::new("g").merge(&g), g);
    }
}
