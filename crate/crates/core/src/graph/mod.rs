//! Graph data model, propagation operators, ego-subgraphs and the bundle
//! file format.

mod bundle;
mod sparse;
pub mod synth;

use std::collections::{HashSet, VecDeque};

use ndarray::Array2;

use crate::error::{validation, Error, Result};

pub use bundle::{bundle_json, load_graph_bundle, parse_graph_bundle, save_graph_bundle, GraphBundle, GraphRecord};
pub use sparse::CsrMatrix;

/// A simple undirected graph with dense node features.
///
/// Immutable once built; every constructor path goes through [`Graph::new`],
/// which enforces the structural invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Array2<f64>,
    texts: Option<Vec<String>>,
    labels: Option<Vec<usize>>,
    domain_id: String,
    dataset_id: String,
}

/// Raw constructor input for [`Graph::new`].
#[derive(Debug, Clone, Default)]
pub struct GraphParts {
    pub dataset_id: String,
    pub domain_id: String,
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub texts: Option<Vec<String>>,
    pub labels: Option<Vec<usize>>,
}

impl Graph {
    /// Validates and canonicalizes. Edges are stored as `(min, max)` in first
    /// occurrence order; reversed or repeated pairs collapse with a warning.
    pub fn new(parts: GraphParts) -> Result<Graph> {
        let GraphParts {
            dataset_id,
            domain_id,
            node_count,
            edges,
            features,
            texts,
            labels,
        } = parts;
        let name = &dataset_id;
        if features.nrows() != node_count {
            return Err(validation(format!(
                "graph '{name}': features has {} rows, node_count is {node_count}",
                features.nrows()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(validation(format!("graph '{name}': features contain non-finite values")));
        }
        if let Some(t) = &texts {
            if t.len() != node_count {
                return Err(validation(format!(
                    "graph '{name}': texts has length {}, node_count is {node_count}",
                    t.len()
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != node_count {
                return Err(validation(format!(
                    "graph '{name}': labels has length {}, node_count is {node_count}",
                    l.len()
                )));
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        let mut collapsed = 0usize;
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= node_count || v >= node_count {
                return Err(validation(format!(
                    "graph '{name}': edge {i} ({u},{v}) has an endpoint outside [0, {node_count})"
                )));
            }
            if u == v {
                return Err(validation(format!("graph '{name}': edge {i} ({u},{v}) is a self-loop")));
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                canonical.push(key);
            } else {
                collapsed += 1;
            }
        }
        if collapsed > 0 {
            log::warn!("graph '{name}': symmetrized input, collapsed {collapsed} reversed or repeated edges");
        }

        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in &canonical {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }

        Ok(Graph {
            node_count,
            edges: canonical,
            adjacency,
            features,
            texts,
            labels,
            domain_id,
            dataset_id,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feat_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn texts(&self) -> Option<&[String]> {
        self.texts.as_deref()
    }

    pub fn text(&self, v: usize) -> &str {
        self.texts.as_ref().map_or("", |t| t[v].as_str())
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// 0/1 adjacency as a symmetric CSR matrix.
    pub fn adjacency_matrix(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(2 * self.edges.len());
        for &(u, v) in &self.edges {
            t.push((u, v, 1.0));
            t.push((v, u, 1.0));
        }
        CsrMatrix::from_triplets(self.node_count, self.node_count, &t)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        normalized_adjacency(self.node_count, &self.edges)
    }

    /// Induced subgraph on the ball of radius `h` around `center`.
    pub fn ego_subgraph(&self, center: usize, h: usize) -> Result<EgoSubgraph> {
        if center >= self.node_count {
            return Err(Error::Index(format!(
                "center {center} out of range for graph '{}' with {} nodes",
                self.dataset_id, self.node_count
            )));
        }
        if h == 0 {
            return Err(Error::Param("hop radius must be >= 1".into()));
        }
        let mut dist = vec![usize::MAX; self.node_count];
        dist[center] = 0;
        let mut queue = VecDeque::from([center]);
        let mut nodes = vec![center];
        while let Some(u) = queue.pop_front() {
            if dist[u] == h {
                continue;
            }
            for &w in &self.adjacency[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    nodes.push(w);
                    queue.push_back(w);
                }
            }
        }
        nodes.sort_unstable();
        let mut local = vec![usize::MAX; self.node_count];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut edges = Vec::new();
        for &(u, v) in &self.edges {
            if local[u] != usize::MAX && local[v] != usize::MAX {
                edges.push((local[u], local[v]));
            }
        }
        edges.sort_unstable();
        Ok(EgoSubgraph {
            center,
            nodes,
            edges,
            hop_radius: h,
        })
    }

    /// Materializes an ego-subgraph as a standalone graph carrying the parent's
    /// feature rows, texts and labels.
    pub fn induced(&self, ego: &EgoSubgraph) -> Graph {
        let features = self.features.select(ndarray::Axis(0), &ego.nodes);
        let texts = self
            .texts
            .as_ref()
            .map(|t| ego.nodes.iter().map(|&v| t[v].clone()).collect());
        let labels = self
            .labels
            .as_ref()
            .map(|l| ego.nodes.iter().map(|&v| l[v]).collect());
        Graph::new(GraphParts {
            dataset_id: self.dataset_id.clone(),
            domain_id: self.domain_id.clone(),
            node_count: ego.nodes.len(),
            edges: ego.edges.clone(),
            features,
            texts,
            labels,
        })
        .expect("induced subgraph of a valid graph is valid")
    }
}

/// Propagation operator for an arbitrary simple edge list.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let mut deg = vec![1.0f64; n];
    for &(u, v) in edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut t = Vec::with_capacity(n + 2 * edges.len());
    for (i, s) in inv_sqrt.iter().enumerate() {
        t.push((i, i, s * s));
    }
    for &(u, v) in edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        t.push((u, v, w));
        t.push((v, u, w));
    }
    CsrMatrix::from_triplets(n, n, &t)
}

/// The `h`-hop ball around a node with its induced edges in local ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct EgoSubgraph {
    pub center: usize,
    /// Sorted, duplicate-free original node ids. Also the dedup key in the
    /// structural store.
    pub nodes: Vec<usize>,
    /// Local-id edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub hop_radius: usize,
}

impl EgoSubgraph {
    pub fn local_center(&self) -> usize {
        self.nodes
            .binary_search(&self.center)
            .expect("center is always a member of its ego-subgraph")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
