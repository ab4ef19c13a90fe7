//! Graph bundle JSON: `{"graphs": [{dataset_id, domain_id, node_count, edges,
//! features, texts, labels}, ...]}`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphParts};
use crate::error::{validation, Error, Result};
use crate::io;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphRecord {
    pub dataset_id: String,
    pub domain_id: String,
    pub node_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    pub texts: Option<Vec<String>>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphBundle {
    pub graphs: Vec<GraphRecord>,
}

impl GraphRecord {
    pub fn from_graph(g: &Graph) -> Self {
        GraphRecord {
            dataset_id: g.dataset_id.clone(),
            domain_id: g.domain_id.clone(),
            node_count: g.node_count,
            edges: g.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: g.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            texts: g.texts.clone(),
            labels: g.labels.clone(),
        }
    }

    pub fn into_graph(self) -> Result<Graph> {
        let name = self.dataset_id.clone();
        let width = self.features.first().map_or(0, Vec::len);
        if let Some(i) = self.features.iter().position(|r| r.len() != width) {
            return Err(validation(format!(
                "graph '{name}': features row {i} has length {}, expected {width}",
                self.features[i].len()
            )));
        }
        let rows = self.features.len();
        let flat: Vec<f64> = self.features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((rows, width), flat)
            .map_err(|e| validation(format!("graph '{name}': features: {e}")))?;
        Graph::new(GraphParts {
            dataset_id: self.dataset_id,
            domain_id: self.domain_id,
            node_count: self.node_count,
            edges: self.edges.into_iter().map(|[u, v]| (u, v)).collect(),
            features,
            texts: self.texts,
            labels: self.labels,
        })
    }
}

pub fn parse_graph_bundle(json: &str, context: &str) -> Result<Vec<Graph>> {
    let bundle: GraphBundle = serde_json::from_str(json).map_err(|e| {
        let line = json.lines().nth(e.line().saturating_sub(1)).unwrap_or("");
        let snippet: String = line.chars().take(80).collect();
        Error::parse(context, format!("{e} near `{snippet}`"))
    })?;
    bundle.graphs.into_iter().map(GraphRecord::into_graph).collect()
}

pub fn load_graph_bundle(path: &Path) -> Result<Vec<Graph>> {
    let text = io::read_to_string(path)?;
    parse_graph_bundle(&text, &path.display().to_string())
}

pub fn bundle_json(graphs: &[Graph]) -> String {
    let bundle = GraphBundle {
        graphs: graphs.iter().map(GraphRecord::from_graph).collect(),
    };
    serde_json::to_string(&bundle).expect("bundle serialization cannot fail")
}

pub fn save_graph_bundle(path: &Path, graphs: &[Graph]) -> Result<()> {
    io::write_atomic(path, bundle_json(graphs).as_bytes())
}
