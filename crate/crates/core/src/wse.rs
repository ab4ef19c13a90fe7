//! Walk-spectrum encodings: damped closed-walk counts `α^k (A^k)_vv`, anchor
//! scores and the odd/even-cycle separability pair.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::graph::{CsrMatrix, Graph, GraphParts};

/// Nodes processed per block of one-hot columns.
const BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WseSignature {
    pub node: usize,
    pub order: usize,
    pub alpha: f64,
    /// `values[k-1] = α^k (A^k)_vv`
    pub values: Vec<f64>,
}

impl WseSignature {
    /// Closed-walk count of length `k` with the damping removed.
    pub fn undamped(&self, k: usize) -> f64 {
        self.values[k - 1] / self.alpha.powi(k as i32)
    }

    pub fn score(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorScore {
    pub node: usize,
    pub score: f64,
}

fn check_params(alpha: f64, order: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if order == 0 {
        return Err(param("walk order K must be >= 1"));
    }
    Ok(())
}

/// Signatures for every node of `g`.
pub fn wse_all(g: &Graph, alpha: f64, order: usize) -> Result<Vec<WseSignature>> {
    let nodes: Vec<usize> = (0..g.node_count()).collect();
    wse_nodes(&g.adjacency_matrix(), &nodes, alpha, order)
}

/// Signatures for a subset of nodes of the graph with adjacency `adj`.
///
/// Each block of up to 64 nodes is pushed through `K` sparse products
/// `X <- A X` starting from one-hot columns, so the cost is `O(K * nnz)` per
/// block. Counts are exact in f64 while they stay below 2^53; damping is
/// applied after counting.
pub fn wse_nodes(adj: &CsrMatrix, nodes: &[usize], alpha: f64, order: usize) -> Result<Vec<WseSignature>> {
    check_params(alpha, order)?;
    let n = adj.n_rows();
    let damp: Vec<f64> = (1..=order).map(|k| alpha.powi(k as i32)).collect();
    let mut out = Vec::with_capacity(nodes.len());
    for block in nodes.chunks(BLOCK) {
        let mut x = Array2::<f64>::zeros((n, block.len()));
        for (j, &v) in block.iter().enumerate() {
            x[[v, j]] = 1.0;
        }
        let mut counts = vec![vec![0.0; order]; block.len()];
        for k in 0..order {
            x = adj.matmul(&x.view());
            for (j, &v) in block.iter().enumerate() {
                counts[j][k] = x[[v, j]];
            }
        }
        for (j, &v) in block.iter().enumerate() {
            out.push(WseSignature {
                node: v,
                order,
                alpha,
                values: counts[j].iter().zip(&damp).map(|(c, d)| c * d).collect(),
            });
        }
    }
    Ok(out)
}

/// Sum of each signature, sorted descending with ties by ascending node id.
pub fn anchor_scores(signatures: &[WseSignature]) -> Vec<AnchorScore> {
    let mut scores: Vec<AnchorScore> = signatures
        .iter()
        .map(|s| AnchorScore {
            node: s.node,
            score: s.score(),
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.node.cmp(&b.node)));
    scores
}

/// First `min(m, len)` nodes of an already sorted score list.
pub fn select_anchors(scores: &[AnchorScore], m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(param("anchor count M must be >= 1"));
    }
    Ok(scores.iter().take(m).map(|s| s.node).collect())
}

/// Rows of signature values as a dense `[N x K]` matrix in node order.
pub fn signature_matrix(signatures: &[WseSignature]) -> Array2<f64> {
    let k = signatures.first().map_or(0, |s| s.order);
    let mut m = Array2::zeros((signatures.len(), k));
    for (i, s) in signatures.iter().enumerate() {
        for (j, v) in s.values.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    m
}

/// A path `x_0 .. x_{r+1}` with a `p`-cycle (first graph) or `q`-cycle (second
/// graph) hanging off `x_{r+1}`. Returns both graphs and the root `x_0`.
///
/// The `r`-hop balls of the roots are the same path, but the shortest closed
/// walk around the odd cycle has odd length `2(r+1)+p` while the even-cycle
/// graph is bipartite and has no odd closed walks at all.
pub fn prop1_construction(r: usize, p: usize, q: usize) -> Result<(Graph, Graph, usize)> {
    if p < 3 || p % 2 == 0 {
        return Err(param(format!("p = {p} must be an odd integer >= 3")));
    }
    if q < 4 || q % 2 == 1 {
        return Err(param(format!("q = {q} must be an even integer >= 4")));
    }
    let build = |cycle: usize, name: &str| -> Graph {
        let path_nodes = r + 2;
        let n = path_nodes + cycle - 1;
        let mut edges: Vec<(usize, usize)> = (0..path_nodes - 1).map(|i| (i, i + 1)).collect();
        let attach = path_nodes - 1;
        let ring: Vec<usize> = std::iter::once(attach).chain(path_nodes..n).collect();
        for i in 0..ring.len() {
            edges.push((ring[i], ring[(i + 1) % ring.len()]));
        }
        Graph::new(GraphParts {
            dataset_id: name.to_string(),
            domain_id: "prop1".into(),
            node_count: n,
            edges,
            features: Array2::zeros((n, 1)),
            texts: None,
            labels: None,
        })
        .expect("construction is a simple graph")
    };
    Ok((build(p, "odd-cycle"), build(q, "even-cycle"), 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(GraphParts {
            node_count: n,
            edges: edges.to_vec(),
            features: Array2::zeros((n, 1)),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn triangle() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        for s in wse_all(&g, 0.5, 3).unwrap() {
            assert_eq!(s.values, vec![0.0, 0.5, 0.25]);
            assert_eq!(s.score(), 0.75);
        }
    }

    #[test]
    fn edge_and_edgeless() {
        let g = graph(2, &[(0, 1)]);
        for s in wse_all(&g, 0.5, 2).unwrap() {
            assert_eq!(s.values, vec![0.0, 0.25]);
        }
        let empty = graph(4, &[]);
        for s in wse_all(&empty, 0.3, 5).unwrap() {
            assert!(s.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn alpha_and_order_are_validated() {
        let g = graph(2, &[(0, 1)]);
        assert!(wse_all(&g, 0.0, 2).is_err());
        assert!(wse_all(&g, 1.0, 2).is_err());
        assert!(wse_all(&g, 0.5, 0).is_err());
    }

    #[test]
    fn anchor_ordering_and_ties() {
        let sig = |node, values: Vec<f64>| WseSignature { node, order: values.len(), alpha: 0.5, values };
        let scores = anchor_scores(&[sig(3, vec![0.0, 1.0]), sig(1, vec![0.0, 1.0]), sig(2, vec![0.0, 2.0]), sig(0, vec![0.0, 0.0])]);
        let nodes: Vec<usize> = scores.iter().map(|s| s.node).collect();
        assert_eq!(nodes, vec![2, 1, 3, 0]);
        assert_eq!(select_anchors(&scores, 2).unwrap(), vec![2, 1]);
        assert_eq!(select_anchors(&scores, 10).unwrap().len(), 4);
        assert!(select_anchors(&scores, 0).is_err());
    }

    #[test]
    fn star_hub_is_top_anchor() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let scores = anchor_scores(&wse_all(&g, 0.5, 4).unwrap());
        assert_eq!(select_anchors(&scores, 1).unwrap(), vec![0]);
    }

    #[test]
    fn prop1_sizes_and_parity_checks() {
        let (g1, g2, root) = prop1_construction(1, 3, 4).unwrap();
        assert_eq!((g1.node_count(), g2.node_count(), root), (5, 6, 0));
        let (g1, _, _) = prop1_construction(0, 3, 4).unwrap();
        assert_eq!(g1.node_count(), 4);
        assert_eq!(g1.neighbors(0), &[1]);
        assert!(prop1_construction(1, 4, 4).is_err());
        assert!(prop1_construction(1, 3, 5).is_err());
    }
}
