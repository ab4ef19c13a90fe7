#![allow(dead_code)]

use dualstore::graph::{Graph, GraphParts};
use ndarray::Array2;
use proptest::prelude::*;

pub fn graph_from(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(GraphParts {
        dataset_id: "g".into(),
        domain_id: "d".into(),
        node_count: n,
        edges: edges.to_vec(),
        features: Array2::zeros((n, 1)),
        ..Default::default()
    })
    .unwrap()
}

/// Random simple graph on 1..=max_n nodes.
pub fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..(3 * n))))
        .prop_map(|(n, pairs)| {
            let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|(u, v)| u != v).collect();
            graph_from(n, &edges)
        })
}

pub fn dense_adjacency(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let mut a = Array2::zeros((n, n));
    for &(u, v) in g.edges() {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    a
}

/// Plain BFS distances from `src`; `usize::MAX` when unreachable.
pub fn bfs(g: &Graph, src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[src] = 0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

use dualstore::encoder::EncoderDims;
use dualstore::pretrain::{prepare_inputs, GraphInputs, StructTransform};
use dualstore::text::hashing_embedder;
use rand::{Rng, SeedableRng};

pub fn toy_dims() -> EncoderDims {
    EncoderDims {
        d0: 8,
        order: 4,
        d_tau: 3,
        d_h: 6,
        d: 5,
        d_p: 4,
    }
}

/// Two six-node graphs in domains "dom-a" and "dom-b" (12 nodes in total).
pub fn toy_inputs(dims: &EncoderDims) -> Vec<GraphInputs> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let emb = hashing_embedder(dims.d0, 0).unwrap();
    let words = ["alpha", "beta", "gamma", "delta", "omega", "sigma"];
    let specs: [(&str, Vec<(usize, usize)>); 2] = [
        ("dom-a", vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)]),
        ("dom-b", vec![(0, 1), (0, 2), (0, 3), (3, 4), (4, 5), (5, 3)]),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(k, (dom, edges))| {
            let g = Graph::new(GraphParts {
                dataset_id: format!("toy-{k}"),
                domain_id: dom.into(),
                node_count: 6,
                edges,
                features: Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0)),
                texts: Some((0..6).map(|v| format!("{} {}", words[v], words[(v + k) % 6])).collect()),
                labels: None,
            })
            .unwrap();
            prepare_inputs(&g, dims.d0, 0.5, dims.order, StructTransform::Log1pStandardized, &emb).unwrap()
        })
        .collect()
}
