mod common;

use common::{arb_graph, bfs};
use dualstore::graph::bundle_json;
use dualstore::graph::synth::{generate_synthetic, SyntheticSpec};
use proptest::prelude::*;

proptest! {
    #[test]
    fn normalized_adjacency_is_symmetric_and_bounded(g in arb_graph(30)) {
        let a = g.normalized_adjacency().to_dense();
        let n = g.node_count();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a[[i, j]] - a[[j, i]]).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&a[[i, j]]));
            }
        }
    }

    #[test]
    fn ego_subgraph_matches_bfs(g in arb_graph(50), h in 1usize..4) {
        for v in 0..g.node_count() {
            let ego = g.ego_subgraph(v, h).unwrap();
            let dist = bfs(&g, v);
            let expect: Vec<usize> = (0..g.node_count()).filter(|&u| dist[u] <= h).collect();
            prop_assert_eq!(&ego.nodes, &expect);
            prop_assert_eq!(ego.center, v);
            let induced = g
                .edges()
                .iter()
                .filter(|(a, b)| dist[*a] <= h && dist[*b] <= h)
                .count();
            prop_assert_eq!(ego.edges.len(), induced);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_generation_is_pure(seed in any::<u64>(), domains in 1usize..4) {
        let spec = SyntheticSpec { seed, domains, nodes_per_class: 8, ..Default::default() };
        let a = bundle_json(&generate_synthetic(&spec).unwrap());
        let b = bundle_json(&generate_synthetic(&spec).unwrap());
        prop_assert_eq!(a, b);
    }
}
