use dualstore::text::{chunk_document, hashing_embedder, pca_align, reassemble, Embedder, PrefixedDocument};
use ndarray::Array2;
use proptest::prelude::*;

fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
    (2usize..60, 1usize..8).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-10.0f64..10.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn sentence() -> impl Strategy<Value = String> {
    ("[A-Z][a-z]{0,8}( [a-z0-9]{1,8}){0,6}", prop_oneof![Just("."), Just("!"), Just("?")])
        .prop_map(|(body, end)| format!("{body}{end}"))
}

fn field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 _#-]{0,20}"
}

fn document() -> impl Strategy<Value = PrefixedDocument> {
    (field(), field(), field(), field(), proptest::collection::vec(sentence(), 0..6)).prop_map(|(dataset, node_id, label, description, s)| {
        PrefixedDocument {
            dataset,
            node_id,
            label,
            description,
            node_text: s.join(" "),
        }
    })
}

proptest! {
    #[test]
    fn pca_columns_are_uncorrelated(x in arb_matrix(), pick in 0usize..8) {
        let (n, d) = x.dim();
        let d0 = 1 + pick % n.min(d);
        let (y, model) = pca_align(&x, d0).unwrap();
        let yc = &y - &y.mean_axis(ndarray::Axis(0)).unwrap();
        let cov = yc.t().dot(&yc) / (n as f64 - 1.0);
        let scale = cov.diag().iter().cloned().fold(1.0, f64::max);
        for i in 0..d0 {
            for j in 0..d0 {
                if i != j {
                    prop_assert!(cov[[i, j]].abs() <= 1e-8 * scale, "cov[{i},{j}] = {}", cov[[i, j]]);
                }
            }
        }
        for w in model.explained_variance.windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12 * scale);
        }
    }

    #[test]
    fn embeddings_have_unit_norm(text in "[a-z]{1,6}( [a-z]{1,6}){0,8}", seed in any::<u64>()) {
        let e = hashing_embedder(128, seed).unwrap();
        let v = e.embed(&text).unwrap();
        prop_assert_eq!(v.len(), 128);
        prop_assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(v, e.embed(&text).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn chunks_invert_to_the_document(doc in document(), node in 0usize..1000) {
        let chunks = chunk_document(&doc, node);
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.chunk_index, i);
            prop_assert_eq!(c.parent_node, node);
        }
        prop_assert_eq!(reassemble(&chunks), Some(doc));
    }
}
