mod common;

use common::{toy_dims, toy_inputs};
use dualstore::encoder::EncoderParams;
use dualstore::pretrain::{infonce_relevance, mixed_batches, pretrain_loss, PretrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch_pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..12, 1usize..6).prop_flat_map(|(b, d)| {
        let m = proptest::collection::vec(-3.0f64..3.0, b * d).prop_map(move |v| Array2::from_shape_vec((b, d), v).unwrap());
        (m.clone(), m)
    })
}

proptest! {
    #[test]
    fn mutual_information_estimate_is_at_most_log_batch((zt, zs) in batch_pair(), tau in 0.05f64..2.0) {
        let b = zt.nrows() as f64;
        let loss = infonce_relevance(&zt, &zs, tau).unwrap();
        prop_assert!(b.ln() - loss <= b.ln() + 1e-12);
    }

    #[test]
    fn token_regularizer_gradient_closed_form(gamma in 0.0f64..2.0, t in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let mut params = EncoderParams::init(dims, &["dom-a".into(), "dom-b".into(), "idle".into()], 0).unwrap();
        params.weights.tokens.row_mut(2).assign(&ndarray::arr1(&t));
        let cfg = PretrainConfig { gamma, ..Default::default() };
        let (_, g) = pretrain_loss(&[(0, 0), (1, 3)], &inputs, &params, &cfg, 1.0).unwrap();
        for (gi, ti) in g.tokens.row(2).iter().zip(&t) {
            prop_assert_eq!(*gi, 2.0 * gamma * ti);
        }
    }
}

#[test]
fn batches_mix_domains_in_proportion() {
    let counts = [120usize, 60, 20];
    let total: usize = counts.iter().sum();
    let bs = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = [0f64; 3];
    for _ in 0..1000 {
        let batches = mixed_batches(&counts, bs, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), total);
        for &(g, _) in &batches[0] {
            seen[g] += 1.0;
        }
    }
    let draws = 1000.0 * bs as f64;
    let chi2: f64 = counts
        .iter()
        .zip(&seen)
        .map(|(&n, &o)| {
            let e = draws * n as f64 / total as f64;
            (o - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-squared with 2 degrees of freedom
    assert!(chi2 < 13.816, "chi2 = {chi2}, counts {seen:?}");
}
