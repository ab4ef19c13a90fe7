//! Seeded multi-domain stochastic-block-model graphs with planted class
//! signal in features, texts and block structure.

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphParts};
use crate::error::{param, Result};

const TOPICS: &[&str] = &[
    "neural networks deep learning",
    "protein folding enzymes",
    "graph coloring combinatorics",
    "market pricing auctions",
    "quantum optics photons",
    "soil erosion rainfall",
    "compiler optimization registers",
    "galaxy clusters redshift",
    "vaccine trials immunity",
    "robot grasping manipulation",
    "cryptographic hashing ciphers",
    "ocean currents salinity",
];

const FILLER: &[&str] = &[
    "results", "method", "approach", "analysis", "framework", "study", "data", "model",
    "evaluation", "design", "system", "theory", "experiment", "baseline", "measure", "setting",
    "sample", "process", "survey", "report", "review", "case", "novel", "simple", "robust",
    "general", "large", "small", "recent", "classic", "open", "prior",
];

/// Generator parameters. Every output bit is a function of this value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SyntheticSpec {
    pub domains: usize,
    pub datasets_per_domain: usize,
    pub classes_per_domain: usize,
    pub nodes_per_class: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    /// Per-class multiplier on `intra_p`: class `c` uses `intra_p * (1 + step * c)`.
    pub class_density_step: f64,
    pub feat_dim: usize,
    pub class_separation: f64,
    /// Probability that a node's text comes from its own class template rather
    /// than from a uniformly drawn class.
    pub text_signal: f64,
    /// One template per class; `{domain}`, `{node}` and `{noise}` are expanded.
    /// Empty means built-in topic templates.
    pub text_templates: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            domains: 2,
            datasets_per_domain: 1,
            classes_per_domain: 3,
            nodes_per_class: 30,
            intra_p: 0.2,
            inter_p: 0.02,
            class_density_step: 0.0,
            feat_dim: 32,
            class_separation: 2.0,
            text_signal: 1.0,
            text_templates: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.datasets_per_domain == 0 {
            return Err(param("domains and datasets_per_domain must be positive"));
        }
        if self.classes_per_domain == 0 || self.nodes_per_class == 0 || self.feat_dim == 0 {
            return Err(param("class, node and feature counts must be positive"));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p), ("text_signal", self.text_signal)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(param(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if self.intra_p < self.inter_p {
            return Err(param(format!(
                "intra_p ({}) must not be below inter_p ({})",
                self.intra_p, self.inter_p
            )));
        }
        if !(self.class_separation >= 0.0) || !(self.class_density_step >= 0.0) {
            return Err(param("class_separation and class_density_step must be >= 0"));
        }
        if self.class_separation > 0.0 && self.classes_per_domain > self.feat_dim {
            return Err(param("orthogonal class means need classes_per_domain <= feat_dim"));
        }
        if !self.text_templates.is_empty() && self.text_templates.len() < self.classes_per_domain {
            return Err(param("need one text template per class"));
        }
        if self.text_templates.is_empty() && self.classes_per_domain > TOPICS.len() {
            return Err(param(format!("built-in templates cover at most {} classes", TOPICS.len())));
        }
        Ok(())
    }

    fn template(&self, class: usize) -> String {
        match self.text_templates.get(class) {
            Some(t) => t.clone(),
            None => format!("Paper about {}. Node {{node}} in {{domain}} mentions {{noise}}.", TOPICS[class]),
        }
    }

    pub fn dataset_id(&self, domain: usize, dataset: usize) -> String {
        if self.datasets_per_domain == 1 {
            format!("synth-{domain}")
        } else {
            format!("synth-{domain}-{dataset}")
        }
    }

    pub fn domain_id(domain: usize) -> String {
        format!("domain-{domain}")
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Graph>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.domains * spec.datasets_per_domain);
    for domain in 0..spec.domains {
        for dataset in 0..spec.datasets_per_domain {
            out.push(generate_one(spec, domain, dataset, &mut rng)?);
        }
    }
    Ok(out)
}

fn generate_one(spec: &SyntheticSpec, domain: usize, dataset: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let c = spec.classes_per_domain;
    let n = c * spec.nodes_per_class;
    let labels: Vec<usize> = (0..n).map(|v| v / spec.nodes_per_class).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                (spec.intra_p * (1.0 + spec.class_density_step * labels[u] as f64)).min(1.0)
            } else {
                spec.inter_p
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let means = orthogonal_means(c, spec.feat_dim, spec.class_separation, rng);
    let mut features = Array2::zeros((n, spec.feat_dim));
    for v in 0..n {
        let mut row = features.row_mut(v);
        for j in 0..spec.feat_dim {
            let z: f64 = rng.sample(StandardNormal);
            row[j] = means[[labels[v], j]] + z;
        }
    }

    let domain_name = format!("d{domain}");
    let texts = (0..n)
        .map(|v| {
            let class = if rng.random::<f64>() < spec.text_signal {
                labels[v]
            } else {
                rng.random_range(0..c)
            };
            let noise: Vec<&str> = (0..3).map(|_| *FILLER.choose(rng).unwrap()).collect();
            spec.template(class)
                .replace("{domain}", &domain_name)
                .replace("{node}", &v.to_string())
                .replace("{noise}", &noise.join(" "))
        })
        .collect();

    Graph::new(GraphParts {
        dataset_id: spec.dataset_id(domain, dataset),
        domain_id: SyntheticSpec::domain_id(domain),
        node_count: n,
        edges,
        features,
        texts: Some(texts),
        labels: Some(labels),
    })
}

/// `count` mutually orthogonal rows of norm `scale` (Gram-Schmidt on Gaussians).
fn orthogonal_means(count: usize, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((count, dim));
    if scale == 0.0 {
        return out;
    }
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let proj = v.dot(b);
            v.scaled_add(-proj, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    for (i, b) in basis.iter().enumerate() {
        out.row_mut(i).assign(&(b * scale));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::bundle::bundle_json;

    #[test]
    fn counts() {
        let spec = SyntheticSpec {
            domains: 2,
            classes_per_domain: 3,
            nodes_per_class: 30,
            intra_p: 0.2,
            inter_p: 0.02,
            ..Default::default()
        };
        let gs = generate_synthetic(&spec).unwrap();
        assert_eq!(gs.len(), 2);
        for g in &gs {
            assert_eq!(g.node_count(), 90);
            assert_eq!(g.num_classes(), 3);
            assert_eq!(g.texts().unwrap().len(), 90);
        }
        assert_ne!(gs[0].domain_id(), gs[1].domain_id());
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SyntheticSpec { seed: 42, ..Default::default() };
        let a = bundle_json(&generate_synthetic(&spec).unwrap());
        let b = bundle_json(&generate_synthetic(&spec).unwrap());
        assert_eq!(a, b);
        let other = bundle_json(&generate_synthetic(&SyntheticSpec { seed: 43, ..spec }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn zero_separation_means_are_zero() {
        let spec = SyntheticSpec {
            class_separation: 0.0,
            nodes_per_class: 400,
            domains: 1,
            ..Default::default()
        };
        let g = &generate_synthetic(&spec).unwrap()[0];
        let labels = g.labels().unwrap();
        // class-conditional means are pure noise averages: |mean| ~ 1/sqrt(400)
        for c in 0..3 {
            let rows: Vec<usize> = (0..g.node_count()).filter(|&v| labels[v] == c).collect();
            let m = g.features().select(ndarray::Axis(0), &rows).mean_axis(ndarray::Axis(0)).unwrap();
            assert!(m.iter().all(|x| x.abs() < 0.25), "{m}");
        }
    }

    #[test]
    fn separated_means_are_orthogonal_with_given_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = orthogonal_means(4, 8, 2.0, &mut rng);
        let gram = m.dot(&m.t());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec { intra_p: 0.01, inter_p: 0.1, ..Default::default() }.validate().is_err());
        assert!(SyntheticSpec { nodes_per_class: 0, ..Default::default() }.validate().is_err());
        assert!(SyntheticSpec { text_templates: vec!["x".into()], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn texts_carry_topic_when_signal_is_full() {
        let g = &generate_synthetic(&SyntheticSpec::default()).unwrap()[0];
        let labels = g.labels().unwrap();
        for v in 0..g.node_count() {
            assert!(g.text(v).contains(TOPICS[labels[v]]), "{}", g.text(v));
        }
    }
}
