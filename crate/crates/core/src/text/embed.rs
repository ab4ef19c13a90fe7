use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{param, validation, Error, Result};
use crate::io;

/// Deterministic text-to-vector map.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Signed feature hashing over lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

pub fn hashing_embedder(dim: usize, seed: u64) -> Result<HashingEmbedder> {
    if dim < 8 {
        return Err(param(format!("hashing embedder dim {dim} must be >= 8")));
    }
    Ok(HashingEmbedder { dim, seed })
}

impl HashingEmbedder {
    fn token_hash(&self, token: &str) -> u64 {
        // FNV-1a, seeded through the offset basis, then a splitmix64 finalizer
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^ (h >> 31)
    }

    /// Unnormalized bucket counts. If the signs cancel everywhere while the
    /// text has tokens, unsigned counts are returned instead.
    pub fn raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut unsigned = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = self.token_hash(tok);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
            unsigned[bucket] += 1.0;
        }
        if v.iter().all(|&x| x == 0.0) {
            return unsigned;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = self.raw(text);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Lookup table loaded from `{"text": ..., "vec": [...]}` lines.
#[derive(Debug, Clone)]
pub struct ExternalEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingLine {
    text: String,
    vec: Vec<f64>,
}

pub fn load_external_embeddings(path: &Path, dim: usize) -> Result<ExternalEmbedder> {
    let body = io::read_to_string(path)?;
    parse_external_embeddings(&body, dim, &path.display().to_string())
}

pub fn parse_external_embeddings(body: &str, dim: usize, context: &str) -> Result<ExternalEmbedder> {
    let mut table = HashMap::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine =
            serde_json::from_str(line).map_err(|e| Error::parse(format!("{context} line {}", i + 1), e))?;
        if rec.vec.len() != dim {
            return Err(validation(format!(
                "{context} line {}: vector length {} does not match dim {dim}",
                i + 1,
                rec.vec.len()
            )));
        }
        table.insert(rec.text, rec.vec);
    }
    Ok(ExternalEmbedder { dim, table })
}

impl Embedder for ExternalEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.table.get(text).cloned().ok_or_else(|| {
            let prefix: String = text.chars().take(40).collect();
            Error::Lookup(format!("no external embedding for text starting with {prefix:?}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero() {
        let e = hashing_embedder(16, 0).unwrap();
        assert!(e.embed("").unwrap().iter().all(|&x| x == 0.0));
        assert!(hashing_embedder(4, 0).is_err());
    }

    #[test]
    fn cancelling_tokens_fall_back_to_counts() {
        let e = hashing_embedder(8, 0).unwrap();
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let pair = words
            .iter()
            .flat_map(|a| words.iter().map(move |b| (a, b)))
            .find(|(a, b)| a != b && e.raw(a).iter().zip(e.raw(b)).all(|(x, y)| x + y == 0.0))
            .expect("some pair cancels in 8 buckets");
        let v = e.embed(&format!("{} {}", pair.0, pair.1)).unwrap();
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_token_is_collinear() {
        let e = hashing_embedder(32, 3).unwrap();
        let once = e.raw("graph");
        let twice = e.raw("graph graph");
        assert_eq!(twice, once.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        assert_eq!(e.embed("graph graph").unwrap(), e.embed("graph").unwrap());
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let e = hashing_embedder(64, 1).unwrap();
        assert_eq!(e.embed("Neural, NETWORKS!").unwrap(), e.embed("neural networks").unwrap());
    }

    #[test]
    fn shared_words_are_closer() {
        let e = hashing_embedder(128, 0).unwrap();
        let a = e.embed("neural networks paper").unwrap();
        let b = e.embed("neural networks article").unwrap();
        let c = e.embed("protein folding assay").unwrap();
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn seed_changes_the_map() {
        let a = hashing_embedder(64, 1).unwrap().embed("alpha beta gamma").unwrap();
        let b = hashing_embedder(64, 2).unwrap().embed("alpha beta gamma").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn external_lookup() {
        let e = parse_external_embeddings("{\"text\":\"a\",\"vec\":[1,0]}\n", 2, "mem").unwrap();
        assert_eq!(e.embed("a").unwrap(), vec![1.0, 0.0]);
        assert!(matches!(e.embed("b"), Err(Error::Lookup(_))));
        let err = parse_external_embeddings("{\"text\":\"a\",\"vec\":[1,0,0]}\n", 2, "mem").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
