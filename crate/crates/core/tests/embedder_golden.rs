use explainer_core::embedder::{Embedder, ReferenceEmbedder, DEFAULT_DIM};
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    text: String,
    dim: usize,
    nonzero: Vec<(usize, f64)>,
}

// Produced by tests/oracles/reference_embed.py, an independent implementation.
const GOLDEN: &str = include_str!("golden/embeddings.json");

#[test]
fn matches_independent_oracle_bit_for_bit() {
    let goldens: Vec<Golden> = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(goldens.len(), 5);
    let e = ReferenceEmbedder::new(DEFAULT_DIM).unwrap();
    for g in goldens {
        let v = e.embed(&g.text).unwrap();
        assert_eq!(v.dim(), g.dim);
        let mut expected = vec![0.0; g.dim];
        for (i, x) in &g.nonzero {
            expected[*i] = *x;
        }
        for (i, (got, want)) in v.values().iter().zip(&expected).enumerate() {
            assert_eq!(got.to_bits(), want.to_bits(), "{}: component {i}", g.text);
        }
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }
}
