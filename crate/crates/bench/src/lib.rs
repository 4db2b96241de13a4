//! Shared fixtures for the criterion benchmarks: seeded random models,
//! subgraphs and score vectors at a few representative sizes.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgcn_core::{Activation, CoreTensor, EmbeddingTables, EncoderLayer, Subgraph, Triple};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f32> {
    Array1::from((0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>())
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f32> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

pub fn dense_core(rng: &mut ChaCha8Rng, d: usize) -> CoreTensor<f32> {
    CoreTensor::Dense(Array3::from_shape_fn((d, d, d), |_| {
        rng.random_range(-1.0..1.0)
    }))
}

pub fn cp_core(rng: &mut ChaCha8Rng, d: usize, n_b: usize) -> CoreTensor<f32> {
    CoreTensor::Cp {
        w1: random_mat(rng, n_b, d),
        w2: random_mat(rng, n_b, d),
        w3: random_mat(rng, n_b, d),
    }
}

pub fn layer(rng: &mut ChaCha8Rng, core: CoreTensor<f32>, d: usize) -> EncoderLayer<f32> {
    EncoderLayer {
        core,
        loop_weight: random_mat(rng, d, d),
        activation: Activation::Relu,
    }
}

/// Random subgraph over `n_entities` entities and `n_relations` relations.
pub fn random_subgraph(
    rng: &mut ChaCha8Rng,
    n_entities: usize,
    n_relations: usize,
    n_edges: usize,
) -> Subgraph {
    let triples: Vec<Triple> = (0..n_edges)
        .map(|_| {
            Triple::new(
                rng.random_range(0..n_entities),
                rng.random_range(0..n_relations),
                rng.random_range(0..n_entities),
            )
        })
        .collect();
    Subgraph::from_triples(n_entities, triples)
}

pub fn embeddings(
    rng: &mut ChaCha8Rng,
    n_entities: usize,
    n_relations: usize,
    d: usize,
) -> EmbeddingTables<f32> {
    EmbeddingTables {
        entity: random_mat(rng, n_entities, d),
        relation: random_mat(rng, n_relations, d),
    }
}
