//! Cross-module pipeline checks: train → checkpoint → evaluate on a small
//! synthetic graph, and the evaluator against a per-triple scoring oracle.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgcn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tgcn_core::kgdata::synthetic_cluster_triples;
use tgcn_core::{
    add_reciprocals, evaluate, score, Activation, CoreLayout, DecoderKind, EncoderKind,
    KnowledgeGraph, LossKind, Model, ModelConfig, Split, Subgraph, TrainConfig, Trainer,
};

fn small_kg() -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (train, valid, test) = synthetic_cluster_triples(24, 3, 4, 0.1, 0.1, &mut rng);
    add_reciprocals(KnowledgeGraph::from_named_triples(&train, &valid, &test).unwrap()).unwrap()
}

fn small_model(kg: &KnowledgeGraph, seed: u64) -> Model<f32> {
    let mc = ModelConfig {
        n_entities: kg.entities.len(),
        n_relations: kg.relations.len(),
        d: 8,
        n_layers: 2,
        encoder: EncoderKind::Tgcn,
        layout: CoreLayout::Cp,
        scheme: tgcn_core::WeightScheme::Full,
        n_b: 4,
        n_blocks: 1,
        decoder: DecoderKind::DistMult,
        decoder_dropout: 0.0,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Identity,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::init(mc, &mut rng).unwrap()
}

#[test]
fn train_checkpoint_evaluate_roundtrip() {
    let kg = small_kg();
    let model = small_model(&kg, 1);
    let config = TrainConfig {
        loss: LossKind::OneB,
        g_s: 32,
        lr: 0.01,
        reg_f: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config).unwrap();
    for _ in 0..100 {
        trainer.train_step(&kg).unwrap();
    }
    let before = evaluate(&trainer.model, &kg, Split::Test, 9).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tgcn");
    save_checkpoint(
        &path,
        &Checkpoint {
            run_config: Default::default(),
            entity_names: kg.entities.names().to_vec(),
            relation_names: kg.relations.names().to_vec(),
            model: trainer.model.clone(),
        },
    )
    .unwrap();
    let loaded: Checkpoint<f32> = load_checkpoint(&path).unwrap();
    let after = evaluate(&loaded.model, &kg, Split::Test, 9).unwrap();
    assert_eq!(before.mrr.to_bits(), after.mrr.to_bits());
    assert_eq!(before.n_queries, after.n_queries);
}

/// Evaluator ranks equal a per-query oracle that scores each candidate
/// triple individually through the public scorer.
#[test]
fn evaluate_matches_per_triple_scoring_oracle() {
    let kg = small_kg();
    let model = small_model(&kg, 2);
    let seed = 17;
    let report = evaluate(&model, &kg, Split::Valid, seed).unwrap();

    let full = Subgraph::full_train_graph(&kg);
    let h = model.encode_eval(&full).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = HashSet::new();
    for (qi, t) in kg.split(Split::Valid).iter().enumerate() {
        let e_r = model.embeddings.relation.row(t.relation);
        let scores: Vec<f32> = (0..kg.entities.len())
            .map(|c| score(&model.decoder, &h.row(t.source), &e_r, &h.row(c)).unwrap())
            .collect();
        let arr = ndarray::Array1::from(scores);
        let filter = kg.filter_set(t.source, t.relation).unwrap_or(&empty);
        let want =
            tgcn_core::filtered_rank(&arr.view(), t.target, filter, &mut rng).unwrap();
        assert_eq!(report.per_query[qi].rank, want, "query {qi}");
    }
}

#[test]
fn evaluation_on_empty_split_is_flagged() {
    let kg = add_reciprocals(
        KnowledgeGraph::from_named_triples(&[("a", "r", "b"), ("b", "r", "c")], &[], &[]).unwrap(),
    )
    .unwrap();
    let model = small_model(&kg, 3);
    let report = evaluate(&model, &kg, Split::Test, 0).unwrap();
    assert!(!report.is_valid);
    assert_eq!(report.n_queries, 0);
}
