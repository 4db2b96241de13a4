//! Knowledge-graph embedding with a relational graph convolution encoder
//! whose neighbor messages are conditioned on relations through a third-order
//! core tensor, optionally CP-compressed, scored by DistMult or TuckER and
//! evaluated under the filtered random-tie-break link-prediction protocol.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod kgdata;
pub mod model;
pub mod rgcn;
pub mod tensorcore;
pub mod training;

mod propagation;
mod real;

pub use crate::decoder::{score, score_all_targets, DecoderKind, DecoderParams};
pub use crate::encoder::{
    encode, encode_eval, layer_forward, Activation, DropoutRates, EmbeddingTables, EncoderLayer,
};
pub use crate::error::{Error, Result};
pub use crate::evaluation::{evaluate, filtered_rank, Direction, QueryRank, RankingReport};
pub use crate::kgdata::{
    add_reciprocals, load_dataset, sample_subgraph, KnowledgeGraph, Split, Subgraph, Triple,
    Vocab,
};
pub use crate::model::{
    count_parameters, CoreLayout, EncoderKind, EncoderStack, Model, ModelConfig, ParamCounts,
};
pub use crate::real::Real;
pub use crate::rgcn::{
    materialize_weight, rgcn_layer_forward, RelationWeightBank, RgcnLayer, WeightScheme,
};
pub use crate::tensorcore::{cp_reconstruct, n_mode_product, relation_transform, CoreTensor, Mode};
pub use crate::training::{
    bce_1n_loss, embedding_l2_penalty, gradient_check, lr_at, nt_xent_1b_loss, LossKind,
    StepStats, TrainConfig, Trainer,
};
