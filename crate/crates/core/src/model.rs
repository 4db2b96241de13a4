//! The trainable model: embedding tables, an encoder stack (TGCN or the
//! R-GCN baseline), and decoder parameters, with uniform fan-scaled
//! initialization, flat parameter enumeration for the optimizer and the
//! finite-difference harness, and free-parameter accounting.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderKind, DecoderParams};
use crate::encoder::{self, Activation, EmbeddingTables, EncoderLayer};
use crate::error::{Error, Result};
use crate::kgdata::Subgraph;
use crate::real::Real;
use crate::rgcn::{RelationWeightBank, RgcnLayer, WeightScheme};
use crate::tensorcore::CoreTensor;

/// Storage layout of the TGCN core tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreLayout {
    Dense,
    Cp,
}

/// Which encoder family the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Tgcn,
    Rgcn,
}

/// Structural description of a model, sufficient to rebuild its shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_entities: usize,
    /// Relation count after reciprocal augmentation.
    pub n_relations: usize,
    pub d: usize,
    pub n_layers: usize,
    pub encoder: EncoderKind,
    /// TGCN core layout.
    pub layout: CoreLayout,
    /// R-GCN relation-weight scheme.
    pub scheme: WeightScheme,
    /// CP rank / number of bases (TGCN CP, R-GCN basis and CP schemes).
    pub n_b: usize,
    /// Block count for the R-GCN block scheme; must divide `d`.
    pub n_blocks: usize,
    pub decoder: DecoderKind,
    pub decoder_dropout: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities == 0 || self.n_relations == 0 {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        if self.d == 0 || self.n_layers == 0 {
            return Err(Error::Config("d and n_layers must be positive".into()));
        }
        if self.layout == CoreLayout::Cp && self.n_b == 0 {
            return Err(Error::Config("CP layout requires n_b >= 1".into()));
        }
        if self.encoder == EncoderKind::Rgcn {
            match self.scheme {
                WeightScheme::Basis | WeightScheme::Cp if self.n_b == 0 => {
                    return Err(Error::Config("scheme requires n_b >= 1".into()));
                }
                WeightScheme::Block if self.n_blocks == 0 || !self.d.is_multiple_of(self.n_blocks) => {
                    return Err(Error::Config(format!(
                        "block count {} must divide d={}",
                        self.n_blocks, self.d
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Activation of layer `l`: the configured hidden nonlinearity on all
    /// layers but the last, the output activation on the last.
    fn activation_at(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Encoder layer stack, one variant per encoder family.
#[derive(Debug, Clone)]
pub enum EncoderStack<A> {
    Tgcn(Vec<EncoderLayer<A>>),
    Rgcn(Vec<RgcnLayer<A>>),
}

impl<A: Real> EncoderStack<A> {
    pub fn n_layers(&self) -> usize {
        match self {
            EncoderStack::Tgcn(l) => l.len(),
            EncoderStack::Rgcn(l) => l.len(),
        }
    }
}

/// Embedding tables, encoder stack and decoder parameters.
#[derive(Debug, Clone)]
pub struct Model<A> {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTables<A>,
    pub encoder: EncoderStack<A>,
    pub decoder: DecoderParams<A>,
}

fn uniform<A: Real, R: Rng>(rng: &mut R, shape: (usize, usize), fan: usize) -> Array2<A> {
    let a = 1.0 / (fan.max(1) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| A::from_f64_exact(rng.random_range(-a..a)))
}

fn uniform3<A: Real, R: Rng>(
    rng: &mut R,
    shape: (usize, usize, usize),
    fan: usize,
) -> Array3<A> {
    let a = 1.0 / (fan.max(1) as f64).sqrt();
    Array3::from_shape_fn(shape, |_| A::from_f64_exact(rng.random_range(-a..a)))
}

impl<A: Real> Model<A> {
    /// Initializes all tensors from a zero-mean uniform law scaled by the
    /// inverse square root of each tensor's contracted fan.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let embeddings = EmbeddingTables {
            entity: uniform(rng, (config.n_entities, d), d),
            relation: uniform(rng, (config.n_relations, d), d),
        };
        let encoder = match config.encoder {
            EncoderKind::Tgcn => EncoderStack::Tgcn(
                (0..config.n_layers)
                    .map(|l| EncoderLayer {
                        core: match config.layout {
                            CoreLayout::Dense => {
                                CoreTensor::Dense(uniform3(rng, (d, d, d), d * d))
                            }
                            CoreLayout::Cp => CoreTensor::Cp {
                                w1: uniform(rng, (config.n_b, d), d),
                                w2: uniform(rng, (config.n_b, d), d),
                                w3: uniform(rng, (config.n_b, d), config.n_b),
                            },
                        },
                        loop_weight: uniform(rng, (d, d), d),
                        activation: config.activation_at(l),
                    })
                    .collect(),
            ),
            EncoderKind::Rgcn => EncoderStack::Rgcn(
                (0..config.n_layers)
                    .map(|l| RgcnLayer {
                        bank: match config.scheme {
                            WeightScheme::Full => RelationWeightBank::Full {
                                weights: (0..config.n_relations)
                                    .map(|_| uniform(rng, (d, d), d))
                                    .collect(),
                            },
                            WeightScheme::Basis => RelationWeightBank::Basis {
                                bases: (0..config.n_b)
                                    .map(|_| uniform(rng, (d, d), d))
                                    .collect(),
                                coefficients: uniform(
                                    rng,
                                    (config.n_relations, config.n_b),
                                    config.n_b,
                                ),
                            },
                            WeightScheme::Block => {
                                let k = d / config.n_blocks;
                                RelationWeightBank::Block {
                                    blocks: (0..config.n_relations)
                                        .map(|_| {
                                            let a = 1.0 / (k as f64).sqrt();
                                            Array3::from_shape_fn(
                                                (config.n_blocks, k, k),
                                                |_| {
                                                    A::from_f64_exact(
                                                        rng.random_range(-a..a),
                                                    )
                                                },
                                            )
                                        })
                                        .collect(),
                                }
                            }
                            WeightScheme::Cp => RelationWeightBank::Cp {
                                u1: uniform(rng, (config.n_b, config.n_relations), config.n_b),
                                u2: uniform(rng, (config.n_b, d), d),
                                u3: uniform(rng, (config.n_b, d), config.n_b),
                            },
                        },
                        loop_weight: uniform(rng, (d, d), d),
                        activation: config.activation_at(l),
                    })
                    .collect(),
            ),
        };
        let decoder = match config.decoder {
            DecoderKind::DistMult => DecoderParams::DistMult,
            DecoderKind::Tucker => DecoderParams::Tucker {
                core: uniform3(rng, (d, d, d), d * d),
                dropout: config.decoder_dropout,
            },
        };
        Ok(Model {
            config,
            embeddings,
            encoder,
            decoder,
        })
    }

    /// Same shapes, all parameter entries zero. Used as the gradient
    /// container and for optimizer state.
    pub fn zeros_like(&self) -> Self {
        let mut copy = self.clone();
        for (_, slice) in copy.param_slices_mut() {
            for x in slice {
                *x = A::zero();
            }
        }
        copy
    }

    /// All-zero model of the given structure (checkpoint loading fills it).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Ok(Model::init(config, &mut rng)?.zeros_like())
    }

    /// Flat views of every parameter tensor, in a stable order shared with
    /// [`Model::param_slices_mut`].
    pub fn param_slices(&self) -> Vec<(String, &[A])> {
        let mut out: Vec<(String, &[A])> = vec![
            ("entity".into(), self.embeddings.entity.as_slice().unwrap()),
            (
                "relation".into(),
                self.embeddings.relation.as_slice().unwrap(),
            ),
        ];
        match &self.encoder {
            EncoderStack::Tgcn(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    match &layer.core {
                        CoreTensor::Dense(t) => {
                            out.push((format!("layer{l}.core"), t.as_slice().unwrap()));
                        }
                        CoreTensor::Cp { w1, w2, w3 } => {
                            out.push((format!("layer{l}.core.w1"), w1.as_slice().unwrap()));
                            out.push((format!("layer{l}.core.w2"), w2.as_slice().unwrap()));
                            out.push((format!("layer{l}.core.w3"), w3.as_slice().unwrap()));
                        }
                    }
                    out.push((format!("layer{l}.loop"), layer.loop_weight.as_slice().unwrap()));
                }
            }
            EncoderStack::Rgcn(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    match &layer.bank {
                        RelationWeightBank::Full { weights } => {
                            for (r, w) in weights.iter().enumerate() {
                                out.push((format!("layer{l}.w{r}"), w.as_slice().unwrap()));
                            }
                        }
                        RelationWeightBank::Basis {
                            bases,
                            coefficients,
                        } => {
                            for (b, basis) in bases.iter().enumerate() {
                                out.push((format!("layer{l}.basis{b}"), basis.as_slice().unwrap()));
                            }
                            out.push((
                                format!("layer{l}.coeff"),
                                coefficients.as_slice().unwrap(),
                            ));
                        }
                        RelationWeightBank::Block { blocks } => {
                            for (r, b) in blocks.iter().enumerate() {
                                out.push((format!("layer{l}.blocks{r}"), b.as_slice().unwrap()));
                            }
                        }
                        RelationWeightBank::Cp { u1, u2, u3 } => {
                            out.push((format!("layer{l}.bank.u1"), u1.as_slice().unwrap()));
                            out.push((format!("layer{l}.bank.u2"), u2.as_slice().unwrap()));
                            out.push((format!("layer{l}.bank.u3"), u3.as_slice().unwrap()));
                        }
                    }
                    out.push((format!("layer{l}.loop"), layer.loop_weight.as_slice().unwrap()));
                }
            }
        }
        if let DecoderParams::Tucker { core, .. } = &self.decoder {
            out.push(("decoder.core".into(), core.as_slice().unwrap()));
        }
        out
    }

    /// Mutable flat views of every parameter tensor; see [`Model::param_slices`].
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [A])> {
        let mut out: Vec<(String, &mut [A])> = vec![
            (
                "entity".into(),
                self.embeddings.entity.as_slice_mut().unwrap(),
            ),
            (
                "relation".into(),
                self.embeddings.relation.as_slice_mut().unwrap(),
            ),
        ];
        match &mut self.encoder {
            EncoderStack::Tgcn(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    match &mut layer.core {
                        CoreTensor::Dense(t) => {
                            out.push((format!("layer{l}.core"), t.as_slice_mut().unwrap()));
                        }
                        CoreTensor::Cp { w1, w2, w3 } => {
                            out.push((format!("layer{l}.core.w1"), w1.as_slice_mut().unwrap()));
                            out.push((format!("layer{l}.core.w2"), w2.as_slice_mut().unwrap()));
                            out.push((format!("layer{l}.core.w3"), w3.as_slice_mut().unwrap()));
                        }
                    }
                    out.push((
                        format!("layer{l}.loop"),
                        layer.loop_weight.as_slice_mut().unwrap(),
                    ));
                }
            }
            EncoderStack::Rgcn(layers) => {
                for (l, layer) in layers.iter_mut().enumerate() {
                    match &mut layer.bank {
                        RelationWeightBank::Full { weights } => {
                            for (r, w) in weights.iter_mut().enumerate() {
                                out.push((format!("layer{l}.w{r}"), w.as_slice_mut().unwrap()));
                            }
                        }
                        RelationWeightBank::Basis {
                            bases,
                            coefficients,
                        } => {
                            for (b, basis) in bases.iter_mut().enumerate() {
                                out.push((
                                    format!("layer{l}.basis{b}"),
                                    basis.as_slice_mut().unwrap(),
                                ));
                            }
                            out.push((
                                format!("layer{l}.coeff"),
                                coefficients.as_slice_mut().unwrap(),
                            ));
                        }
                        RelationWeightBank::Block { blocks } => {
                            for (r, b) in blocks.iter_mut().enumerate() {
                                out.push((
                                    format!("layer{l}.blocks{r}"),
                                    b.as_slice_mut().unwrap(),
                                ));
                            }
                        }
                        RelationWeightBank::Cp { u1, u2, u3 } => {
                            out.push((format!("layer{l}.bank.u1"), u1.as_slice_mut().unwrap()));
                            out.push((format!("layer{l}.bank.u2"), u2.as_slice_mut().unwrap()));
                            out.push((format!("layer{l}.bank.u3"), u3.as_slice_mut().unwrap()));
                        }
                    }
                    out.push((
                        format!("layer{l}.loop"),
                        layer.loop_weight.as_slice_mut().unwrap(),
                    ));
                }
            }
        }
        if let DecoderParams::Tucker { core, .. } = &mut self.decoder {
            out.push(("decoder.core".into(), core.as_slice_mut().unwrap()));
        }
        out
    }

    /// Evaluation-time forward over a subgraph (no dropout), one output row
    /// per entity id.
    pub fn encode_eval(&self, sub: &Subgraph) -> Result<Array2<A>> {
        match &self.encoder {
            EncoderStack::Tgcn(layers) => encoder::encode_eval(&self.embeddings, layers, sub),
            EncoderStack::Rgcn(layers) => {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                let (h, _) = crate::rgcn::forward_rgcn(
                    &self.embeddings,
                    layers,
                    sub,
                    crate::propagation::Scope::all(sub.in_edges.len()),
                    &crate::encoder::DropoutRates::zeros(layers.len()),
                    false,
                    &mut rng,
                )?;
                Ok(h)
            }
        }
    }
}

/// Free-parameter counts, split by embedding vs. everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    /// Nonembedding free parameters (encoder + decoder).
    pub nfp: usize,
    /// Embedding free parameters `(|𝒱| + |ℛ_aug|)·d`.
    pub efp: usize,
    /// Encoder-only nonembedding free parameters.
    pub encoder_nfp: usize,
}

impl ParamCounts {
    pub fn nfp_millions(&self) -> f64 {
        round2(self.nfp as f64 / 1e6)
    }

    pub fn efp_millions(&self) -> f64 {
        round2(self.efp as f64 / 1e6)
    }

    pub fn encoder_nfp_millions(&self) -> f64 {
        round2(self.encoder_nfp as f64 / 1e6)
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Counts free parameters. TGCN layer counts include core and loop weight;
/// R-GCN layer counts cover the relation banks only, the convention the
/// baseline's published tallies follow.
pub fn count_parameters<A: Real>(model: &Model<A>) -> ParamCounts {
    let efp = model.embeddings.param_count();
    let encoder_nfp = match &model.encoder {
        EncoderStack::Tgcn(layers) => layers.iter().map(|l| l.param_count()).sum(),
        EncoderStack::Rgcn(layers) => layers.iter().map(|l| l.bank_param_count()).sum(),
    };
    ParamCounts {
        nfp: encoder_nfp + model.decoder.param_count(),
        efp,
        encoder_nfp,
    }
}
