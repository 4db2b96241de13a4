//! The TGCN propagation model: a stack of layers that update entity
//! representations by relation-conditioned neighbor messages
//! `f(e_r, h_u) = W_c ×₁ h_u ×₂ e_r`, normalized by per-relation in-degree,
//! plus a self-loop transform `W_0·h_v`, with the four encoder dropout sites
//! (input, one per hidden layer, output).
//!
//! Messages are computed relation-grouped: for a dense core the slice
//! `M_r = W_c ×₂ e_r` is contracted once per relation, for a CP core the
//! factor product `P = H·W_2ᵀ` is shared across relations. A matching
//! hand-derived backward pass accumulates gradients for all layer
//! parameters and both embedding tables.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::kgdata::Subgraph;
use crate::propagation::{
    dropout_mask, gather_rows, group_edges, outer_add, scatter_add_rows, RelGroup, Scope,
};
use crate::real::Real;
use crate::tensorcore::{n_mode_product, CoreTensor, Mode};

pub use crate::propagation::Activation;

/// Entity and relation embedding tables; row `v` of `entity` is `e_v`
/// (the layer-0 representation), row `r` of `relation` is `e_r`.
#[derive(Debug, Clone)]
pub struct EmbeddingTables<A> {
    pub entity: Array2<A>,
    pub relation: Array2<A>,
}

impl<A: Real> EmbeddingTables<A> {
    pub fn zeros(n_entities: usize, n_relations: usize, d_e: usize, d_r: usize) -> Self {
        EmbeddingTables {
            entity: Array2::zeros((n_entities, d_e)),
            relation: Array2::zeros((n_relations, d_r)),
        }
    }

    /// Total embedding free parameters.
    pub fn param_count(&self) -> usize {
        self.entity.len() + self.relation.len()
    }
}

/// One encoder layer: relation-conditioning core, loop weight, activation.
#[derive(Debug, Clone)]
pub struct EncoderLayer<A> {
    pub core: CoreTensor<A>,
    pub loop_weight: Array2<A>,
    pub activation: Activation,
}

impl<A: Real> EncoderLayer<A> {
    /// Free parameters of this layer (core plus loop weight).
    pub fn param_count(&self) -> usize {
        self.core.param_count() + self.loop_weight.len()
    }
}

/// Dropout rates for the encoder sites: `input` on the layer-0 rows,
/// `hidden[l]` on layer `l`'s pre-activation aggregate, `output` on the
/// final representations. All inverted dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutRates {
    pub input: f64,
    pub hidden: Vec<f64>,
    pub output: f64,
}

impl DropoutRates {
    pub fn zeros(n_layers: usize) -> Self {
        DropoutRates {
            input: 0.0,
            hidden: vec![0.0; n_layers],
            output: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (site, rate) in std::iter::once(("dr_i", self.input))
            .chain(
                self.hidden
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| (if i == 0 { "dr_h1" } else { "dr_h2" }, r)),
            )
            .chain(std::iter::once(("dr_o", self.output)))
        {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "dropout rate {site}={rate} outside [0,1)"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer saved state for the backward pass.
pub(crate) struct LayerTape<A> {
    /// Layer input (scope rows × d_in), after the previous dropout site.
    pub input: Array2<A>,
    /// Aggregate after this layer's dropout (activation derivative site).
    pub post_dropout: Array2<A>,
    pub mask: Option<Array2<A>>,
    /// CP factor product `input · W2ᵀ`, saved to avoid recomputation.
    pub cp_p: Option<Array2<A>>,
}

pub(crate) struct EncoderTape<A> {
    pub scope: Scope,
    pub groups: Vec<RelGroup>,
    pub input_mask: Option<Array2<A>>,
    pub output_mask: Option<Array2<A>>,
    pub layers: Vec<LayerTape<A>>,
}

fn check_layer_shapes<A: Real>(
    layer: &EncoderLayer<A>,
    d_in: usize,
    relation_table: &ArrayView2<A>,
) -> Result<(usize, usize)> {
    let (d_e, d_r, d_o) = layer.core.dims();
    if d_in != d_e {
        return Err(Error::shape(
            "layer_forward",
            format!("input dimension {d_e}"),
            format!("{d_in}"),
        ));
    }
    if relation_table.ncols() != d_r {
        return Err(Error::shape(
            "layer_forward",
            format!("relation embedding dimension {d_r}"),
            format!("{}", relation_table.ncols()),
        ));
    }
    let (lo, li) = (layer.loop_weight.nrows(), layer.loop_weight.ncols());
    if (lo, li) != (d_o, d_e) {
        return Err(Error::shape(
            "layer_forward",
            format!("loop weight {d_o}×{d_e}"),
            format!("{lo}×{li}"),
        ));
    }
    Ok((d_e, d_o))
}

/// One layer over scope rows. Returns the activated output and the tape.
fn layer_forward_scoped<A: Real, R: Rng>(
    layer: &EncoderLayer<A>,
    groups: &[RelGroup],
    h: Array2<A>,
    relation_table: &ArrayView2<A>,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<A>, LayerTape<A>)> {
    let (_, d_o) = check_layer_shapes(layer, h.ncols(), relation_table)?;
    let n = h.nrows();

    // Self-loop transform for every in-scope entity.
    let mut agg = h.dot(&layer.loop_weight.t());
    debug_assert_eq!(agg.dim(), (n, d_o));

    // Relation-grouped neighbor messages.
    let cp_p = match &layer.core {
        CoreTensor::Cp { w2, .. } => Some(h.dot(&w2.t())),
        CoreTensor::Dense(_) => None,
    };
    for g in groups {
        if g.relation >= relation_table.nrows() {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: g.relation,
                len: relation_table.nrows(),
            });
        }
        let e_r = relation_table.row(g.relation);
        let messages = match &layer.core {
            CoreTensor::Dense(core) => {
                let m_r = n_mode_product(&core.view(), &e_r, Mode::Two)?;
                gather_rows(&h.view(), &g.src_rows).dot(&m_r)
            }
            CoreTensor::Cp { w1, w3, .. } => {
                let q_r = w1.dot(&e_r);
                let mut z = gather_rows(&cp_p.as_ref().unwrap().view(), &g.src_rows);
                z.rows_mut().into_iter().for_each(|mut row| {
                    row.zip_mut_with(&q_r, |a, &b| *a *= b);
                });
                z.dot(w3)
            }
        };
        scatter_add_rows(&mut agg, &g.dst_rows, &messages.view(), &g.weights);
    }

    // Dropout on the full pre-activation aggregate, then the nonlinearity.
    let mask = if training && dropout > 0.0 {
        Some(dropout_mask::<A, _>((n, d_o), dropout, rng))
    } else {
        None
    };
    let post_dropout = match &mask {
        Some(m) => &agg * m,
        None => agg,
    };
    let out = post_dropout.mapv(|x| layer.activation.apply(x));
    Ok((
        out,
        LayerTape {
            input: h,
            post_dropout,
            mask,
            cp_p,
        },
    ))
}

/// Applies one encoder layer over a subgraph. `h` holds one row per entity
/// id of the full vocabulary; entities with no in-edges receive only the
/// self-loop transform.
pub fn layer_forward<A: Real, R: Rng>(
    layer: &EncoderLayer<A>,
    sub: &Subgraph,
    h: &ArrayView2<A>,
    relation_table: &ArrayView2<A>,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Array2<A>> {
    if h.nrows() != sub.in_edges.len() {
        return Err(Error::shape(
            "layer_forward",
            format!("one row per entity ({})", sub.in_edges.len()),
            format!("{} rows", h.nrows()),
        ));
    }
    let scope = Scope::all(sub.in_edges.len());
    let groups = group_edges(sub, &scope);
    let (out, _) = layer_forward_scoped(
        layer,
        &groups,
        h.to_owned(),
        relation_table,
        dropout,
        training,
        rng,
    )?;
    Ok(out)
}

/// Full encoder forward over `scope`, keeping the tape for backprop.
pub(crate) fn forward_tgcn<A: Real, R: Rng>(
    embeddings: &EmbeddingTables<A>,
    layers: &[EncoderLayer<A>],
    sub: &Subgraph,
    scope: Scope,
    rates: &DropoutRates,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<A>, EncoderTape<A>)> {
    rates.validate()?;
    if rates.hidden.len() < layers.len() {
        return Err(Error::Config(format!(
            "{} hidden dropout rates for {} layers",
            rates.hidden.len(),
            layers.len()
        )));
    }
    let groups = group_edges(sub, &scope);

    let mut h = gather_rows(&embeddings.entity.view(), &scope.rows);
    let input_mask = if training && rates.input > 0.0 {
        let m = dropout_mask::<A, _>(h.dim(), rates.input, rng);
        h = &h * &m;
        Some(m)
    } else {
        None
    };

    let mut layer_tapes = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let (out, tape) = layer_forward_scoped(
            layer,
            &groups,
            h,
            &embeddings.relation.view(),
            rates.hidden[l],
            training,
            rng,
        )?;
        h = out;
        layer_tapes.push(tape);
    }

    let output_mask = if training && rates.output > 0.0 {
        let m = dropout_mask::<A, _>(h.dim(), rates.output, rng);
        h = &h * &m;
        Some(m)
    } else {
        None
    };

    Ok((
        h,
        EncoderTape {
            scope,
            groups,
            input_mask,
            output_mask,
            layers: layer_tapes,
        },
    ))
}

/// Backward through the encoder. `grad_out` is the loss gradient at the
/// returned representations; parameter gradients are accumulated into
/// `grad_layers` / `grad_embeddings` (same shapes as the model).
pub(crate) fn backward_tgcn<A: Real>(
    layers: &[EncoderLayer<A>],
    embeddings: &EmbeddingTables<A>,
    tape: &EncoderTape<A>,
    mut grad_out: Array2<A>,
    grad_layers: &mut [EncoderLayer<A>],
    grad_embeddings: &mut EmbeddingTables<A>,
) -> Result<()> {
    if let Some(m) = &tape.output_mask {
        grad_out = &grad_out * m;
    }

    let mut grad_h = grad_out;
    for (l, layer) in layers.iter().enumerate().rev() {
        let lt = &tape.layers[l];
        // Through the activation, then the dropout mask.
        let mut g_pre = Zip::from(&grad_h)
            .and(&lt.post_dropout)
            .map_collect(|&g, &pre| g * layer.activation.derivative(pre));
        if let Some(m) = &lt.mask {
            g_pre = &g_pre * m;
        }

        // Self-loop: agg += input · W0ᵀ.
        let gl = &mut grad_layers[l];
        gl.loop_weight = &gl.loop_weight + &g_pre.t().dot(&lt.input);
        let mut grad_input = g_pre.dot(&layer.loop_weight);

        // Messages, grouped by relation exactly as in the forward pass.
        let mut grad_p: Option<Array2<A>> = match &layer.core {
            CoreTensor::Cp { .. } => Some(Array2::zeros(lt.cp_p.as_ref().unwrap().dim())),
            CoreTensor::Dense(_) => None,
        };
        for g in &tape.groups {
            let e_r = embeddings.relation.row(g.relation);
            let mut gm = gather_rows(&g_pre.view(), &g.dst_rows);
            for (i, &w) in g.weights.iter().enumerate() {
                let w = A::from_f64_exact(w);
                gm.row_mut(i).mapv_inplace(|x| x * w);
            }
            match (&layer.core, &mut gl.core) {
                (CoreTensor::Dense(core), CoreTensor::Dense(gcore)) => {
                    let m_r = n_mode_product(&core.view(), &e_r, Mode::Two)?;
                    let xs = gather_rows(&lt.input.view(), &g.src_rows);
                    let grad_m_r = xs.t().dot(&gm);
                    // grad core[:,j,:] += e_r[j] · grad_M_r ; grad e_r[j] = ⟨core[:,j,:], grad_M_r⟩.
                    let mut grad_e_r = grad_embeddings.relation.row_mut(g.relation);
                    for j in 0..core.len_of(Axis(1)) {
                        let mut slice = gcore.index_axis_mut(Axis(1), j);
                        let ej = e_r[j];
                        Zip::from(&mut slice)
                            .and(&grad_m_r)
                            .for_each(|s, &g| *s += ej * g);
                        let dot = Zip::from(&core.index_axis(Axis(1), j))
                            .and(&grad_m_r)
                            .fold(A::zero(), |acc, &c, &g| acc + c * g);
                        grad_e_r[j] += dot;
                    }
                    let grad_xs = gm.dot(&m_r.t());
                    let ones = vec![1.0; g.src_rows.len()];
                    scatter_add_rows(&mut grad_input, &g.src_rows, &grad_xs.view(), &ones);
                }
                (
                    CoreTensor::Cp { w1, w3, .. },
                    CoreTensor::Cp {
                        w1: gw1,
                        w3: gw3,
                        ..
                    },
                ) => {
                    let q_r = w1.dot(&e_r);
                    let p_src = gather_rows(&lt.cp_p.as_ref().unwrap().view(), &g.src_rows);
                    let mut z = p_src.clone();
                    z.rows_mut().into_iter().for_each(|mut row| {
                        row.zip_mut_with(&q_r, |a, &b| *a *= b);
                    });
                    *gw3 = &*gw3 + &z.t().dot(&gm);
                    let gz = gm.dot(&w3.t());
                    // grad_q_r = Σ_edges gz ⊙ p_src ; grad_p_src = gz ⊙ q_r.
                    let grad_q_r = (&gz * &p_src).sum_axis(Axis(0));
                    let mut grad_p_src = gz;
                    grad_p_src.rows_mut().into_iter().for_each(|mut row| {
                        row.zip_mut_with(&q_r, |a, &b| *a *= b);
                    });
                    let ones = vec![1.0; g.src_rows.len()];
                    scatter_add_rows(
                        grad_p.as_mut().unwrap(),
                        &g.src_rows,
                        &grad_p_src.view(),
                        &ones,
                    );
                    outer_add(gw1, &grad_q_r.view(), &e_r, A::one());
                    let ger = w1.t().dot(&grad_q_r);
                    let mut grad_e_r = grad_embeddings.relation.row_mut(g.relation);
                    grad_e_r.zip_mut_with(&ger, |a, &b| *a += b);
                }
                _ => unreachable!("gradient layout mirrors the model"),
            }
        }
        if let (Some(gp), CoreTensor::Cp { w2, .. }, CoreTensor::Cp { w2: gw2, .. }) =
            (&grad_p, &layer.core, &mut gl.core)
        {
            *gw2 = &*gw2 + &gp.t().dot(&lt.input);
            grad_input = grad_input + gp.dot(w2);
        }
        grad_h = grad_input;
    }

    if let Some(m) = &tape.input_mask {
        grad_h = &grad_h * m;
    }
    // H⁰ rows are the entity embedding rows of the scope.
    let ones = vec![1.0; tape.scope.rows.len()];
    scatter_add_rows(
        &mut grad_embeddings.entity,
        &tape.scope.rows,
        &grad_h.view(),
        &ones,
    );
    Ok(())
}

/// Full encoder forward for all entities; dropout active when `training`.
pub fn encode<A: Real, R: Rng>(
    embeddings: &EmbeddingTables<A>,
    layers: &[EncoderLayer<A>],
    sub: &Subgraph,
    rates: &DropoutRates,
    training: bool,
    rng: &mut R,
) -> Result<Array2<A>> {
    let scope = Scope::all(sub.in_edges.len());
    let (h, _) = forward_tgcn(embeddings, layers, sub, scope, rates, training, rng)?;
    Ok(h)
}

/// Deterministic evaluation-time forward (no dropout).
pub fn encode_eval<A: Real>(
    embeddings: &EmbeddingTables<A>,
    layers: &[EncoderLayer<A>],
    sub: &Subgraph,
) -> Result<Array2<A>> {
    // No dropout sites are active, so the rng is never consulted.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    encode(
        embeddings,
        layers,
        sub,
        &DropoutRates::zeros(layers.len()),
        false,
        &mut rng,
    )
}
