//! R-GCN baseline layer: per-relation weight matrices with the three
//! regularization schemes (basis decomposition, block-diagonal
//! decomposition, CP factorization of the stacked relation tensor) plus the
//! unconstrained full bank.
//!
//! Weight orientation: every materialized `W_r` maps inputs along rows and
//! outputs along columns, `message[k] = Σ_i h[i]·W_r[i,k]`, matching the
//! factor binding of the CP scheme (`W_r[i,k] = Σ_b U1[b,r]·U2[b,i]·U3[b,k]`).

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::encoder::{DropoutRates, EmbeddingTables};
use crate::error::{Error, Result};
use crate::kgdata::Subgraph;
use crate::propagation::{
    dropout_mask, gather_rows, group_edges, outer_add, scatter_add_rows, Activation, RelGroup,
    Scope,
};
use crate::real::Real;

/// Relation-indexed weight bank under one of four parameterizations.
#[derive(Debug, Clone)]
pub enum RelationWeightBank<A> {
    /// One unconstrained `d_in × d_out` matrix per relation.
    Full { weights: Vec<Array2<A>> },
    /// `W_r = Σ_b a_{rb}·V_b` with `n_b` shared bases.
    Basis {
        bases: Vec<Array2<A>>,
        /// `|ℛ| × n_b` coefficients.
        coefficients: Array2<A>,
    },
    /// Per-relation block-diagonal matrices, `n_blocks` blocks each.
    Block {
        /// One `(n_blocks, k, k)` array per relation, `k = d / n_blocks`.
        blocks: Vec<Array3<A>>,
    },
    /// CP factors of the stacked `|ℛ| × d_in × d_out` tensor.
    Cp {
        /// `n_b × |ℛ|`.
        u1: Array2<A>,
        /// `n_b × d_in`.
        u2: Array2<A>,
        /// `n_b × d_out`.
        u3: Array2<A>,
    },
}

/// Scheme tags for configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    Full,
    Basis,
    Block,
    Cp,
}

impl<A: Real> RelationWeightBank<A> {
    pub fn scheme(&self) -> WeightScheme {
        match self {
            RelationWeightBank::Full { .. } => WeightScheme::Full,
            RelationWeightBank::Basis { .. } => WeightScheme::Basis,
            RelationWeightBank::Block { .. } => WeightScheme::Block,
            RelationWeightBank::Cp { .. } => WeightScheme::Cp,
        }
    }

    pub fn n_relations(&self) -> usize {
        match self {
            RelationWeightBank::Full { weights } => weights.len(),
            RelationWeightBank::Basis { coefficients, .. } => coefficients.nrows(),
            RelationWeightBank::Block { blocks } => blocks.len(),
            RelationWeightBank::Cp { u1, .. } => u1.ncols(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            RelationWeightBank::Full { weights } => weights[0].dim(),
            RelationWeightBank::Basis { bases, .. } => bases[0].dim(),
            RelationWeightBank::Block { blocks } => {
                let (b, k, _) = blocks[0].dim();
                (b * k, b * k)
            }
            RelationWeightBank::Cp { u2, u3, .. } => (u2.ncols(), u3.ncols()),
        }
    }

    /// Free parameters of the bank: `|ℛ|·d²` full, `n_b·d² + |ℛ|·n_b`
    /// basis, `|ℛ|·d²/B` block, `n_b·(|ℛ| + d_in + d_out)` CP.
    pub fn param_count(&self) -> usize {
        match self {
            RelationWeightBank::Full { weights } => weights.iter().map(|w| w.len()).sum(),
            RelationWeightBank::Basis {
                bases,
                coefficients,
            } => bases.iter().map(|b| b.len()).sum::<usize>() + coefficients.len(),
            RelationWeightBank::Block { blocks } => blocks.iter().map(|b| b.len()).sum(),
            RelationWeightBank::Cp { u1, u2, u3 } => u1.len() + u2.len() + u3.len(),
        }
    }
}

/// Materializes the `d_in × d_out` weight matrix of `relation`.
pub fn materialize_weight<A: Real>(
    bank: &RelationWeightBank<A>,
    relation: usize,
) -> Result<Array2<A>> {
    if relation >= bank.n_relations() {
        return Err(Error::IdOutOfRange {
            kind: "relation",
            id: relation,
            len: bank.n_relations(),
        });
    }
    Ok(match bank {
        RelationWeightBank::Full { weights } => weights[relation].clone(),
        RelationWeightBank::Basis {
            bases,
            coefficients,
        } => {
            let mut w = Array2::zeros(bases[0].dim());
            for (b, basis) in bases.iter().enumerate() {
                let c = coefficients[(relation, b)];
                if c != A::zero() {
                    w.zip_mut_with(basis, |o, &v| *o += c * v);
                }
            }
            w
        }
        RelationWeightBank::Block { blocks } => {
            let (n_blocks, k, _) = blocks[relation].dim();
            let d = n_blocks * k;
            let mut w = Array2::zeros((d, d));
            for (beta, block) in blocks[relation].axis_iter(Axis(0)).enumerate() {
                w.slice_mut(ndarray::s![beta * k..(beta + 1) * k, beta * k..(beta + 1) * k])
                    .assign(&block);
            }
            w
        }
        RelationWeightBank::Cp { u1, u2, u3 } => {
            let (d_in, d_out) = (u2.ncols(), u3.ncols());
            let mut w = Array2::zeros((d_in, d_out));
            for b in 0..u1.nrows() {
                let c = u1[(b, relation)];
                if c != A::zero() {
                    outer_add(&mut w, &u2.row(b), &u3.row(b), c);
                }
            }
            w
        }
    })
}

/// One R-GCN layer: relation bank, loop weight, activation.
#[derive(Debug, Clone)]
pub struct RgcnLayer<A> {
    pub bank: RelationWeightBank<A>,
    pub loop_weight: Array2<A>,
    pub activation: Activation,
}

impl<A: Real> RgcnLayer<A> {
    /// Bank parameters only; the loop weight is excluded so counts line up
    /// with the baseline reporting convention used for this model family.
    pub fn bank_param_count(&self) -> usize {
        self.bank.param_count()
    }
}

pub(crate) struct RgcnLayerTape<A> {
    pub input: Array2<A>,
    pub post_dropout: Array2<A>,
    pub mask: Option<Array2<A>>,
    /// `input · U2ᵀ` for the CP scheme.
    pub cp_p: Option<Array2<A>>,
}

pub(crate) struct RgcnTape<A> {
    pub scope: Scope,
    pub groups: Vec<RelGroup>,
    pub input_mask: Option<Array2<A>>,
    pub output_mask: Option<Array2<A>>,
    pub layers: Vec<RgcnLayerTape<A>>,
}

fn layer_forward_scoped<A: Real, R: Rng>(
    layer: &RgcnLayer<A>,
    groups: &[RelGroup],
    h: Array2<A>,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<A>, RgcnLayerTape<A>)> {
    let (d_in, d_out) = layer.bank.dims();
    if h.ncols() != d_in {
        return Err(Error::shape(
            "rgcn_layer_forward",
            format!("input dimension {d_in}"),
            format!("{}", h.ncols()),
        ));
    }
    let n = h.nrows();
    let mut agg = h.dot(&layer.loop_weight.t());

    let cp_p = match &layer.bank {
        RelationWeightBank::Cp { u2, .. } => Some(h.dot(&u2.t())),
        _ => None,
    };
    for g in groups {
        if g.relation >= layer.bank.n_relations() {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: g.relation,
                len: layer.bank.n_relations(),
            });
        }
        let messages = match &layer.bank {
            RelationWeightBank::Cp { u1, u3, .. } => {
                let q_r = u1.column(g.relation).to_owned();
                let mut z = gather_rows(&cp_p.as_ref().unwrap().view(), &g.src_rows);
                z.rows_mut().into_iter().for_each(|mut row| {
                    row.zip_mut_with(&q_r, |a, &b| *a *= b);
                });
                z.dot(u3)
            }
            bank => {
                let w_r = materialize_weight(bank, g.relation)?;
                gather_rows(&h.view(), &g.src_rows).dot(&w_r)
            }
        };
        scatter_add_rows(&mut agg, &g.dst_rows, &messages.view(), &g.weights);
    }

    let mask = if training && dropout > 0.0 {
        Some(dropout_mask::<A, _>((n, d_out), dropout, rng))
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
        RgcnLayerTape {
            input: h,
            post_dropout,
            mask,
            cp_p,
        },
    ))
}

/// Applies one R-GCN layer over a subgraph; same normalization, self-loop,
/// dropout and activation conventions as the TGCN layer, with messages
/// `W_r·h_u` in place of the relation-conditioned transform.
pub fn rgcn_layer_forward<A: Real, R: Rng>(
    layer: &RgcnLayer<A>,
    sub: &Subgraph,
    h: &ArrayView2<A>,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Array2<A>> {
    if h.nrows() != sub.in_edges.len() {
        return Err(Error::shape(
            "rgcn_layer_forward",
            format!("one row per entity ({})", sub.in_edges.len()),
            format!("{} rows", h.nrows()),
        ));
    }
    let scope = Scope::all(sub.in_edges.len());
    let groups = group_edges(sub, &scope);
    let (out, _) = layer_forward_scoped(layer, &groups, h.to_owned(), dropout, training, rng)?;
    Ok(out)
}

pub(crate) fn forward_rgcn<A: Real, R: Rng>(
    embeddings: &EmbeddingTables<A>,
    layers: &[RgcnLayer<A>],
    sub: &Subgraph,
    scope: Scope,
    rates: &DropoutRates,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<A>, RgcnTape<A>)> {
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
        let (out, tape) =
            layer_forward_scoped(layer, &groups, h, rates.hidden[l], training, rng)?;
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
        RgcnTape {
            scope,
            groups,
            input_mask,
            output_mask,
            layers: layer_tapes,
        },
    ))
}

pub(crate) fn backward_rgcn<A: Real>(
    layers: &[RgcnLayer<A>],
    tape: &RgcnTape<A>,
    mut grad_out: Array2<A>,
    grad_layers: &mut [RgcnLayer<A>],
    grad_embeddings: &mut EmbeddingTables<A>,
) -> Result<()> {
    if let Some(m) = &tape.output_mask {
        grad_out = &grad_out * m;
    }
    let mut grad_h = grad_out;
    for (l, layer) in layers.iter().enumerate().rev() {
        let lt = &tape.layers[l];
        let mut g_pre = Zip::from(&grad_h)
            .and(&lt.post_dropout)
            .map_collect(|&g, &pre| g * layer.activation.derivative(pre));
        if let Some(m) = &lt.mask {
            g_pre = &g_pre * m;
        }

        let gl = &mut grad_layers[l];
        gl.loop_weight = &gl.loop_weight + &g_pre.t().dot(&lt.input);
        let mut grad_input = g_pre.dot(&layer.loop_weight);

        let mut grad_p: Option<Array2<A>> = match &layer.bank {
            RelationWeightBank::Cp { .. } => Some(Array2::zeros(lt.cp_p.as_ref().unwrap().dim())),
            _ => None,
        };
        for g in &tape.groups {
            let mut gm = gather_rows(&g_pre.view(), &g.dst_rows);
            for (i, &w) in g.weights.iter().enumerate() {
                let w = A::from_f64_exact(w);
                gm.row_mut(i).mapv_inplace(|x| x * w);
            }
            let ones = vec![1.0; g.src_rows.len()];
            match (&layer.bank, &mut gl.bank) {
                (
                    RelationWeightBank::Cp { u1, u3, .. },
                    RelationWeightBank::Cp {
                        u1: gu1, u3: gu3, ..
                    },
                ) => {
                    let q_r = u1.column(g.relation).to_owned();
                    let p_src = gather_rows(&lt.cp_p.as_ref().unwrap().view(), &g.src_rows);
                    let mut z = p_src.clone();
                    z.rows_mut().into_iter().for_each(|mut row| {
                        row.zip_mut_with(&q_r, |a, &b| *a *= b);
                    });
                    *gu3 = &*gu3 + &z.t().dot(&gm);
                    let gz = gm.dot(&u3.t());
                    let grad_q_r = (&gz * &p_src).sum_axis(Axis(0));
                    let mut grad_p_src = gz;
                    grad_p_src.rows_mut().into_iter().for_each(|mut row| {
                        row.zip_mut_with(&q_r, |a, &b| *a *= b);
                    });
                    scatter_add_rows(
                        grad_p.as_mut().unwrap(),
                        &g.src_rows,
                        &grad_p_src.view(),
                        &ones,
                    );
                    let mut gq = gu1.column_mut(g.relation);
                    gq.zip_mut_with(&grad_q_r, |a, &b| *a += b);
                }
                (bank, gbank) => {
                    let w_r = materialize_weight(bank, g.relation)?;
                    let xs = gather_rows(&lt.input.view(), &g.src_rows);
                    let grad_w_r = xs.t().dot(&gm);
                    let grad_xs = gm.dot(&w_r.t());
                    scatter_add_rows(&mut grad_input, &g.src_rows, &grad_xs.view(), &ones);
                    accumulate_bank_grad(bank, gbank, g.relation, &grad_w_r);
                }
            }
        }
        if let (
            Some(gp),
            RelationWeightBank::Cp { u2, .. },
            RelationWeightBank::Cp { u2: gu2, .. },
        ) = (&grad_p, &layer.bank, &mut gl.bank)
        {
            *gu2 = &*gu2 + &gp.t().dot(&lt.input);
            grad_input = grad_input + gp.dot(u2);
        }
        grad_h = grad_input;
    }

    if let Some(m) = &tape.input_mask {
        grad_h = &grad_h * m;
    }
    let ones = vec![1.0; tape.scope.rows.len()];
    scatter_add_rows(
        &mut grad_embeddings.entity,
        &tape.scope.rows,
        &grad_h.view(),
        &ones,
    );
    Ok(())
}

/// Routes a materialized-weight gradient back to the scheme's parameters.
fn accumulate_bank_grad<A: Real>(
    bank: &RelationWeightBank<A>,
    grad_bank: &mut RelationWeightBank<A>,
    relation: usize,
    grad_w: &Array2<A>,
) {
    match (bank, grad_bank) {
        (RelationWeightBank::Full { .. }, RelationWeightBank::Full { weights: gw }) => {
            gw[relation].zip_mut_with(grad_w, |a, &b| *a += b);
        }
        (
            RelationWeightBank::Basis {
                bases,
                coefficients,
            },
            RelationWeightBank::Basis {
                bases: gbases,
                coefficients: gcoeff,
            },
        ) => {
            for (b, basis) in bases.iter().enumerate() {
                let dot = Zip::from(basis)
                    .and(grad_w)
                    .fold(A::zero(), |acc, &x, &y| acc + x * y);
                gcoeff[(relation, b)] += dot;
                let c = coefficients[(relation, b)];
                gbases[b].zip_mut_with(grad_w, |a, &g| *a += c * g);
            }
        }
        (RelationWeightBank::Block { blocks }, RelationWeightBank::Block { blocks: gblocks }) => {
            let (n_blocks, k, _) = blocks[relation].dim();
            for beta in 0..n_blocks {
                let sub = grad_w.slice(ndarray::s![
                    beta * k..(beta + 1) * k,
                    beta * k..(beta + 1) * k
                ]);
                gblocks[relation]
                    .index_axis_mut(Axis(0), beta)
                    .zip_mut_with(&sub, |a, &b| *a += b);
            }
        }
        _ => unreachable!("gradient layout mirrors the model"),
    }
}
