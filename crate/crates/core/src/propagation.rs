//! Shared message-passing machinery: entity scopes, relation-grouped edge
//! lists with in-degree normalization, inverted dropout, and activations.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::kgdata::Subgraph;
use crate::real::Real;

/// Maps entity ids to rows of the representation matrices. `rows` is sorted;
/// `pos` is a dense id → row table (usize::MAX for out-of-scope ids).
#[derive(Debug, Clone)]
pub(crate) struct Scope {
    pub rows: Vec<usize>,
    pos: Vec<usize>,
}

impl Scope {
    pub fn all(n_entities: usize) -> Self {
        Scope {
            rows: (0..n_entities).collect(),
            pos: (0..n_entities).collect(),
        }
    }

    pub fn of_entities(n_entities: usize, mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let mut pos = vec![usize::MAX; n_entities];
        for (row, &id) in ids.iter().enumerate() {
            pos[id] = row;
        }
        Scope { rows: ids, pos }
    }

    pub fn row_of(&self, entity: usize) -> usize {
        let p = self.pos[entity];
        debug_assert!(p != usize::MAX, "entity {entity} outside scope");
        p
    }
}

/// Edges of one relation, with per-edge normalization weight `1/c_{v,r}`
/// where `c_{v,r}` is the in-degree of `v` under `r` in the subgraph.
#[derive(Debug, Clone)]
pub(crate) struct RelGroup {
    pub relation: usize,
    /// Source row (in scope) per edge.
    pub src_rows: Vec<usize>,
    /// Target row (in scope) per edge.
    pub dst_rows: Vec<usize>,
    /// `1/c_{v,r}` per edge.
    pub weights: Vec<f64>,
}

/// Groups the subgraph's in-edges by relation, in ascending relation order;
/// edge order within a group follows ascending target id then adjacency
/// order, so forward sums are reproducible.
pub(crate) fn group_edges(sub: &Subgraph, scope: &Scope) -> Vec<RelGroup> {
    let mut degree: HashMap<(usize, usize), usize> = HashMap::new();
    for (v, edges) in sub.in_edges.iter().enumerate() {
        for &(_, r) in edges {
            *degree.entry((v, r)).or_insert(0) += 1;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, RelGroup> = std::collections::BTreeMap::new();
    for (v, edges) in sub.in_edges.iter().enumerate() {
        for &(u, r) in edges {
            let g = groups.entry(r).or_insert_with(|| RelGroup {
                relation: r,
                src_rows: Vec::new(),
                dst_rows: Vec::new(),
                weights: Vec::new(),
            });
            g.src_rows.push(scope.row_of(u));
            g.dst_rows.push(scope.row_of(v));
            g.weights.push(1.0 / degree[&(v, r)] as f64);
        }
    }
    groups.into_values().collect()
}

/// Gathers rows of `m` into a new matrix.
pub(crate) fn gather_rows<A: Real>(m: &ArrayView2<A>, rows: &[usize]) -> Array2<A> {
    let mut out = Array2::<A>::zeros((rows.len(), m.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&m.row(r));
    }
    out
}

/// `out[dst[i]] += scale[i] * values[i]` row-wise.
pub(crate) fn scatter_add_rows<A: Real>(
    out: &mut Array2<A>,
    dst: &[usize],
    values: &ArrayView2<A>,
    scales: &[f64],
) {
    for (i, &d) in dst.iter().enumerate() {
        let w = A::from_f64_exact(scales[i]);
        let src = values.row(i);
        let mut row = out.row_mut(d);
        row.zip_mut_with(&src, |o, &v| *o += w * v);
    }
}

/// Inverted-dropout mask: entries are `0` with probability `rate` and
/// `1/(1-rate)` otherwise.
pub(crate) fn dropout_mask<A: Real, R: Rng>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut R,
) -> Array2<A> {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep = A::from_f64_exact(1.0 / (1.0 - rate));
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            A::zero()
        } else {
            keep
        }
    })
}

/// Elementwise activation and its derivative evaluated at the pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<A: Real>(self, x: A) -> A {
        match self {
            Activation::Relu => {
                if x > A::zero() {
                    x
                } else {
                    A::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    pub fn derivative<A: Real>(self, pre: A) -> A {
        match self {
            Activation::Relu => {
                if pre > A::zero() {
                    A::one()
                } else {
                    A::zero()
                }
            }
            Activation::Identity => A::one(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(crate::error::Error::Config(format!(
                "unknown activation '{other}' (expected relu or identity)"
            ))),
        }
    }
}

/// Adds `scale * a ⊗ b` to `out`.
pub(crate) fn outer_add<A: Real>(
    out: &mut Array2<A>,
    a: &ArrayView1<A>,
    b: &ArrayView1<A>,
    scale: A,
) {
    for (i, &ai) in a.iter().enumerate() {
        let f = ai * scale;
        if f != A::zero() {
            let mut row = out.row_mut(i);
            row.zip_mut_with(b, |o, &bj| *o += f * bj);
        }
    }
}
