//! Triple scoring from encoder outputs: DistMult and TuckER, plus the
//! batched all-candidate form both losses and the evaluator rely on.
//!
//! Scores are raw; `probability = 1/(1+exp(-score))` is a separate view and
//! never enters ranking (the logistic is monotone).

use ndarray::{Array1, ArrayView1, ArrayView2, Array3};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensorcore::{n_mode_product, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    DistMult,
    Tucker,
}

/// Decoder parameters. DistMult adds none; TuckER carries a dense
/// `d_e × d_r × d_e` core and its training-time dropout rate.
#[derive(Debug, Clone)]
pub enum DecoderParams<A> {
    DistMult,
    Tucker { core: Array3<A>, dropout: f64 },
}

impl<A: Real> DecoderParams<A> {
    pub fn kind(&self) -> DecoderKind {
        match self {
            DecoderParams::DistMult => DecoderKind::DistMult,
            DecoderParams::Tucker { .. } => DecoderKind::Tucker,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            DecoderParams::DistMult => 0,
            DecoderParams::Tucker { core, .. } => core.len(),
        }
    }
}

fn check_dims<A: Real>(
    params: &DecoderParams<A>,
    d_s: usize,
    d_r: usize,
    d_t: usize,
) -> Result<()> {
    match params {
        DecoderParams::DistMult => {
            if d_s != d_r || d_s != d_t {
                return Err(Error::shape(
                    "distmult score",
                    "equal source/relation/target dimensions".to_string(),
                    format!("{d_s}/{d_r}/{d_t}"),
                ));
            }
        }
        DecoderParams::Tucker { core, .. } => {
            let (ce, cr, co) = core.dim();
            if d_s != ce || d_r != cr || d_t != co {
                return Err(Error::shape(
                    "tucker score",
                    format!("{ce}/{cr}/{co} to match the core"),
                    format!("{d_s}/{d_r}/{d_t}"),
                ));
            }
        }
    }
    Ok(())
}

/// The query-side contraction shared by single and batched scoring. For
/// DistMult this is `h_s ⊙ e_r`; for TuckER it is `W_c ×₁ h_s ×₂ e_r`.
/// A triple score is the dot product of this vector with the target
/// representation.
pub(crate) fn query_vector<A: Real>(
    params: &DecoderParams<A>,
    h_s: &ArrayView1<A>,
    e_r: &ArrayView1<A>,
) -> Result<Array1<A>> {
    match params {
        DecoderParams::DistMult => Ok(h_s * e_r),
        DecoderParams::Tucker { core, .. } => {
            let jk = n_mode_product(&core.view(), h_s, Mode::One)?;
            Ok(jk.t().dot(e_r))
        }
    }
}

/// Raw (pre-sigmoid) score of one triple.
pub fn score<A: Real>(
    params: &DecoderParams<A>,
    h_s: &ArrayView1<A>,
    e_r: &ArrayView1<A>,
    h_t: &ArrayView1<A>,
) -> Result<A> {
    check_dims(params, h_s.len(), e_r.len(), h_t.len())?;
    Ok(query_vector(params, h_s, e_r)?.dot(h_t))
}

/// Scores one `(source, relation)` query against every row of
/// `candidates` in a single pass.
pub fn score_all_targets<A: Real>(
    params: &DecoderParams<A>,
    h_s: &ArrayView1<A>,
    e_r: &ArrayView1<A>,
    candidates: &ArrayView2<A>,
) -> Result<Array1<A>> {
    check_dims(params, h_s.len(), e_r.len(), candidates.ncols())?;
    let q = query_vector(params, h_s, e_r)?;
    Ok(candidates.dot(&q))
}

/// Logistic view of a raw score.
pub fn probability<A: Real>(raw: A) -> A {
    crate::training::sigmoid(raw)
}
