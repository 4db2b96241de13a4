//! Filtered link-prediction evaluation with randomized tie-breaking:
//! candidates known to be true (in any split) are removed, the remaining
//! ones are shuffled and stably sorted by descending score, and the true
//! target's 1-based position is its rank. MRR and Hits@{1,3,10} aggregate
//! the per-query ranks.
//!
//! Source-side corruption is realized through inverse-relation queries: the
//! augmented split already contains `(t, r⁻¹, s)` for every raw triple, so
//! ranking every augmented triple covers both directions with one routine.

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::kgdata::{KnowledgeGraph, Split, Subgraph, Triple};
use crate::model::Model;
use crate::real::Real;

/// Which corruption side a query covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `(s, r, ?)` with a raw relation.
    Target,
    /// `(t, r⁻¹, ?)`, the source-side ranking of the raw triple.
    SourceViaInverse,
}

/// One ranked query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryRank {
    pub triple: Triple,
    pub direction: Direction,
    /// Filtered rank, 1-based.
    pub rank: usize,
}

/// Aggregated ranking metrics for one split.
#[derive(Debug, Clone)]
pub struct RankingReport {
    pub per_query: Vec<QueryRank>,
    pub mrr: f64,
    /// `(k, Hits@k)` for k in {1, 3, 10}.
    pub hits: [(usize, f64); 3],
    pub protocol: &'static str,
    pub seed: u64,
    pub n_queries: usize,
    /// False when the split was empty and the metrics are meaningless.
    pub is_valid: bool,
}

impl RankingReport {
    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }

    fn from_ranks(per_query: Vec<QueryRank>, seed: u64) -> Self {
        let n = per_query.len();
        let is_valid = n > 0;
        let mrr = if is_valid {
            per_query.iter().map(|q| 1.0 / q.rank as f64).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let ratio = |k: usize| {
            if is_valid {
                per_query.iter().filter(|q| q.rank <= k).count() as f64 / n as f64
            } else {
                0.0
            }
        };
        RankingReport {
            mrr,
            hits: [(1, ratio(1)), (3, ratio(3)), (10, ratio(10))],
            protocol: "random",
            seed,
            n_queries: n,
            per_query,
            is_valid,
        }
    }
}

/// Rank of `true_target` among `𝒱 ∖ (filter ∖ {true_target})` under the
/// random protocol: candidates are shuffled, then stably sorted by
/// descending score, so tied candidates land in uniformly random order.
pub fn filtered_rank<A: Real, R: Rng>(
    scores: &ArrayView1<A>,
    true_target: usize,
    filter: &HashSet<usize>,
    rng: &mut R,
) -> Result<usize> {
    if true_target >= scores.len() {
        return Err(Error::IdOutOfRange {
            kind: "entity",
            id: true_target,
            len: scores.len(),
        });
    }
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|&c| c == true_target || !filter.contains(&c))
        .collect();
    candidates.shuffle(rng);
    candidates.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
    });
    let rank = candidates
        .iter()
        .position(|&c| c == true_target)
        .expect("true target always survives filtering")
        + 1;
    Ok(rank)
}

/// Ranks every triple of the split in both directions (the augmented split
/// carries the inverse of each raw triple) with encoder messages over the
/// full training graph, and aggregates MRR and Hits@k.
pub fn evaluate<A: Real>(
    model: &Model<A>,
    kg: &KnowledgeGraph,
    split: Split,
    seed: u64,
) -> Result<RankingReport> {
    if !kg.is_augmented() {
        return Err(Error::State(
            "evaluation requires a reciprocally augmented graph".into(),
        ));
    }
    let queries = kg.split(split);
    if queries.is_empty() {
        return Ok(RankingReport::from_ranks(Vec::new(), seed));
    }
    let full = Subgraph::full_train_graph(kg);
    let h = model.encode_eval(&full)?;
    let raw = kg.raw_relation_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_query = Vec::with_capacity(queries.len());
    let empty = HashSet::new();
    for t in queries {
        let e_r = model.embeddings.relation.row(t.relation);
        let scores = crate::decoder::score_all_targets(
            &model.decoder,
            &h.row(t.source),
            &e_r,
            &h.view(),
        )?;
        let filter = kg.filter_set(t.source, t.relation).unwrap_or(&empty);
        let rank = filtered_rank(&scores.view(), t.target, filter, &mut rng)?;
        per_query.push(QueryRank {
            triple: *t,
            direction: if t.relation < raw {
                Direction::Target
            } else {
                Direction::SourceViaInverse
            },
            rank,
        });
    }
    Ok(RankingReport::from_ranks(per_query, seed))
}
