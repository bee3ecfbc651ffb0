//! Filtered link-prediction ranking and metrics.
//!
//! Every test triple yields two queries: predict the tail and predict the head.
//! With a reciprocal relation table the head query `(?, r, t)` is asked as the
//! tail query `(t, r⁻¹, ?)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{filtered_candidates, Dataset, Side, Split, Triple};
use crate::error::{Error, Result};
use crate::model::{score_against_all_with, ModelParams};

/// Rank of `gold` among the entries of `scores` not flagged in `excluded`:
/// `1 + #(strictly better) + #(ties)/2`.
pub fn rank_of(scores: &[f64], gold: usize, excluded: &[bool]) -> f64 {
    let s = scores[gold];
    let mut better = 0usize;
    let mut ties = 0usize;
    for (e, (&v, &skip)) in scores.iter().zip(excluded).enumerate() {
        if skip || e == gold {
            continue;
        }
        if v > s {
            better += 1;
        } else if v == s {
            ties += 1;
        }
    }
    1.0 + better as f64 + ties as f64 / 2.0
}

/// Filtered (or raw) rank of the `side` answer of `query`.
pub fn rank_query(
    params: &ModelParams,
    query: Triple,
    side: Side,
    ds: &Dataset,
    filtered: bool,
) -> Result<f64> {
    params.check_entity(query.head)?;
    params.check_entity(query.tail)?;
    let op = params.operator(query.relation)?;
    let (fixed, gold) = match side {
        Side::Tail => (query.head, query.tail),
        Side::Head => (query.tail, query.head),
    };
    let scores = score_against_all_with(params, &op, fixed, side);
    let excluded = if filtered {
        filtered_candidates(query, side, ds)
    } else {
        vec![false; scores.len()]
    };
    Ok(rank_of(&scores, gold as usize, &excluded))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

pub fn hits_at(ranks: &[f64], k: f64) -> f64 {
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn metrics_from_ranks(ranks: &[f64]) -> Result<RankingMetrics> {
    if ranks.is_empty() {
        return Err(Error::EmptyData("no ranks to summarize".into()));
    }
    let n = ranks.len() as f64;
    Ok(RankingMetrics {
        mr: ranks.iter().sum::<f64>() / n,
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        hits1: hits_at(ranks, 1.0),
        hits3: hits_at(ranks, 3.0),
        hits10: hits_at(ranks, 10.0),
        count: ranks.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Remove other known-true answers from the candidate list.
    pub filtered: bool,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            filtered: true,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRank {
    /// The split triple the query came from.
    pub triple: Triple,
    /// Which entity of `triple` was predicted.
    pub side: Side,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub relation: u32,
    pub name: String,
    /// Share of the split's triples carrying this relation.
    pub test_fraction: f64,
    pub count: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: RankingMetrics,
    pub per_relation: Vec<RelationMetrics>,
    pub ranks: Vec<QueryRank>,
}

/// Checks that `params` was built for `ds`.
pub fn check_compatible(params: &ModelParams, ds: &Dataset) -> Result<()> {
    if params.num_entities() != ds.num_entities() {
        return Err(Error::Shape(format!(
            "model has {} entities, dataset has {}",
            params.num_entities(),
            ds.num_entities()
        )));
    }
    if params.num_relations() != ds.num_relations() || params.reciprocal != ds.is_reciprocal() {
        return Err(Error::Shape(format!(
            "model has {} relations (reciprocal: {}), dataset has {} (reciprocal: {})",
            params.num_relations(),
            params.reciprocal,
            ds.num_relations(),
            ds.is_reciprocal()
        )));
    }
    Ok(())
}

fn query_rank(
    params: &ModelParams,
    ds: &Dataset,
    t: Triple,
    side: Side,
    filtered: bool,
) -> Result<f64> {
    match (side, ds.inverse_relation(t.relation)) {
        (Side::Head, Some(inv)) => rank_query(
            params,
            Triple::new(t.tail, inv, t.head),
            Side::Tail,
            ds,
            filtered,
        ),
        _ => rank_query(params, t, side, ds, filtered),
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Ranks both directions of every triple in `split`.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    check_compatible(params, ds)?;
    evaluate_triples(params, ds, ds.split(split), opts)
}

pub fn evaluate_triples(
    params: &ModelParams,
    ds: &Dataset,
    triples: &[Triple],
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if triples.is_empty() {
        return Err(Error::EmptyData("evaluation split is empty".into()));
    }
    let queries: Vec<(Triple, Side)> = triples
        .iter()
        .flat_map(|&t| [(t, Side::Tail), (t, Side::Head)])
        .collect();
    let ranks: Vec<f64> = with_pool(opts.workers, || {
        queries
            .par_iter()
            .map(|&(t, side)| query_rank(params, ds, t, side, opts.filtered))
            .collect::<Result<Vec<f64>>>()
    })??;
    let metrics = metrics_from_ranks(&ranks)?;

    let base = if ds.is_reciprocal() {
        ds.base_relations()
    } else {
        ds.num_relations()
    };
    let mut counts = vec![0usize; base];
    let mut rr = vec![0.0f64; base];
    for (&(t, _), r) in queries.iter().zip(&ranks) {
        let rel = t.relation as usize;
        if rel < base {
            counts[rel] += 1;
            rr[rel] += 1.0 / r;
        }
    }
    let per_relation = (0..base)
        .filter(|&r| counts[r] > 0)
        .map(|r| RelationMetrics {
            relation: r as u32,
            name: ds.relations.name(r as u32).unwrap_or_default().to_owned(),
            test_fraction: (counts[r] / 2) as f64 / triples.len() as f64,
            count: counts[r] / 2,
            mrr: rr[r] / counts[r] as f64,
        })
        .collect();

    let ranks = queries
        .into_iter()
        .zip(ranks)
        .map(|((triple, side), rank)| QueryRank { triple, side, rank })
        .collect();
    Ok(Evaluation {
        metrics,
        per_relation,
        ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::augment_reciprocal;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_fixture() {
        let m = metrics_from_ranks(&[1.0, 2.0, 4.0]).unwrap();
        assert!((m.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((m.mr - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!((m.hits1, m.hits3, m.hits10), (1.0 / 3.0, 2.0 / 3.0, 1.0));
        assert!(metrics_from_ranks(&[]).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&[-0.1, -1.0, -2.0], 0, &[false; 3]), 1.0);
        assert_eq!(rank_of(&[-1.0, -1.0, -1.0], 0, &[false; 3]), 2.0);
        // A better candidate that is masked does not count.
        assert_eq!(rank_of(&[-1.0, -0.5, -2.0], 0, &[false, true, false]), 1.0);
    }

    #[test]
    fn filtering_uses_every_split() {
        // Entity 2 is a true tail of (0, r0) only through the test split.
        let mut p = ModelParams::zeros(3, 1, 1);
        p.entities
            .copy_from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.1, 0.0, 0.0]);
        let ds = Dataset::from_ids(
            3,
            1,
            vec![Triple::new(0, 0, 1)],
            vec![],
            vec![Triple::new(0, 0, 2)],
        )
        .unwrap();
        let q = Triple::new(0, 0, 1);
        assert_eq!(rank_query(&p, q, Side::Tail, &ds, false).unwrap(), 3.0);
        assert_eq!(rank_query(&p, q, Side::Tail, &ds, true).unwrap(), 2.0);
    }

    #[test]
    fn reciprocal_head_queries_use_reverse_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train: Vec<Triple> = (0..12)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..6),
                    rng.gen_range(0..2),
                    rng.gen_range(0..6),
                )
            })
            .collect();
        let ds = Dataset::from_ids(6, 2, train.clone(), vec![], train[..4].to_vec()).unwrap();
        let aug = augment_reciprocal(&ds).unwrap();
        let mut p = init_params(6, 4, 3, &mut rng).unwrap();
        p.reciprocal = true;
        let ev = evaluate(&p, &aug, Split::Test, &EvalOptions::default()).unwrap();
        for q in ev.ranks.iter().filter(|q| q.side == Side::Head) {
            let t = q.triple;
            let direct = rank_query(
                &p,
                Triple::new(t.tail, t.relation + 2, t.head),
                Side::Tail,
                &aug,
                true,
            )
            .unwrap();
            assert_eq!(q.rank, direct);
        }
        assert!(evaluate(&p, &ds, Split::Test, &EvalOptions::default()).is_err());
    }

    #[test]
    fn per_relation_fractions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let test: Vec<Triple> = (0..30)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..8),
                    rng.gen_range(0..3),
                    rng.gen_range(0..8),
                )
            })
            .collect();
        let ds = Dataset::from_ids(8, 3, vec![], vec![], test).unwrap();
        let p = init_params(8, 3, 2, &mut rng).unwrap();
        let ev = evaluate(&p, &ds, Split::Test, &EvalOptions::default()).unwrap();
        let total: f64 = ev.per_relation.iter().map(|r| r.test_fraction).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(ev.metrics.count, 60);
        let par = evaluate(
            &p,
            &ds,
            Split::Test,
            &EvalOptions {
                filtered: true,
                workers: 3,
            },
        )
        .unwrap();
        assert_eq!(par.metrics, ev.metrics);
    }
}
