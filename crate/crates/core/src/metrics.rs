//! Ranking metrics: NDCG@k for evaluation, the full-information additive
//! metric and its IPS-weighted click estimate.

use alloc::vec::Vec;

use crate::clicksim::ClickRecord;
use crate::dataset::{Dataset, Query};
use crate::ranker::{LinearRanker, RankedList};
use crate::{Error, Result};

/// Grade threshold at and above which a document counts as relevant.
pub const RELEVANT_GRADE: u8 = 3;

/// Position weighting `g` of the additive metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFn {
    /// `g(k) = k`.
    #[default]
    Identity,
    /// `g(k) = 1 / log2(k + 1)`.
    Dcg,
}

impl WeightFn {
    pub fn weight(self, position: usize) -> f64 {
        match self {
            WeightFn::Identity => position as f64,
            WeightFn::Dcg => 1.0 / libm::log2(position as f64 + 1.0),
        }
    }
}

fn gain(grade: u8) -> f64 {
    libm::exp2(f64::from(grade)) - 1.0
}

fn discount(position: usize) -> f64 {
    libm::log2(position as f64 + 1.0)
}

/// NDCG@k with `2^grade - 1` gains. `labels[d]` is the grade of document `d`.
pub fn ndcg_at_k(ranking: &RankedList, labels: &[u8], k: usize) -> Result<f64> {
    debug_assert_eq!(ranking.len(), labels.len());
    let cut = k.min(labels.len());
    let dcg: f64 = (1..=cut).map(|i| gain(labels[ranking.doc_at(i)]) / discount(i)).sum();
    let mut ideal: Vec<u8> = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(cut).enumerate().map(|(i, &g)| gain(g) / discount(i + 1)).sum();
    if idcg <= 0.0 {
        return Err(Error::ZeroIdealDcg);
    }
    Ok(dcg / idcg)
}

/// Mean NDCG@k of `ranker` over all queries of `data`.
pub fn mean_ndcg(ranker: &LinearRanker, data: &Dataset, k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for q in &data.queries {
        let labels: Vec<u8> = q.labels().collect();
        total += ndcg_at_k(&ranker.rank(q), &labels, k)?;
    }
    Ok(total / data.len() as f64)
}

/// `sum_d g(position of d) * r_d` with `r_d = 1` iff `grade >= threshold`.
pub fn full_info_metric(ranker: &LinearRanker, q: &Query, g: WeightFn, threshold: u8) -> f64 {
    expected_full_info_metric(ranker, q, g, |grade| if grade >= threshold { 1.0 } else { 0.0 })
}

/// Additive metric with a real-valued relevance `relevance(grade)`, e.g. the
/// click probability of an examined document.
pub fn expected_full_info_metric(ranker: &LinearRanker, q: &Query, g: WeightFn, relevance: impl Fn(u8) -> f64) -> f64 {
    let ranking = ranker.rank(q);
    q.docs.iter().enumerate().map(|(d, doc)| g.weight(ranking.position_of(d)) * relevance(doc.label)).sum()
}

/// `sum over clicked d of g(position of d under ranker) / p_d`, with `p_d`
/// the propensity logged for the displayed slot of `d`.
pub fn ips_click_metric(ranker: &LinearRanker, record: &ClickRecord, q: &Query, g: WeightFn) -> Result<f64> {
    let ranking = ranker.rank(q);
    let mut total = 0.0;
    for ((&doc, &clicked), &p) in record.displayed.iter().zip(&record.clicks).zip(&record.propensities) {
        if !clicked {
            continue;
        }
        if p.is_nan() || p <= 0.0 {
            return Err(Error::InvalidPropensity(p));
        }
        total += g.weight(ranking.position_of(doc)) / p;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Document;
    use alloc::vec;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// One feature per document; the score is the feature itself.
    fn scored_query(scores: &[f64], labels: &[u8]) -> Query {
        Query {
            id: 1,
            docs: scores.iter().zip(labels).map(|(&s, &l)| Document { features: vec![s], label: l }).collect(),
        }
    }

    #[test]
    fn weight_fns() {
        assert_eq!(WeightFn::Identity.weight(7), 7.0);
        assert_eq!(WeightFn::Dcg.weight(1), 1.0);
        assert!(close(WeightFn::Dcg.weight(3), 0.5));
    }

    #[test]
    fn ndcg_examples() {
        let perfect = RankedList::from_order(vec![0, 1, 2]);
        assert!(close(ndcg_at_k(&perfect, &[3, 0, 0], 3).unwrap(), 1.0));

        let worst = RankedList::from_order(vec![1, 2, 0]);
        assert!(close(ndcg_at_k(&worst, &[3, 0, 0], 3).unwrap(), 0.5));

        let single = RankedList::from_order(vec![0]);
        assert!(close(ndcg_at_k(&single, &[1], 5).unwrap(), 1.0));

        assert_eq!(ndcg_at_k(&perfect, &[0, 0, 0], 3).unwrap_err(), Error::ZeroIdealDcg);
    }

    #[test]
    fn full_info_examples() {
        let w = LinearRanker::new(vec![1.0]);
        // relevant docs at ranks 1 and 3
        let q = scored_query(&[3.0, 2.0, 1.0], &[4, 0, 3]);
        assert_eq!(full_info_metric(&w, &q, WeightFn::Identity, RELEVANT_GRADE), 4.0);
        let none = scored_query(&[3.0, 2.0], &[2, 0]);
        assert_eq!(full_info_metric(&w, &none, WeightFn::Identity, RELEVANT_GRADE), 0.0);
        let top = scored_query(&[3.0, 2.0], &[3, 0]);
        assert_eq!(full_info_metric(&w, &top, WeightFn::Dcg, RELEVANT_GRADE), 1.0);
    }

    #[test]
    fn ips_examples() {
        let w = LinearRanker::new(vec![1.0]);
        let q = scored_query(&[3.0, 2.0, 1.0], &[4, 0, 3]);
        let rec = |clicks: Vec<bool>, p: Vec<f64>| ClickRecord {
            query: 0,
            displayed: vec![0, 1, 2],
            clicks,
            propensities: p,
        };
        // doc 1 sits at evaluated rank 2
        let one = rec(vec![false, true, false], vec![1.0, 0.5, 0.5]);
        assert_eq!(ips_click_metric(&w, &one, &q, WeightFn::Identity).unwrap(), 4.0);
        let none = rec(vec![false; 3], vec![1.0; 3]);
        assert_eq!(ips_click_metric(&w, &none, &q, WeightFn::Identity).unwrap(), 0.0);
        let full = rec(vec![true, false, true], vec![1.0; 3]);
        assert_eq!(ips_click_metric(&w, &full, &q, WeightFn::Identity).unwrap(), 4.0);
        assert_eq!(
            ips_click_metric(&w, &full, &q, WeightFn::Identity).unwrap(),
            full_info_metric(&w, &q, WeightFn::Identity, RELEVANT_GRADE)
        );
        let bad = rec(vec![true, false, false], vec![0.0, 1.0, 1.0]);
        assert_eq!(ips_click_metric(&w, &bad, &q, WeightFn::Identity).unwrap_err(), Error::InvalidPropensity(0.0));
    }

    proptest! {
        #[test]
        fn ndcg_in_unit_interval(
            labels in prop::collection::vec(0u8..=4, 1..25),
            scores in prop::collection::vec(-1.0f64..1.0, 25),
            k in 1usize..30,
        ) {
            prop_assume!(labels.iter().any(|&l| l > 0));
            let r = RankedList::from_scores(&scores[..labels.len()]);
            let v = ndcg_at_k(&r, &labels, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        #[test]
        fn full_click_pattern_matches_full_info(
            labels in prop::collection::vec(0u8..=4, 1..20),
            scores in prop::collection::vec(-1.0f64..1.0, 20),
            dcg in any::<bool>(),
        ) {
            let n = labels.len();
            let q = scored_query(&scores[..n], &labels);
            let w = LinearRanker::new(vec![-1.0]);
            let g = if dcg { WeightFn::Dcg } else { WeightFn::Identity };
            let rec = ClickRecord {
                query: 0,
                displayed: (0..n).collect(),
                clicks: labels.iter().map(|&l| l >= RELEVANT_GRADE).collect(),
                propensities: vec![1.0; n],
            };
            let ips = ips_click_metric(&w, &rec, &q, g).unwrap();
            let full = full_info_metric(&w, &q, g, RELEVANT_GRADE);
            prop_assert!((ips - full).abs() < 1e-9);
        }
    }
}
