//! Hinge rank surrogate and the IPS-weighted client loss for linear rankers.
//!
//! For a document `d` of query `q`,
//! `h(d) = sum over d' != d of max(0, 1 - (f(d) - f(d')))`, and
//! `1 + h(d)` upper-bounds the rank of `d`. Pairs are taken over the whole
//! candidate set of the query, not only the displayed slots.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::clicksim::ClickRecord;
use crate::dataset::{Dataset, Query};
use crate::propensity::PropensityProvider;
use crate::ranker::LinearRanker;
use crate::{Error, Result};

fn hinge_sum(scores: &[f64], d: usize) -> f64 {
    let sd = scores[d];
    scores.iter().enumerate().filter(|&(j, _)| j != d).map(|(_, &s)| (1.0 - (sd - s)).max(0.0)).sum()
}

pub fn surrogate_h(model: &LinearRanker, q: &Query, d: usize) -> f64 {
    hinge_sum(&model.scores(q), d)
}

pub fn rank_upper_bound(model: &LinearRanker, q: &Query, d: usize) -> f64 {
    1.0 + surrogate_h(model, q, d)
}

/// Gradient of `h(d) / p` with respect to the weights. Pairs sitting exactly
/// on the hinge kink contribute nothing.
pub fn click_gradient(model: &LinearRanker, q: &Query, d: usize, p: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; model.dim()];
    accumulate_click_gradient(model, q, &model.scores(q), d, p, 1.0, &mut grad)?;
    Ok(grad)
}

/// `grad += scale * d(h(d)/p)/dw` given precomputed `scores`.
pub(crate) fn accumulate_click_gradient(
    model: &LinearRanker,
    q: &Query,
    scores: &[f64],
    d: usize,
    p: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::InvalidPropensity(p));
    }
    debug_assert_eq!(grad.len(), model.dim());
    let sd = scores[d];
    let mut active = 0usize;
    let w = scale / p;
    for (j, doc) in q.docs.iter().enumerate() {
        if j != d && 1.0 - (sd - scores[j]) > 0.0 {
            active += 1;
            for (g, x) in grad.iter_mut().zip(&doc.features) {
                *g += w * x;
            }
        }
    }
    if active > 0 {
        let a = w * active as f64;
        for (g, x) in grad.iter_mut().zip(&q.docs[d].features) {
            *g -= a * x;
        }
    }
    Ok(())
}

/// Inputs of one client's surrogate loss.
pub struct ClientLossContext<'a> {
    pub model: &'a LinearRanker,
    pub records: &'a [ClickRecord],
    /// Dataset the records' query indices refer to.
    pub data: &'a Dataset,
    pub propensity: &'a dyn PropensityProvider,
}

impl core::fmt::Debug for ClientLossContext<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ClientLossContext")
            .field("model", self.model)
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

/// `(1/|Q_u|) sum_q sum_{clicked d} h(d) / p_d`, with `|Q_u|` the number of
/// distinct queries that received at least one click.
pub fn client_loss(ctx: &ClientLossContext<'_>) -> Result<f64> {
    let mut queries = BTreeSet::new();
    let mut total = 0.0;
    for rec in ctx.records {
        if rec.num_clicks() == 0 {
            continue;
        }
        queries.insert(rec.query);
        let q = &ctx.data.queries[rec.query];
        let scores = ctx.model.scores(q);
        for (pos, doc) in rec.clicked() {
            let p = ctx.propensity.propensity(rec, pos);
            if p.is_nan() || p <= 0.0 {
                return Err(Error::InvalidPropensity(p));
            }
            total += hinge_sum(&scores, doc) / p;
        }
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    Ok(total / queries.len() as f64)
}
