use numcore::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub loss: Var,
    /// Probabilities clamped away from 0 or 1, or 1 when the contrastive
    /// queue was empty.
    pub flagged: usize,
}

/// Mean of `-ln p` over positives and `-ln(1 - p)` over negatives, with
/// probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_link_loss<T: Real>(tape: &mut Tape<T>, pos: Var, neg: Var) -> Result<LossTerm> {
    let (ps, ns) = (tape.shape(pos), tape.shape(neg));
    if ps != ns || ps[1] != 1 {
        return Err(Error::Num(numcore::NumError::ShapeMismatch {
            op: "bce_link_loss",
            left: ps,
            right: ns,
        }));
    }
    let (lo, hi) = (T::of(BCE_EPS), T::one() - T::of(BCE_EPS));
    let outside = |v: &Tensor<T>| v.data().iter().filter(|&&x| x < lo || x > hi).count();
    let flagged = outside(tape.value(pos)) + outside(tape.value(neg));
    let p = tape.clamp(pos, lo, hi)?;
    let lp = tape.log(p)?;
    let q = tape.clamp(neg, lo, hi)?;
    let q = tape.scale(q, -T::one())?;
    let q = tape.add_scalar(q, T::one())?;
    let lq = tape.log(q)?;
    let all = tape.concat_rows(&[lp, lq])?;
    let mean = tape.mean(all)?;
    Ok(LossTerm {
        loss: tape.scale(mean, -T::one())?,
        flagged,
    })
}

/// Mean InfoNCE over row-aligned queries and positive keys against a queue
/// of negative keys (`m x d`, already unit length). Queries and keys are
/// L2-normalized first; the positive is part of the denominator.
pub fn info_nce_loss<T: Real>(tape: &mut Tape<T>, q: Var, k_pos: Var, queue: &Tensor<T>, tau: f64) -> Result<LossTerm> {
    let (qs, ks) = (tape.shape(q), tape.shape(k_pos));
    if qs != ks || (!queue.is_empty() && queue.cols() != qs[1]) {
        return Err(Error::Num(numcore::NumError::ShapeMismatch {
            op: "info_nce_loss",
            left: qs,
            right: queue.shape(),
        }));
    }
    let eps = T::of(1e-12);
    let qn = tape.normalize_rows(q, eps)?;
    let kn = tape.normalize_rows(k_pos, eps)?;
    let prod = tape.mul(qn, kn)?;
    let pos = tape.sum_cols(prod)?;
    let inv_tau = T::of(1.0 / tau);
    let pos = tape.scale(pos, inv_tau)?;
    if queue.rows() == 0 {
        let zero = tape.sub(pos, pos)?;
        return Ok(LossTerm {
            loss: tape.mean(zero)?,
            flagged: 1,
        });
    }
    let queue_t = tape.constant(queue.transpose());
    let neg = tape.matmul(qn, queue_t)?;
    let neg = tape.scale(neg, inv_tau)?;
    let logits = tape.concat_cols(&[pos, neg])?;
    let lse = tape.logsumexp(logits)?;
    let per_row = tape.sub(lse, pos)?;
    Ok(LossTerm {
        loss: tape.mean(per_row)?,
        flagged: 0,
    })
}
