use numcore::{Real, Tape, Tensor, Var};
use rand::distributions::Open01;
use rand::Rng;

use super::CandidateEdge;
use crate::encoders::TimeEncoding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Stochastic,
    /// Logistic noise fixed at 0 (`u = 0.5`).
    NoiseFree,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// `n_cand x 1` scores `z_hat . f_hat`.
    pub logits: Var,
    /// `n_cand x 1` relaxed weights.
    pub rho: Var,
    /// Selected candidate indices, ascending.
    pub selected: Vec<usize>,
}

/// `ln u - ln(1 - u)`.
pub fn logistic_noise(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

pub fn relaxed_weight(m: f64, noise: f64, tau: f64) -> f64 {
    numcore::sigmoid((noise + m) / tau)
}

/// Indices of the `k` largest `values` within each group (all of them when
/// a group is smaller), ascending. Earlier indices win ties.
pub fn top_k_per_group(values: &[f64], groups: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| groups[a].cmp(&groups[b]).then(values[b].total_cmp(&values[a])).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut taken = 0;
    let mut current = None;
    for i in order {
        if current != Some(groups[i]) {
            current = Some(groups[i]);
            taken = 0;
        }
        if taken < k {
            out.push(i);
            taken += 1;
        }
    }
    out.sort_unstable();
    out
}

/// Projects row-aligned context vectors `z` and candidate features `f` to
/// each candidate's `t_new`: `z * s(t_new - t_max)` and
/// `f * s(t_new - t_sample)`.
pub fn time_map<T: Real>(tape: &mut Tape<T>, z: Var, f: Var, cands: &[CandidateEdge], t_max: f64, te: &TimeEncoding) -> Result<(Var, Var)> {
    let n = cands.len();
    let mut sz = Tensor::zeros(n, te.d);
    let mut sf = Tensor::zeros(n, te.d);
    for (i, c) in cands.iter().enumerate() {
        for (o, x) in sz.row_mut(i).iter_mut().zip(te.context(c.t_new - t_max)) {
            *o = T::of(x);
        }
        for (o, x) in sf.row_mut(i).iter_mut().zip(te.context(c.t_new - c.t_sample)) {
            *o = T::of(x);
        }
    }
    let sz = tape.constant(sz);
    let sf = tape.constant(sf);
    Ok((tape.mul(z, sz)?, tape.mul(f, sf)?))
}

/// Scores every candidate by `z_hat . f_hat`, relaxes it with logistic noise
/// and keeps the `k` largest weights per source.
#[allow(clippy::too_many_arguments)]
pub fn gumbel_topk_select<T: Real, R: Rng>(tape: &mut Tape<T>, z_hat: Var, f_hat: Var, cands: &[CandidateEdge], k: usize, tau: f64, mode: NoiseMode, rng: &mut R) -> Result<Selection> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let prod = tape.mul(z_hat, f_hat)?;
    let logits = tape.sum_cols(prod)?;
    let noise: Vec<f64> = match mode {
        NoiseMode::Stochastic => cands.iter().map(|_| logistic_noise(rng.sample(Open01))).collect(),
        NoiseMode::NoiseFree => vec![0.0; cands.len()],
    };
    let noise_var = tape.constant(Tensor::col_vector(noise.iter().map(|&x| T::of(x)).collect()));
    let pre = tape.add(logits, noise_var)?;
    let pre = tape.scale(pre, T::of(1.0 / tau))?;
    let rho = tape.sigmoid(pre)?;
    // ranking on the pre-activation avoids ties from saturated sigmoids
    let ranked: Vec<f64> = tape.value(pre).data().iter().map(|x| x.f64()).collect();
    let groups: Vec<usize> = cands.iter().map(|c| c.source_slot).collect();
    let selected = top_k_per_group(&ranked, &groups, k);
    let mut tag = selected.len() as u64;
    for &i in &selected {
        tag = tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64 + 1);
    }
    tape.note_branch(tag);
    Ok(Selection { logits, rho, selected })
}
