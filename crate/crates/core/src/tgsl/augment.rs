use std::collections::BTreeMap;

use numcore::{Real, Tape, Var};

use super::{CandidateEdge, Selection};
use crate::encoders::{AddedEdge, GraphView};
use crate::error::Result;

/// Selected candidate edges with their features and weights; lives on the
/// tape it was built on and is rebuilt for every batch.
#[derive(Debug, Clone, Default)]
pub struct AugmentedView {
    pub edges: Vec<AddedEdge>,
    /// Candidate index of each added edge.
    pub candidates: Vec<usize>,
    /// `edges.len() x edge_dim` projected features and `edges.len() x 1`
    /// weights; absent when nothing was added.
    pub vars: Option<(Var, Var)>,
}

impl AugmentedView {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// `base` with the added edges inserted.
    pub fn apply<'a>(&self, base: GraphView<'a>) -> GraphView<'a> {
        match self.vars {
            Some((f, w)) => base.with_added(&self.edges, f, w),
            None => base,
        }
    }
}

/// Collects the selected candidates; repeated `(src, dst, t_new)` triples
/// keep only the larger weight.
pub fn build_augmented_view<T: Real>(tape: &mut Tape<T>, cands: &[CandidateEdge], selection: &Selection, f_hat: Var) -> Result<AugmentedView> {
    let rho = tape.value(selection.rho);
    let mut best: BTreeMap<(usize, usize, u64), usize> = BTreeMap::new();
    for &i in &selection.selected {
        let c = &cands[i];
        let key = (c.src, c.dst, c.t_new.to_bits());
        best.entry(key)
            .and_modify(|j| {
                if rho.data()[i] > rho.data()[*j] {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut kept: Vec<usize> = best.into_values().collect();
    kept.sort_unstable();
    if kept.is_empty() {
        return Ok(AugmentedView::empty());
    }
    let edges = kept
        .iter()
        .map(|&i| AddedEdge {
            src: cands[i].src,
            dst: cands[i].dst,
            timestamp: cands[i].t_new,
        })
        .collect();
    let f = tape.gather_rows(f_hat, &kept)?;
    let w = tape.gather_rows(selection.rho, &kept)?;
    Ok(AugmentedView {
        edges,
        candidates: kept,
        vars: Some((f, w)),
    })
}
