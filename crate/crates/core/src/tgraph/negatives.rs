use rand::Rng;

use super::store::NodeId;
use crate::error::{Error, Result};

/// One uniform destination per positive, drawn from `pool` and never equal
/// to that positive's destination.
pub fn sample_negatives<R: Rng>(positive_dsts: &[NodeId], pool: &[NodeId], rng: &mut R) -> Result<Vec<NodeId>> {
    if pool.is_empty() {
        return Err(Error::Config("negative pool is empty".into()));
    }
    positive_dsts
        .iter()
        .map(|&dst| {
            if pool.len() == 1 {
                return if pool[0] == dst {
                    Err(Error::DegeneratePool(dst))
                } else {
                    Ok(pool[0])
                };
            }
            loop {
                let cand = pool[rng.gen_range(0..pool.len())];
                if cand != dst {
                    return Ok(cand);
                }
            }
        })
        .collect()
}
