//! Channel polarization with alphabet reduction.
//!
//! Synthesized bit-channel `i` of a length-`N = 2^n` code (generator
//! `F^{⊗n}`, no bit reversal) is reached by applying the minus or plus
//! transform once per stage. The most significant bit of `i` selects the
//! first transform applied to the raw channel, 0 for minus and 1 for plus.

use serde::{Deserialize, Serialize};

use crate::channel::{channel_bhattacharyya, channel_mi, DiscreteBms, QuantizerConfig};
use crate::error::{ensure, Result};
use crate::par::{self, Execution};

/// Largest supported `log2 N`.
pub const MAX_N_EXP: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitChannelStats {
    pub index: usize,
    /// Mutual information in bits.
    pub mi: f64,
    /// Bhattacharyya parameter.
    pub bhatt: f64,
}

pub(crate) fn check_n_exp(n_exp: u32) -> Result<()> {
    ensure!(n_exp >= 1, "block length exponent must be at least 1");
    ensure!(n_exp <= MAX_N_EXP, "block length 2^{n_exp} is too large");
    Ok(())
}

/// Statistics of all `2^n_exp` bit-channels synthesized from `c`, reducing
/// every intermediate channel to the budget of `q` in its direction.
pub fn polarize(c: &DiscreteBms, n_exp: u32, q: &QuantizerConfig) -> Result<Vec<BitChannelStats>> {
    polarize_with(c, n_exp, q, Execution::default())
}

pub fn polarize_with(
    c: &DiscreteBms,
    n_exp: u32,
    q: &QuantizerConfig,
    exec: Execution,
) -> Result<Vec<BitChannelStats>> {
    check_n_exp(n_exp)?;
    let mut nodes = vec![c.reduce(q)];
    for _ in 0..n_exp {
        let children = par::map_slice(exec, &nodes, |node| [node.minus().reduce(q), node.plus().reduce(q)]);
        nodes = children.into_iter().flatten().collect();
    }
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(index, ch)| BitChannelStats { index, mi: channel_mi(ch), bhatt: channel_bhattacharyya(ch) })
        .collect())
}
