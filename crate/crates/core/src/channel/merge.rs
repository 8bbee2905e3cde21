//! Greedy alphabet reduction in the style of Tal and Vardy.
//!
//! Pairs are sorted by crossover `p1/(p0+p1)`. Degrading merges add two
//! neighbouring pairs (an output merge, which can only lose information).
//! Upgrading merges remove an interior pair by splitting its mass onto its
//! two neighbours at their own likelihood ratios; the original channel is a
//! degraded version of the result. Each step takes the move that changes
//! mutual information the least.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{h2, DiscreteBms, MergeDirection, OutputPair, QuantizerConfig};
use crate::error::Result;

/// Reduces `c` to at most `μ` output symbols; the result is degraded w.r.t. `c`.
pub fn degrading_merge(c: &DiscreteBms, q: &QuantizerConfig) -> Result<DiscreteBms> {
    Ok(reduce_pairs(c.pairs().to_vec(), q.pair_budget(), MergeDirection::Degrade))
}

/// Reduces `c` to at most `μ` output symbols; the result is upgraded w.r.t. `c`.
pub fn upgrading_merge(c: &DiscreteBms, q: &QuantizerConfig) -> Result<DiscreteBms> {
    Ok(reduce_pairs(c.pairs().to_vec(), q.pair_budget(), MergeDirection::Upgrade))
}

pub(crate) fn reduce_pairs(mut pairs: Vec<OutputPair>, budget: usize, dir: MergeDirection) -> DiscreteBms {
    if pairs.len() <= budget {
        return DiscreteBms::from_canonical(pairs);
    }
    pairs.retain(|p| p.mass() > 0.0);
    pairs.sort_by(|x, y| x.crossover().total_cmp(&y.crossover()));
    // Pairs with identical likelihood ratio merge without loss in either direction.
    let mut merged: Vec<OutputPair> = Vec::with_capacity(pairs.len());
    for p in pairs {
        match merged.last_mut() {
            Some(last) if last.crossover() == p.crossover() => {
                last.p0 += p.p0;
                last.p1 += p.p1;
            }
            _ => merged.push(p),
        }
    }
    if merged.len() <= budget {
        return DiscreteBms::from_canonical(merged);
    }
    let out = match dir {
        MergeDirection::Degrade => greedy_degrade(merged, budget),
        MergeDirection::Upgrade => greedy_upgrade(merged, budget.max(2)),
    };
    DiscreteBms::from_canonical(out)
}

const NONE: usize = usize::MAX;

/// Doubly linked list over sorted pairs, with per-node versions used to
/// invalidate stale heap entries.
struct Chain {
    pairs: Vec<OutputPair>,
    prev: Vec<usize>,
    next: Vec<usize>,
    version: Vec<u32>,
    alive: usize,
}

impl Chain {
    fn new(pairs: Vec<OutputPair>) -> Self {
        let n = pairs.len();
        Self {
            prev: (0..n).map(|i| if i == 0 { NONE } else { i - 1 }).collect(),
            next: (0..n).map(|i| if i + 1 == n { NONE } else { i + 1 }).collect(),
            version: vec![0; n],
            alive: n,
            pairs,
        }
    }

    fn unlink(&mut self, i: usize) {
        let (p, n) = (self.prev[i], self.next[i]);
        if p != NONE {
            self.next[p] = n;
        }
        if n != NONE {
            self.prev[n] = p;
        }
        self.version[i] = u32::MAX;
        self.alive -= 1;
    }

    fn into_pairs(self) -> Vec<OutputPair> {
        let mut out = Vec::with_capacity(self.alive);
        let mut i = (0..self.pairs.len()).find(|&i| self.version[i] != u32::MAX && self.prev[i] == NONE);
        while let Some(k) = i {
            out.push(self.pairs[k]);
            i = (self.next[k] != NONE).then_some(self.next[k]);
        }
        out
    }
}

/// Heap key: non-negative cost compared through its bit pattern, then index.
type Entry = Reverse<(u64, usize, u32, u32)>;

fn key(cost: f64) -> u64 {
    cost.max(0.0).to_bits()
}

fn entropy_mass(p: &OutputPair) -> f64 {
    p.mass() * h2(p.crossover())
}

fn degrade_cost(a: &OutputPair, b: &OutputPair) -> f64 {
    let m = OutputPair { p0: a.p0 + b.p0, p1: a.p1 + b.p1 };
    entropy_mass(&m) - entropy_mass(a) - entropy_mass(b)
}

fn greedy_degrade(pairs: Vec<OutputPair>, budget: usize) -> Vec<OutputPair> {
    let mut chain = Chain::new(pairs);
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(chain.pairs.len());
    let push = |heap: &mut BinaryHeap<Entry>, chain: &Chain, i: usize| {
        let j = chain.next[i];
        if j != NONE {
            let cost = degrade_cost(&chain.pairs[i], &chain.pairs[j]);
            heap.push(Reverse((key(cost), i, chain.version[i], chain.version[j])));
        }
    };
    for i in 0..chain.pairs.len() {
        push(&mut heap, &chain, i);
    }
    while chain.alive > budget {
        let Some(Reverse((_, i, vi, vj))) = heap.pop() else {
            break;
        };
        let j = chain.next[i];
        if chain.version[i] != vi || j == NONE || chain.version[j] != vj {
            continue;
        }
        let absorbed = chain.pairs[j];
        chain.pairs[i].p0 += absorbed.p0;
        chain.pairs[i].p1 += absorbed.p1;
        chain.unlink(j);
        // Bumping i invalidates both edges touching it.
        chain.version[i] += 1;
        let p = chain.prev[i];
        if p != NONE {
            push(&mut heap, &chain, p);
        }
        push(&mut heap, &chain, i);
    }
    chain.into_pairs()
}

/// Mass split of the middle pair onto its neighbours, `(to_prev, to_next)`.
fn split(prev: f64, mid: f64, next: f64, mass: f64) -> (f64, f64) {
    if next <= prev {
        return (mass, 0.0);
    }
    let to_next = (mass * (mid - prev) / (next - prev)).clamp(0.0, mass);
    (mass - to_next, to_next)
}

fn upgrade_cost(chain: &Chain, i: usize) -> f64 {
    let (p, n) = (chain.prev[i], chain.next[i]);
    let (cp, cn) = (chain.pairs[p].crossover(), chain.pairs[n].crossover());
    let mid = &chain.pairs[i];
    let (wp, wn) = split(cp, mid.crossover(), cn, mid.mass());
    entropy_mass(mid) - wp * h2(cp) - wn * h2(cn)
}

fn greedy_upgrade(pairs: Vec<OutputPair>, budget: usize) -> Vec<OutputPair> {
    let mut chain = Chain::new(pairs);
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(chain.pairs.len());
    let push = |heap: &mut BinaryHeap<Entry>, chain: &Chain, i: usize| {
        let (p, n) = (chain.prev[i], chain.next[i]);
        if p != NONE && n != NONE {
            heap.push(Reverse((key(upgrade_cost(chain, i)), i, chain.version[i], 0)));
        }
    };
    for i in 0..chain.pairs.len() {
        push(&mut heap, &chain, i);
    }
    while chain.alive > budget {
        let Some(Reverse((_, i, vi, _))) = heap.pop() else {
            break;
        };
        if chain.version[i] != vi {
            continue;
        }
        let (p, n) = (chain.prev[i], chain.next[i]);
        let (cp, cn) = (chain.pairs[p].crossover(), chain.pairs[n].crossover());
        let mid = chain.pairs[i];
        let (wp, wn) = split(cp, mid.crossover(), cn, mid.mass());
        let add = |pair: &mut OutputPair, w: f64, c: f64| {
            let extra = OutputPair::from_mass(w, c);
            pair.p0 += extra.p0;
            pair.p1 += extra.p1;
        };
        add(&mut chain.pairs[p], wp, cp);
        add(&mut chain.pairs[n], wn, cn);
        chain.unlink(i);
        for k in [p, n] {
            chain.version[k] += 1;
            push(&mut heap, &chain, k);
        }
    }
    chain.into_pairs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_bhattacharyya, channel_mi};

    fn random_channel(n: usize, seed: u64) -> DiscreteBms {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let total: f64 = raw.iter().map(|(a, b)| a + b).sum();
        DiscreteBms::new(raw.into_iter().map(|(a, b)| OutputPair::new(a / total, b / total)).collect()).unwrap()
    }

    #[test]
    fn small_channels_pass_through() {
        let c = DiscreteBms::bsc(0.2).unwrap();
        let q = QuantizerConfig::new(8).unwrap();
        assert_eq!(degrading_merge(&c, &q).unwrap(), c);
        assert_eq!(upgrading_merge(&c, &q).unwrap(), c);
    }

    #[test]
    fn identical_likelihood_ratios_merge_losslessly() {
        let mut pairs = vec![OutputPair::new(0.1, 0.05), OutputPair::new(0.2, 0.1)];
        for i in 0..6 {
            let w = 0.55 / 6.0;
            let c = 0.1 + 0.05 * i as f64;
            pairs.push(OutputPair::from_mass(w, c));
        }
        let c = DiscreteBms::new(pairs).unwrap();
        let q = QuantizerConfig::new(14).unwrap();
        let m = degrading_merge(&c, &q).unwrap();
        assert_eq!(m.pairs().len(), 7);
        assert!((channel_mi(&m) - channel_mi(&c)).abs() < 1e-12);
        assert!((channel_bhattacharyya(&m) - channel_bhattacharyya(&c)).abs() < 1e-12);
    }

    #[test]
    fn degrading_and_upgrading_bracket_the_channel() {
        let c = random_channel(4096, 7);
        let q = QuantizerConfig::new(256).unwrap();
        let down = degrading_merge(&c, &q).unwrap();
        let up = upgrading_merge(&c, &q).unwrap();
        assert!(down.alphabet_size() <= 256 && up.alphabet_size() <= 256);
        let (i, z) = (channel_mi(&c), channel_bhattacharyya(&c));
        assert!(channel_mi(&down) <= i + 1e-15);
        assert!(channel_bhattacharyya(&down) >= z - 1e-15);
        assert!(channel_mi(&up) >= i - 1e-15);
        assert!(channel_bhattacharyya(&up) <= z + 1e-15);
        assert!(i - channel_mi(&down) <= 1e-3);
        assert!(channel_mi(&up) - i <= 1e-3);
        let mass: f64 = up.pairs().iter().map(OutputPair::mass).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_reduction_passes_through_larger_budgets() {
        // Reducing to a smaller budget continues the same greedy sequence,
        // so quality is monotone in the budget.
        let c = random_channel(2000, 11);
        let mut last_down = 0.0;
        let mut last_up = f64::INFINITY;
        for bins in [16, 64, 256, 1024] {
            let q = QuantizerConfig::new(bins).unwrap();
            let down = channel_mi(&degrading_merge(&c, &q).unwrap());
            let up = channel_mi(&upgrading_merge(&c, &q).unwrap());
            assert!(down >= last_down && up <= last_up);
            last_down = down;
            last_up = up;
        }
    }
}
