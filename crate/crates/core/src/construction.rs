//! Index classification and the secrecy code specification.
//!
//! For each partition level the legitimate channel `V` (noise `σ_b`) is
//! polarized with degraded quantization and the eavesdropper channel `W`
//! (noise `σ_e`) with upgraded quantization, so that Bob's `Z` and Eve's `I`
//! are both upper bounds. With `t = 2^(-N^β)`,
//! `𝒢 = {i : Z_V(i) ≤ t}` and `𝒩 = {i : I_W(i) ≤ t}`, and
//!
//! | set | membership  | role                     |
//! |-----|-------------|--------------------------|
//! | 𝒜   | `𝒢 ∩ 𝒩`     | message                  |
//! | ℬ   | `𝒢 ∩ 𝒩ᶜ`    | random                   |
//! | 𝒞   | `𝒢ᶜ ∩ 𝒩`    | frozen                   |
//! | 𝒟   | `𝒢ᶜ ∩ 𝒩ᶜ`   | random, sent ahead       |
//!
//! Bits in 𝒟 are unreliable for Bob, so their values are carried in reserved
//! 𝒜 slots of the previous block of the same level (block chaining), and the
//! very first values travel in a seed block.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{build_equivalent_channel, build_partition_channel, QuantizerConfig};
use crate::error::{ensure, Error, Result};
use crate::lattice::{NoiseModel, PartitionChain};
use crate::par::{self, Execution};
use crate::polar::{check_n_exp, polarize_with, BitChannelStats};

/// Version of the JSON document written by [`SecrecyCodeSpec::write_json`].
pub const SPEC_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_BLOCKS: usize = 8;

/// `log₂` of the threshold `2^(-N^β)`.
pub fn log2_threshold(n: usize, beta: f64) -> f64 {
    -(n as f64).powf(beta)
}

fn below_threshold(x: f64, log2_t: f64) -> bool {
    x <= 0.0 || x.log2() <= log2_t
}

fn check_beta(beta: f64) -> Result<()> {
    ensure!(beta > 0.0 && beta < 0.5, "beta must lie in (0, 0.5), got {beta}");
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexPartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    pub d: Vec<usize>,
    pub beta: f64,
}

impl IndexPartition {
    pub fn len(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len() + self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that the four sets are sorted, disjoint and cover `[0, n)`.
    pub fn validate(&self, n: usize) -> Result<()> {
        check_beta(self.beta)?;
        let mut seen = vec![false; n];
        for set in [&self.a, &self.b, &self.c, &self.d] {
            ensure!(set.windows(2).all(|w| w[0] < w[1]), "index sets must be strictly increasing");
            for &i in set {
                ensure!(i < n, "index {i} outside [0, {n})");
                ensure!(!seen[i], "index {i} appears in two sets");
                seen[i] = true;
            }
        }
        ensure!(seen.iter().all(|&s| s), "index sets do not cover [0, {n})");
        Ok(())
    }

    /// Indices reliable for Bob, `𝒜 ∪ ℬ`, in increasing order.
    pub fn good(&self) -> Vec<usize> {
        merge_sorted(&self.a, &self.b)
    }

    /// Indices that are not frozen, `𝒜 ∪ ℬ ∪ 𝒟`.
    pub fn unfrozen(&self) -> Vec<usize> {
        merge_sorted(&merge_sorted(&self.a, &self.b), &self.d)
    }
}

fn merge_sorted(x: &[usize], y: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = x.iter().chain(y).copied().collect();
    out.sort_unstable();
    out
}

/// Splits `[0, N)` using Bob's stats `stats_v` and Eve's stats `stats_w`.
pub fn classify(stats_v: &[BitChannelStats], stats_w: &[BitChannelStats], beta: f64) -> Result<IndexPartition> {
    ensure!(stats_v.len() == stats_w.len(), "stat sequences differ in length ({} vs {})", stats_v.len(), stats_w.len());
    check_beta(beta)?;
    let t = log2_threshold(stats_v.len(), beta);
    let mut p = IndexPartition { a: vec![], b: vec![], c: vec![], d: vec![], beta };
    for (i, (v, w)) in stats_v.iter().zip(stats_w).enumerate() {
        let good = below_threshold(v.bhatt, t);
        let secure = below_threshold(w.mi, t);
        match (good, secure) {
            (true, true) => p.a.push(i),
            (true, false) => p.b.push(i),
            (false, true) => p.c.push(i),
            (false, false) => p.d.push(i),
        }
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Message,
    Random,
    Frozen,
}

pub fn assign_roles(p: &IndexPartition) -> Vec<Role> {
    let mut roles = vec![Role::Frozen; p.len()];
    for &i in &p.a {
        roles[i] = Role::Message;
    }
    for &i in p.b.iter().chain(&p.d) {
        roles[i] = Role::Random;
    }
    roles
}

/// Code for one partition level `Λ_level/Λ_{level+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCode {
    pub level: usize,
    pub partition: IndexPartition,
    /// Degraded-quantization stats of Bob's channel.
    pub bob: Vec<BitChannelStats>,
    /// Upgraded-quantization stats of Eve's channel.
    pub eve: Vec<BitChannelStats>,
    /// Lowest `|𝒟|` indices of `𝒜`, carrying the next block's 𝒟 values.
    pub chained_slots: Vec<usize>,
}

impl LevelCode {
    /// 𝒜 without the chained slots: positions carrying fresh message bits.
    pub fn message_slots(&self) -> Vec<usize> {
        let reserved: BTreeSet<usize> = self.chained_slots.iter().copied().collect();
        self.partition.a.iter().copied().filter(|i| !reserved.contains(i)).collect()
    }

    /// Positions of the seed frame that carry the first 𝒟 values: the lowest
    /// `|𝒟|` indices of `𝒜 ∪ ℬ`.
    pub fn seed_slots(&self) -> Vec<usize> {
        self.partition.good().into_iter().take(self.partition.d.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainingLayout {
    /// Blocks `k_i` per level after the seed frame (uniform across levels).
    pub blocks_per_level: Vec<usize>,
    /// Seed-frame positions carrying the first 𝒟 values, per level.
    pub seed_slots: Vec<Vec<usize>>,
}

impl ChainingLayout {
    pub fn blocks(&self) -> usize {
        self.blocks_per_level.first().copied().unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecrecyCodeSpec {
    pub format_version: u32,
    pub chain: PartitionChain,
    pub noise: NoiseModel,
    pub n_exp: u32,
    pub beta: f64,
    pub quantizer: QuantizerConfig,
    pub levels: Vec<LevelCode>,
    pub chaining: ChainingLayout,
}

impl SecrecyCodeSpec {
    pub fn block_length(&self) -> usize {
        1 << self.n_exp
    }

    pub fn partitions(&self) -> Vec<&IndexPartition> {
        self.levels.iter().map(|l| &l.partition).collect()
    }

    /// Fresh message bits per chained block, `Σ_i (|𝒜_i| - |𝒟_i|)`.
    pub fn message_bits(&self) -> usize {
        self.levels.iter().map(|l| l.partition.a.len() - l.chained_slots.len()).sum()
    }

    /// Checks every structural invariant, including nesting.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.format_version == SPEC_FORMAT_VERSION, "unsupported spec format version {}", self.format_version);
        check_n_exp(self.n_exp)?;
        check_beta(self.beta)?;
        let n = self.block_length();
        ensure!(
            self.levels.len() == self.chain.partitions(),
            "spec has {} levels but the chain has {} partitions",
            self.levels.len(),
            self.chain.partitions()
        );
        ensure!(
            self.chaining.blocks_per_level.len() == self.levels.len()
                && self.chaining.seed_slots.len() == self.levels.len(),
            "chaining layout does not match the number of levels"
        );
        check_blocks(&self.chaining.blocks_per_level)?;
        for (i, l) in self.levels.iter().enumerate() {
            ensure!(l.level == i + 1, "level {} stored at position {i}", l.level);
            l.partition.validate(n)?;
            ensure!((l.partition.beta - self.beta).abs() == 0.0, "level {} uses a different beta", l.level);
            ensure!(l.bob.len() == n && l.eve.len() == n, "level {} stats have wrong length", l.level);
            let expected: Vec<usize> = l.partition.a.iter().copied().take(l.partition.d.len()).collect();
            ensure!(
                l.partition.d.len() <= l.partition.a.len() && l.chained_slots == expected,
                "level {} chained slots are not the lowest |D| message positions",
                l.level
            );
            ensure!(self.chaining.seed_slots[i] == l.seed_slots(), "level {} seed layout mismatch", l.level);
        }
        check_nesting(&self.levels)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let spec: Self = serde_json::from_reader(r)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn check_blocks(blocks: &[usize]) -> Result<()> {
    ensure!(!blocks.is_empty(), "blocks_per_level must not be empty");
    ensure!(blocks.iter().all(|&k| k >= 1), "every level needs at least one block");
    ensure!(blocks.windows(2).all(|w| w[0] == w[1]), "block counts must be uniform across levels, got {blocks:?}");
    Ok(())
}

/// Frozen sets shrink going up the chain: `𝒞_i ⊇ 𝒞_{i+1}`.
fn check_nesting(levels: &[LevelCode]) -> Result<()> {
    for pair in levels.windows(2) {
        let lower: BTreeSet<usize> = pair[0].partition.c.iter().copied().collect();
        if let Some(bad) = pair[1].partition.c.iter().find(|i| !lower.contains(i)) {
            return Err(Error::Construction(format!(
                "nesting violated: index {bad} is frozen at level {} but not at level {}; \
                 try a larger alphabet budget",
                pair[1].level, pair[0].level
            )));
        }
    }
    Ok(())
}

/// Everything [`build_spec`] needs besides the chain and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub n_exp: u32,
    pub beta: f64,
    pub quantizer: QuantizerConfig,
    pub blocks_per_level: Vec<usize>,
}

impl ConstructionParams {
    /// Defaults for a chain with `partitions` coded levels.
    pub fn new(n_exp: u32, partitions: usize) -> Self {
        Self {
            n_exp,
            beta: DEFAULT_BETA,
            quantizer: QuantizerConfig::default(),
            blocks_per_level: vec![DEFAULT_BLOCKS; partitions],
        }
    }
}

pub fn build_spec(chain: &PartitionChain, noise: &NoiseModel, params: &ConstructionParams) -> Result<SecrecyCodeSpec> {
    build_spec_with(chain, noise, params, Execution::default())
}

pub fn build_spec_with(
    chain: &PartitionChain,
    noise: &NoiseModel,
    params: &ConstructionParams,
    exec: Execution,
) -> Result<SecrecyCodeSpec> {
    check_n_exp(params.n_exp)?;
    check_beta(params.beta)?;
    check_blocks(&params.blocks_per_level)?;
    ensure!(
        params.blocks_per_level.len() == chain.partitions(),
        "expected {} block counts, got {}",
        chain.partitions(),
        params.blocks_per_level.len()
    );
    let bob_q = params.quantizer.degraded();
    let eve_q = params.quantizer.upgraded();
    // Job 2ℓ is Bob at level ℓ+1, job 2ℓ+1 is Eve.
    let jobs = par::map_range(exec, 2 * chain.partitions(), |job| {
        let level = job / 2 + 1;
        let (sigma, q) = if job % 2 == 0 { (noise.sigma_b(), bob_q) } else { (noise.sigma_e(), eve_q) };
        let ch = build_partition_channel(chain, level, sigma, &q)?;
        polarize_with(&ch, params.n_exp, &q, exec)
    });
    let mut stats = jobs.into_iter().collect::<Result<Vec<_>>>()?.into_iter();

    let mut levels = Vec::with_capacity(chain.partitions());
    for level in 1..=chain.partitions() {
        let (bob, eve) = (stats.next().unwrap(), stats.next().unwrap());
        let partition = classify(&bob, &eve, params.beta)?;
        if partition.d.len() > partition.a.len() {
            return Err(Error::Construction(format!(
                "level {level} has {} unreliable insecure indices but only {} message slots to chain them",
                partition.d.len(),
                partition.a.len()
            )));
        }
        let chained_slots = partition.a[..partition.d.len()].to_vec();
        levels.push(LevelCode { level, partition, bob, eve, chained_slots });
    }
    check_nesting(&levels)?;
    let seed_slots = levels.iter().map(LevelCode::seed_slots).collect();
    Ok(SecrecyCodeSpec {
        format_version: SPEC_FORMAT_VERSION,
        chain: *chain,
        noise: *noise,
        n_exp: params.n_exp,
        beta: params.beta,
        quantizer: params.quantizer,
        levels,
        chaining: ChainingLayout { blocks_per_level: params.blocks_per_level.clone(), seed_slots },
    })
}

/// `Σ_i |𝒜_i| / N`, in bits per dimension.
pub fn secrecy_rate(spec: &SecrecyCodeSpec) -> f64 {
    let a: usize = spec.levels.iter().map(|l| l.partition.a.len()).sum();
    a as f64 / spec.block_length() as f64
}

/// Rate after paying for block chaining and the seed frame:
/// `k·Σ_i(|𝒜_i| - |𝒟_i|) / ((k+1)·N)`.
pub fn net_chained_rate(spec: &SecrecyCodeSpec) -> f64 {
    let k = spec.chaining.blocks() as f64;
    k * spec.message_bits() as f64 / ((k + 1.0) * spec.block_length() as f64)
}

/// Indices whose Eve-side bit-channel information enters the leakage bound
/// of one level: `𝒜` together with the frozen indices above `min 𝒜`.
///
/// Fixing the frozen bits to known values leaks through the frozen indices
/// that come after a message index in decoding order, so summing over `𝒜`
/// alone is not a valid bound.
pub fn leakage_indices(p: &IndexPartition) -> Vec<usize> {
    let Some(&first) = p.a.first() else {
        return Vec::new();
    };
    merge_sorted(&p.a, &p.c.iter().copied().filter(|&c| c > first).collect::<Vec<_>>())
}

/// Upper bound in bits on `I(M; Z^N)` from the upgraded Eve statistics.
pub fn leakage_bound(spec: &SecrecyCodeSpec) -> f64 {
    // Folded from +0 so that an empty sum prints as 0 rather than -0.
    spec.levels
        .iter()
        .flat_map(|l| leakage_indices(&l.partition).into_iter().map(move |j| l.eve[j].mi))
        .fold(0.0, |acc, x| acc + x)
}

/// The analytic envelope `r·N·2^(-N^β)`.
pub fn leakage_envelope(levels: usize, n: usize, beta: f64) -> f64 {
    levels as f64 * n as f64 * log2_threshold(n, beta).exp2()
}

/// Bit-channel comparison between the partition channel and the chain-rule
/// equivalent channel of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub level: usize,
    pub sigma: f64,
    pub n_exp: u32,
    pub bins: usize,
    pub max_mi_deviation: f64,
    pub max_bhatt_deviation: f64,
    /// `2·n_exp·δ(μ)`.
    pub tolerance: f64,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_mi_deviation <= self.tolerance && self.max_bhatt_deviation <= self.tolerance
    }
}

pub fn equivalence_check(
    chain: &PartitionChain,
    level: usize,
    sigma: f64,
    n_exp: u32,
    q: &QuantizerConfig,
) -> Result<EquivalenceReport> {
    check_n_exp(n_exp)?;
    let direct = build_partition_channel(chain, level, sigma, q)?;
    let equivalent = build_equivalent_channel(chain, level, sigma, q)?;
    let exec = Execution::default();
    let s1 = polarize_with(&direct, n_exp, q, exec)?;
    let s2 = polarize_with(&equivalent, n_exp, q, exec)?;
    let max_dev =
        |f: fn(&BitChannelStats) -> f64| s1.iter().zip(&s2).map(|(x, y)| (f(x) - f(y)).abs()).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        level,
        sigma,
        n_exp,
        bins: q.bins,
        max_mi_deviation: max_dev(|s| s.mi),
        max_bhatt_deviation: max_dev(|s| s.bhatt),
        tolerance: 2.0 * n_exp as f64 * q.delta(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(mi: f64, bhatt: f64) -> BitChannelStats {
        BitChannelStats { index: 0, mi, bhatt }
    }

    #[test]
    fn classify_extremes() {
        let v = vec![st(1.0, 0.0); 8];
        let w = vec![st(0.0, 1.0); 8];
        let p = classify(&v, &w, 0.3).unwrap();
        assert_eq!(p.a, (0..8).collect::<Vec<_>>());
        assert!(p.b.is_empty() && p.c.is_empty() && p.d.is_empty());
        assert!(classify(&v, &w[..4], 0.3).is_err());
        assert!(classify(&v, &w, 0.5).is_err());
        assert!(classify(&v, &w, 0.0).is_err());
    }

    #[test]
    fn identical_statistics_have_no_secure_reliable_index() {
        // Any BMS has I + Z ≥ 1, so both cannot sit below a tiny threshold.
        let s: Vec<_> = (0..64).map(|i| st(i as f64 / 63.0, 1.0 - i as f64 / 63.0)).collect();
        assert!(classify(&s, &s, 0.3).unwrap().a.is_empty());
    }

    #[test]
    fn threshold_is_inclusive() {
        let n = 16;
        let t = log2_threshold(n, 0.25).exp2();
        assert_eq!(t, 0.25);
        let v = vec![st(1.0, t); n];
        let w = vec![st(t, 1.0); n];
        assert_eq!(classify(&v, &w, 0.25).unwrap().a.len(), n);
    }

    #[test]
    fn roles_follow_the_sets() {
        let p = IndexPartition { a: vec![0], b: vec![1], c: vec![2], d: vec![3], beta: 0.3 };
        assert_eq!(assign_roles(&p), vec![Role::Message, Role::Random, Role::Frozen, Role::Random]);
        let frozen = IndexPartition { a: vec![], b: vec![], c: (0..4).collect(), d: vec![], beta: 0.3 };
        assert!(assign_roles(&frozen).iter().all(|&r| r == Role::Frozen));
        assert!(frozen.validate(4).is_ok());
        assert!(frozen.validate(5).is_err());
    }

    #[test]
    fn leakage_indices_skip_leading_frozen_positions() {
        let p = IndexPartition { a: vec![3, 6], b: vec![0], c: vec![1, 4, 7], d: vec![2, 5], beta: 0.3 };
        assert_eq!(leakage_indices(&p), vec![3, 4, 6, 7]);
        let none = IndexPartition { a: vec![], b: vec![], c: vec![0, 1], d: vec![], beta: 0.3 };
        assert!(leakage_indices(&none).is_empty());
    }

    #[test]
    fn nearly_noiseless_single_level() {
        let chain = PartitionChain::new(2.5, 2).unwrap();
        let noise = NoiseModel::new(0.01, 100.0).unwrap();
        let params = ConstructionParams { beta: 0.2, ..ConstructionParams::new(3, 1) };
        let spec = build_spec(&chain, &noise, &params).unwrap();
        let t = log2_threshold(8, 0.2);
        let l = &spec.levels[0];
        let expect: Vec<usize> = (0..8).filter(|&i| below_threshold(l.bob[i].bhatt, t)).collect();
        assert_eq!(l.partition.a, expect);
        assert_eq!(l.partition.a.len(), 8);
        assert_eq!(secrecy_rate(&spec), 1.0);
        spec.validate().unwrap();
    }

    #[test]
    fn spec_round_trips_through_json() {
        let chain = PartitionChain::new(2.5, 3).unwrap();
        let noise = NoiseModel::new(1.0, 2.0).unwrap();
        let mut params = ConstructionParams::new(5, 2);
        params.quantizer = QuantizerConfig::new(32).unwrap();
        let spec = build_spec(&chain, &noise, &params).unwrap();
        let mut buf = Vec::new();
        spec.write_json(&mut buf).unwrap();
        let back = SecrecyCodeSpec::read_json(buf.as_slice()).unwrap();
        assert!(back == spec, "spec changed in a JSON round trip");
        let rate = spec.levels.iter().map(|l| l.partition.a.len()).sum::<usize>() as f64 / 32.0;
        assert_eq!(secrecy_rate(&back), rate);

        let mut broken = spec.clone();
        broken.levels[0].partition.a.push(0);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn bad_parameters_rejected() {
        let chain = PartitionChain::new(2.5, 3).unwrap();
        let noise = NoiseModel::new(1.0, 2.0).unwrap();
        let mut params = ConstructionParams::new(4, 2);
        params.blocks_per_level = vec![8, 4];
        assert!(build_spec(&chain, &noise, &params).is_err());
        params.blocks_per_level = vec![8];
        assert!(build_spec(&chain, &noise, &params).is_err());
        params.blocks_per_level = vec![0, 0];
        assert!(build_spec(&chain, &noise, &params).is_err());
    }

    #[test]
    fn equivalence_at_small_length() {
        let chain = PartitionChain::new(2.5, 3).unwrap();
        let q = QuantizerConfig::new(128).unwrap();
        for level in [1, 2] {
            let r = equivalence_check(&chain, level, 1.0, 3, &q).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }
}
