//! Experiment harness: Monte-Carlo reliability, rate tables and leakage.
//!
//! Trial `t` of an experiment with seed `s` draws all of its randomness from
//! ChaCha8 seeded with `s` on stream `t`, so results do not depend on how
//! trials are scheduled across threads. Counts are summed in trial order.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{build_partition_channel, MergeDirection, QuantizerConfig};
use crate::codec::{
    chain_decode_sequence_with_sigma, chain_encode_sequence, encode_single, multistage_decode_with_sigma,
    polar_transform, zero_frozen,
};
use crate::construction::{
    build_spec_with, leakage_bound, leakage_envelope, secrecy_rate, ConstructionParams, SecrecyCodeSpec,
};
use crate::error::{ensure, Error, Result};
use crate::lattice::{capacity_of_period, entropy_of_period, gaussian_entropy, reduce, NoiseModel, PartitionChain};
use crate::par::{self, Execution};

/// Seeded Monte-Carlo settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trials: u64,
    pub seed: u64,
    /// Noise deviation of the simulated channel; the spec's `σ_b` when absent.
    /// Zero gives a noiseless channel.
    #[serde(default)]
    pub channel_sigma: Option<f64>,
    #[serde(default)]
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self { trials, seed, channel_sigma: None, execution: Execution::default() }
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.trials >= 1, "at least one trial is required");
        if let Some(s) = self.channel_sigma {
            ensure!(s.is_finite() && s >= 0.0, "channel noise must be non-negative, got {s}");
        }
        Ok(())
    }
}

/// The RNG of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let n = trials as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FerEstimate {
    pub trials: u64,
    pub errors: u64,
    pub fer: f64,
    /// Binomial standard error `√(p(1-p)/n)`.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl FerEstimate {
    pub fn new(errors: u64, trials: u64) -> Self {
        let fer = errors as f64 / trials as f64;
        let (ci_low, ci_high) = wilson_interval(errors, trials);
        Self { trials, errors, fer, std_error: (fer * (1.0 - fer) / trials as f64).sqrt(), ci_low, ci_high }
    }
}

/// Bob's reliability over chained sequences of `k` blocks plus a seed frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BobReport {
    pub n: usize,
    pub blocks: usize,
    pub sigma: f64,
    /// A sequence fails if any of its `k` messages is decoded wrongly.
    pub sequence: FerEstimate,
    /// Failed blocks over all `k·trials` blocks.
    pub block: FerEstimate,
    /// Trials in which a given level had at least one wrong 𝒜 bit.
    pub level_errors: Vec<u64>,
}

/// Stand-alone blocks whose 𝒟 values are known to the receiver, which is
/// what chaining provides to every regular block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleBlockReport {
    pub n: usize,
    pub sigma: f64,
    pub block: FerEstimate,
    pub level_errors: Vec<u64>,
}

fn channel<R: Rng + ?Sized>(symbols: &[f64], sigma: f64, top: f64, rng: &mut R) -> Vec<f64> {
    symbols
        .iter()
        .map(|&x| {
            let w: f64 = StandardNormal.sample(rng);
            reduce(x + sigma * w, top)
        })
        .collect()
}

fn random_message<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| (rng.next_u32() & 1) as u8).collect()
}

fn a_errors(spec: &SecrecyCodeSpec, sent: &[Vec<u8>], got: &[Vec<u8>]) -> Vec<bool> {
    spec.levels
        .iter()
        .zip(sent.iter().zip(got))
        .map(|(l, (s, g))| l.partition.a.iter().any(|&i| s[i] != g[i]))
        .collect()
}

/// Seeded block-chained simulation over AWGN plus the mod-`Λ_r` front end.
pub fn simulate_bob(spec: &SecrecyCodeSpec, cfg: &ExperimentConfig) -> Result<BobReport> {
    cfg.validate()?;
    let sigma = cfg.channel_sigma.unwrap_or(spec.noise.sigma_b());
    let decoder_sigma = spec.noise.sigma_b();
    let top = spec.chain.volume_unchecked(spec.chain.levels());
    let k = spec.chaining.blocks();
    let outcomes = par::map_range(cfg.execution, cfg.trials as usize, |t| -> Result<(u64, Vec<bool>)> {
        let mut rng = trial_rng(cfg.seed, t as u64);
        let messages: Vec<Vec<u8>> = (0..k).map(|_| random_message(&mut rng, spec.message_bits())).collect();
        let tx = chain_encode_sequence(&messages, spec, &mut rng)?;
        let obs: Vec<Vec<f64>> = tx.frames().iter().map(|f| channel(&f.symbols, sigma, top, &mut rng)).collect();
        let rx = chain_decode_sequence_with_sigma(&obs, spec, decoder_sigma)?;
        let mut bad_blocks = 0;
        let mut levels = vec![false; spec.levels.len()];
        for ((m, sent), got) in messages.iter().zip(&tx.blocks).zip(&rx.blocks) {
            if got.message != *m {
                bad_blocks += 1;
            }
            for (flag, e) in levels.iter_mut().zip(a_errors(spec, &sent.inputs, &got.inputs)) {
                *flag |= e;
            }
        }
        Ok((bad_blocks, levels))
    });
    let mut seq_errors = 0;
    let mut block_errors = 0;
    let mut level_errors = vec![0u64; spec.levels.len()];
    for o in outcomes {
        let (bad, levels) = o?;
        block_errors += bad;
        seq_errors += u64::from(bad > 0);
        for (c, e) in level_errors.iter_mut().zip(levels) {
            *c += u64::from(e);
        }
    }
    Ok(BobReport {
        n: spec.block_length(),
        blocks: k,
        sigma,
        sequence: FerEstimate::new(seq_errors, cfg.trials),
        block: FerEstimate::new(block_errors, cfg.trials * k as u64),
        level_errors,
    })
}

/// Seeded simulation of stand-alone blocks with genie-known 𝒟 values.
pub fn simulate_single_block(spec: &SecrecyCodeSpec, cfg: &ExperimentConfig) -> Result<SingleBlockReport> {
    cfg.validate()?;
    let sigma = cfg.channel_sigma.unwrap_or(spec.noise.sigma_b());
    let top = spec.chain.volume_unchecked(spec.chain.levels());
    let frozen = zero_frozen(spec);
    let outcomes = par::map_range(cfg.execution, cfg.trials as usize, |t| -> Result<Vec<bool>> {
        let mut rng = trial_rng(cfg.seed, t as u64);
        let msg = random_message(&mut rng, spec.message_bits());
        let block = encode_single(&msg, &mut rng, &frozen, spec)?;
        let d: Vec<Vec<u8>> =
            spec.levels.iter().zip(&block.inputs).map(|(l, u)| l.partition.d.iter().map(|&j| u[j]).collect()).collect();
        let obs = channel(&block.frame.symbols, sigma, top, &mut rng);
        let out = multistage_decode_with_sigma(&obs, spec, &frozen, Some(&d), spec.noise.sigma_b())?;
        Ok(a_errors(spec, &block.inputs, &out.inputs))
    });
    let mut errors = 0;
    let mut level_errors = vec![0u64; spec.levels.len()];
    for o in outcomes {
        let levels = o?;
        errors += u64::from(levels.iter().any(|&e| e));
        for (c, e) in level_errors.iter_mut().zip(levels) {
            *c += u64::from(e);
        }
    }
    Ok(SingleBlockReport { n: spec.block_length(), sigma, block: FerEstimate::new(errors, cfg.trials), level_errors })
}

/// One operating point of the rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateGridPoint {
    pub alpha: f64,
    pub levels: usize,
    pub sigma_b: f64,
    pub sigma_e: f64,
}

/// Infinite-length rates at one operating point, in bits unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTableRow {
    pub alpha: f64,
    pub levels: usize,
    pub sigma_b: f64,
    pub sigma_e: f64,
    /// `C(V_i)`, Bob's partition capacities.
    pub capacity_bob: Vec<f64>,
    /// `C(W_i)`, Eve's partition capacities.
    pub capacity_eve: Vec<f64>,
    /// `Σ_i (C(V_i) - C(W_i))`.
    pub rate: f64,
    /// `½·log₂(σ_e²/σ_b²)`.
    pub bound: f64,
    pub gap: f64,
    pub gap_nats: f64,
    /// `C(Λ_1, σ_b²) - C(Λ_1, σ_e²)`.
    pub eps_1: f64,
    /// `½log₂(2πeσ_b²) - h(Λ_r, σ_b²)`.
    pub eps_b: f64,
    /// `½log₂(2πeσ_e²) - h(Λ_r, σ_e²)`.
    pub eps_e: f64,
}

pub fn rate_row(p: &RateGridPoint) -> Result<RateTableRow> {
    let chain = PartitionChain::new(p.alpha, p.levels)?;
    for s in [p.sigma_b, p.sigma_e] {
        ensure!(s.is_finite() && s > 0.0, "noise deviation must be positive, got {s}");
    }
    ensure!(p.sigma_e >= p.sigma_b, "eavesdropper noise must not be below legitimate noise");
    let caps = |sigma: f64| -> Vec<f64> {
        (1..=chain.levels()).map(|l| capacity_of_period(chain.volume_unchecked(l), sigma)).collect()
    };
    let (cb, ce) = (caps(p.sigma_b), caps(p.sigma_e));
    let capacity_bob: Vec<f64> = cb.windows(2).map(|w| w[1] - w[0]).collect();
    let capacity_eve: Vec<f64> = ce.windows(2).map(|w| w[1] - w[0]).collect();
    let rate: f64 = capacity_bob.iter().zip(&capacity_eve).map(|(b, e)| b - e).sum();
    let bound = (p.sigma_e / p.sigma_b).log2();
    let top = chain.volume_unchecked(chain.levels());
    let gap = bound - rate;
    Ok(RateTableRow {
        alpha: p.alpha,
        levels: p.levels,
        sigma_b: p.sigma_b,
        sigma_e: p.sigma_e,
        capacity_bob,
        capacity_eve,
        rate,
        bound,
        gap,
        gap_nats: gap * LN_2,
        eps_1: cb[0] - ce[0],
        eps_b: gaussian_entropy(p.sigma_b) - entropy_of_period(top, p.sigma_b),
        eps_e: gaussian_entropy(p.sigma_e) - entropy_of_period(top, p.sigma_e),
    })
}

pub fn rate_table(grid: &[RateGridPoint]) -> Result<Vec<RateTableRow>> {
    par::map_slice(Execution::default(), grid, rate_row).into_iter().collect()
}

/// Largest number of joint output sequences [`exact_leakage_small`] enumerates.
pub const EXACT_LEAKAGE_LIMIT: usize = 1 << 12;

/// Exact `I(M; Z^N)` in bits for a one-level code, with Eve's channel
/// quantized by `q`. Every 𝒜 bit is a message bit, 𝒟 and ℬ are uniform and
/// 𝒞 is frozen to zero.
pub fn exact_leakage_small(spec: &SecrecyCodeSpec, q: &QuantizerConfig) -> Result<f64> {
    let n = spec.block_length();
    if spec.levels.len() != 1 {
        return Err(Error::TooLarge(format!(
            "exact leakage needs a two-lattice chain, got {} levels",
            spec.levels.len() + 1
        )));
    }
    let eve = build_partition_channel(&spec.chain, 1, spec.noise.sigma_e(), q)?;
    let symbols = eve.symbols();
    let k = symbols.len();
    let outcomes = (k as f64).powi(n as i32);
    if n > 4 || outcomes > EXACT_LEAKAGE_LIMIT as f64 {
        return Err(Error::TooLarge(format!("{k}^{n} output sequences exceed the enumeration limit")));
    }
    let p = &spec.levels[0].partition;
    if p.a.is_empty() {
        return Ok(0.0);
    }
    let random: Vec<usize> = p.b.iter().chain(&p.d).copied().collect();
    let n_msg = 1usize << p.a.len();
    let n_rand = 1usize << random.len();
    let codewords: Vec<Vec<Vec<u8>>> = (0..n_msg)
        .map(|m| {
            (0..n_rand)
                .map(|r| {
                    let mut u = vec![0u8; n];
                    for (bit, &i) in p.a.iter().enumerate() {
                        u[i] = ((m >> bit) & 1) as u8;
                    }
                    for (bit, &i) in random.iter().enumerate() {
                        u[i] = ((r >> bit) & 1) as u8;
                    }
                    polar_transform(&mut u);
                    u
                })
                .collect()
        })
        .collect();
    // I(M;Z) = Σ_m Σ_z P(m) P(z|m) log(P(z|m)/P(z)).
    let mut info = 0.0;
    let mut cond = vec![0.0; n_msg];
    for z in 0..outcomes as usize {
        let ys: Vec<usize> = (0..n).map(|j| (z / k.pow(j as u32)) % k).collect();
        for (m, words) in codewords.iter().enumerate() {
            cond[m] = words
                .iter()
                .map(|x| (0..n).map(|j| if x[j] == 0 { symbols[ys[j]].0 } else { symbols[ys[j]].1 }).product::<f64>())
                .sum::<f64>()
                / n_rand as f64;
        }
        let pz = cond.iter().sum::<f64>() / n_msg as f64;
        for &c in &cond {
            if c > 0.0 {
                info += c / n_msg as f64 * (c / pz).log2();
            }
        }
    }
    Ok(info.max(0.0))
}

/// Default quantizer for [`exact_leakage_small`].
pub fn coarse_quantizer() -> QuantizerConfig {
    QuantizerConfig { bins: 8, direction: MergeDirection::Degrade }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub n: usize,
    pub secrecy_rate: f64,
    pub leakage_bound: f64,
    /// `r·N·2^(-N^β)`.
    pub envelope: f64,
}

pub fn leakage_row(spec: &SecrecyCodeSpec) -> LeakageRow {
    LeakageRow {
        n: spec.block_length(),
        secrecy_rate: secrecy_rate(spec),
        leakage_bound: leakage_bound(spec),
        envelope: leakage_envelope(spec.chain.levels(), spec.block_length(), spec.beta),
    }
}

/// Builds a spec for every exponent in `n_exps` and tabulates its leakage
/// bound beside the analytic envelope.
pub fn leakage_scaling_report(
    chain: &PartitionChain,
    noise: &NoiseModel,
    beta: f64,
    q: &QuantizerConfig,
    n_exps: &[u32],
) -> Result<Vec<LeakageRow>> {
    n_exps
        .iter()
        .map(|&n_exp| {
            let params =
                ConstructionParams { beta, quantizer: *q, ..ConstructionParams::new(n_exp, chain.partitions()) };
            build_spec_with(chain, noise, &params, Execution::default()).map(|s| leakage_row(&s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::tests::{manual_spec, random_parts};
    use crate::construction::IndexPartition;

    #[test]
    fn wilson_interval_examples() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-15);
        assert!((hi - 0.03699).abs() < 1e-4);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
    }

    #[test]
    fn trial_streams_are_independent_and_repeatable() {
        let a: u64 = trial_rng(42, 3).random();
        let b: u64 = trial_rng(42, 3).random();
        let c: u64 = trial_rng(42, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_simulation_has_no_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = manual_spec(2.5, 1.0, 5, random_parts(&mut rng, 32, 2), 3);
        let mut cfg = ExperimentConfig::new(20, 1);
        cfg.channel_sigma = Some(0.0);
        let r = simulate_bob(&spec, &cfg).unwrap();
        assert_eq!(r.sequence.errors, 0);
        assert_eq!(r.block.trials, 60);
        let s = simulate_single_block(&spec, &cfg).unwrap();
        assert_eq!(s.block.errors, 0);
    }

    #[test]
    fn all_frozen_code_never_fails() {
        let p = IndexPartition { a: vec![], b: vec![], c: (0..8).collect(), d: vec![], beta: 0.3 };
        let spec = manual_spec(2.5, 1.0, 3, vec![p], 2);
        let r = simulate_bob(&spec, &ExperimentConfig::new(50, 3)).unwrap();
        assert_eq!(r.sequence.errors, 0);
    }

    #[test]
    fn simulation_is_reproducible_across_execution_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = manual_spec(2.5, 1.0, 4, random_parts(&mut rng, 16, 2), 2);
        let mut cfg = ExperimentConfig::new(200, 77);
        cfg.execution = Execution::Sequential;
        let a = simulate_bob(&spec, &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let b = simulate_bob(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.sequence.errors > 0);
        assert!(simulate_bob(&spec, &ExperimentConfig::new(0, 1)).is_err());
    }

    #[test]
    fn rate_table_limits() {
        let row = rate_row(&RateGridPoint { alpha: 2.5, levels: 3, sigma_b: 1.0, sigma_e: 1.0 }).unwrap();
        assert!(row.rate.abs() < 1e-12 && row.bound == 0.0);
        let row = rate_row(&RateGridPoint { alpha: 0.1, levels: 3, sigma_b: 1.0, sigma_e: 2.0 }).unwrap();
        assert!(row.eps_1.abs() < 1e-4);
        assert!(rate_row(&RateGridPoint { alpha: 2.5, levels: 3, sigma_b: 2.0, sigma_e: 1.0 }).is_err());
    }

    #[test]
    fn rate_decomposition_is_consistent() {
        let row = rate_row(&RateGridPoint { alpha: 2.5, levels: 3, sigma_b: 1.0, sigma_e: 2.0 }).unwrap();
        let recomposed = row.bound - (row.eps_e - row.eps_b) - row.eps_1;
        assert!((recomposed - row.rate).abs() < 1e-9);
        assert!(row.gap >= -1e-8 && row.rate <= row.bound + 1e-8);
    }

    #[test]
    fn exact_leakage_trivial_cases() {
        let q = coarse_quantizer();
        let frozen = IndexPartition { a: vec![], b: vec![0], c: vec![1, 2, 3], d: vec![], beta: 0.3 };
        let spec = manual_spec(2.5, 1.0, 2, vec![frozen], 1);
        assert_eq!(exact_leakage_small(&spec, &q).unwrap(), 0.0);
        // Eve's channel is useless at this noise level.
        let mut spec = manual_spec(
            2.5,
            1.0,
            2,
            vec![IndexPartition { a: vec![3], b: vec![], c: vec![0, 1, 2], d: vec![], beta: 0.3 }],
            1,
        );
        spec.noise = NoiseModel::new(1.0, 200.0).unwrap();
        assert!(exact_leakage_small(&spec, &q).unwrap() < 1e-9);
        // Without randomness the single message bit is exposed through the
        // channel exactly: I(M;Z) equals the best bit-channel's information.
        spec.noise = NoiseModel::new(0.1, 0.2).unwrap();
        let leak = exact_leakage_small(&spec, &q).unwrap();
        let eve = build_partition_channel(&spec.chain, 1, 0.2, &q).unwrap();
        let stats = crate::polar::polarize(&eve, 2, &QuantizerConfig::new(4096).unwrap()).unwrap();
        assert!((leak - stats[3].mi).abs() < 1e-9, "{leak} vs {}", stats[3].mi);
    }

    #[test]
    fn exact_leakage_refuses_large_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = manual_spec(2.5, 1.0, 3, random_parts(&mut rng, 8, 1), 1);
        assert!(matches!(exact_leakage_small(&spec, &coarse_quantizer()), Err(Error::TooLarge(_))));
        let two = manual_spec(2.5, 1.0, 2, random_parts(&mut rng, 4, 2), 1);
        assert!(matches!(exact_leakage_small(&two, &coarse_quantizer()), Err(Error::TooLarge(_))));
    }
}
