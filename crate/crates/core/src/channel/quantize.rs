//! Discretization of the continuous partition channels.
//!
//! The output of the `Λ_ℓ/Λ_{ℓ+1}` channel lives on one cell of `Λ_{ℓ+1}`
//! (length `2d`, with `d` the coset shift). It is cut into [`UNIFORM_BINS`]
//! equal bins. Shifting by `d` maps a bin onto its conjugate, so the bins in
//! the first half represent the pairs.
//!
//! In the degraded direction each bin is the integral of the density over the
//! bin (an output merge). In the upgraded direction each bin's mass is moved to
//! the most reliable likelihood ratio found on the bin, which is attained at an
//! endpoint because the ratio is monotone between the points `0`, `±d/2` and
//! `±d`, none of which lie inside a bin.

use super::{merge, DiscreteBms, MergeDirection, OutputPair, QuantizerConfig};
use crate::error::{ensure, Result};
use crate::lattice::{check_sigma, log_density, wrapped_mass, PartitionChain};

/// Uniform bins per cell of `Λ_{ℓ+1}` before greedy reduction.
pub const UNIFORM_BINS: usize = 8192;

/// The `Λ_level/Λ_{level+1}` channel with noise deviation `sigma`, reduced to
/// the alphabet budget of `q` in its configured direction.
pub fn build_partition_channel(
    chain: &PartitionChain,
    level: usize,
    sigma: f64,
    q: &QuantizerConfig,
) -> Result<DiscreteBms> {
    check_sigma(sigma)?;
    chain.check_partition(level)?;
    let d = chain.volume_unchecked(level);
    let period = 2.0 * d;
    let density = |z: f64, x: u8| log_density(z - f64::from(x) * d, sigma, period);
    let mass = |lo: f64, hi: f64, x: u8| wrapped_mass(lo, hi, f64::from(x) * d, sigma, period);
    let width = period / UNIFORM_BINS as f64;
    let reps: Vec<f64> = (0..UNIFORM_BINS / 2).map(|b| -d + b as f64 * width).collect();
    Ok(finish(&reps, width, q, density, mass))
}

/// The level-`level` channel seen by a receiver that knows the lower levels
/// but treats every higher level as uniformly random, with output reduced
/// modulo the coarsest lattice of the chain.
///
/// The density is computed as an average over the upper cosets of
/// `Λ_r`-aliased Gaussians rather than through `Λ_{level+1}` directly, so
/// agreement with [`build_partition_channel`] is a genuine check.
pub fn build_equivalent_channel(
    chain: &PartitionChain,
    level: usize,
    sigma: f64,
    q: &QuantizerConfig,
) -> Result<DiscreteBms> {
    check_sigma(sigma)?;
    chain.check_partition(level)?;
    let upper = 1usize << (chain.levels() - 1 - level);
    ensure!(upper <= 1 << 12, "equivalent channel of level {level} needs too many cosets");
    let d = chain.volume_unchecked(level);
    let period = chain.volume_unchecked(chain.levels());
    let total = UNIFORM_BINS * upper;
    let width = period / total as f64;
    let k = upper as f64;
    let ln_k = k.ln();

    let density = |z: f64, x: u8| {
        let terms: Vec<f64> =
            (0..upper).map(|u| log_density(z - f64::from(x) * d - 2.0 * d * u as f64, sigma, period)).collect();
        log_sum_exp(&terms) - ln_k
    };
    let mass = |lo: f64, hi: f64, x: u8| {
        (0..upper).map(|u| wrapped_mass(lo, hi, f64::from(x) * d + 2.0 * d * u as f64, sigma, period)).sum::<f64>() / k
    };
    let half = UNIFORM_BINS / 2;
    let reps: Vec<f64> = (0..total).filter(|b| (b / half).is_multiple_of(2)).map(|b| -0.5 * period + b as f64 * width).collect();
    Ok(finish(&reps, width, q, density, mass))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Crossover `1/(1 + e^|llr|)` of a point with the given log densities.
fn point_crossover(l0: f64, l1: f64) -> f64 {
    let llr = (l0 - l1).abs();
    if llr.is_nan() {
        return 0.5;
    }
    1.0 / (1.0 + llr.exp())
}

fn finish(
    reps: &[f64],
    width: f64,
    q: &QuantizerConfig,
    density: impl Fn(f64, u8) -> f64,
    mass: impl Fn(f64, f64, u8) -> f64,
) -> DiscreteBms {
    let mut pairs: Vec<OutputPair> = reps
        .iter()
        .map(|&lo| {
            let hi = lo + width;
            let p = OutputPair::new(mass(lo, hi, 0), mass(lo, hi, 1));
            match q.direction {
                MergeDirection::Degrade => p,
                MergeDirection::Upgrade => {
                    let c = point_crossover(density(lo, 0), density(lo, 1))
                        .min(point_crossover(density(hi, 0), density(hi, 1)));
                    OutputPair::from_mass(p.mass(), c.min(p.crossover()))
                }
            }
        })
        .collect();
    // Absorb the tiny numerical drift of the bin integrals.
    let total: f64 = pairs.iter().map(OutputPair::mass).sum();
    for p in &mut pairs {
        p.p0 /= total;
        p.p1 /= total;
    }
    merge::reduce_pairs(pairs, q.pair_budget(), q.direction)
}
