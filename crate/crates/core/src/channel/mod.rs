//! Finite binary-input memoryless symmetric channels.
//!
//! A [`DiscreteBms`] stores one [`OutputPair`] per conjugate pair of output
//! symbols `{y, ȳ}` with `Q(ȳ|0) = Q(y|1)`. The stored orientation is
//! `p0 ≥ p1`, where `p0 = Q(y|0)` and `p1 = Q(y|1)`. A pair with `p0 == p1`
//! is a self-symmetric symbol (`y = ȳ`) carrying mass `p0 + p1` under either
//! input; it is stored once and expands to a single output symbol.
//!
//! Under this convention the masses `p0 + p1` of all pairs sum to one, the
//! Bhattacharyya parameter is `Σ 2√(p0·p1)` and the mutual information is
//! `Σ (p0 + p1)·(1 - h₂(p1/(p0 + p1)))`.

mod merge;
mod quantize;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use merge::{degrading_merge, upgrading_merge};
pub use quantize::{build_equivalent_channel, build_partition_channel, UNIFORM_BINS};

/// Tolerance on total probability for a valid channel.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputPair {
    pub p0: f64,
    pub p1: f64,
}

impl OutputPair {
    /// Builds a pair in canonical orientation.
    pub fn new(a: f64, b: f64) -> Self {
        if a >= b {
            Self { p0: a, p1: b }
        } else {
            Self { p0: b, p1: a }
        }
    }

    pub(crate) fn from_mass(mass: f64, crossover: f64) -> Self {
        let p1 = mass * crossover;
        Self { p0: mass - p1, p1 }
    }

    pub fn mass(&self) -> f64 {
        self.p0 + self.p1
    }

    /// `p1 / (p0 + p1)`, in `[0, 1/2]`.
    pub fn crossover(&self) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.p1 / m
        } else {
            0.5
        }
    }

    pub fn is_self_symmetric(&self) -> bool {
        self.p0 == self.p1
    }

    pub fn mutual_information(&self) -> f64 {
        self.mass() * capacity_gain(self.crossover())
    }

    pub fn bhattacharyya(&self) -> f64 {
        2.0 * (self.p0 * self.p1).sqrt()
    }
}

/// Binary entropy in bits.
pub(crate) fn h2(c: f64) -> f64 {
    if c <= 0.0 || c >= 1.0 {
        return 0.0;
    }
    -(c * c.log2() + (1.0 - c) * (1.0 - c).log2())
}

/// `1 - h₂(c)`, using a series near `c = 1/2` where the direct form cancels.
pub(crate) fn capacity_gain(c: f64) -> f64 {
    let x = 1.0 - 2.0 * c;
    if x.abs() < 0.05 {
        // 1 - h₂((1-x)/2) = (1/ln 2) Σ_{k≥1} x^(2k) / (2k(2k-1))
        let x2 = x * x;
        let mut term = x2;
        let mut sum = 0.0;
        for k in 1..=10 {
            let kk = 2.0 * k as f64;
            sum += term / (kk * (kk - 1.0));
            term *= x2;
        }
        sum / std::f64::consts::LN_2
    } else {
        1.0 - h2(c)
    }
}

/// Direction of alphabet reduction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeDirection {
    /// Result is stochastically degraded: `I` is a lower bound, `Z` an upper bound.
    #[default]
    Degrade,
    /// Result is stochastically upgraded: `I` is an upper bound, `Z` a lower bound.
    Upgrade,
}

/// Output-alphabet budget `μ` and the direction used to reach it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bins: usize,
    #[serde(default)]
    pub direction: MergeDirection,
}

impl QuantizerConfig {
    pub const DEFAULT_BINS: usize = 256;
    pub const VERIFICATION_BINS: usize = 1024;

    pub fn new(bins: usize) -> Result<Self> {
        Self::with_direction(bins, MergeDirection::Degrade)
    }

    pub fn with_direction(bins: usize, direction: MergeDirection) -> Result<Self> {
        ensure!(bins >= 2, "an output alphabet needs at least two symbols, got {bins}");
        ensure!(bins.is_multiple_of(2) && bins >= 8, "alphabet budget must be even and at least 8, got {bins}");
        Ok(Self { bins, direction })
    }

    pub fn degraded(self) -> Self {
        Self { direction: MergeDirection::Degrade, ..self }
    }

    pub fn upgraded(self) -> Self {
        Self { direction: MergeDirection::Upgrade, ..self }
    }

    /// Number of stored pairs allowed by the budget.
    pub fn pair_budget(&self) -> usize {
        self.bins / 2
    }

    /// A-priori bound `δ(μ) = 2/μ` on the mutual-information change of one
    /// alphabet reduction.
    pub fn delta(&self) -> f64 {
        2.0 / self.bins as f64
    }
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { bins: Self::DEFAULT_BINS, direction: MergeDirection::Degrade }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBms")]
pub struct DiscreteBms {
    pairs: Vec<OutputPair>,
}

#[derive(Deserialize)]
struct RawBms {
    pairs: Vec<OutputPair>,
}

impl TryFrom<RawBms> for DiscreteBms {
    type Error = Error;

    fn try_from(raw: RawBms) -> Result<Self> {
        DiscreteBms::new(raw.pairs)
    }
}

impl DiscreteBms {
    /// Validates probabilities and canonicalizes pair orientation.
    pub fn new(pairs: Vec<OutputPair>) -> Result<Self> {
        let mut total = 0.0;
        let mut canonical = Vec::with_capacity(pairs.len());
        for p in pairs {
            ensure!(
                p.p0.is_finite() && p.p1.is_finite() && p.p0 >= 0.0 && p.p1 >= 0.0,
                "invalid symbol probabilities ({}, {})",
                p.p0,
                p.p1
            );
            total += p.mass();
            canonical.push(OutputPair::new(p.p0, p.p1));
        }
        ensure!((total - 1.0).abs() <= MASS_TOLERANCE, "output probabilities sum to {total}, expected 1");
        Ok(Self { pairs: canonical })
    }

    pub(crate) fn from_canonical(pairs: Vec<OutputPair>) -> Self {
        Self { pairs }
    }

    /// Binary symmetric channel with the given crossover probability.
    pub fn bsc(crossover: f64) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&crossover), "crossover {crossover} outside [0, 1]");
        Self::new(vec![OutputPair::new(1.0 - crossover, crossover)])
    }

    /// Binary erasure channel with erasure probability `eps`.
    pub fn bec(eps: f64) -> Result<Self> {
        ensure!((0.0..=1.0).contains(&eps), "erasure probability {eps} outside [0, 1]");
        Self::new(vec![OutputPair::new(1.0 - eps, 0.0), OutputPair::new(0.5 * eps, 0.5 * eps)])
    }

    pub fn pairs(&self) -> &[OutputPair] {
        &self.pairs
    }

    /// Number of distinct output symbols.
    pub fn alphabet_size(&self) -> usize {
        self.pairs.iter().map(|p| if p.is_self_symmetric() { 1 } else { 2 }).sum()
    }

    /// Full output alphabet as `(Q(y|0), Q(y|1))`.
    pub fn symbols(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(2 * self.pairs.len());
        for p in &self.pairs {
            if p.is_self_symmetric() {
                out.push((p.mass(), p.mass()));
            } else {
                out.push((p.p0, p.p1));
                out.push((p.p1, p.p0));
            }
        }
        out
    }

    /// Polar minus transform `Q⁻(y₁,y₂|u₁) = ½ Σ_{u₂} Q(y₁|u₁⊕u₂) Q(y₂|u₂)`,
    /// before any alphabet reduction.
    pub fn minus(&self) -> DiscreteBms {
        let p = &self.pairs;
        let mut out = Vec::with_capacity(p.len() * (p.len() + 1) / 2);
        for i in 0..p.len() {
            let (a1, b1) = (p[i].p0, p[i].p1);
            // (i, j) and (j, i) give identical symbols: fold them together.
            out.push(OutputPair::new(a1 * a1 + b1 * b1, 2.0 * a1 * b1));
            for q in &p[i + 1..] {
                let (a2, b2) = (q.p0, q.p1);
                out.push(OutputPair::new(2.0 * (a1 * a2 + b1 * b2), 2.0 * (a1 * b2 + b1 * a2)));
            }
        }
        DiscreteBms { pairs: out }
    }

    /// Polar plus transform `Q⁺(y₁,y₂,u₁|u₂) = ½ Q(y₁|u₁⊕u₂) Q(y₂|u₂)`,
    /// before any alphabet reduction.
    pub fn plus(&self) -> DiscreteBms {
        let p = &self.pairs;
        let mut out = Vec::with_capacity(p.len() * (p.len() + 1));
        for i in 0..p.len() {
            let (a1, b1) = (p[i].p0, p[i].p1);
            out.push(OutputPair::new(a1 * a1, b1 * b1));
            out.push(OutputPair::new(a1 * b1, a1 * b1));
            for q in &p[i + 1..] {
                let (a2, b2) = (q.p0, q.p1);
                out.push(OutputPair::new(2.0 * a1 * a2, 2.0 * b1 * b2));
                out.push(OutputPair::new(2.0 * a1 * b2, 2.0 * b1 * a2));
            }
        }
        DiscreteBms { pairs: out }
    }

    /// Reduces the alphabet to the budget in `q`, in the configured direction.
    pub fn reduce(&self, q: &QuantizerConfig) -> DiscreteBms {
        merge::reduce_pairs(self.pairs.clone(), q.pair_budget(), q.direction)
    }

    /// Writes `p0,p1` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p0,p1")?;
        for p in &self.pairs {
            writeln!(w, "{:.16e},{:.16e}", p.p0, p.p1)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (n == 0 && line == "p0,p1") {
                continue;
            }
            let (a, b) =
                line.split_once(',').ok_or_else(|| Error::Parse(format!("line {}: expected `p0,p1`", n + 1)))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
            pairs.push(OutputPair { p0: parse(a)?, p1: parse(b)? });
        }
        Self::new(pairs)
    }
}

/// `I(Q)` in bits for uniform inputs.
pub fn channel_mi(c: &DiscreteBms) -> f64 {
    c.pairs.iter().map(OutputPair::mutual_information).sum::<f64>().clamp(0.0, 1.0)
}

/// `Z(Q) = Σ_y √(Q(y|0)·Q(y|1))`.
pub fn channel_bhattacharyya(c: &DiscreteBms) -> f64 {
    c.pairs.iter().map(OutputPair::bhattacharyya).sum::<f64>().clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_channels() {
        let perfect = DiscreteBms::bsc(0.0).unwrap();
        assert_eq!(channel_mi(&perfect), 1.0);
        assert_eq!(channel_bhattacharyya(&perfect), 0.0);
        let useless = DiscreteBms::bsc(0.5).unwrap();
        assert!(channel_mi(&useless).abs() < 1e-15);
        assert!((channel_bhattacharyya(&useless) - 1.0).abs() < 1e-15);
        assert_eq!(useless.alphabet_size(), 1);
    }

    #[test]
    fn bsc_closed_form() {
        let c = DiscreteBms::bsc(0.11).unwrap();
        assert!((channel_mi(&c) - (1.0 - h2(0.11))).abs() < 1e-15);
        assert!((channel_mi(&c) - 0.5).abs() < 1e-3);
        assert!((channel_bhattacharyya(&c) - 2.0 * (0.11f64 * 0.89).sqrt()).abs() < 1e-15);
        assert!((channel_bhattacharyya(&c) - 0.6258).abs() < 1e-4);
    }

    #[test]
    fn capacity_gain_series_is_continuous() {
        for &c in &[0.474, 0.4749, 0.475, 0.4751, 0.49, 0.4999] {
            let direct = 1.0 - h2(c);
            assert!((capacity_gain(c) - direct).abs() < 1e-13, "{c}");
        }
        assert_eq!(capacity_gain(0.5), 0.0);
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(DiscreteBms::new(vec![OutputPair { p0: 0.5, p1: 0.2 }]).is_err());
        assert!(DiscreteBms::new(vec![OutputPair { p0: -0.1, p1: 1.1 }]).is_err());
        assert!(DiscreteBms::new(vec![OutputPair { p0: f64::NAN, p1: 1.0 }]).is_err());
        assert!(QuantizerConfig::new(1).is_err());
        assert!(QuantizerConfig::new(7).is_err());
        assert!(QuantizerConfig::new(6).is_err());
        assert!(QuantizerConfig::new(8).is_ok());
    }

    #[test]
    fn symmetric_alphabet_expansion() {
        let c = DiscreteBms::bec(0.3).unwrap();
        let symbols = c.symbols();
        assert_eq!(symbols.len(), 3);
        let s0: f64 = symbols.iter().map(|s| s.0).sum();
        let s1: f64 = symbols.iter().map(|s| s.1).sum();
        assert!((s0 - 1.0).abs() < 1e-15 && (s1 - 1.0).abs() < 1e-15);
        let mut fwd: Vec<_> = symbols.iter().map(|&(a, b)| (a.to_bits(), b.to_bits())).collect();
        let mut rev: Vec<_> = symbols.iter().map(|&(a, b)| (b.to_bits(), a.to_bits())).collect();
        fwd.sort();
        rev.sort();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn bec_transforms_are_exact() {
        let eps = 0.3;
        let c = DiscreteBms::bec(eps).unwrap();
        let minus = c.minus();
        let plus = c.plus();
        assert!((channel_bhattacharyya(&minus) - (2.0 * eps - eps * eps)).abs() < 1e-15);
        assert!((channel_bhattacharyya(&plus) - eps * eps).abs() < 1e-15);
        let mass = |c: &DiscreteBms| c.pairs().iter().map(OutputPair::mass).sum::<f64>();
        assert!((mass(&minus) - 1.0).abs() < 1e-15);
        assert!((mass(&plus) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transforms_conserve_mutual_information() {
        let c =
            DiscreteBms::new(vec![OutputPair::new(0.4, 0.05), OutputPair::new(0.2, 0.15), OutputPair::new(0.1, 0.1)])
                .unwrap();
        let total = channel_mi(&c.minus()) + channel_mi(&c.plus());
        assert!((total - 2.0 * channel_mi(&c)).abs() < 1e-14);
        assert!(channel_mi(&c.minus()) <= channel_mi(&c));
        assert!(channel_bhattacharyya(&c.plus()) <= channel_bhattacharyya(&c));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let c = DiscreteBms::bsc(0.1234567890123).unwrap().minus();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = DiscreteBms::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<DiscreteBms>(&json).unwrap(), c);
    }
}
