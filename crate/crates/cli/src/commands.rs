use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use polar_lattice::channel::QuantizerConfig;
use polar_lattice::construction::{
    build_spec, equivalence_check, leakage_bound, leakage_envelope, net_chained_rate, secrecy_rate, ConstructionParams,
    SecrecyCodeSpec,
};
use polar_lattice::lattice::{
    differential_entropy, gaussian_entropy, mod_channel_capacity, partition_channel_capacity, vnr,
};
use polar_lattice::sim::{
    coarse_quantizer, exact_leakage_small, leakage_row, rate_table, simulate_bob, simulate_single_block,
    ExperimentConfig, FerEstimate, RateGridPoint,
};
use polar_lattice::verify::run_all;
use polar_lattice::{NoiseModel, PartitionChain};
use serde_json::json;

use crate::config::{Config, Overrides};
use crate::{CliError, Command};

pub fn run(command: &Command, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = Config::resolve(overrides)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    match command {
        Command::Entropy => entropy(&cfg),
        Command::Capacity => capacity(&cfg),
        Command::Rates => rates(&cfg),
        Command::Construct => construct(&cfg),
        Command::Simulate { spec, channel_sigma } => simulate(&cfg, spec.as_deref(), *channel_sigma),
        Command::Equivalence => equivalence(&cfg),
        Command::Leakage { n_exps } => leakage(&cfg, n_exps),
        Command::Verify => verify(&cfg),
    }
}

/// CSV file whose first line echoes the resolved configuration.
struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    fn create(cfg: &Config, name: &str, header: &[&str]) -> Result<Self, CliError> {
        let path = cfg.out.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut csv = Self { path, w: BufWriter::new(file) };
        csv.line(&format!("# config: {}", cfg.to_json()))?;
        csv.line(&header.join(","))?;
        Ok(csv)
    }

    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.w, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    fn row(&mut self, fields: &[&dyn Display]) -> Result<(), CliError> {
        let s: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        self.line(&s.join(","))
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))?;
        println!("wrote {}", self.path.display());
        Ok(self.path)
    }
}

fn write_json(cfg: &Config, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| CliError::new("json", format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn chain(cfg: &Config) -> Result<PartitionChain, CliError> {
    Ok(PartitionChain::new(cfg.alpha, cfg.levels)?)
}

fn noise(cfg: &Config) -> Result<NoiseModel, CliError> {
    Ok(NoiseModel::new(cfg.sigma_b, cfg.sigma_e)?)
}

fn params(cfg: &Config, n_exp: u32, partitions: usize) -> Result<ConstructionParams, CliError> {
    let mut p = ConstructionParams::new(n_exp, partitions);
    p.beta = cfg.beta;
    p.quantizer = QuantizerConfig::new(cfg.mu)?;
    p.blocks_per_level = vec![cfg.blocks; partitions];
    Ok(p)
}

fn entropy(cfg: &Config) -> Result<(), CliError> {
    let chain = chain(cfg)?;
    let mut csv = Csv::create(
        cfg,
        "entropy.csv",
        &["level", "cell_volume", "sigma", "vnr", "entropy_bits", "gaussian_entropy_bits", "capacity_bits"],
    )?;
    for sigma in [cfg.sigma_b, cfg.sigma_e] {
        for level in 1..=chain.levels() {
            csv.row(&[
                &level,
                &chain.cell_volume(level)?,
                &sigma,
                &vnr(&chain, level, sigma)?,
                &differential_entropy(&chain, level, sigma)?,
                &gaussian_entropy(sigma),
                &mod_channel_capacity(&chain, level, sigma)?,
            ])?;
        }
    }
    csv.finish()?;
    Ok(())
}

fn capacity(cfg: &Config) -> Result<(), CliError> {
    let chain = chain(cfg)?;
    let mut csv = Csv::create(cfg, "capacity.csv", &["receiver", "sigma", "level", "partition_capacity_bits"])?;
    for (who, sigma) in [("bob", cfg.sigma_b), ("eve", cfg.sigma_e)] {
        for level in 1..chain.levels() {
            csv.row(&[&who, &sigma, &level, &partition_channel_capacity(&chain, level, sigma)?])?;
        }
    }
    csv.finish()?;
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn rates(cfg: &Config) -> Result<(), CliError> {
    let grid = [RateGridPoint { alpha: cfg.alpha, levels: cfg.levels, sigma_b: cfg.sigma_b, sigma_e: cfg.sigma_e }];
    let rows = rate_table(&grid)?;
    let mut csv = Csv::create(
        cfg,
        "rates.csv",
        &[
            "alpha",
            "levels",
            "sigma_b",
            "sigma_e",
            "capacity_bob",
            "capacity_eve",
            "rate_bits",
            "bound_bits",
            "gap_bits",
            "gap_nats",
            "eps_1",
            "eps_b",
            "eps_e",
        ],
    )?;
    for r in &rows {
        csv.row(&[
            &r.alpha,
            &r.levels,
            &r.sigma_b,
            &r.sigma_e,
            &join(&r.capacity_bob),
            &join(&r.capacity_eve),
            &r.rate,
            &r.bound,
            &r.gap,
            &r.gap_nats,
            &r.eps_1,
            &r.eps_b,
            &r.eps_e,
        ])?;
        println!("rate {:.6} bits, bound {:.6} bits, gap {:.6} bits ({:.6} nats)", r.rate, r.bound, r.gap, r.gap_nats);
    }
    csv.finish()?;
    Ok(())
}

fn build(cfg: &Config) -> Result<SecrecyCodeSpec, CliError> {
    let chain = chain(cfg)?;
    let p = params(cfg, cfg.n_exp, chain.partitions())?;
    Ok(build_spec(&chain, &noise(cfg)?, &p)?)
}

fn construct(cfg: &Config) -> Result<(), CliError> {
    let spec = build(cfg)?;
    let path = cfg.out.join("spec.json");
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    spec.write_json(BufWriter::new(file))?;
    println!("wrote {}", path.display());
    let levels: Vec<_> = spec
        .levels
        .iter()
        .map(|l| {
            let p = &l.partition;
            json!({ "level": l.level, "a": p.a.len(), "b": p.b.len(), "c": p.c.len(), "d": p.d.len() })
        })
        .collect();
    let summary = json!({
        "config": cfg,
        "spec": "spec.json",
        "block_length": spec.block_length(),
        "message_bits": spec.message_bits(),
        "secrecy_rate": secrecy_rate(&spec),
        "net_chained_rate": net_chained_rate(&spec),
        "leakage_bound": leakage_bound(&spec),
        "leakage_envelope": leakage_envelope(spec.chain.levels(), spec.block_length(), spec.beta),
        "levels": levels,
    });
    write_json(cfg, "construct.json", &summary)?;
    println!("secrecy rate {:.6}, leakage bound {:.3e}", secrecy_rate(&spec), leakage_bound(&spec));
    Ok(())
}

fn read_spec(path: &Path) -> Result<SecrecyCodeSpec, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(SecrecyCodeSpec::read_json(std::io::BufReader::new(file))?)
}

fn simulate(cfg: &Config, spec_path: Option<&Path>, channel_sigma: Option<f64>) -> Result<(), CliError> {
    let spec = match spec_path {
        Some(p) => read_spec(p)?,
        None => build(cfg)?,
    };
    let mut exp = ExperimentConfig::new(cfg.trials, cfg.seed);
    exp.channel_sigma = channel_sigma;
    let bob = simulate_bob(&spec, &exp)?;
    let single = simulate_single_block(&spec, &exp)?;
    let mut csv = Csv::create(
        cfg,
        "fer.csv",
        &[
            "kind",
            "n",
            "blocks",
            "sigma",
            "seed",
            "trials",
            "errors",
            "fer",
            "std_error",
            "ci_low",
            "ci_high",
            "level_errors",
        ],
    )?;
    let levels = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut row = |kind: &str, f: &FerEstimate, lv: &[u64]| {
        csv.row(&[
            &kind,
            &bob.n,
            &bob.blocks,
            &bob.sigma,
            &cfg.seed,
            &f.trials,
            &f.errors,
            &f.fer,
            &f.std_error,
            &f.ci_low,
            &f.ci_high,
            &levels(lv),
        ])
    };
    row("sequence", &bob.sequence, &bob.level_errors)?;
    row("block", &bob.block, &[])?;
    row("single", &single.block, &single.level_errors)?;
    csv.finish()?;
    println!(
        "sequence FER {:.4e}, block FER {:.4e}, single-block FER {:.4e}",
        bob.sequence.fer, bob.block.fer, single.block.fer
    );
    Ok(())
}

fn equivalence(cfg: &Config) -> Result<(), CliError> {
    let chain = chain(cfg)?;
    let q = QuantizerConfig::new(cfg.mu)?;
    let mut csv = Csv::create(
        cfg,
        "equivalence.csv",
        &["level", "sigma", "n_exp", "mu", "max_mi_deviation", "max_bhatt_deviation", "tolerance", "passed"],
    )?;
    let mut failed = Vec::new();
    for level in 1..chain.levels() {
        let r = equivalence_check(&chain, level, cfg.sigma_b, cfg.n_exp, &q)?;
        csv.row(&[
            &r.level,
            &r.sigma,
            &r.n_exp,
            &r.bins,
            &r.max_mi_deviation,
            &r.max_bhatt_deviation,
            &r.tolerance,
            &r.passed(),
        ])?;
        println!(
            "level {}: max |dI| {:.3e}, max |dZ| {:.3e}, tolerance {:.3e}",
            r.level, r.max_mi_deviation, r.max_bhatt_deviation, r.tolerance
        );
        if !r.passed() {
            failed.push(r.level);
        }
    }
    csv.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("check_failed", format!("levels {failed:?} exceed the tolerance")))
    }
}

fn leakage(cfg: &Config, n_exps: &[u32]) -> Result<(), CliError> {
    let chain = chain(cfg)?;
    let noise = noise(cfg)?;
    let n_exps = if n_exps.is_empty() { vec![cfg.n_exp] } else { n_exps.to_vec() };
    let mut csv = Csv::create(
        cfg,
        "leakage.csv",
        &["n", "secrecy_rate", "leakage_bound", "envelope", "within_envelope", "exact_leakage"],
    )?;
    for &n_exp in &n_exps {
        let spec = build_spec(&chain, &noise, &params(cfg, n_exp, chain.partitions())?)?;
        let row = leakage_row(&spec);
        let exact = match exact_leakage_small(&spec, &coarse_quantizer()) {
            Ok(v) => v.to_string(),
            Err(polar_lattice::Error::TooLarge(_)) => String::new(),
            Err(e) => return Err(e.into()),
        };
        csv.row(&[
            &row.n,
            &row.secrecy_rate,
            &row.leakage_bound,
            &row.envelope,
            &(row.leakage_bound <= row.envelope),
            &exact,
        ])?;
        println!("N={}: leakage bound {:.3e}, envelope {:.3e}", row.n, row.leakage_bound, row.envelope);
    }
    csv.finish()?;
    Ok(())
}

fn verify(cfg: &Config) -> Result<(), CliError> {
    let checks = run_all(cfg.seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_json(cfg, "verify.json", &json!({ "config": cfg, "checks": checks }))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("check_failed", format!("failed checks: {}", failed.join(", "))))
    }
}
