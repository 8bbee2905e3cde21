//! Library results against independent brute-force oracles.

use polar_lattice::channel::build_partition_channel;
use polar_lattice::codec::polar_transform;
use polar_lattice::construction::{build_spec, leakage_bound, ConstructionParams, IndexPartition, SecrecyCodeSpec};
use polar_lattice::sim::{coarse_quantizer, exact_leakage_small};
use polar_lattice::verify::layout_spec;
use polar_lattice::{NoiseModel, PartitionChain};

/// `I(M; Z^N)` as `H(Z) - H(Z | M = 0)`. For a linear code over a symmetric
/// channel every message coset has the same conditional output entropy.
fn leakage_by_symmetry(spec: &SecrecyCodeSpec) -> f64 {
    let eve = build_partition_channel(&spec.chain, 1, spec.noise.sigma_e(), &coarse_quantizer()).unwrap();
    let sym = eve.symbols();
    let n = spec.block_length();
    let p = &spec.levels[0].partition;
    let words = |free: &[usize]| -> Vec<Vec<u8>> {
        (0..1usize << free.len())
            .map(|m| {
                let mut u = vec![0u8; n];
                for (k, &i) in free.iter().enumerate() {
                    u[i] = ((m >> k) & 1) as u8;
                }
                polar_transform(&mut u);
                u
            })
            .collect()
    };
    let all = words(&p.unfrozen());
    let mut random: Vec<usize> = p.b.iter().chain(&p.d).copied().collect();
    random.sort_unstable();
    let coset = words(&random);
    let k = sym.len();
    let entropy = |code: &[Vec<u8>]| {
        let mut h = 0.0;
        for z in 0..k.pow(n as u32) {
            let pz: f64 = code
                .iter()
                .map(|x| {
                    (0..n)
                        .map(|j| {
                            let s = sym[(z / k.pow(j as u32)) % k];
                            if x[j] == 0 {
                                s.0
                            } else {
                                s.1
                            }
                        })
                        .product::<f64>()
                })
                .sum::<f64>()
                / code.len() as f64;
            if pz > 0.0 {
                h -= pz * pz.log2();
            }
        }
        h
    };
    entropy(&all) - entropy(&coset)
}

fn part(a: &[usize], b: &[usize], c: &[usize], d: &[usize]) -> IndexPartition {
    IndexPartition { a: a.to_vec(), b: b.to_vec(), c: c.to_vec(), d: d.to_vec(), beta: 0.3 }
}

#[test]
fn exact_leakage_matches_symmetry_oracle() {
    let layouts = [
        part(&[3], &[], &[0, 1, 2], &[]),
        part(&[3], &[1], &[0, 2], &[]),
        part(&[2, 3], &[1], &[0], &[]),
        part(&[1, 3], &[2], &[], &[0]),
        part(&[0, 1, 2, 3], &[], &[], &[]),
        part(&[], &[0, 1, 2, 3], &[], &[]),
    ];
    for (i, p) in layouts.into_iter().enumerate() {
        for sigma_b in [0.4, 1.0] {
            let mut spec = layout_spec(2.5, sigma_b, 2, vec![p.clone()], 1).unwrap();
            spec.noise = NoiseModel::new(sigma_b, 2.0 * sigma_b).unwrap();
            let exact = exact_leakage_small(&spec, &coarse_quantizer()).unwrap();
            let oracle = leakage_by_symmetry(&spec);
            assert!((exact - oracle).abs() < 1e-10, "layout {i}, sigma {sigma_b}: {exact} vs {oracle}");
        }
    }
}

#[test]
fn exact_leakage_of_a_constructed_single_message_code() {
    let chain = PartitionChain::new(2.5, 2).unwrap();
    let noise = NoiseModel::new(1.0, 2.0).unwrap();
    let spec = (1..50)
        .filter_map(|b| {
            let mut params = ConstructionParams::new(2, 1);
            params.beta = b as f64 / 100.0;
            params.quantizer = coarse_quantizer();
            build_spec(&chain, &noise, &params).ok()
        })
        .find(|s| s.levels[0].partition.a.len() == 1)
        .expect("some exponent yields one message index");
    let exact = exact_leakage_small(&spec, &coarse_quantizer()).unwrap();
    let bound = leakage_bound(&spec);
    assert!((exact - leakage_by_symmetry(&spec)).abs() < 1e-10);
    assert!(exact <= bound + 1e-9, "{exact} > {bound}");
}
