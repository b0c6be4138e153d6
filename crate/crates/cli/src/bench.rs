//! Tensor Sketch kernel-approximation benchmark.

use std::fs;
use std::time::Instant;

use cbp_core::sketch::{make_sketch_params, polykernel_exact, tensor_sketch};
use cbp_core::tensor::dot;
use cbp_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::SketchBenchArgs;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub d: usize,
    pub pairs: usize,
    pub draws: usize,
    /// Mean over pairs and draws of |⟨TS(x), TS(y)⟩ − (x·y)²| / (x·y)².
    pub mean_relative_error: f64,
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Unit pairs with cosine drawn from [0.3, 0.9], so that no kernel value is
/// close to zero.
pub fn bench_pairs(input_dim: usize, pairs: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let x = unit(&mut rng, input_dim);
            let z = unit(&mut rng, input_dim);
            let proj: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
            let perp: Vec<f64> = z.iter().zip(&x).map(|(zi, xi)| zi - proj * xi).collect();
            let pn = perp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c: f64 = rng.gen_range(0.3..0.9);
            let s = (1.0 - c * c).sqrt();
            let y = x.iter().zip(&perp).map(|(xi, pi)| c * xi + s * pi / pn).collect();
            (x, y)
        })
        .collect()
}

pub fn run_bench(
    dims: &[usize],
    input_dim: usize,
    pairs: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<(BenchRow, f64)>> {
    if pairs == 0 || draws == 0 || input_dim == 0 {
        return Err(Error::Config("pairs, draws and input dimension must be positive".into()));
    }
    let data = bench_pairs(input_dim, pairs, seed);
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let start = Instant::now();
        let errors: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let p = make_sketch_params(input_dim, d, seed.wrapping_add(1 + r as u64))?;
                let mut sum = 0.0;
                for (x, y) in &data {
                    let exact = polykernel_exact(x, y)?;
                    let est = dot(&tensor_sketch(x, &p)?, &tensor_sketch(y, &p)?)?;
                    sum += (est - exact).abs() / exact;
                }
                Ok(sum)
            })
            .collect::<Result<_>>()?;
        let elapsed = start.elapsed().as_secs_f64();
        let per_sketch_us = elapsed * 1e6 / (2 * pairs * draws) as f64;
        rows.push((
            BenchRow { d, pairs, draws, mean_relative_error: errors.iter().sum::<f64>() / (pairs * draws) as f64 },
            per_sketch_us,
        ));
    }
    Ok(rows)
}

pub fn sketch_bench(a: &SketchBenchArgs, seed: u64) -> Result<()> {
    let dims: Vec<usize> = a
        .dims
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("--dims: cannot parse {s:?}"))))
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config("--dims must list positive sizes".into()));
    }
    let rows = run_bench(&dims, a.input_dim, a.pairs, a.draws, seed)?;
    println!("{:>6}  {:>14}  {:>12}", "d", "mean_rel_err", "us/sketch");
    for (r, us) in &rows {
        println!("{:>6}  {:>14.6}  {:>12.2}", r.d, r.mean_relative_error, us);
    }
    let decreasing = rows.windows(2).all(|w| w[1].0.mean_relative_error < w[0].0.mean_relative_error);
    println!("error strictly decreasing in d: {}", if decreasing { "yes" } else { "no" });
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let lines: Vec<String> = rows
            .iter()
            .map(|(r, _)| serde_json::to_string(r).map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        fs::write(out.join("sketch_bench.jsonl"), lines.join("\n") + "\n")?;
    }
    Ok(())
}
