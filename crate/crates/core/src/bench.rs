//! Wall-clock timing of the window kernels.
//!
//! Each kernel runs into a buffer allocated once, so the measurements are
//! of the arithmetic and memory traffic rather than the allocator.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{im2dist_into, mask_from_dist, DistanceNorm, MaskParams};
use crate::contours::{im2interv, BoundaryMap};
use crate::error::{Error, Result};
use crate::filter::masked_filter_into;
use crate::tensor::{im2col_into, ColumnMatrix, FeatureMap, WindowSpec};

pub const KERNELS: [&str; 4] = ["im2col", "im2dist", "masked_filter", "im2interv"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub side: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { height: 256, width: 256, channels: 64, side: 9, runs: 20, warmup: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub kernel: &'static str,
    pub median_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub runs: usize,
}

fn time(kernel: &'static str, cfg: &BenchConfig, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    for _ in 0..cfg.warmup {
        f()?;
    }
    let mut ns = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        let t = Instant::now();
        f()?;
        ns.push(t.elapsed().as_nanos() as u64);
    }
    ns.sort_unstable();
    let n = ns.len();
    let median = if n % 2 == 1 { ns[n / 2] } else { (ns[n / 2 - 1] + ns[n / 2]) / 2 };
    Ok(Timing { kernel, median_ns: median, min_ns: ns[0], max_ns: ns[n - 1], runs: n })
}

/// Times the selected kernels (all of [`KERNELS`] when `only` is empty).
pub fn run_bench(cfg: &BenchConfig, only: &[&str]) -> Result<Vec<Timing>> {
    if cfg.runs == 0 {
        return Err(Error::param("bench needs at least one run"));
    }
    if let Some(k) = only.iter().find(|k| !KERNELS.contains(k)) {
        return Err(Error::param(format!("unknown kernel {k:?}; expected one of {KERNELS:?}")));
    }
    let wanted = |k: &str| only.is_empty() || only.contains(&k);
    let w = WindowSpec::dense(cfg.side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = FeatureMap::from_fn(cfg.height, cfg.width, cfg.channels, |_, _, _| rng.random_range(-1.0..1.0))?;
    let mut out = Vec::new();

    if wanted("im2col") {
        // the largest buffer; dropped before the others are allocated
        let mut cols = ColumnMatrix::for_source(w, cfg.height, cfg.width, cfg.channels);
        out.push(time("im2col", cfg, || im2col_into(&x, &w, &mut cols))?);
    }
    let mut dist = ColumnMatrix::for_source(w, cfg.height, cfg.width, 1);
    if wanted("im2dist") {
        out.push(time("im2dist", cfg, || im2dist_into(&x, &w, DistanceNorm::L1, &mut dist))?);
    }
    if wanted("masked_filter") {
        im2dist_into(&x, &w, DistanceNorm::L1, &mut dist)?;
        let m = mask_from_dist(&dist, MaskParams::new(MaskParams::EMBEDDING_LAMBDA)?);
        let mut y = FeatureMap::zeros(cfg.height, cfg.width, cfg.channels);
        out.push(time("masked_filter", cfg, || masked_filter_into(&x, &m, &w, true, &mut y))?);
    }
    if wanted("im2interv") {
        let b = BoundaryMap::new(cfg.height, cfg.width, (0..cfg.height * cfg.width).map(|_| rng.random()).collect())?;
        out.push(time("im2interv", cfg, || {
            black_box(im2interv(&b, &w));
            Ok(())
        })?);
    }
    Ok(out)
}

pub fn timings_csv(cfg: &BenchConfig, timings: &[Timing]) -> String {
    let mut s = String::from("kernel,height,width,channels,side,runs,median_ns,min_ns,max_ns\n");
    for t in timings {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            t.kernel, cfg.height, cfg.width, cfg.channels, cfg.side, t.runs, t.median_ns, t.min_ns, t.max_ns
        );
    }
    s
}
