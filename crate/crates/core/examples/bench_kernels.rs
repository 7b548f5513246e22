//! Times the window kernels and prints the CSV report.
//!
//! Usage: `cargo run --release --example bench_kernels [height width channels side]`
//! The defaults are small; the full 256x256x64 side-9 size needs about
//! 3 GB for the im2col buffer.

use pixel_affinity::bench::{run_bench, timings_csv, BenchConfig, KERNELS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a: Vec<usize> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let cfg = match a.as_slice() {
        [] => BenchConfig { height: 64, width: 64, channels: 16, runs: 5, ..BenchConfig::default() },
        &[height, width, channels, side] => BenchConfig { height, width, channels, side, ..BenchConfig::default() },
        _ => return Err("expected no arguments or: height width channels side".into()),
    };
    let timings = run_bench(&cfg, &KERNELS)?;
    print!("{}", timings_csv(&cfg, &timings));
    let col = timings[0].median_ns as f64;
    for t in &timings[1..] {
        println!("# {} / im2col = {:.2}", t.kernel, t.median_ns as f64 / col);
    }
    Ok(())
}
