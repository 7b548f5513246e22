//! Synthetic shape images with region labels, and score-map corruption for
//! the sharpening benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::one_hot;
use crate::tensor::{FeatureMap, LabelMap};

/// Per-channel noise around each region's base color.
pub const COLOR_NOISE: f64 = 0.05;
/// Smallest L2 distance between two region colors in one image.
pub const MIN_COLOR_DIST: f64 = 0.5;
/// Background plus at most four shapes.
pub const MAX_LABELS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// RGB in roughly `[0, 1]`.
    pub image: FeatureMap,
    /// 0 is the background, shapes are `1..=n`.
    pub labels: LabelMap,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { r0: f64, c0: f64, r1: f64, c1: f64 },
    Ellipse { cr: f64, cc: f64, rr: f64, rc: f64 },
}

impl Shape {
    fn contains(&self, r: f64, c: f64) -> bool {
        match *self {
            Shape::Rect { r0, c0, r1, c1 } => r >= r0 && r < r1 && c >= c0 && c < c1,
            Shape::Ellipse { cr, cc, rr, rc } => {
                let (a, b) = ((r - cr) / rr, (c - cc) / rc);
                a * a + b * b <= 1.0
            }
        }
    }

    fn random(rng: &mut impl Rng, size: f64) -> Shape {
        let min = (size * 0.2).max(2.0);
        let max = (size * 0.6).max(min + 1.0);
        let (hr, hc) = (rng.random_range(min..max), rng.random_range(min..max));
        let (r0, c0) = (rng.random_range(0.0..size - hr), rng.random_range(0.0..size - hc));
        if rng.random_bool(0.5) {
            Shape::Rect { r0, c0, r1: r0 + hr, c1: c0 + hc }
        } else {
            Shape::Ellipse { cr: r0 + hr / 2.0, cc: c0 + hc / 2.0, rr: hr / 2.0, rc: hc / 2.0 }
        }
    }
}

fn random_colors(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    'retry: loop {
        let mut colors: Vec<[f64; 3]> = Vec::with_capacity(n);
        while colors.len() < n {
            let mut found = false;
            for _ in 0..1000 {
                let c = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                let far = colors.iter().all(|o| {
                    let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() >= MIN_COLOR_DIST
                });
                if far {
                    colors.push(c);
                    found = true;
                    break;
                }
            }
            if !found {
                continue 'retry;
            }
        }
        return colors;
    }
}

fn sample(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    let noise = Normal::new(0.0, COLOR_NOISE).expect("positive std");
    loop {
        let n_shapes = rng.random_range(2..=4);
        let shapes: Vec<Shape> = (0..n_shapes).map(|_| Shape::random(rng, size as f64)).collect();
        let labels: Vec<u32> = (0..size * size)
            .map(|i| {
                let (r, c) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
                // later shapes are drawn on top
                shapes.iter().rposition(|s| s.contains(r, c)).map_or(0, |k| k as u32 + 1)
            })
            .collect();
        let mut counts = vec![0usize; n_shapes + 1];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        if counts.contains(&0) {
            continue;
        }
        let colors = random_colors(rng, n_shapes + 1);
        let mut data = Vec::with_capacity(size * size * 3);
        for &l in &labels {
            for &v in &colors[l as usize] {
                data.push(v + noise.sample(rng));
            }
        }
        return Sample {
            image: FeatureMap::new(size, size, 3, data).expect("finite by construction"),
            labels: LabelMap::new(size, size, labels).expect("sized by construction"),
        };
    }
}

/// `n` images of `size`×`size` pixels. Each has a background and 2–4
/// overlapping rectangles or ellipses; every label id in `0..=shapes` is
/// visible and each region has its own color plus Gaussian noise.
pub fn synth_dataset(seed: u64, n: usize, size: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::param("dataset size must be at least 1"));
    }
    if size < 8 {
        return Err(Error::param(format!("image size must be at least 8, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample(&mut rng, size)).collect())
}

/// Fraction of label-boundary edges (4-neighbor pairs with different
/// labels) across which the image color changes by more than `threshold`
/// in L2 norm. Returns 1.0 when there are no boundary edges.
pub fn boundary_agreement(s: &Sample, threshold: f64) -> f64 {
    let (h, w) = (s.labels.height(), s.labels.width());
    let mut edges = 0usize;
    let mut agree = 0usize;
    let mut visit = |a: usize, b: usize| {
        if s.labels.labels()[a] != s.labels.labels()[b] {
            edges += 1;
            let d2: f64 = s.image.pixel(a).iter().zip(s.image.pixel(b)).map(|(x, y)| (x - y) * (x - y)).sum();
            agree += usize::from(d2.sqrt() > threshold);
        }
    };
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                visit(r * w + c, r * w + c + 1);
            }
            if r + 1 < h {
                visit(r * w + c, (r + 1) * w + c);
            }
        }
    }
    if edges == 0 {
        1.0
    } else {
        agree as f64 / edges as f64
    }
}

/// Separable Gaussian blur with a kernel truncated at `ceil(3 sigma)`.
/// Taps falling outside the image are dropped and the rest renormalized.
pub fn gaussian_blur(x: &FeatureMap, sigma: f64) -> Result<FeatureMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let (h, w, ch) = x.shape();
    let pass = |src: &FeatureMap, along_rows: bool| {
        let mut out = FeatureMap::zeros(h, w, ch);
        for row in 0..h {
            for col in 0..w {
                let mut norm = 0.0;
                let acc = out.pixel_mut(row * w + col);
                for (t, &k) in kernel.iter().enumerate() {
                    let d = t as isize - r;
                    let (rr, cc) =
                        if along_rows { (row as isize + d, col as isize) } else { (row as isize, col as isize + d) };
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    norm += k;
                    for (a, v) in acc.iter_mut().zip(src.at(rr as usize, cc as usize)) {
                        *a += k * v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= norm);
            }
        }
        out
    };
    let tmp = pass(x, false);
    Ok(pass(&tmp, true))
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma`.
pub fn add_noise(x: &FeatureMap, sigma: f64, rng: &mut impl Rng) -> Result<FeatureMap> {
    let noise = Normal::new(0.0, sigma).map_err(|_| Error::param(format!("invalid noise sigma {sigma}")))?;
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    Ok(out)
}

/// One-hot scores for `labels`, blurred by `blur_sigma` and perturbed by
/// Gaussian noise of std `noise_sigma`.
pub fn corrupt_scores(
    labels: &LabelMap,
    num_classes: usize,
    blur_sigma: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<FeatureMap> {
    let blurred = gaussian_blur(&one_hot(labels, num_classes)?, blur_sigma)?;
    add_noise(&blurred, noise_sigma, rng)
}
