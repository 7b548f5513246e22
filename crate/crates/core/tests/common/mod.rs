//! Brute-force oracles and finite-difference checks shared by the
//! integration tests and the acceptance driver.

#![allow(dead_code)]

use pixel_affinity::embednet::layers::{
    concat_channels, max_pool2, max_pool2_backward, relu, relu_backward, split_channels, upsample_bilinear,
    upsample_bilinear_backward, Conv2d,
};
use pixel_affinity::embednet::{evaluate_loss, loss_and_grads, synth_dataset, EmbeddingModel, TrainConfig};
use pixel_affinity::{
    im2col, im2dist, im2dist_backward, im2interv, im2parity, mask_backward, mask_from_dist, masked_filter,
    masked_filter_backward, pair_loss, pair_loss_backward, BoundaryMap, ColumnMatrix, DistanceNorm, FeatureMap,
    LabelMap, LossParams, MaskParams, WindowSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn random_labels(rng: &mut impl Rng, h: usize, w: usize, classes: u32, ignore_rate: f64) -> LabelMap {
    LabelMap::from_fn(h, w, |_, _| if rng.random_bool(ignore_rate) { 255 } else { rng.random_range(0..classes) })
        .unwrap()
}

// ---------------------------------------------------------------- oracles

/// Classic octant Bresenham; half-pixel ties step the minor axis (`d >= 0`).
pub fn textbook_line(p0: (isize, isize), p1: (isize, isize)) -> Vec<(isize, isize)> {
    let (dr, dc) = (p1.0 - p0.0, p1.1 - p0.1);
    let (sr, sc) = (dr.signum(), dc.signum());
    let (ar, ac) = (dr.abs(), dc.abs());
    let mut out = vec![p0];
    let (mut r, mut c) = p0;
    if ar >= ac {
        let mut d = 2 * ac - ar;
        for _ in 0..ar {
            if d >= 0 {
                c += sc;
                d -= 2 * ar;
            }
            d += 2 * ac;
            r += sr;
            out.push((r, c));
        }
    } else {
        let mut d = 2 * ar - ac;
        for _ in 0..ac {
            if d >= 0 {
                r += sr;
                d -= 2 * ac;
            }
            d += 2 * ar;
            c += sc;
            out.push((r, c));
        }
    }
    out
}

/// Visits every (output pixel, q, center, neighbor-if-inside) with plain
/// nested loops in the documented order.
fn for_each_window(
    h: usize,
    w: usize,
    win: &WindowSpec,
    mut f: impl FnMut(usize, usize, (usize, usize), Option<(usize, usize)>),
) {
    let r = (win.side() / 2) as isize;
    let mut p = 0;
    for row in (0..h).step_by(win.stride()) {
        for col in (0..w).step_by(win.stride()) {
            let mut q = 0;
            for dr in -r..=r {
                for dc in -r..=r {
                    if dr == 0 && dc == 0 && !win.include_center() {
                        continue;
                    }
                    let (nr, nc) = (row as isize + dr, col as isize + dc);
                    let inside = nr >= 0 && nc >= 0 && nr < h as isize && nc < w as isize;
                    f(p, q, (row, col), inside.then_some((nr as usize, nc as usize)));
                    q += 1;
                }
            }
            p += 1;
        }
    }
}

/// Oracle comparison of one column matrix; `expect` gives the value for
/// an in-bounds pair or `None` when the entry should be invalid.
fn compare_columns(
    cols: &ColumnMatrix,
    h: usize,
    w: usize,
    win: &WindowSpec,
    mut expect: impl FnMut((usize, usize), (usize, usize), usize) -> Option<f64>,
    depth: usize,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut err = None;
    let mut count = 0;
    for_each_window(h, w, win, |p, q, center, nb| {
        count += 1;
        if err.is_some() {
            return;
        }
        for ch in 0..depth {
            let want = nb.and_then(|n| expect(center, n, ch));
            match want {
                None if cols.is_valid(p, q) => err = Some(format!("entry ({p},{q}) should be invalid")),
                None => {}
                Some(_) if !cols.is_valid(p, q) => err = Some(format!("entry ({p},{q}) should be valid")),
                Some(v) => worst = worst.max((cols.entry(p, q)[ch] - v).abs()),
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if count != cols.num_outputs() * cols.k() {
        return Err(format!("expected {count} entries, columns have {}", cols.num_outputs() * cols.k()));
    }
    Ok(worst)
}

/// Worst absolute deviation of each kernel from its nested-loop oracle.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleReport {
    pub instances: usize,
    pub im2col: f64,
    pub im2dist_l1: f64,
    pub im2dist_l2: f64,
    pub im2parity: f64,
    pub im2interv: f64,
}

/// Runs all four kernels on `n` random instances of up to 16x16x8.
pub fn oracle_sweep(seed: u64, n: usize) -> Result<OracleReport, String> {
    let mut rng = rng(seed);
    let mut rep = OracleReport::default();
    for i in 0..n {
        let side = [3, 5, 9][i % 3];
        let stride = 1 + (i / 3) % 2;
        let include_center = i % 7 != 0;
        let win = WindowSpec::new(side, stride, include_center).unwrap();
        let (h, w, c) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=8));
        let x = random_map(&mut rng, h, w, c);
        let labels = random_labels(&mut rng, h, w, 3, 0.1);
        let b = BoundaryMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
        let ctx = |k: &str, e: String| format!("{k} on {h}x{w}x{c}, side {side}, stride {stride}: {e}");

        let cols = im2col(&x, &win);
        let e = compare_columns(&cols, h, w, &win, |_, (nr, nc), ch| Some(x.get(nr, nc, ch)), c)
            .map_err(|e| ctx("im2col", e))?;
        rep.im2col = rep.im2col.max(e);

        for norm in [DistanceNorm::L1, DistanceNorm::L2] {
            let d = im2dist(&x, &win, norm);
            let e = compare_columns(
                &d,
                h,
                w,
                &win,
                |(r, cc), (nr, nc), _| {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let diff = x.get(r, cc, ch) - x.get(nr, nc, ch);
                        acc += if norm == DistanceNorm::L1 { diff.abs() } else { diff * diff };
                    }
                    Some(if norm == DistanceNorm::L1 { acc } else { acc.sqrt() })
                },
                1,
            )
            .map_err(|e| ctx("im2dist", e))?;
            match norm {
                DistanceNorm::L1 => rep.im2dist_l1 = rep.im2dist_l1.max(e),
                DistanceNorm::L2 => rep.im2dist_l2 = rep.im2dist_l2.max(e),
            }
        }

        let par = im2parity(&labels, &win);
        let e = compare_columns(
            &par,
            h,
            w,
            &win,
            |(r, cc), (nr, nc), _| {
                let (a, b) = (labels.get(r, cc), labels.get(nr, nc));
                (a != 255 && b != 255).then(|| f64::from(u8::from(a == b)))
            },
            1,
        )
        .map_err(|e| ctx("im2parity", e))?;
        rep.im2parity = rep.im2parity.max(e);

        let iv = im2interv(&b, &win);
        let e = compare_columns(
            &iv,
            h,
            w,
            &win,
            |(r, cc), (nr, nc), _| {
                let line = textbook_line((nr as isize, nc as isize), (r as isize, cc as isize));
                Some(line.into_iter().map(|(a, c)| b.get(a as usize, c as usize)).fold(0.0, f64::max))
            },
            1,
        )
        .map_err(|e| ctx("im2interv", e))?;
        rep.im2interv = rep.im2interv.max(e);
        rep.instances += 1;
    }
    Ok(rep)
}

// ---------------------------------------------------- finite differences

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x` along the coordinates in `idx`.
pub fn fd_grad(x: &[f64], idx: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    idx.iter()
        .map(|&i| {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let fp = f(&xp);
            xp[i] = orig - FD_STEP;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn with_data(x: &FeatureMap, data: &[f64]) -> FeatureMap {
    FeatureMap::new(x.height(), x.width(), x.channels(), data.to_vec()).unwrap()
}

fn with_values(m: &ColumnMatrix, values: &[f64]) -> ColumnMatrix {
    let mut out = m.clone();
    out.values_mut().copy_from_slice(values);
    out
}

/// Random upstream weights for a column matrix; zero on invalid entries.
fn random_columns_like(rng: &mut impl Rng, m: &ColumnMatrix) -> ColumnMatrix {
    let mut out = m.zeros_like();
    for p in 0..m.num_outputs() {
        for q in 0..m.k() {
            if m.is_valid(p, q) {
                out.set_value(p, q, rng.random_range(-1.0..1.0));
            }
        }
    }
    out
}

fn random_window(rng: &mut impl Rng, stride_one: bool) -> WindowSpec {
    let side = [3, 5][rng.random_range(0..2)];
    let stride = if stride_one { 1 } else { rng.random_range(1..=2) };
    WindowSpec::new(side, stride, rng.random_bool(0.8)).unwrap()
}

/// Worst relative error of `im2dist_backward` over `n` instances, both norms.
pub fn grad_im2dist(seed: u64, n: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..n {
        let norm = if i % 2 == 0 { DistanceNorm::L1 } else { DistanceNorm::L2 };
        let win = random_window(&mut rng, false);
        let (h, w, c) = (rng.random_range(3..=7), rng.random_range(3..=7), rng.random_range(1..=4));
        let x = random_map(&mut rng, h, w, c);
        let g = random_columns_like(&mut rng, &im2dist(&x, &win, norm));
        let analytic = im2dist_backward(&x, &win, norm, &g).unwrap();
        let fd = fd_grad(x.data(), &all(x.data().len()), |d| im2dist(&with_data(&x, d), &win, norm).dot(&g));
        worst = worst.max(rel_err(analytic.data(), &fd));
    }
    worst
}

/// `mask_backward` w.r.t. distances and hardness.
pub fn grad_mask(seed: u64, n: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let win = random_window(&mut rng, false);
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let x = random_map(&mut rng, h, w, 2);
        let d = im2dist(&x, &win, DistanceNorm::L2);
        let p = MaskParams::new(rng.random_range(0.1..5.0)).unwrap();
        let g = random_columns_like(&mut rng, &d);
        let (gd, gl) = mask_backward(&d, p, &g).unwrap();
        let valid: Vec<usize> = (0..d.values().len()).filter(|&i| d.valid_flags()[i] && d.values()[i] > 0.0).collect();
        let fd = fd_grad(d.values(), &valid, |v| mask_from_dist(&with_values(&d, v), p).dot(&g));
        let an: Vec<f64> = valid.iter().map(|&i| gd.values()[i]).collect();
        worst = worst.max(rel_err(&an, &fd));
        let fdl = fd_grad(&[p.lambda()], &[0], |l| mask_from_dist(&d, MaskParams::new(l[0]).unwrap()).dot(&g));
        worst = worst.max(rel_err(&[gl], &fdl));
    }
    worst
}

/// `masked_filter_backward` w.r.t. signal and mask.
pub fn grad_filter(seed: u64, n: usize, normalize: bool) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let win = random_window(&mut rng, false);
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let c = rng.random_range(1..=3);
        let x = random_map(&mut rng, h, w, c);
        let m = ColumnMatrix::from_fn(win, h, w, 1, |_, _, _| rng.random_range(0.05..1.0));
        let y = masked_filter(&x, &m, &win, normalize).unwrap();
        let gy = random_map(&mut rng, y.height(), y.width(), y.channels());
        let (gx, gm) = masked_filter_backward(&x, &m, &win, normalize, &gy).unwrap();
        let loss = |x: &FeatureMap, m: &ColumnMatrix| {
            let y = masked_filter(x, m, &win, normalize).unwrap();
            y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let fdx = fd_grad(x.data(), &all(x.data().len()), |d| loss(&with_data(&x, d), &m));
        worst = worst.max(rel_err(gx.data(), &fdx));
        let valid: Vec<usize> = (0..m.values().len()).filter(|&i| m.valid_flags()[i]).collect();
        let fdm = fd_grad(m.values(), &valid, |v| loss(&x, &with_values(&m, v)));
        let an: Vec<f64> = valid.iter().map(|&i| gm.values()[i]).collect();
        worst = worst.max(rel_err(&an, &fdm));
    }
    worst
}

/// The chain embeddings -> im2dist -> pair_loss, via the backward of each.
pub fn grad_loss_chain(seed: u64, n: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let params = LossParams::default();
    for i in 0..n {
        let norm = if i % 2 == 0 { DistanceNorm::L1 } else { DistanceNorm::L2 };
        let win = random_window(&mut rng, false);
        let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
        // spread the embeddings so distances straddle both thresholds
        let x = FeatureMap::from_fn(h, w, 3, |_, _, _| rng.random_range(-1.5..1.5)).unwrap();
        let labels = random_labels(&mut rng, h, w, 2, 0.1);
        let par = im2parity(&labels, &win);
        let d = im2dist(&x, &win, norm);
        let gd = pair_loss_backward(&d, &par, params).unwrap();
        let ge = im2dist_backward(&x, &win, norm, &gd).unwrap();
        let fd = fd_grad(x.data(), &all(x.data().len()), |v| {
            pair_loss(&im2dist(&with_data(&x, v), &win, norm), &par, params).unwrap().total
        });
        worst = worst.max(rel_err(ge.data(), &fd));
    }
    worst
}

/// Per-layer worst relative errors.
#[derive(Debug, Default, Clone, Copy)]
pub struct LayerReport {
    pub conv: f64,
    pub relu: f64,
    pub maxpool: f64,
    pub upsample: f64,
    pub concat: f64,
}

impl LayerReport {
    pub fn worst(&self) -> f64 {
        [self.conv, self.relu, self.maxpool, self.upsample, self.concat].into_iter().fold(0.0, f64::max)
    }
}

fn project(y: &FeatureMap, g: &FeatureMap) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

pub fn grad_layers(seed: u64, n: usize) -> LayerReport {
    let mut rng = rng(seed);
    let mut rep = LayerReport::default();
    for _ in 0..n {
        let (h, w) = (rng.random_range(2..=7), rng.random_range(2..=7));
        let cin = rng.random_range(1..=3);

        // conv: input, weights and bias
        let ks = [1, 3][rng.random_range(0..2)];
        let cout = rng.random_range(1..=3);
        let conv = Conv2d::he_normal(cin, cout, ks, &mut rng);
        let x = random_map(&mut rng, h, w, cin);
        let gy = random_map(&mut rng, h, w, cout);
        let (gx, gp) = conv.backward(&x, &gy).unwrap();
        let fdx = fd_grad(x.data(), &all(x.data().len()), |d| project(&conv.forward(&with_data(&x, d)).unwrap(), &gy));
        let fdw = fd_grad(&conv.weight, &all(conv.weight.len()), |wt| {
            let c = Conv2d { weight: wt.to_vec(), ..conv.clone() };
            project(&c.forward(&x).unwrap(), &gy)
        });
        let fdb = fd_grad(&conv.bias, &all(conv.bias.len()), |b| {
            let c = Conv2d { bias: b.to_vec(), ..conv.clone() };
            project(&c.forward(&x).unwrap(), &gy)
        });
        rep.conv = rep.conv.max(rel_err(gx.data(), &fdx)).max(rel_err(&gp.weight, &fdw)).max(rel_err(&gp.bias, &fdb));

        // relu
        let gy = random_map(&mut rng, h, w, cin);
        let gx = relu_backward(&x, &gy);
        let fd = fd_grad(x.data(), &all(x.data().len()), |d| project(&relu(&with_data(&x, d)), &gy));
        rep.relu = rep.relu.max(rel_err(gx.data(), &fd));

        // max pool
        let (pooled, arg) = max_pool2(&x);
        let gy = random_map(&mut rng, pooled.height(), pooled.width(), cin);
        let gx = max_pool2_backward(x.shape(), &arg, &gy);
        let fd = fd_grad(x.data(), &all(x.data().len()), |d| project(&max_pool2(&with_data(&x, d)).0, &gy));
        rep.maxpool = rep.maxpool.max(rel_err(gx.data(), &fd));

        // bilinear upsample to a larger grid
        let (oh, ow) = (h * 2 + rng.random_range(0..2), w * 2 + rng.random_range(0..2));
        let gy = random_map(&mut rng, oh, ow, cin);
        let gx = upsample_bilinear_backward(x.shape(), &gy);
        let fd =
            fd_grad(x.data(), &all(x.data().len()), |d| project(&upsample_bilinear(&with_data(&x, d), oh, ow), &gy));
        rep.upsample = rep.upsample.max(rel_err(gx.data(), &fd));

        // concat; its backward is the channel split
        let x2 = random_map(&mut rng, h, w, 2);
        let gy = random_map(&mut rng, h, w, cin + 2);
        let parts = split_channels(&gy, &[cin, 2]);
        let fd1 = fd_grad(x.data(), &all(x.data().len()), |d| {
            project(&concat_channels(&[&with_data(&x, d), &x2]).unwrap(), &gy)
        });
        let fd2 = fd_grad(x2.data(), &all(x2.data().len()), |d| {
            project(&concat_channels(&[&x, &with_data(&x2, d)]).unwrap(), &gy)
        });
        rep.concat = rep.concat.max(rel_err(parts[0].data(), &fd1)).max(rel_err(parts[1].data(), &fd2));
    }
    rep
}

/// Full model and training loss: relative error over a random subset of
/// `params_per_instance` parameters per instance.
///
/// The loss is piecewise smooth (relu, max pool, L1, hinge). A sampled
/// parameter whose one-sided slopes disagree by more than 1e-4 (relative)
/// straddles a kink within the step; smooth points agree to ~1e-6. Such
/// parameters are redrawn and the redraw count is returned with the worst
/// error.
pub fn grad_network(seed: u64, n: usize, params_per_instance: usize) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    for i in 0..n {
        let sample = &synth_dataset(seed + i as u64, 1, 12).unwrap()[0];
        let model = EmbeddingModel::new(3, 6, rng.random());
        let cfg = TrainConfig {
            window: WindowSpec::new(5, 2, true).unwrap(),
            norm: if i % 2 == 0 { DistanceNorm::L1 } else { DistanceNorm::L2 },
            ..TrainConfig::default()
        };
        let (loss0, grads) = loss_and_grads(&model, &sample.image, &sample.labels, &cfg).unwrap();
        let flat: Vec<f64> = model.params().into_iter().flat_map(|(_, _, p)| p.to_vec()).collect();
        let gflat: Vec<f64> = grads.params().into_iter().flat_map(|(_, _, p)| p.to_vec()).collect();
        let loss_at = |k: usize, v: f64| {
            let mut m = model.clone();
            let mut off = 0;
            for (_, slot) in m.params_mut() {
                if (off..off + slot.len()).contains(&k) {
                    slot[k - off] = v;
                }
                off += slot.len();
            }
            evaluate_loss(&m, &sample.image, &sample.labels, &cfg).unwrap().total
        };
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        while an.len() < params_per_instance {
            let k = rng.random_range(0..flat.len());
            let (fp, fm) = (loss_at(k, flat[k] + FD_STEP), loss_at(k, flat[k] - FD_STEP));
            let (up, down) = ((fp - loss0.total) / FD_STEP, (loss0.total - fm) / FD_STEP);
            if (up - down).abs() > 1e-4 * up.abs().max(down.abs()) + 1e-9 {
                redrawn += 1;
                continue;
            }
            an.push(gflat[k]);
            fd.push((fp - fm) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(&an, &fd));
    }
    (worst, redrawn)
}
