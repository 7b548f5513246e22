//! Intervening-contour affinities.
//!
//! For each center `i` and neighbor `j` the column entry is the largest
//! boundary probability on the Bresenham line traced from `j` to `i`,
//! both endpoints included.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{window_offsets, ColumnMatrix, FeatureMap, WindowSpec};

/// Per-pixel boundary probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    height: usize,
    width: usize,
    prob: Vec<f64>,
}

impl BoundaryMap {
    pub fn new(height: usize, width: usize, prob: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || prob.len() != height * width {
            return Err(Error::shape(format!("boundary map {height}x{width} with {} values", prob.len())));
        }
        if let Some((i, v)) = prob.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("boundary probability {v} at index {i} is outside [0, 1]")));
        }
        Ok(BoundaryMap { height, width, prob })
    }

    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 1 {
            return Err(Error::shape(format!("boundary map must have one channel, got {}", map.channels())));
        }
        Self::new(map.height(), map.width(), map.data().to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.prob[row * self.width + col]
    }
}

/// Integer Bresenham rasterization from `p0` to `p1`, endpoints included.
/// Points are `(row, col)`. When the ideal line passes exactly half-way
/// between two pixels the minor axis steps first.
pub fn bresenham(p0: (isize, isize), p1: (isize, isize)) -> Vec<(isize, isize)> {
    let dr = (p1.0 - p0.0).abs();
    let dc = -(p1.1 - p0.1).abs();
    let sr = if p0.0 < p1.0 { 1 } else { -1 };
    let sc = if p0.1 < p1.1 { 1 } else { -1 };
    let mut err = dr + dc;
    let (mut r, mut c) = p0;
    let mut points = Vec::with_capacity(dr.max(-dc) as usize + 1);
    loop {
        points.push((r, c));
        if (r, c) == p1 {
            return points;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}

/// Relative line points for every window offset, traced neighbor to center.
fn traced_offsets(w: &WindowSpec) -> Vec<Vec<(isize, isize)>> {
    window_offsets(w).into_iter().map(|off| bresenham(off, (0, 0))).collect()
}

/// Maximum boundary probability along each neighbor-to-center line.
pub fn im2interv(b: &BoundaryMap, w: &WindowSpec) -> ColumnMatrix {
    let mut cols = ColumnMatrix::for_source(*w, b.height, b.width, 1);
    // Bresenham is translation invariant, so one trace per offset suffices.
    let lines = traced_offsets(w);
    let k = cols.k();
    let out_w = cols.out_width();
    let stride = w.stride();
    let width = b.width;
    let (_, valid, values) = cols.parts_mut();
    values.par_chunks_mut(out_w * k).enumerate().for_each(|(orow, row)| {
        let r = (orow * stride) as isize;
        for ocol in 0..out_w {
            let c = (ocol * stride) as isize;
            for (q, line) in lines.iter().enumerate() {
                if !valid[(orow * out_w + ocol) * k + q] {
                    continue;
                }
                row[ocol * k + q] = line
                    .iter()
                    .map(|&(dr, dc)| b.prob[(r + dr) as usize * width + (c + dc) as usize])
                    .fold(0.0, f64::max);
            }
        }
    });
    cols
}

/// `exp(-lambda * p)` on valid entries.
pub fn interv_mask(cols: &ColumnMatrix, lambda: f64) -> Result<ColumnMatrix> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::param(format!("contour hardness must be finite and >= 0, got {lambda}")));
    }
    if cols.depth() != 1 {
        return Err(Error::shape("interv_mask: columns must have depth 1"));
    }
    for p in 0..cols.num_outputs() {
        for q in 0..cols.k() {
            let v = cols.value(p, q);
            if cols.is_valid(p, q) && !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("contour value {v} is outside [0, 1]")));
            }
        }
    }
    Ok(cols.map_valid(|v| (-lambda * v).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::masked_filter;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_aligned_and_degenerate_lines() {
        assert_eq!(bresenham((0, 0), (0, 3)), vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(bresenham((2, 2), (2, 2)), vec![(2, 2)]);
        assert_eq!(bresenham((3, 1), (0, 1)), vec![(3, 1), (2, 1), (1, 1), (0, 1)]);
    }

    #[test]
    fn zero_map_gives_zero_columns() {
        let b = BoundaryMap::new(5, 5, vec![0.0; 25]).unwrap();
        let cols = im2interv(&b, &WindowSpec::dense(5).unwrap());
        assert!(cols.values().iter().all(|&v| v == 0.0));
        let m = interv_mask(&cols, 5.0).unwrap();
        for p in 0..m.num_outputs() {
            for q in 0..m.k() {
                assert_eq!(m.value(p, q), if m.is_valid(p, q) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_wall_pixel_between_pair() {
        let b = BoundaryMap::new(1, 3, vec![0.0, 0.9, 0.0]).unwrap();
        let cols = im2interv(&b, &WindowSpec::dense(5).unwrap());
        // pixel 0, neighbor two columns right: offset (0, 2) is q = 14
        assert_eq!(cols.value(0, 14), 0.9);
        // center entry is the probability at the center
        assert_eq!(cols.value(1, 12), 0.9);
        assert_eq!(cols.value(0, 12), 0.0);
    }

    #[test]
    fn mask_values() {
        let w = WindowSpec::dense(1).unwrap();
        let mut cols = ColumnMatrix::for_source(w, 1, 1, 1);
        cols.set_value(0, 0, 1.0);
        let m = interv_mask(&cols, 5.0).unwrap();
        assert!((m.value(0, 0) - 0.006_737_946_999_085_467).abs() < 1e-15);
        cols.set_value(0, 0, 1.5);
        assert!(interv_mask(&cols, 5.0).is_err());
        assert!(interv_mask(&cols, -1.0).is_err());
    }

    #[test]
    fn out_of_range_boundary_rejected() {
        assert!(BoundaryMap::new(1, 2, vec![0.5, 1.2]).is_err());
        assert!(BoundaryMap::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn wall_suppresses_cross_weights() {
        let wall = 0.8;
        let b = BoundaryMap::new(5, 5, (0..25).map(|i| if i % 5 == 2 { wall } else { 0.0 }).collect()).unwrap();
        let w = WindowSpec::dense(5).unwrap();
        let lambda = 5.0;
        let m = interv_mask(&im2interv(&b, &w), lambda).unwrap();
        let bound = (-lambda * wall).exp();
        for p in 0..m.num_outputs() {
            for q in 0..m.k() {
                let Some(j) = m.neighbor(p, q) else { continue };
                if (p % 5 < 2) != (j % 5 < 2) || p % 5 == 2 || j % 5 == 2 {
                    assert!(m.value(p, q) <= bound + 1e-15);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn endpoints_bound_and_monotone(seed in 0u64..1000, bump in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, wd) = (7usize, 6usize);
            let prob: Vec<f64> = (0..h * wd).map(|_| rng.random_range(0.0..=1.0)).collect();
            let b = BoundaryMap::new(h, wd, prob.clone()).unwrap();
            let w = WindowSpec::dense(5).unwrap();
            let cols = im2interv(&b, &w);
            for p in 0..cols.num_outputs() {
                for q in 0..cols.k() {
                    if let Some(j) = cols.neighbor(p, q) {
                        prop_assert!(cols.value(p, q) >= prob[p].max(prob[j]));
                    }
                }
            }
            let idx = rng.random_range(0..h * wd);
            let mut raised = prob.clone();
            raised[idx] = raised[idx].max(bump);
            let cols2 = im2interv(&BoundaryMap::new(h, wd, raised).unwrap(), &w);
            for (a, b) in cols.values().iter().zip(cols2.values()) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn interv_mask_feeds_filter(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BoundaryMap::new(6, 6, (0..36).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
            let w = WindowSpec::dense(3).unwrap();
            let m = interv_mask(&im2interv(&b, &w), 5.0).unwrap();
            let x = FeatureMap::filled(6, 6, 2, 0.75);
            let y = masked_filter(&x, &m, &w, true).unwrap();
            prop_assert_eq!(y, x);
        }
    }
}
