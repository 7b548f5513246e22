//! Dense grids, window geometry and column lowering.
//!
//! Every grid is stored row-major as `(row, column, channel)`. A
//! [`ColumnMatrix`] holds, for every strided output location, one entry per
//! window offset in the canonical order produced by [`window_offsets`].
//! Neighbors that fall outside the source grid are flagged invalid and carry
//! the value 0; downstream kernels skip them instead of treating them as
//! zero-padded data.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// A dense `height × width × channels` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(FeatureMap { height, width, channels, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        assert!(value.is_finite());
        FeatureMap { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Channel vector of the pixel with flat index `row * width + col`.
    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    /// Extracts a single channel as a one-channel map.
    pub fn channel(&self, ch: usize) -> FeatureMap {
        assert!(ch < self.channels);
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        FeatureMap { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn same_spatial(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Per-pixel integer class ids with a designated ignore id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    ignore_id: u32,
}

impl LabelMap {
    pub const DEFAULT_IGNORE: u32 = 255;

    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        Self::with_ignore(height, width, labels, Self::DEFAULT_IGNORE)
    }

    pub fn with_ignore(height: usize, width: usize, labels: Vec<u32>, ignore_id: u32) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("label map dimensions must be positive"));
        }
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(LabelMap { height, width, labels, ignore_id })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u32) -> Result<Self> {
        let mut labels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                labels.push(f(r, c));
            }
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn ignore_id(&self) -> u32 {
        self.ignore_id
    }

    pub fn set_ignore_id(&mut self, ignore_id: u32) {
        self.ignore_id = ignore_id;
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn is_ignored(&self, index: usize) -> bool {
        self.labels[index] == self.ignore_id
    }

    /// Nearest-neighbor resampling to a new grid size.
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelMap {
        let src_r = |r: usize| (((r as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
        let src_c = |c: usize| (((c as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
        let mut labels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                labels.push(self.get(src_r(r), src_c(c)));
            }
        }
        LabelMap { height, width, labels, ignore_id: self.ignore_id }
    }
}

/// Neighborhood geometry: an odd `side × side` window sampled at centers
/// that lie on multiples of `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    side: usize,
    stride: usize,
    include_center: bool,
}

impl WindowSpec {
    pub fn new(side: usize, stride: usize, include_center: bool) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(Error::param(format!("window side must be odd, got {side}")));
        }
        if stride == 0 {
            return Err(Error::param("window stride must be at least 1"));
        }
        Ok(WindowSpec { side, stride, include_center })
    }

    /// Stride 1, center included.
    pub fn dense(side: usize) -> Result<Self> {
        Self::new(side, 1, true)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn include_center(&self) -> bool {
        self.include_center
    }

    pub fn radius(&self) -> usize {
        (self.side - 1) / 2
    }

    /// Number of neighbors per window.
    pub fn k(&self) -> usize {
        if self.include_center {
            self.side * self.side
        } else {
            self.side * self.side - 1
        }
    }

    /// Position of the self-pair in the K ordering, if present.
    pub fn center_index(&self) -> Option<usize> {
        self.include_center.then(|| (self.side * self.side) / 2)
    }

    /// Output grid size for a `height × width` source.
    pub fn out_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.stride), width.div_ceil(self.stride))
    }
}

/// Window offsets `(row, col)` in row-major order. This is the K ordering
/// shared by every column matrix.
pub fn window_offsets(w: &WindowSpec) -> Vec<(isize, isize)> {
    let r = w.radius() as isize;
    let mut offsets = Vec::with_capacity(w.k());
    for dr in -r..=r {
        for dc in -r..=r {
            if dr == 0 && dc == 0 && !w.include_center {
                continue;
            }
            offsets.push((dr, dc));
        }
    }
    offsets
}

/// A lowered neighborhood matrix of shape `out_height × out_width × k × depth`.
///
/// Validity is tracked per `(output pixel, neighbor)` and shared by all
/// `depth` values of that entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatrix {
    window: WindowSpec,
    offsets: Vec<(isize, isize)>,
    src_height: usize,
    src_width: usize,
    out_height: usize,
    out_width: usize,
    depth: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ColumnMatrix {
    /// Zero-valued columns for a `src_height × src_width` source, with the
    /// validity flags implied by the geometry.
    pub fn for_source(window: WindowSpec, src_height: usize, src_width: usize, depth: usize) -> Self {
        assert!(depth > 0);
        let offsets = window_offsets(&window);
        let (out_height, out_width) = window.out_dims(src_height, src_width);
        let k = offsets.len();
        let mut valid = vec![false; out_height * out_width * k];
        for orow in 0..out_height {
            for ocol in 0..out_width {
                let r = (orow * window.stride) as isize;
                let c = (ocol * window.stride) as isize;
                let base = (orow * out_width + ocol) * k;
                for (q, &(dr, dc)) in offsets.iter().enumerate() {
                    let (nr, nc) = (r + dr, c + dc);
                    valid[base + q] = nr >= 0 && nc >= 0 && (nr as usize) < src_height && (nc as usize) < src_width;
                }
            }
        }
        ColumnMatrix {
            window,
            offsets,
            src_height,
            src_width,
            out_height,
            out_width,
            depth,
            values: vec![0.0; out_height * out_width * k * depth],
            valid,
        }
    }

    /// Columns filled from `f(output pixel, q, channel)` on valid entries;
    /// invalid entries stay 0.
    pub fn from_fn(
        window: WindowSpec,
        src_height: usize,
        src_width: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut cols = Self::for_source(window, src_height, src_width, depth);
        let k = cols.k();
        for p in 0..cols.num_outputs() {
            for q in 0..k {
                if cols.valid[p * k + q] {
                    for ch in 0..depth {
                        let i = cols.index(p, q) + ch;
                        cols.values[i] = f(p, q, ch);
                    }
                }
            }
        }
        cols
    }

    /// Same geometry and validity, zero values.
    pub fn zeros_like(&self) -> Self {
        ColumnMatrix { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn out_height(&self) -> usize {
        self.out_height
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn num_outputs(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `(height, width)` of the grid the columns were read from.
    pub fn source_dims(&self) -> (usize, usize) {
        (self.src_height, self.src_width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, pixel: usize, q: usize) -> usize {
        (pixel * self.offsets.len() + q) * self.depth
    }

    #[inline]
    pub fn is_valid(&self, pixel: usize, q: usize) -> bool {
        self.valid[pixel * self.offsets.len() + q]
    }

    /// Scalar entry of a depth-1 matrix.
    #[inline]
    pub fn value(&self, pixel: usize, q: usize) -> f64 {
        debug_assert_eq!(self.depth, 1);
        self.values[pixel * self.offsets.len() + q]
    }

    #[inline]
    pub fn set_value(&mut self, pixel: usize, q: usize, v: f64) {
        debug_assert_eq!(self.depth, 1);
        let k = self.offsets.len();
        self.values[pixel * k + q] = v;
    }

    pub fn entry(&self, pixel: usize, q: usize) -> &[f64] {
        let i = self.index(pixel, q);
        &self.values[i..i + self.depth]
    }

    /// Flat source index of neighbor `q` of output pixel `pixel`, or `None`
    /// when it falls outside the source grid.
    #[inline]
    pub fn neighbor(&self, pixel: usize, q: usize) -> Option<usize> {
        if !self.is_valid(pixel, q) {
            return None;
        }
        Some(self.neighbor_unchecked(pixel, q))
    }

    /// Like [`neighbor`](Self::neighbor) but ignores extra invalidation
    /// (such as ignore labels) and only requires the neighbor to be in bounds.
    #[inline]
    fn neighbor_unchecked(&self, pixel: usize, q: usize) -> usize {
        let (orow, ocol) = (pixel / self.out_width, pixel % self.out_width);
        let (dr, dc) = self.offsets[q];
        let r = (orow * self.window.stride) as isize + dr;
        let c = (ocol * self.window.stride) as isize + dc;
        r as usize * self.src_width + c as usize
    }

    /// Source flat index of the center of output pixel `pixel`.
    #[inline]
    pub fn center_source(&self, pixel: usize) -> usize {
        let (orow, ocol) = (pixel / self.out_width, pixel % self.out_width);
        orow * self.window.stride * self.src_width + ocol * self.window.stride
    }

    /// Offsets, validity flags and mutable values, borrowed together.
    pub(crate) fn parts_mut(&mut self) -> (&[(isize, isize)], &[bool], &mut [f64]) {
        (&self.offsets, &self.valid, &mut self.values)
    }

    pub(crate) fn invalidate(&mut self, pixel: usize, q: usize) {
        let k = self.offsets.len();
        self.valid[pixel * k + q] = false;
        let i = self.index(pixel, q);
        self.values[i..i + self.depth].fill(0.0);
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Errors unless `other` has the same geometry (window, sizes, depth).
    pub fn check_layout(&self, other: &ColumnMatrix, what: &str) -> Result<()> {
        if self.window != other.window
            || self.src_height != other.src_height
            || self.src_width != other.src_width
            || self.depth != other.depth
        {
            return Err(Error::shape(format!(
                "{what}: columns for {}x{} (side {}, stride {}, depth {}) vs {}x{} (side {}, stride {}, depth {})",
                self.src_height,
                self.src_width,
                self.window.side,
                self.window.stride,
                self.depth,
                other.src_height,
                other.src_width,
                other.window.side,
                other.window.stride,
                other.depth
            )));
        }
        Ok(())
    }

    /// Errors unless these columns were built for `w` over a `height × width` source.
    pub fn check_source(&self, w: &WindowSpec, height: usize, width: usize, what: &str) -> Result<()> {
        if self.window != *w || self.src_height != height || self.src_width != width {
            return Err(Error::shape(format!(
                "{what}: columns built for {}x{} side {} stride {}, expected {height}x{width} side {} stride {}",
                self.src_height, self.src_width, self.window.side, self.window.stride, w.side, w.stride
            )));
        }
        Ok(())
    }

    /// Applies `f` to every valid entry of a depth-1 matrix; invalid entries stay 0.
    pub fn map_valid(&self, mut f: impl FnMut(f64) -> f64) -> ColumnMatrix {
        assert_eq!(self.depth, 1, "map_valid expects depth-1 columns");
        let mut out = self.zeros_like();
        for (i, &ok) in self.valid.iter().enumerate() {
            if ok {
                out.values[i] = f(self.values[i]);
            }
        }
        out
    }

    pub fn dot(&self, other: &ColumnMatrix) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Lowers every strided window of `x` into a column matrix with
/// `depth = x.channels()`.
pub fn im2col(x: &FeatureMap, w: &WindowSpec) -> ColumnMatrix {
    let mut cols = ColumnMatrix::for_source(*w, x.height(), x.width(), x.channels());
    fill_im2col(x, &mut cols);
    cols
}

/// [`im2col`] into a preallocated matrix, reusing its storage.
pub fn im2col_into(x: &FeatureMap, w: &WindowSpec, cols: &mut ColumnMatrix) -> Result<()> {
    cols.check_source(w, x.height(), x.width(), "im2col_into")?;
    if cols.depth != x.channels() {
        return Err(Error::shape("im2col_into: depth differs from channel count"));
    }
    fill_im2col(x, cols);
    Ok(())
}

fn fill_im2col(x: &FeatureMap, cols: &mut ColumnMatrix) {
    let depth = x.channels();
    let k = cols.offsets.len();
    let (out_w, stride, src_w) = (cols.out_width, cols.window.stride, x.width());
    let offsets = &cols.offsets;
    let row_len = out_w * k * depth;
    let data = x.data();
    cols.values.par_chunks_mut(row_len).zip(cols.valid.par_chunks(out_w * k)).enumerate().for_each(
        |(orow, (vals, valid))| {
            let r = (orow * stride) as isize;
            for ocol in 0..out_w {
                let c = (ocol * stride) as isize;
                for (q, &(dr, dc)) in offsets.iter().enumerate() {
                    let dst = &mut vals[(ocol * k + q) * depth..(ocol * k + q + 1) * depth];
                    if valid[ocol * k + q] {
                        let src = ((r + dr) as usize * src_w + (c + dc) as usize) * depth;
                        dst.copy_from_slice(&data[src..src + depth]);
                    } else {
                        dst.fill(0.0);
                    }
                }
            }
        },
    );
}

/// Adjoint of [`im2col`]: adds every valid column entry back into the
/// source pixel it was read from.
pub fn col2im_scatter(cols: &ColumnMatrix, w: &WindowSpec, target_shape: (usize, usize, usize)) -> Result<FeatureMap> {
    let (height, width, channels) = target_shape;
    cols.check_source(w, height, width, "col2im_scatter")?;
    if cols.depth != channels {
        return Err(Error::shape(format!(
            "col2im_scatter: column depth {} but target has {channels} channels",
            cols.depth
        )));
    }
    let mut out = FeatureMap::zeros(height, width, channels);
    let k = cols.k();
    let (stride, out_w) = (w.stride, cols.out_width);
    // Gather formulation: each source pixel sums its contributions in K order,
    // so rows can run in parallel without changing the result.
    out.data.par_chunks_mut(width * channels).enumerate().for_each(|(r, row)| {
        for c in 0..width {
            let acc = &mut row[c * channels..(c + 1) * channels];
            for (q, &(dr, dc)) in cols.offsets.iter().enumerate() {
                let cr = r as isize - dr;
                let cc = c as isize - dc;
                if cr < 0 || cc < 0 || cr as usize >= height || cc as usize >= width {
                    continue;
                }
                let (cr, cc) = (cr as usize, cc as usize);
                if cr % stride != 0 || cc % stride != 0 {
                    continue;
                }
                let pixel = (cr / stride) * out_w + cc / stride;
                if !cols.valid[pixel * k + q] {
                    continue;
                }
                let base = (pixel * k + q) * channels;
                for (a, v) in acc.iter_mut().zip(&cols.values[base..base + channels]) {
                    *a += v;
                }
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn offsets_side3() {
        let w = WindowSpec::new(3, 1, true).unwrap();
        assert_eq!(
            window_offsets(&w),
            vec![(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)]
        );
        assert_eq!(w.center_index(), Some(4));
    }

    #[test]
    fn offsets_side1_and_no_center() {
        assert_eq!(window_offsets(&WindowSpec::dense(1).unwrap()), vec![(0, 0)]);
        let w = WindowSpec::new(3, 1, false).unwrap();
        let offs = window_offsets(&w);
        assert_eq!(offs.len(), 8);
        assert_eq!(w.k(), 8);
        assert!(!offs.contains(&(0, 0)));
        assert_eq!(w.center_index(), None);
    }

    #[test]
    fn even_side_rejected() {
        assert!(WindowSpec::new(4, 1, true).is_err());
        assert!(WindowSpec::new(3, 0, true).is_err());
    }

    #[test]
    fn feature_map_rejects_bad_input() {
        assert!(FeatureMap::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(FeatureMap::new(1, 2, 1, vec![0.0, f64::NAN]), Err(Error::NonFinite(1))));
        assert!(FeatureMap::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn single_pixel_only_center_valid() {
        let x = FeatureMap::filled(1, 1, 2, 3.5);
        let cols = im2col(&x, &WindowSpec::dense(3).unwrap());
        assert_eq!(cols.k(), 9);
        for q in 0..9 {
            assert_eq!(cols.is_valid(0, q), q == 4);
        }
        assert_eq!(cols.entry(0, 4), &[3.5, 3.5]);
        assert_eq!(cols.entry(0, 0), &[0.0, 0.0]);
    }

    #[test]
    fn constant_map_columns() {
        let x = FeatureMap::filled(4, 5, 2, 0.25);
        let cols = im2col(&x, &WindowSpec::new(5, 2, true).unwrap());
        for p in 0..cols.num_outputs() {
            for q in 0..cols.k() {
                let expect = if cols.is_valid(p, q) { 0.25 } else { 0.0 };
                assert!(cols.entry(p, q).iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn im2col_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(&mut rng, 5, 7, 3);
        let w = WindowSpec::new(3, 2, true).unwrap();
        let cols = im2col(&x, &w);
        assert_eq!((cols.out_height(), cols.out_width()), (3, 4));
        let mut idx = 0;
        for orow in 0..3 {
            for ocol in 0..4 {
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let r = orow * 2 + dr;
                        let c = ocol * 2 + dc;
                        let inside = r >= 0 && c >= 0 && r < 5 && c < 7;
                        for ch in 0..3 {
                            let expect = if inside { x.get(r as usize, c as usize, ch) } else { 0.0 };
                            assert_eq!(cols.values()[idx], expect);
                            idx += 1;
                        }
                        assert_eq!(cols.valid_flags()[idx / 3 - 1], inside);
                    }
                }
            }
        }
    }

    #[test]
    fn side1_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_map(&mut rng, 4, 3, 2);
        let w = WindowSpec::dense(1).unwrap();
        let cols = im2col(&x, &w);
        assert_eq!(cols.values(), x.data());
        let back = col2im_scatter(&cols, &w, x.shape()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn scatter_counts_interior_reads() {
        let w = WindowSpec::dense(3).unwrap();
        let mut cols = ColumnMatrix::for_source(w, 5, 5, 1);
        let valid = cols.valid_flags().to_vec();
        for (v, ok) in cols.values_mut().iter_mut().zip(valid) {
            if ok {
                *v = 1.0;
            }
        }
        let out = col2im_scatter(&cols, &w, (5, 5, 1)).unwrap();
        assert_eq!(out.get(2, 2, 0), 9.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
        assert_eq!(out.get(0, 2, 0), 6.0);
    }

    #[test]
    fn scatter_rejects_wrong_shape() {
        let w = WindowSpec::dense(3).unwrap();
        let cols = ColumnMatrix::for_source(w, 4, 4, 2);
        assert!(col2im_scatter(&cols, &w, (4, 5, 2)).is_err());
        assert!(col2im_scatter(&cols, &w, (4, 4, 1)).is_err());
    }

    #[test]
    fn resize_nearest_halves() {
        let l = LabelMap::from_fn(4, 4, |r, c| (r * 4 + c) as u32).unwrap();
        let half = l.resize_nearest(2, 2);
        assert_eq!(half.labels(), &[5, 7, 13, 15]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn im2col_adjoint(seed in 0u64..1000, h in 1usize..9, wd in 1usize..9, c in 1usize..4,
                          side_idx in 0usize..3, stride in 1usize..3, center in any::<bool>()) {
            let side = [1, 3, 5][side_idx];
            prop_assume!(side > 1 || center);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = WindowSpec::new(side, stride, center).unwrap();
            let x = random_map(&mut rng, h, wd, c);
            let cols = ColumnMatrix::from_fn(w, h, wd, c, |_, _, _| rng.random_range(-1.0..1.0));
            let lhs = im2col(&x, &w).dot(&cols);
            let back = col2im_scatter(&cols, &w, (h, wd, c)).unwrap();
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
        }

        #[test]
        fn validity_depends_only_on_geometry(seed in 0u64..1000, h in 1usize..8, wd in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = WindowSpec::new(5, 2, true).unwrap();
            let a = im2col(&random_map(&mut rng, h, wd, 2), &w);
            let b = im2col(&random_map(&mut rng, h, wd, 2), &w);
            prop_assert_eq!(a.valid_flags(), b.valid_flags());
        }
    }
}
