//! Dense row-major float grids used for activations, gradients, and maps.

use alloc::vec;
use alloc::vec::Vec;

/// 2-D float grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Grid2 {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid2 {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Grid2 {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    /// Wraps an existing row-major buffer. Panics if the length is not `h*w`.
    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "grid buffer length mismatch");
        Grid2 { h, w, data }
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.w + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.w..(i + 1) * self.w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.w..(i + 1) * self.w]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Sum of all values, accumulated in f64 in row-major order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major index of the maximum value; ties resolve to the smallest index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for (idx, &v) in self.data.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = idx;
            }
        }
        (best / self.w, best % self.w)
    }

    /// Min-max normalization to `[0,1]`.
    ///
    /// A constant grid has no range to stretch; it maps to all zeros and the
    /// caller is told via the returned flag.
    pub fn normalize_min_max(&mut self) -> NormalizeOutcome {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            for v in &mut self.data {
                *v = 0.0;
            }
            return NormalizeOutcome::Constant;
        }
        // Divide rather than multiply by a reciprocal: a subnormal range
        // would overflow the reciprocal to infinity.
        let range = hi - lo;
        for v in &mut self.data {
            *v = (*v - lo) / range;
        }
        NormalizeOutcome::Stretched
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Grid2) {
        assert_eq!((self.h, self.w), (other.h, other.w), "grid add shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Bilinear resize to `(out_h, out_w)` with half-pixel centers
    /// (align_corners = false convention).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Grid2 {
        let mut out = Grid2::zeros(out_h, out_w);
        let sy = self.h as f32 / out_h as f32;
        let sx = self.w as f32 / out_w as f32;
        for oy in 0..out_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f32);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let wy = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f32);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let wx = fx - x0 as f32;
                let top = self.get(y0, x0) * (1.0 - wx) + self.get(y0, x1) * wx;
                let bot = self.get(y1, x0) * (1.0 - wx) + self.get(y1, x1) * wx;
                out.set(oy, ox, top * (1.0 - wy) + bot * wy);
            }
        }
        out
    }
}

/// Whether min-max normalization had a range to stretch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeOutcome {
    Stretched,
    /// Input was constant; output is all zeros.
    Constant,
}

/// 3-D float grid: `channels x h x w`, channel-major, each plane row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Grid3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Grid3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "grid buffer length mismatch");
        Grid3 { c, h, w, data }
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.h + i) * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.h + i) * self.w + j] = v;
    }

    /// Channel plane as a row-major slice of length `h*w`.
    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Grid3) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of one channel plane, accumulated in f64 row-major.
    pub fn channel_mean_f64(&self, c: usize) -> f64 {
        let plane = self.channel(c);
        let sum: f64 = plane.iter().map(|&v| v as f64).sum();
        sum / plane.len() as f64
    }
}
