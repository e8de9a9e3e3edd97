//! Batched NCHW activation tensor in f64.

use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_data(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    /// Stack single-channel rasters into a batch.
    pub fn from_rasters(rasters: &[&Raster]) -> Self {
        assert!(!rasters.is_empty());
        let h = rasters[0].height();
        let w = rasters[0].width();
        let mut data = Vec::with_capacity(rasters.len() * h * w);
        for r in rasters {
            assert_eq!((r.height(), r.width()), (h, w), "raster shapes differ in batch");
            data.extend(r.data().iter().map(|&v| v as f64));
        }
        Self { n: rasters.len(), c: 1, h, w, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] += v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous channel plane of one sample.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    /// New tensor whose channels are `self`'s followed by `other`'s.
    pub fn concat_channels(&self, other: &Tensor4) -> Tensor4 {
        assert_eq!(self.n, other.n);
        assert_eq!((self.h, self.w), (other.h, other.w));
        let mut out = Tensor4::zeros(self.n, self.c + other.c, self.h, self.w);
        for n in 0..self.n {
            for c in 0..self.c {
                let dst = out.idx(n, c, 0, 0);
                out.data[dst..dst + self.h * self.w].copy_from_slice(self.plane(n, c));
            }
            for c in 0..other.c {
                let dst = out.idx(n, self.c + c, 0, 0);
                out.data[dst..dst + self.h * self.w].copy_from_slice(other.plane(n, c));
            }
        }
        out
    }

    /// Split along channels at `c_split`, inverse of [`concat_channels`].
    pub fn split_channels(&self, c_split: usize) -> (Tensor4, Tensor4) {
        assert!(c_split <= self.c);
        let mut a = Tensor4::zeros(self.n, c_split, self.h, self.w);
        let mut b = Tensor4::zeros(self.n, self.c - c_split, self.h, self.w);
        for n in 0..self.n {
            for c in 0..self.c {
                let src = self.plane(n, c);
                if c < c_split {
                    let dst = a.idx(n, c, 0, 0);
                    a.data[dst..dst + src.len()].copy_from_slice(src);
                } else {
                    let dst = b.idx(n, c - c_split, 0, 0);
                    b.data[dst..dst + src.len()].copy_from_slice(src);
                }
            }
        }
        (a, b)
    }
}
