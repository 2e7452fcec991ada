use alloc::vec;
use alloc::vec::Vec;

/// Dense `N×C×H×W` float tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn plane(&self, i: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let off = (i * self.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, i: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let off = (i * self.c + c) * p;
        &mut self.data[off..off + p]
    }

    /// Stacks equally shaped `C×H×W` samples into a batch.
    pub fn stack(samples: &[&[f32]], c: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            assert_eq!(s.len(), c * h * w, "sample length");
            data.extend_from_slice(s);
        }
        Self::from_vec(samples.len(), c, h, w, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
