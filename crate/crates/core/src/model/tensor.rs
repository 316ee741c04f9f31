use crate::error::{Error, Result};

/// Dense NHWC tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<S>,
}

impl<S: Copy + Default> Tensor<S> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![S::default(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::Shape(format!(
                "buffer of {} values does not fit {n}x{h}x{w}x{c}",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// A tensor with the same dimensions holding `data`.
    pub(crate) fn with_data(&self, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }
}
