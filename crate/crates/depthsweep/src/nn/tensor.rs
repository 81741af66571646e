//! Dense row-major float64 tensors shaped (batch, channels, length).

/// Dense tensor; index (b, c, i) maps to `(b * channels + c) * length + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    batch: usize,
    channels: usize,
    length: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Zero-filled tensor. All dimensions must be positive.
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        assert!(
            batch > 0 && channels > 0 && length > 0,
            "tensor dimensions must be positive, got ({batch}, {channels}, {length})"
        );
        Tensor { batch, channels, length, data: vec![0.0; batch * channels * length] }
    }

    /// Zero tensor with the same shape as `other`.
    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.batch, other.channels, other.length)
    }

    /// Wraps a flat row-major buffer; its length must match the shape product.
    pub fn from_vec(batch: usize, channels: usize, length: usize, data: Vec<f64>) -> Self {
        assert!(
            batch > 0 && channels > 0 && length > 0,
            "tensor dimensions must be positive, got ({batch}, {channels}, {length})"
        );
        assert_eq!(
            data.len(),
            batch * channels * length,
            "buffer length must equal the shape product"
        );
        Tensor { batch, channels, length, data }
    }

    /// Scalar tensor of shape (1, 1, 1).
    pub fn from_scalar(value: f64) -> Self {
        Tensor { batch: 1, channels: 1, length: 1, data: vec![value] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, i: usize) -> f64 {
        self.data[(b * self.channels + c) * self.length + i]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, i: usize, value: f64) {
        self.data[(b * self.channels + c) * self.length + i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous length-axis row for one (batch, channel) pair.
    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.length;
        &self.data[start..start + self.length]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.length;
        &mut self.data[start..start + self.length]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value of a (1, 1, 1) tensor.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1, 1), "scalar() requires a (1,1,1) tensor");
        self.data[0]
    }
}
