use crate::scalar::Scalar;

/// Dense row-major tensor. Image batches are `[N, C, H, W]`, feature batches
/// `[N, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    data: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![T::zero(); shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} vs {} elements",
            data.len()
        );
        Tensor {
            data,
            shape: shape.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("expected rank-4 tensor, got {:?}", self.shape),
        }
    }

    /// `(N, F)` of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [n, f] => (n, f),
            _ => panic!("expected rank-2 tensor, got {:?}", self.shape),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rows `[start, end)` of the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            data: self.data[start * per..end * per].to_vec(),
            shape,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect(),
            shape: self.shape.clone(),
        }
    }
}
