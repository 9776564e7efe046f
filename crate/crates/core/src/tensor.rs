//! Dense order-3 tensors and the multilinear primitives built on them.
//!
//! Storage layout: entry `(i1, i2, i3)` lives at `i1 + I1*(i2 + I2*i3)`,
//! i.e. the mode-1 index varies fastest. With this layout `vec(t)` is the
//! raw data buffer, and the identity
//! `vec(S x1 U1 x2 U2 x3 U3) = (U3 ⊗ U2 ⊗ U1) vec(S)` holds.
//!
//! Unfolding convention: `unfold(t, k)` has one row per mode-`k` index and
//! one column per combination of the remaining indices, ordered
//! lexicographically with the lower remaining mode varying fastest.

use crate::error::{Error, Result};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Dense order-3 tensor of `f64` with all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// Builds a tensor from a raw buffer in the documented layout.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (i1, i2, i3) = dims;
        if i1 == 0 || i2 == 0 || i3 == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        if data.len() != i1 * i2 * i3 {
            return Err(Error::dims("Tensor3::from_vec", i1 * i2 * i3, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor3::from_vec".into()));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Tensor3 {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        for i3 in 0..dims.2 {
            for i2 in 0..dims.1 {
                for i1 in 0..dims.0 {
                    t[(i1, i2, i3)] = f(i1, i2, i3);
                }
            }
        }
        t
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Dimension of the given mode (1-based, matching the math notation).
    pub fn dim(&self, mode: usize) -> usize {
        match mode {
            1 => self.dims.0,
            2 => self.dims.1,
            3 => self.dims.2,
            _ => panic!("mode must be 1, 2 or 3"),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Vectorization: the mode-1-fastest buffer as a column vector.
    pub fn to_vector(&self) -> Vector {
        Vector::from_column_slice(&self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mode-`k` matricization; columns are mode-`k` fibers.
    pub fn unfold(&self, mode: usize) -> Matrix {
        let (n1, n2, n3) = self.dims;
        match mode {
            // Contiguous: column (i2, i3) is data[.. + n1*(i2 + n2*i3)].
            1 => Matrix::from_column_slice(n1, n2 * n3, &self.data),
            2 => {
                let mut m = Matrix::zeros(n2, n1 * n3);
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            m[(i2, i1 + n1 * i3)] = self.data[i1 + n1 * (i2 + n2 * i3)];
                        }
                    }
                }
                m
            }
            3 => {
                let mut m = Matrix::zeros(n3, n1 * n2);
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            m[(i3, i1 + n1 * i2)] = self.data[i1 + n1 * (i2 + n2 * i3)];
                        }
                    }
                }
                m
            }
            _ => panic!("mode must be 1, 2 or 3"),
        }
    }

    /// Inverse of [`unfold`](Self::unfold) for the given target dims.
    pub fn fold(m: &Matrix, mode: usize, dims: (usize, usize, usize)) -> Result<Self> {
        let (n1, n2, n3) = dims;
        let (rows, cols, other) = match mode {
            1 => (n1, n2 * n3, ()),
            2 => (n2, n1 * n3, ()),
            3 => (n3, n1 * n2, ()),
            _ => return Err(Error::InvalidArgument(format!("fold: bad mode {mode}"))),
        };
        let _ = other;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::dims(
                format!("fold(mode {mode})"),
                format!("{rows}x{cols}"),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let mut t = Tensor3::zeros(dims);
        match mode {
            1 => t.data.copy_from_slice(m.as_slice()),
            2 => {
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            t.data[i1 + n1 * (i2 + n2 * i3)] = m[(i2, i1 + n1 * i3)];
                        }
                    }
                }
            }
            3 => {
                for i3 in 0..n3 {
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            t.data[i1 + n1 * (i2 + n2 * i3)] = m[(i3, i1 + n1 * i2)];
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(t)
    }

    /// Mode-`k` product: contracts mode `k` with the columns of `m`.
    ///
    /// `m` must have as many columns as the tensor's mode-`k` dimension; the
    /// result replaces that dimension with `m.nrows()`.
    pub fn mode_product(&self, m: &Matrix, mode: usize) -> Result<Self> {
        if !(1..=3).contains(&mode) {
            return Err(Error::InvalidArgument(format!(
                "mode_product: bad mode {mode}"
            )));
        }
        let ik = self.dim(mode);
        if m.ncols() != ik {
            return Err(Error::dims(
                format!("mode_product(mode {mode})"),
                format!("{ik} columns"),
                format!("{} columns", m.ncols()),
            ));
        }
        let product = m * self.unfold(mode);
        let mut dims = self.dims;
        match mode {
            1 => dims.0 = m.nrows(),
            2 => dims.1 = m.nrows(),
            3 => dims.2 = m.nrows(),
            _ => unreachable!(),
        }
        Tensor3::fold(&product, mode, dims)
    }

    /// The `i3`-th frontal slice as an `I1 x I2` matrix.
    pub fn slice3(&self, i3: usize) -> Matrix {
        let (n1, n2, _) = self.dims;
        Matrix::from_fn(n1, n2, |i1, i2| self.data[i1 + n1 * (i2 + n2 * i3)])
    }

    pub fn set_slice3(&mut self, i3: usize, slice: &Matrix) {
        let (n1, n2, _) = self.dims;
        assert_eq!((slice.nrows(), slice.ncols()), (n1, n2), "slice shape");
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                self.data[i1 + n1 * (i2 + n2 * i3)] = slice[(i1, i2)];
            }
        }
    }

    /// Mean over the sample mode, returned as an `I1 x I2` matrix.
    pub fn mean_slice3(&self) -> Matrix {
        let (n1, n2, n3) = self.dims;
        let mut m = Matrix::zeros(n1, n2);
        for i3 in 0..n3 {
            m += self.slice3(i3);
        }
        m / n3 as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }
}

impl std::ops::Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (i1, i2, i3): (usize, usize, usize)) -> &f64 {
        let (n1, n2, _) = self.dims;
        &self.data[i1 + n1 * (i2 + n2 * i3)]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (i1, i2, i3): (usize, usize, usize)) -> &mut f64 {
        let (n1, n2, _) = self.dims;
        &mut self.data[i1 + n1 * (i2 + n2 * i3)]
    }
}

impl std::ops::Add<&Tensor3> for &Tensor3 {
    type Output = Tensor3;
    fn add(self, rhs: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, rhs.dims, "tensor add: dims differ");
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl std::ops::Sub<&Tensor3> for &Tensor3 {
    type Output = Tensor3;
    fn sub(self, rhs: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, rhs.dims, "tensor sub: dims differ");
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kronecker product: `mp x nq` block matrix with blocks `a[i,j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for ja in 0..ca {
        for ia in 0..ra {
            let v = a[(ia, ja)];
            if v == 0.0 {
                continue;
            }
            for jb in 0..cb {
                for ib in 0..rb {
                    out[(ia * rb + ib, ja * cb + jb)] = v * b[(ib, jb)];
                }
            }
        }
    }
    out
}
