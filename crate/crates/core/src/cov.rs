//! Kronecker-separable noise covariance: Gaussian-kernel spatial factors on
//! the two grid modes and a diagonal factor on the sample mode.

use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::tensor::{Matrix, Tensor3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Coordinates of one spatial mode.
///
/// `Circle` grids measure distance through the plane (chordal distance on the
/// embedded unit circle) so the kernel is periodic in the angle; the raw
/// angular difference would put the two ends of the grid far apart.
#[derive(Debug, Clone)]
pub enum Grid {
    Line(Vec<f64>),
    Circle { n: usize },
}

impl Grid {
    /// Uniform grid `i/n`, `i = 1..=n`, on `(0, 1]`.
    pub fn uniform(n: usize) -> Self {
        Grid::Line((1..=n).map(|i| i as f64 / n as f64).collect())
    }

    /// Angular grid `2*pi*i/n`, `i = 1..=n`, with periodic distances.
    pub fn angular(n: usize) -> Self {
        Grid::Circle { n }
    }

    pub fn len(&self) -> usize {
        match self {
            Grid::Line(v) => v.len(),
            Grid::Circle { n } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dist2(&self, i: usize, j: usize) -> f64 {
        match self {
            Grid::Line(v) => {
                let d = v[i] - v[j];
                d * d
            }
            Grid::Circle { n } => {
                let step = 2.0 * std::f64::consts::PI / *n as f64;
                let d = step * (i as f64 - j as f64);
                // |p_i - p_j|^2 for points on the unit circle.
                2.0 - 2.0 * d.cos()
            }
        }
    }
}

/// Gaussian kernel covariance `exp(-theta * d^2(r_i, r_j))` over a grid.
pub fn build_gaussian_cov(grid: &Grid, theta: f64) -> Result<Matrix> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty covariance grid".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel bandwidth must be positive, got {theta}"
        )));
    }
    let n = grid.len();
    Ok(Matrix::from_fn(n, n, |i, j| (-theta * grid.dist2(i, j)).exp()))
}

/// Eigendecomposition-backed factorizations of a symmetric PD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactors {
    pub matrix: Matrix,
    pub inverse: Matrix,
    pub sqrt: Matrix,
    pub inv_sqrt: Matrix,
}

impl SpdFactors {
    pub fn identity(n: usize) -> Self {
        let id = Matrix::identity(n, n);
        SpdFactors {
            matrix: id.clone(),
            inverse: id.clone(),
            sqrt: id.clone(),
            inv_sqrt: id,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Factorizes a symmetric matrix into inverse and symmetric square roots.
///
/// Dense Gaussian kernels are numerically rank deficient, so when the
/// smallest eigenvalue falls below `1e-12 * largest` a diagonal jitter of
/// `1e-10 * trace/n` is added first. A matrix still not positive definite
/// after jitter is rejected with its smallest eigenvalue.
pub fn factorize(cov: &Matrix) -> Result<SpdFactors> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::dims(
            "factorize",
            "square matrix",
            format!("{}x{}", cov.nrows(), cov.ncols()),
        ));
    }
    let n = cov.nrows();
    let (mut values, vectors) = sym_eig(cov);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    let mut matrix = cov.clone();
    if min < 1e-12 * max {
        let jitter = 1e-10 * cov.trace() / n as f64;
        // A diagonal shift moves eigenvalues without changing eigenvectors.
        for v in &mut values {
            *v += jitter;
        }
        for i in 0..n {
            matrix[(i, i)] += jitter;
        }
    }
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig: min });
    }
    let rescale = |f: &dyn Fn(f64) -> f64| -> Matrix {
        let mut scaled = vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(values[j]);
        }
        let m = &scaled * vectors.transpose();
        (&m + m.transpose()) * 0.5
    };
    Ok(SpdFactors {
        matrix,
        inverse: rescale(&|v| 1.0 / v),
        sqrt: rescale(&|v| v.sqrt()),
        inv_sqrt: rescale(&|v| 1.0 / v.sqrt()),
    })
}

/// Diagonal sample-mode covariance: isotropic or one variance per sample.
#[derive(Debug, Clone)]
pub enum Sigma3 {
    Scalar(f64),
    PerSample(Vec<f64>),
}

impl Sigma3 {
    pub fn unit() -> Self {
        Sigma3::Scalar(1.0)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Sigma3::Scalar(v) => *v > 0.0,
            Sigma3::PerSample(vs) => !vs.is_empty() && vs.iter().all(|v| *v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "sample-mode variances must be strictly positive".into(),
            ))
        }
    }

    /// Diagonal of `Sigma3` for `n` samples.
    pub fn variances(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Sigma3::Scalar(v) => Ok(vec![*v; n]),
            Sigma3::PerSample(vs) => {
                if vs.len() != n {
                    return Err(Error::dims("Sigma3", n, vs.len()));
                }
                Ok(vs.clone())
            }
        }
    }
}

/// Noise model `N(0, Sigma1, Sigma2, Sigma3)` with factorizations cached at
/// construction; immutable afterwards.
#[derive(Debug, Clone)]
pub struct CovModel {
    pub theta: Option<f64>,
    pub grid1: Grid,
    pub grid2: Grid,
    pub sigma3: Sigma3,
    sig1: SpdFactors,
    sig2: SpdFactors,
}

impl CovModel {
    /// Gaussian-kernel spatial factors with bandwidth `theta`.
    pub fn gaussian(grid1: Grid, grid2: Grid, theta: f64, sigma3: Sigma3) -> Result<Self> {
        sigma3.validate()?;
        let sig1 = factorize(&build_gaussian_cov(&grid1, theta)?)?;
        let sig2 = factorize(&build_gaussian_cov(&grid2, theta)?)?;
        Ok(CovModel {
            theta: Some(theta),
            grid1,
            grid2,
            sigma3,
            sig1,
            sig2,
        })
    }

    /// Identity spatial factors (i.i.d. within a slice).
    pub fn iid(i1: usize, i2: usize, sigma3: Sigma3) -> Result<Self> {
        sigma3.validate()?;
        Ok(CovModel {
            theta: None,
            grid1: Grid::uniform(i1),
            grid2: Grid::uniform(i2),
            sigma3,
            sig1: SpdFactors::identity(i1),
            sig2: SpdFactors::identity(i2),
        })
    }

    pub fn sigma1(&self) -> &SpdFactors {
        &self.sig1
    }

    pub fn sigma2(&self) -> &SpdFactors {
        &self.sig2
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        (self.sig1.dim(), self.sig2.dim())
    }

    /// Per-sample standard deviations (sqrt of the `Sigma3` diagonal).
    pub fn sigma3_stddevs(&self, n: usize) -> Result<Vec<f64>> {
        Ok(self.sigma3.variances(n)?.iter().map(|v| v.sqrt()).collect())
    }

    /// Whitened squared norm `vec(t)' (S3 ⊗ S2 ⊗ S1)^{-1} vec(t)`.
    pub fn whitened_energy(&self, t: &Tensor3) -> Result<f64> {
        let n = t.dim(3);
        let stddevs = self.sigma3_stddevs(n)?;
        let mut w = t
            .mode_product(&self.sig1.inv_sqrt, 1)?
            .mode_product(&self.sig2.inv_sqrt, 2)?;
        for (i3, s) in stddevs.iter().enumerate() {
            let slice = w.slice3(i3) / *s;
            w.set_slice3(i3, &slice);
        }
        let norm = w.frobenius_norm();
        Ok(norm * norm)
    }
}

/// Draws `Z x1 Sigma1^{1/2} x2 Sigma2^{1/2} x3 Sigma3^{1/2}` with `Z` i.i.d.
/// standard normal, using the supplied generator.
pub fn sample_tensor_normal_with(cov: &CovModel, n: usize, rng: &mut impl Rng) -> Result<Tensor3> {
    let (i1, i2) = cov.spatial_dims();
    let stddevs = cov.sigma3_stddevs(n)?;
    let mut z = Tensor3::zeros((i1, i2, n));
    for i3 in 0..n {
        for j2 in 0..i2 {
            for j1 in 0..i1 {
                z[(j1, j2, i3)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let mut e = z
        .mode_product(&cov.sigma1().sqrt, 1)?
        .mode_product(&cov.sigma2().sqrt, 2)?;
    for (i3, s) in stddevs.iter().enumerate() {
        if (*s - 1.0).abs() > 0.0 {
            let slice = e.slice3(i3) * *s;
            e.set_slice3(i3, &slice);
        }
    }
    Ok(e)
}

/// Seeded variant; `ChaCha8` keyed by `seed` so repeats are bit-identical.
pub fn sample_tensor_normal(cov: &CovModel, n: usize, seed: u64) -> Result<Tensor3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_tensor_normal_with(cov, n, &mut rng)
}
