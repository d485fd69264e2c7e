//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Scalar, Tensor};

/// Weight initialization scheme for linear and recurrent matrices. Biases are
/// always zero-initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Init {
    /// Orthogonal matrix from the QR decomposition of a Gaussian matrix.
    #[default]
    Orthogonal,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for dense layers.
    UniformFanIn,
}

impl Init {
    pub fn matrix<T: Scalar, R: Rng + ?Sized>(self, rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::Orthogonal => orthogonal_init(rows, cols, rng),
            Init::UniformFanIn => uniform_fan_in(rows, cols, rng),
        }
    }
}

/// Returns a `rows x cols` matrix with orthonormal columns (`rows >= cols`) or
/// orthonormal rows (`cols > rows`).
///
/// A Gaussian matrix is factored with Householder QR and the columns of `Q`
/// are sign-corrected by `sign(diag(R))`, which makes the result Haar
/// distributed.
pub fn orthogonal_init<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs positive dimensions");
    let (m, n) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let gaussian: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(rng)).collect();
    let q = thin_q(m, n, gaussian);
    let q = Tensor::<f64>::matrix(m, n, q).expect("thin Q shape");
    let q = if rows >= cols { q } else { q.transpose() };
    q.cast()
}

fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

/// Thin `Q` (m x n, m >= n) of a row-major m x n matrix, with columns scaled
/// so that `R` has a non-negative diagonal.
fn thin_q(m: usize, n: usize, mut a: Vec<f64>) -> Vec<f64> {
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag_sign = vec![1.0; n];
    for k in 0..n {
        let norm = (k..m).map(|i| a[i * n + k].powi(2)).sum::<f64>().sqrt();
        let akk = a[k * n + k];
        let alpha = if akk >= 0.0 { -norm } else { norm };
        // R[k][k] = alpha after the reflection.
        diag_sign[k] = if alpha < 0.0 { -1.0 } else { 1.0 };
        let mut v = vec![0.0; m];
        for i in k..m {
            v[i] = a[i * n + k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let s: f64 = (k..m).map(|i| v[i] * a[i * n + j]).sum::<f64>() * 2.0 / vnorm2;
                for i in k..m {
                    a[i * n + j] -= s * v[i];
                }
            }
        }
        vs.push(v);
    }
    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let s: f64 = (k..m).map(|i| v[i] * q[i * n + j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..m {
                q[i * n + j] -= s * v[i];
            }
        }
    }
    for j in 0..n {
        let norm = (0..m).map(|i| q[i * n + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..m {
            q[i * n + j] *= diag_sign[j] / norm;
        }
    }
    q
}

/// Largest elementwise deviation of `QᵀQ` (or `QQᵀ` for wide matrices) from the identity.
pub fn orthogonality_residual<T: Scalar>(q: &Tensor<T>) -> f64 {
    let gram = if q.rows() >= q.cols() {
        q.t_matmul(q)
    } else {
        q.matmul_t(q)
    };
    let eye = Tensor::<T>::identity(gram.rows());
    gram.max_abs_diff(&eye).to_f64_lossy()
}
