//! Variational sparse GP heads with recursive least-squares updates.
//!
//! Each [`SparseGpHead`] models one scalar residual with an ARD
//! squared-exponential kernel over the 9-dimensional GP input. The posterior
//! over inducing values is `N(m_u, S_u)`. The weight-space feature of an input
//! `z` is `phi(z) = K_zM K_M^-1`, so the predictive mean is `phi(z) m_u`, and
//! new observations update `(m_u, S_u)` by exponentially-forgetting RLS.
//!
//! Observations enter the recursion whitened by the head's noise standard
//! deviation (`phi / sigma_eps`, `y / sigma_eps`), which makes the recursion
//! with `lambda = 1` reproduce [`SparseGpHead::batch_fit`] exactly. With
//! `sigma_eps^2 = 1` it is the plain unit-noise recursion.

mod io;
mod residual;
pub mod training;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::GP_INPUT_DIM;

pub use io::{
    read_dataset, read_head, read_model, write_dataset, write_head, write_model, GP_MAGIC,
    GP_VERSION,
};
pub use residual::{
    residual_target, OutlierGate, ResidualModel, ResidualSnapshot, DEFAULT_OUTLIER_GATE,
};

/// Relative diagonal jitter added to `K_M` before inversion.
pub const JITTER: f64 = 1e-8;
/// Eigenvalue level below which `S_u` is projected back onto the PSD cone.
const PSD_TOLERANCE: f64 = 1e-10;

pub type Input = [f64; GP_INPUT_DIM];

#[derive(Debug, Error)]
pub enum GpError {
    #[error("kernel matrix is singular even after jitter")]
    SingularKernelMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-positive innovation gain in recursive update")]
    NonPositiveGain,
    #[error("residual target rejected by the outlier gate")]
    OutlierRejected,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("malformed model data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// ARD squared-exponential hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyper {
    pub lengthscales: [f64; GP_INPUT_DIM],
    pub signal_var: f64,
    pub noise_var: f64,
}

impl KernelHyper {
    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(GpError::InvalidHyper("lengthscales must be positive".into()));
        }
        if !ok(self.signal_var) || !ok(self.noise_var) {
            return Err(GpError::InvalidHyper("variances must be positive".into()));
        }
        Ok(())
    }
}

/// `sigma_f^2 exp(-0.5 sum_d ((a_d - b_d) / l_d)^2)`.
#[inline]
pub fn kernel(a: &Input, b: &Input, hyper: &KernelHyper) -> f64 {
    let mut s = 0.0;
    for d in 0..GP_INPUT_DIM {
        let t = (a[d] - b[d]) / hyper.lengthscales[d];
        s += t * t;
    }
    hyper.signal_var * (-0.5 * s).exp()
}

fn kernel_matrix(rows: &[Input], cols: &[Input], hyper: &KernelHyper) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel(&rows[i], &cols[j], hyper))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Clips negative eigenvalues of a symmetric matrix to zero when it is not
/// PSD within tolerance. Returns whether a projection happened.
fn floor_psd(m: &mut DMatrix<f64>) -> bool {
    let n = m.nrows();
    let shifted = &*m + DMatrix::identity(n, n) * PSD_TOLERANCE;
    if shifted.cholesky().is_some() {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    *m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(m);
    true
}

/// A single-output sparse GP.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGpHead {
    inducing: Vec<Input>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    hyper: KernelHyper,
    km: DMatrix<f64>,
    km_inv: DMatrix<f64>,
    forgetting: f64,
}

impl SparseGpHead {
    /// Prior head: `m_u = 0`, `S_u = K_M`.
    pub fn prior(
        inducing: Vec<Input>,
        hyper: KernelHyper,
        forgetting: f64,
    ) -> Result<Self, GpError> {
        let (km, km_inv) = Self::inducing_kernel(&inducing, &hyper, forgetting)?;
        let m = inducing.len();
        Ok(Self {
            inducing,
            mean: DVector::zeros(m),
            cov: km.clone(),
            hyper,
            km,
            km_inv,
            forgetting,
        })
    }

    fn inducing_kernel(
        inducing: &[Input],
        hyper: &KernelHyper,
        forgetting: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), GpError> {
        hyper.validate()?;
        if inducing.is_empty() {
            return Err(GpError::DimensionMismatch("at least one inducing point required".into()));
        }
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(GpError::InvalidHyper(format!(
                "forgetting factor {forgetting} outside (0, 1]"
            )));
        }
        if inducing.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GpError::DimensionMismatch("non-finite inducing input".into()));
        }
        let m = inducing.len();
        let mut km = kernel_matrix(inducing, inducing, hyper);
        for i in 0..m {
            km[(i, i)] += JITTER * hyper.signal_var;
        }
        let chol = km.clone().cholesky().ok_or(GpError::SingularKernelMatrix)?;
        let mut km_inv = chol.inverse();
        symmetrize(&mut km_inv);
        Ok((km, km_inv))
    }

    /// Rebuilds a head from stored posterior parameters.
    pub fn from_parts(
        inducing: Vec<Input>,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        hyper: KernelHyper,
        forgetting: f64,
    ) -> Result<Self, GpError> {
        let m = inducing.len();
        if mean.len() != m || cov.nrows() != m || cov.ncols() != m {
            return Err(GpError::DimensionMismatch(format!(
                "posterior sizes do not match {m} inducing points"
            )));
        }
        let (km, km_inv) = Self::inducing_kernel(&inducing, &hyper, forgetting)?;
        Ok(Self {
            inducing,
            mean,
            cov,
            hyper,
            km,
            km_inv,
            forgetting,
        })
    }

    /// Closed-form variational posterior from a batch of data:
    ///
    /// `S_u = K_M (K_M + s^-2 K_MN K_NM)^-1 K_M`,
    /// `m_u = s^-2 S_u K_M^-1 K_MN Y`.
    pub fn batch_fit(
        z: &[Input],
        y: &[f64],
        inducing: Vec<Input>,
        hyper: KernelHyper,
        forgetting: f64,
    ) -> Result<Self, GpError> {
        if z.len() != y.len() {
            return Err(GpError::DimensionMismatch(format!(
                "{} inputs but {} targets",
                z.len(),
                y.len()
            )));
        }
        let mut head = Self::prior(inducing, hyper, forgetting)?;
        if z.is_empty() {
            return Ok(head);
        }
        let prec = 1.0 / hyper.noise_var;
        let kmn = kernel_matrix(&head.inducing, z, &hyper);
        let mut a = &head.km + (&kmn * kmn.transpose()) * prec;
        symmetrize(&mut a);
        let chol = a.cholesky().ok_or(GpError::SingularKernelMatrix)?;
        // S_u K_M^-1 = K_M A^-1, hence m_u = s^-2 K_M A^-1 K_MN Y.
        let a_inv_km = chol.solve(&head.km);
        let mut cov = &head.km * a_inv_km;
        symmetrize(&mut cov);
        let kmn_y = &kmn * DVector::from_column_slice(y);
        head.mean = (&head.km * chol.solve(&kmn_y)) * prec;
        head.cov = cov;
        Ok(head)
    }

    pub fn inducing(&self) -> &[Input] {
        &self.inducing
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn hyper(&self) -> &KernelHyper {
        &self.hyper
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    /// `K_M` including jitter.
    pub fn km(&self) -> &DMatrix<f64> {
        &self.km
    }

    pub fn km_inv(&self) -> &DMatrix<f64> {
        &self.km_inv
    }

    pub fn set_mean(&mut self, mean: DVector<f64>) -> Result<(), GpError> {
        if mean.len() != self.inducing.len() {
            return Err(GpError::DimensionMismatch("mean length".into()));
        }
        self.mean = mean;
        Ok(())
    }

    pub fn reset_to_prior(&mut self) {
        self.mean.fill(0.0);
        self.cov = self.km.clone();
    }

    fn cross_kernel(&self, z: &Input) -> DVector<f64> {
        DVector::from_iterator(
            self.inducing.len(),
            self.inducing.iter().map(|zu| kernel(z, zu, &self.hyper)),
        )
    }

    /// `K_zM K_M^-1` as a column vector.
    pub fn feature_row(&self, z: &Input) -> DVector<f64> {
        &self.km_inv * self.cross_kernel(z)
    }

    /// Predictive mean and variance (variance floored at zero).
    pub fn predict(&self, z: &Input) -> (f64, f64) {
        let k = self.cross_kernel(z);
        let phi = &self.km_inv * &k;
        let mean = phi.dot(&self.mean);
        // k** - k^T K^-1 k + phi^T S phi
        let kss = self.hyper.signal_var;
        let var = kss - k.dot(&phi) + phi.dot(&(&self.cov * &phi));
        (mean, var.max(0.0))
    }

    /// One exponentially-forgetting RLS step on the observation `(z, y)`.
    ///
    /// On [`GpError::NonPositiveGain`] the head is left unchanged.
    pub fn recursive_update(&mut self, z: &Input, y: f64) -> Result<(), GpError> {
        if !y.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(GpError::DimensionMismatch("non-finite observation".into()));
        }
        let noise_sd = self.hyper.noise_var.sqrt();
        let phi = self.feature_row(z) / noise_sd;
        let y = y / noise_sd;
        let s_phi = &self.cov * &phi;
        let gain = self.forgetting + phi.dot(&s_phi);
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(GpError::NonPositiveGain);
        }
        let innovation = y - phi.dot(&self.mean);
        let l = &s_phi / gain;
        self.mean += &l * innovation;
        // S - L G L^T = S - (S phi)(S phi)^T / G
        self.cov.ger(-1.0 / gain, &s_phi, &s_phi, 1.0);
        if self.forgetting != 1.0 {
            self.cov /= self.forgetting;
        }
        symmetrize(&mut self.cov);
        floor_psd(&mut self.cov);
        Ok(())
    }
}
