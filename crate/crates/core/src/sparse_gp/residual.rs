use serde::{Deserialize, Serialize};

use super::{GpError, Input, KernelHyper, SparseGpHead};
use crate::dynamics::{ode_step, ControlInput, GpInput, ResidualPredictor, VehicleParams, VehicleState};

/// Per-component gate `(|dv|, |dbeta|, |dr|)` on residual targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierGate(pub [f64; 3]);

pub const DEFAULT_OUTLIER_GATE: OutlierGate = OutlierGate([0.5, 0.2, 0.5]);

impl Default for OutlierGate {
    fn default() -> Self {
        DEFAULT_OUTLIER_GATE
    }
}

/// Measured-minus-nominal on `(v, beta, r)` for one control interval.
pub fn residual_target(
    x: &VehicleState,
    u: &ControlInput,
    measured_next: &VehicleState,
    p: &VehicleParams,
    dt: f64,
    gate: &OutlierGate,
) -> Result<[f64; 3], GpError> {
    let nominal = ode_step(x, u, p, dt).map_err(|_| GpError::OutlierRejected)?;
    let y = [
        measured_next.v - nominal.v,
        measured_next.beta - nominal.beta,
        measured_next.r - nominal.r,
    ];
    if y.iter().zip(gate.0.iter()).any(|(v, g)| !v.is_finite() || v.abs() > *g) {
        return Err(GpError::OutlierRejected);
    }
    Ok(y)
}

/// Three independent heads for the `(v, beta, r)` residuals sharing inducing
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModel {
    heads: [SparseGpHead; 3],
}

impl ResidualModel {
    pub fn new(heads: [SparseGpHead; 3]) -> Result<Self, GpError> {
        let z = heads[0].inducing();
        if heads[1..].iter().any(|h| h.inducing() != z) {
            return Err(GpError::DimensionMismatch(
                "residual heads must share inducing inputs".into(),
            ));
        }
        Ok(Self { heads })
    }

    pub fn prior(
        inducing: Vec<Input>,
        hypers: [KernelHyper; 3],
        forgetting: f64,
    ) -> Result<Self, GpError> {
        let heads = [
            SparseGpHead::prior(inducing.clone(), hypers[0], forgetting)?,
            SparseGpHead::prior(inducing.clone(), hypers[1], forgetting)?,
            SparseGpHead::prior(inducing, hypers[2], forgetting)?,
        ];
        Self::new(heads)
    }

    pub fn batch_fit(
        z: &[Input],
        y: &[[f64; 3]],
        inducing: Vec<Input>,
        hypers: [KernelHyper; 3],
        forgetting: f64,
    ) -> Result<Self, GpError> {
        let column = |c: usize| y.iter().map(|row| row[c]).collect::<Vec<_>>();
        let heads = [
            SparseGpHead::batch_fit(z, &column(0), inducing.clone(), hypers[0], forgetting)?,
            SparseGpHead::batch_fit(z, &column(1), inducing.clone(), hypers[1], forgetting)?,
            SparseGpHead::batch_fit(z, &column(2), inducing, hypers[2], forgetting)?,
        ];
        Self::new(heads)
    }

    pub fn heads(&self) -> &[SparseGpHead; 3] {
        &self.heads
    }

    pub fn head_mut(&mut self, k: usize) -> &mut SparseGpHead {
        &mut self.heads[k]
    }

    pub fn predict(&self, xi: &Input) -> [(f64, f64); 3] {
        std::array::from_fn(|k| self.heads[k].predict(xi))
    }

    /// Applies one recursive update per head. A head whose update breaks down
    /// numerically is reset to its prior; the number of such resets is
    /// returned.
    pub fn update(&mut self, xi: &Input, y: &[f64; 3]) -> usize {
        let mut resets = 0;
        for (head, &target) in self.heads.iter_mut().zip(y) {
            if head.recursive_update(xi, target).is_err() {
                head.reset_to_prior();
                resets += 1;
            }
        }
        resets
    }

    /// Immutable copy of what rollouts need for mean prediction.
    pub fn snapshot(&self) -> ResidualSnapshot {
        let inducing = self.heads[0].inducing().to_vec();
        let heads = std::array::from_fn(|k| {
            let head = &self.heads[k];
            let hyper = head.hyper();
            let alpha = head.km_inv() * head.mean();
            SnapshotHead {
                neg_half_inv_ls2: hyper.lengthscales.map(|l| -0.5 / (l * l)),
                weights: alpha.iter().map(|a| a * hyper.signal_var).collect(),
            }
        });
        let shared = (1..3).all(|k| {
            self.heads[k].hyper().lengthscales == self.heads[0].hyper().lengthscales
        });
        ResidualSnapshot {
            inducing,
            heads,
            shared_lengthscales: shared,
        }
    }
}

impl ResidualPredictor for ResidualModel {
    fn predict_mean(&self, xi: &GpInput) -> [f64; 3] {
        std::array::from_fn(|k| {
            let head = &self.heads[k];
            head.feature_row(&xi.0).dot(head.mean())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SnapshotHead {
    neg_half_inv_ls2: [f64; 9],
    /// `sigma_f^2 K_M^-1 m_u`
    weights: Vec<f64>,
}

/// Read-only view of a [`ResidualModel`] used by rollout workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSnapshot {
    inducing: Vec<Input>,
    heads: [SnapshotHead; 3],
    shared_lengthscales: bool,
}

impl ResidualSnapshot {
    #[inline]
    fn exponent(z: &Input, zu: &Input, c: &[f64; 9]) -> f64 {
        let mut s = 0.0;
        for d in 0..9 {
            let t = z[d] - zu[d];
            s += c[d] * t * t;
        }
        s
    }
}

impl ResidualPredictor for ResidualSnapshot {
    #[inline]
    fn predict_mean(&self, xi: &GpInput) -> [f64; 3] {
        let z = &xi.0;
        let mut out = [0.0; 3];
        if self.shared_lengthscales {
            let c = &self.heads[0].neg_half_inv_ls2;
            for (j, zu) in self.inducing.iter().enumerate() {
                let e = Self::exponent(z, zu, c).exp();
                for (o, h) in out.iter_mut().zip(&self.heads) {
                    *o += e * h.weights[j];
                }
            }
        } else {
            for (o, h) in out.iter_mut().zip(&self.heads) {
                for (j, zu) in self.inducing.iter().enumerate() {
                    *o += Self::exponent(z, zu, &h.neg_half_inv_ls2).exp() * h.weights[j];
                }
            }
        }
        out
    }
}

// Keeps the kernel definition and the snapshot's inlined evaluation in step.
#[cfg(test)]
fn snapshot_kernel_agrees(a: &Input, b: &Input, hyper: &KernelHyper) -> bool {
    use super::kernel;
    let c = hyper.lengthscales.map(|l| -0.5 / (l * l));
    let inline = hyper.signal_var * ResidualSnapshot::exponent(a, b, &c).exp();
    (inline - kernel(a, b, hyper)).abs() <= 1e-14 * hyper.signal_var
}
