//! Offline fitting: inducing-point selection, an optional hyperparameter grid
//! search and the batch fit of a [`ResidualModel`].

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kernel_matrix, GpError, Input, KernelHyper, ResidualModel};
use crate::dynamics::GP_INPUT_DIM;

/// One `(xi, y)` training pair.
pub type Sample = (Input, [f64; 3]);

/// Default ARD lengthscales for `[psi, delta, v, beta, r, a, v_delta, alpha, gamma]`.
/// Terrain-induced residuals vary with heading, speed, roll and pitch; the
/// remaining inputs get lengthscales well beyond their operating range.
pub const DEFAULT_LENGTHSCALES: [f64; GP_INPUT_DIM] =
    [1.5, 3.0, 2.0, 1.0, 15.0, 40.0, 30.0, 0.15, 0.15];

const GRID_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const GRID_SIGNAL: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
const GRID_NOISE: [f64; 6] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3];
const SEARCH_SUBSAMPLE: usize = 500;
const KMEANS_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Number of inducing points `M`.
    pub num_inducing: usize,
    /// Forgetting factor `lambda` in `(0, 1]`.
    pub forgetting: f64,
    /// Replace the configured hyperparameters by a log-grid search.
    pub grid_search: bool,
    pub hyper_v: KernelHyper,
    pub hyper_beta: KernelHyper,
    pub hyper_r: KernelHyper,
}

impl Default for GpConfig {
    fn default() -> Self {
        let hyper = |signal_var: f64, noise_var: f64| KernelHyper {
            lengthscales: DEFAULT_LENGTHSCALES,
            signal_var,
            noise_var,
        };
        Self {
            num_inducing: 30,
            forgetting: 0.999,
            grid_search: false,
            hyper_v: hyper(1e-3, 4e-4),
            hyper_beta: hyper(1e-4, 2.5e-5),
            hyper_r: hyper(1e-4, 1e-4),
        }
    }
}

impl GpConfig {
    pub fn hypers(&self) -> [KernelHyper; 3] {
        [self.hyper_v, self.hyper_beta, self.hyper_r]
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.num_inducing == 0 {
            return Err(GpError::InvalidHyper("num_inducing must be at least 1".into()));
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(GpError::InvalidHyper("forgetting must lie in (0, 1]".into()));
        }
        self.hypers().iter().try_for_each(KernelHyper::validate)
    }
}

/// Held-out diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub hypers: [KernelHyper; 3],
    pub num_train: usize,
    pub num_test: usize,
    /// Held-out RMSE per head, `None` when the test split is empty.
    pub holdout_rmse: Option<[f64; 3]>,
}

fn column_std(z: &[Input]) -> [f64; GP_INPUT_DIM] {
    let n = z.len() as f64;
    std::array::from_fn(|d| {
        let mean = z.iter().map(|v| v[d]).sum::<f64>() / n;
        let var = z.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
        if var > 1e-24 {
            var.sqrt()
        } else {
            1.0
        }
    })
}

fn scaled_dist2(a: &Input, b: &Input, scale: &[f64; GP_INPUT_DIM]) -> f64 {
    (0..GP_INPUT_DIM)
        .map(|d| ((a[d] - b[d]) / scale[d]).powi(2))
        .sum()
}

/// k-means++ seeded Lloyd iterations on standardized inputs; returns
/// centroids in original units. Requires `1 <= k <= z.len()`.
pub fn kmeans(z: &[Input], k: usize, seed: u64) -> Result<Vec<Input>, GpError> {
    if k == 0 || k > z.len() {
        return Err(GpError::DimensionMismatch(format!(
            "cannot pick {k} inducing points from {} samples",
            z.len()
        )));
    }
    let scale = column_std(z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![z[rng.random_range(0..z.len())]];
    let mut d2: Vec<f64> = z.iter().map(|p| scaled_dist2(p, &centers[0], &scale)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = z.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                pick = argmax(&d2);
            }
            pick
        } else {
            rng.random_range(0..z.len())
        };
        centers.push(z[next]);
        for (i, p) in z.iter().enumerate() {
            d2[i] = d2[i].min(scaled_dist2(p, &z[next], &scale));
        }
    }

    let mut assign = vec![usize::MAX; z.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, p) in z.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    scaled_dist2(p, &centers[a], &scale)
                        .total_cmp(&scaled_dist2(p, &centers[b], &scale))
                })
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; GP_INPUT_DIM]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in z.iter().zip(&assign) {
            counts[c] += 1;
            for d in 0..GP_INPUT_DIM {
                sums[c][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].map(|s| s / counts[c] as f64);
            } else {
                // Re-seed an empty cluster at the worst-served sample.
                let far: Vec<f64> = z
                    .iter()
                    .zip(&assign)
                    .map(|(p, &a)| scaled_dist2(p, &centers[a], &scale))
                    .collect();
                centers[c] = z[argmax(&far)];
            }
        }
    }
    Ok(centers)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Exact GP log marginal likelihood `log N(y | 0, K + sigma_eps^2 I)`.
pub fn log_marginal_likelihood(z: &[Input], y: &[f64], hyper: &KernelHyper) -> Result<f64, GpError> {
    let n = z.len();
    let mut k = kernel_matrix(z, z, hyper);
    for i in 0..n {
        k[(i, i)] += hyper.noise_var;
    }
    let chol = k.cholesky().ok_or(GpError::SingularKernelMatrix)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(-0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Maximizes the exact-GP log marginal likelihood over a log grid of
/// `(lengthscale multiplier, sigma_f^2, sigma_eps^2)`. One eigendecomposition
/// of the unit-variance kernel per multiplier serves all variance pairs.
pub fn grid_search(
    z: &[Input],
    y: &[f64],
    base_lengthscales: &[f64; GP_INPUT_DIM],
) -> Result<KernelHyper, GpError> {
    if z.len() != y.len() || z.is_empty() {
        return Err(GpError::DimensionMismatch("grid search needs matching, non-empty data".into()));
    }
    let n = z.len() as f64;
    let mut best: Option<(f64, KernelHyper)> = None;
    for scale in GRID_SCALES {
        let unit = KernelHyper {
            lengthscales: base_lengthscales.map(|l| l * scale),
            signal_var: 1.0,
            noise_var: 1.0,
        };
        let eig = kernel_matrix(z, z, &unit).symmetric_eigen();
        let proj = eig.eigenvectors.transpose() * DVector::from_column_slice(y);
        for sf in GRID_SIGNAL {
            for sn in GRID_NOISE {
                let mut lml = -0.5 * n * (2.0 * std::f64::consts::PI).ln();
                for (lam, p) in eig.eigenvalues.iter().zip(proj.iter()) {
                    let e = sf * lam.max(0.0) + sn;
                    lml -= 0.5 * (p * p / e + e.ln());
                }
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((
                        lml,
                        KernelHyper {
                            signal_var: sf,
                            noise_var: sn,
                            ..unit
                        },
                    ));
                }
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Splits, optionally searches hyperparameters, reports held-out RMSE from a
/// model fitted on the training split, and returns a model fitted on all data.
pub fn fit_residual_model(
    samples: &[Sample],
    cfg: &GpConfig,
    seed: u64,
) -> Result<(ResidualModel, FitReport), GpError> {
    cfg.validate()?;
    if samples.len() < 2 || samples.len() < cfg.num_inducing {
        return Err(GpError::DimensionMismatch(format!(
            "{} samples cannot support {} inducing points",
            samples.len(),
            cfg.num_inducing
        )));
    }
    let z: Vec<Input> = samples.iter().map(|s| s.0).collect();
    let y: Vec<[f64; 3]> = samples.iter().map(|s| s.1).collect();
    let scale = column_std(&z);
    if scale.iter().all(|&s| s == 1.0) && z.windows(2).all(|w| w[0] == w[1]) {
        return Err(GpError::DimensionMismatch("all samples share one input".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hypers = if cfg.grid_search {
        let mut idx: Vec<usize> = (0..z.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(SEARCH_SUBSAMPLE);
        idx.sort_unstable();
        let zs: Vec<Input> = idx.iter().map(|&i| z[i]).collect();
        let base = cfg.hypers();
        let mut out = base;
        for (k, slot) in out.iter_mut().enumerate() {
            let ys: Vec<f64> = idx.iter().map(|&i| y[i][k]).collect();
            *slot = grid_search(&zs, &ys, &base[k].lengthscales)?;
        }
        out
    } else {
        cfg.hypers()
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let num_train = (samples.len() * 4).div_ceil(5);
    let (train_idx, test_idx) = order.split_at(num_train);
    let holdout_rmse = if test_idx.is_empty() {
        None
    } else {
        let zt: Vec<Input> = train_idx.iter().map(|&i| z[i]).collect();
        let yt: Vec<[f64; 3]> = train_idx.iter().map(|&i| y[i]).collect();
        let m = cfg.num_inducing.min(zt.len());
        let inducing = kmeans(&zt, m, seed)?;
        let model = ResidualModel::batch_fit(&zt, &yt, inducing, hypers, cfg.forgetting)?;
        let mut sq = [0.0; 3];
        for &i in test_idx {
            let pred = model.predict(&z[i]);
            for k in 0..3 {
                sq[k] += (pred[k].0 - y[i][k]).powi(2);
            }
        }
        Some(sq.map(|s| (s / test_idx.len() as f64).sqrt()))
    };

    let inducing = kmeans(&z, cfg.num_inducing, seed)?;
    let model = ResidualModel::batch_fit(&z, &y, inducing, hypers, cfg.forgetting)?;
    Ok((
        model,
        FitReport {
            hypers,
            num_train: train_idx.len(),
            num_test: test_idx.len(),
            holdout_rmse,
        },
    ))
}

/// Exact GP posterior mean at `z_star`, `K_*N (K + sigma_eps^2 I)^-1 y`.
pub fn exact_gp_mean(
    z: &[Input],
    y: &[f64],
    hyper: &KernelHyper,
    z_star: &[Input],
) -> Result<Vec<f64>, GpError> {
    let mut k = kernel_matrix(z, z, hyper);
    for i in 0..z.len() {
        k[(i, i)] += hyper.noise_var;
    }
    let alpha = k
        .cholesky()
        .ok_or(GpError::SingularKernelMatrix)?
        .solve(&DVector::from_column_slice(y));
    let ks: DMatrix<f64> = kernel_matrix(z_star, z, hyper);
    Ok((ks * alpha).iter().copied().collect())
}
