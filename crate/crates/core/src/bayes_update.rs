//! Stage 1: intact model updating by iterative l2 hierarchical Bayesian MAP
//! estimation.
//!
//! Each sensitivity iteration solves the stacked linear systems by cycling
//! the closed-form conditional updates
//!
//! ```text
//! dtheta = (sum_n S_n^T S_n + (sigma2/alpha) I)^-1 sum_n S_n^T r_n
//! sigma2 = (sum_n ||S_n dtheta - r_n||^2 + 2 b0) / m
//! alpha  = (||dtheta||^2 + 2 b1) / (N_ele/2 + a1 + 1)
//! ```
//!
//! with `m = N_ob N_mod (N_sen + 1) + 2 (a0 + 1)`. The per-iteration
//! posterior covariance comes from the Hessian of the negative log
//! posterior, `Sigma = N_ob * H^-1` with `H = (1/sigma2) sum S^T S +
//! (1/alpha) I`, and increments plus covariances are accumulated across the
//! outer sensitivity loop.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SensidError};
use crate::model::{AssembledSystem, ModalData, ParameterVector};
use crate::sensitivity::{assemble_sensitivity, Betas, SensitivitySystem};

/// Inverse-Gamma hyperprior parameters for the noise variance `sigma2`
/// (a0, b0) and the prior variance `alpha` (a1, b1).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperPriors {
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        // Weakly informative on the dimensionless residue scale.
        HyperPriors {
            a0: 1.0,
            b0: 1e-4,
            a1: 1.0,
            b1: 1e-4,
        }
    }
}

impl HyperPriors {
    fn validate(&self) -> Result<()> {
        if [self.a0, self.b0, self.a1, self.b1].iter().any(|v| !(*v > 0.0)) {
            return Err(SensidError::InvalidInput(
                "hyperprior parameters must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// State of the inner MAP fixed-point cycle.
#[derive(Clone, Debug)]
pub struct MapIterate {
    pub delta_theta: DVector<f64>,
    pub sigma2: f64,
    pub alpha: f64,
    pub n_inner_iters: usize,
    pub converged: bool,
}

impl MapIterate {
    /// Self-scaling start: `sigma2` from the sample variance of the stacked
    /// residues, `alpha = 1`, `dtheta = 0`.
    pub fn initial(systems: &[SensitivitySystem]) -> Self {
        let n_ele = systems.first().map_or(0, |s| s.jacobian.ncols());
        let mut count = 0usize;
        let mut mean = 0.0;
        for s in systems {
            for v in s.residue.iter() {
                mean += v;
                count += 1;
            }
        }
        mean /= count.max(1) as f64;
        let mut var = 0.0;
        for s in systems {
            for v in s.residue.iter() {
                var += (v - mean) * (v - mean);
            }
        }
        var /= count.max(1) as f64;
        MapIterate {
            delta_theta: DVector::zeros(n_ele),
            sigma2: var.max(1e-12),
            alpha: 1.0,
            n_inner_iters: 0,
            converged: false,
        }
    }
}

fn check_systems(systems: &[SensitivitySystem]) -> Result<usize> {
    let first = systems
        .first()
        .ok_or_else(|| SensidError::InvalidInput("need at least one observation".into()))?;
    let n_ele = first.jacobian.ncols();
    for s in systems {
        if s.jacobian.ncols() != n_ele {
            return Err(SensidError::Dimension(
                "observations disagree on the number of elements".into(),
            ));
        }
        if s.jacobian.nrows() != s.residue.len() {
            return Err(SensidError::Dimension("jacobian/residue row mismatch".into()));
        }
    }
    Ok(n_ele)
}

fn total_rows(systems: &[SensitivitySystem]) -> usize {
    systems.iter().map(|s| s.residue.len()).sum()
}

/// The objective the cyclic updates coordinate-minimize (negative log
/// posterior up to constants, with the alpha terms matching the printed
/// alpha update). Exposed for Hessian and monotonicity checks.
pub fn map_objective(systems: &[SensitivitySystem], hp: &HyperPriors, it: &MapIterate) -> f64 {
    let n_ele = it.delta_theta.len() as f64;
    let m = total_rows(systems) as f64 + 2.0 * (hp.a0 + 1.0);
    let mut fit = 0.0;
    for s in systems {
        fit += (&s.jacobian * &it.delta_theta - &s.residue).norm_squared();
    }
    (fit + 2.0 * hp.b0) / (2.0 * it.sigma2)
        + 0.5 * m * it.sigma2.ln()
        + (it.delta_theta.norm_squared() + 2.0 * hp.b1) / (2.0 * it.alpha)
        + 0.5 * (n_ele / 2.0 + hp.a1 + 1.0) * it.alpha.ln()
}

/// Cycles the three conditional updates until the relative changes of
/// `dtheta`, `sigma2` and `alpha` all drop below `tol`.
pub fn map_fixed_point(
    systems: &[SensitivitySystem],
    hp: &HyperPriors,
    init: MapIterate,
    tol: f64,
    max_iter: usize,
) -> Result<MapIterate> {
    hp.validate()?;
    let n_ele = check_systems(systems)?;
    let m = total_rows(systems) as f64 + 2.0 * (hp.a0 + 1.0);
    let alpha_den = n_ele as f64 / 2.0 + hp.a1 + 1.0;

    // Precompute the stacked normal-equation pieces.
    let mut sts = DMatrix::zeros(n_ele, n_ele);
    let mut str_ = DVector::zeros(n_ele);
    for s in systems {
        sts += s.jacobian.transpose() * &s.jacobian;
        str_ += s.jacobian.transpose() * &s.residue;
    }

    let mut it = init;
    for iter in 1..=max_iter {
        assert!(it.sigma2 > 0.0 && it.alpha > 0.0, "variance iterates must stay positive");
        let ridge = it.sigma2 / it.alpha;
        let mut lhs = sts.clone();
        for i in 0..n_ele {
            lhs[(i, i)] += ridge;
        }
        let delta = nalgebra::Cholesky::new(lhs)
            .ok_or_else(|| {
                SensidError::Numerical("normal matrix not positive definite".into())
            })?
            .solve(&str_);

        let mut fit = 0.0;
        for s in systems {
            fit += (&s.jacobian * &delta - &s.residue).norm_squared();
        }
        let sigma2 = (fit + 2.0 * hp.b0) / m;
        let alpha = (delta.norm_squared() + 2.0 * hp.b1) / alpha_den;
        if !sigma2.is_finite() || !alpha.is_finite() || !delta.iter().all(|v| v.is_finite()) {
            return Err(SensidError::Divergence(
                "non-finite inner MAP iterate".into(),
            ));
        }

        let d_delta = (&delta - &it.delta_theta).norm() / delta.norm().max(1e-300);
        let d_sigma = (sigma2 - it.sigma2).abs() / sigma2;
        let d_alpha = (alpha - it.alpha).abs() / alpha;
        it = MapIterate {
            delta_theta: delta,
            sigma2,
            alpha,
            n_inner_iters: iter,
            converged: false,
        };
        if d_delta < tol && d_sigma < tol && d_alpha < tol {
            it.converged = true;
            break;
        }
    }
    Ok(it)
}

/// Posterior covariance of the increment: `N_ob * H^-1` with
/// `H = (1/sigma2) sum_n S_n^T S_n + (1/alpha) I`.
pub fn posterior_covariance(
    systems: &[SensitivitySystem],
    it: &MapIterate,
) -> Result<DMatrix<f64>> {
    let n_ele = check_systems(systems)?;
    let mut h = DMatrix::zeros(n_ele, n_ele);
    for s in systems {
        h += s.jacobian.transpose() * &s.jacobian;
    }
    h /= it.sigma2;
    for i in 0..n_ele {
        h[(i, i)] += 1.0 / it.alpha;
    }
    let n_ob = systems.len() as f64;
    let inv = nalgebra::Cholesky::new(h)
        .ok_or_else(|| SensidError::Numerical("Hessian not positive definite".into()))?
        .inverse();
    let cov = inv * n_ob;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Per-parameter Gaussian fit from Monte Carlo samples of the joint
/// posterior.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ParamPosterior {
    pub mean: f64,
    pub std: f64,
}

/// Draws `n_samples` from `N(theta_hat, covariance)` through a spectral
/// square root (tolerating PSD-singular covariances) and fits a univariate
/// Gaussian to every coordinate.
pub fn marginal_posteriors(
    theta_hat: &DVector<f64>,
    covariance: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ParamPosterior>> {
    let n = theta_hat.len();
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(SensidError::Dimension("covariance size mismatch".into()));
    }
    if n_samples < 1000 {
        return Err(SensidError::InvalidInput("need at least 1000 samples".into()));
    }
    let sym = (covariance + covariance.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut factor = DMatrix::zeros(n, n);
    for j in 0..n {
        let ev = eig.eigenvalues[j];
        if ev < -1e-10 * max_ev.max(1e-300) {
            return Err(SensidError::NotPsd(ev));
        }
        let s = ev.max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] = eig.eigenvectors[(i, j)] * s;
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    let mut z = DVector::zeros(n);
    for _ in 0..n_samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let x = theta_hat + &factor * &z;
        for i in 0..n {
            sum[i] += x[i];
            sum_sq[i] += x[i] * x[i];
        }
    }
    let nf = n_samples as f64;
    Ok((0..n)
        .map(|i| {
            let mean = sum[i] / nf;
            let var = (sum_sq[i] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            ParamPosterior {
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// One outer sensitivity iteration of the stage-1 loop.
#[derive(Clone, Debug)]
pub struct UpdateIteration {
    pub delta_theta: DVector<f64>,
    pub sigma2: f64,
    pub alpha: f64,
    pub n_inner_iters: usize,
    pub increment_norm: f64,
}

/// Accumulated stage-1 estimate.
#[derive(Clone, Debug)]
pub struct PosteriorEstimate {
    pub theta_hat: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub per_param: Vec<ParamPosterior>,
    pub history: Vec<UpdateIteration>,
    pub converged: bool,
}

/// Settings of the stage-1 loop. Tolerances follow the published scheme:
/// inner 1e-8 (max 500 cycles), outer 1e-6 relative (max 50 iterations).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct UpdateSettings {
    pub betas: Betas,
    pub hyperpriors: HyperPriors,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        UpdateSettings {
            betas: Betas::default(),
            hyperpriors: HyperPriors::default(),
            inner_tol: 1e-8,
            inner_max: 500,
            outer_tol: 1e-6,
            outer_max: 50,
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

/// Runs the full stage-1 outer loop: re-linearize at the current estimate,
/// solve the MAP fixed point over all measurement sets, accumulate the
/// increment and its covariance, and stop once the increment norm falls
/// below `outer_tol` relative to `max(||theta||, 1)`.
pub fn run_model_update(
    sys: &AssembledSystem,
    measured: &[ModalData],
    settings: &UpdateSettings,
) -> Result<PosteriorEstimate> {
    if measured.is_empty() {
        return Err(SensidError::InvalidInput("need at least one measurement set".into()));
    }
    let n_ele = sys.n_ele;
    let mut theta = DVector::zeros(n_ele);
    let mut covariance = DMatrix::zeros(n_ele, n_ele);
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..settings.outer_max {
        let theta_pv = ParameterVector(theta.clone());
        let systems: Vec<SensitivitySystem> = measured
            .iter()
            .map(|m| assemble_sensitivity(sys, &theta_pv, m, settings.betas))
            .collect::<Result<_>>()?;
        let iterate = map_fixed_point(
            &systems,
            &settings.hyperpriors,
            MapIterate::initial(&systems),
            settings.inner_tol,
            settings.inner_max,
        )?;
        let cov_k = posterior_covariance(&systems, &iterate)?;

        theta += &iterate.delta_theta;
        covariance += &cov_k;
        let inc = iterate.delta_theta.norm();
        history.push(UpdateIteration {
            delta_theta: iterate.delta_theta,
            sigma2: iterate.sigma2,
            alpha: iterate.alpha,
            n_inner_iters: iterate.n_inner_iters,
            increment_norm: inc,
        });
        if inc / theta.norm().max(1.0) < settings.outer_tol {
            converged = true;
            break;
        }
    }

    let per_param = marginal_posteriors(&theta, &covariance, settings.mc_samples, settings.seed)?;
    Ok(PosteriorEstimate {
        theta_hat: theta,
        covariance,
        per_param,
        history,
        converged,
    })
}
