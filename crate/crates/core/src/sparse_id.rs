//! Stage 2: sparse damage identification by Sequential Threshold Least
//! Squares regression.
//!
//! The per-iteration increment solves a hard-thresholded sequence of
//! least-squares refits (quasi-l0), initialized from a cross-validated LASSO
//! and scored by the loss `L = ||r - S x||_2 + delta * cond(S) * ||x||_0`.
//! Ridge and plain LASSO solvers are kept alongside as the comparison
//! baselines.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bayes_opt::{bayes_opt, BayesOptTrace, OptBudget};
use crate::error::{Result, SensidError};
use crate::model::{AssembledSystem, ModalData, ParameterVector};
use crate::sensitivity::{assemble_sensitivity, stack_systems, Betas};

/// LASSO cross-validation configuration: a geometric grid of `n_etas`
/// penalties spanning `[eta_ratio * eta_max, eta_max]`, scored over
/// `n_folds` row splits, picking the penalty whose averaged held-out loss
/// ranks `selection_rank`-th smallest.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LassoConfig {
    pub n_etas: usize,
    pub eta_ratio: f64,
    pub n_folds: usize,
    pub selection_rank: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_etas: 100,
            eta_ratio: 1e-4,
            n_folds: 5,
            selection_rank: 2,
        }
    }
}

impl LassoConfig {
    fn validate(&self) -> Result<()> {
        if self.n_etas < 2 || !(self.eta_ratio > 0.0 && self.eta_ratio < 1.0) || self.n_folds < 2 {
            return Err(SensidError::InvalidInput("invalid LASSO configuration".into()));
        }
        if self.selection_rank < 1 {
            return Err(SensidError::InvalidInput("selection rank must be >= 1".into()));
        }
        Ok(())
    }
}

const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 10_000;

fn check_finite(r: &DVector<f64>, s: &DMatrix<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) || !s.iter().all(|v| v.is_finite()) {
        return Err(SensidError::InvalidInput("non-finite regression inputs".into()));
    }
    if s.nrows() != r.len() {
        return Err(SensidError::Dimension("row count mismatch".into()));
    }
    Ok(())
}

/// Minimum-norm least squares via SVD with singular values below
/// `1e-10 * sigma_max` treated as zero.
pub fn least_squares_min_norm(s: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = s.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return Ok(DVector::zeros(s.ncols()));
    }
    let sol = svd
        .solve(r, 1e-10 * smax)
        .map_err(|e| SensidError::Numerical(format!("SVD solve failed: {e}")))?;
    Ok(sol.column(0).into_owned())
}

/// Ratio of extreme singular values of `S`.
pub fn condition_number(s: &DMatrix<f64>) -> f64 {
    let svd = nalgebra::SVD::new(s.clone(), false, false);
    let mut smax = 0.0f64;
    let mut smin = f64::INFINITY;
    for &v in svd.singular_values.iter() {
        smax = smax.max(v);
        smin = smin.min(v);
    }
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Cyclic coordinate descent on `||r - S x||_2^2 + eta ||x||_1` with
/// soft-threshold updates. `eta = 0` falls back to minimum-norm least
/// squares.
pub fn lasso(r: &DVector<f64>, s: &DMatrix<f64>, eta: f64) -> Result<DVector<f64>> {
    check_finite(r, s)?;
    if eta < 0.0 {
        return Err(SensidError::InvalidInput("eta must be non-negative".into()));
    }
    if eta == 0.0 {
        return least_squares_min_norm(s, r);
    }
    lasso_warm(r, s, eta, DVector::zeros(s.ncols()))
}

fn lasso_warm(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    eta: f64,
    mut x: DVector<f64>,
) -> Result<DVector<f64>> {
    let n = s.ncols();
    let col_sq: Vec<f64> = (0..n).map(|j| s.column(j).norm_squared()).collect();
    let mut residual = r - s * &x;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = x[j];
            let z = s.column(j).dot(&residual) + col_sq[j] * old;
            let thr = eta / 2.0;
            let new = if z.abs() <= thr {
                0.0
            } else {
                (z - thr.copysign(z)) / col_sq[j]
            };
            if new != old {
                let d = new - old;
                residual.axpy(-d, &s.column(j).into_owned(), 1.0);
                x[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
    Ok(x)
}

/// Smallest penalty that zeroes the LASSO solution: `2 ||S^T r||_inf`.
pub fn max_eta(r: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    check_finite(r, s)?;
    if s.amax() == 0.0 {
        return Err(SensidError::UndefinedGrid("jacobian is identically zero".into()));
    }
    Ok(2.0 * (s.transpose() * r).amax())
}

/// Outcome of penalty selection by cross-validation.
#[derive(Clone, Debug)]
pub struct EtaSelection {
    pub eta: f64,
    /// Average of the per-fold coefficient vectors at the chosen penalty.
    pub init: DVector<f64>,
    /// Grid position of the chosen penalty (ascending grid).
    pub grid_index: usize,
}

fn geometric_grid(eta_max: f64, cfg: &LassoConfig) -> Vec<f64> {
    let n = cfg.n_etas;
    (0..n)
        .map(|g| eta_max * cfg.eta_ratio.powf((n - 1 - g) as f64 / (n - 1) as f64))
        .collect()
}

fn cv_folds(rows: usize, n_folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); n_folds];
    for (pos, row) in idx.into_iter().enumerate() {
        folds[pos % n_folds].push(row);
    }
    folds
}

fn take_rows(r: &DVector<f64>, s: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let rr = DVector::from_fn(rows.len(), |i, _| r[rows[i]]);
    let ss = DMatrix::from_fn(rows.len(), s.ncols(), |i, j| s[(rows[i], j)]);
    (rr, ss)
}

/// Shared CV driver over the geometric penalty grid. The fitter is run
/// warm-started from the next-larger penalty within each fold.
fn cv_select_with<F>(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    cfg: &LassoConfig,
    seed: u64,
    rank: usize,
    fit_path: F,
) -> Result<EtaSelection>
where
    F: Fn(&DVector<f64>, &DMatrix<f64>, &[f64]) -> Result<Vec<DVector<f64>>>,
{
    cfg.validate()?;
    check_finite(r, s)?;
    let rows = r.len();
    let mut n_folds = cfg.n_folds;
    if rows < n_folds {
        log::warn!("only {rows} rows; reducing CV folds from {n_folds} to {rows}");
        n_folds = rows.max(2);
    }
    if rows < n_folds {
        return Err(SensidError::InvalidInput("too few rows for cross-validation".into()));
    }
    let eta_max = max_eta(r, s)?;
    if eta_max <= 0.0 {
        // Degenerate: S^T r = 0, every penalty keeps the zero solution.
        return Ok(EtaSelection {
            eta: 0.0,
            init: least_squares_min_norm(s, r)?,
            grid_index: 0,
        });
    }
    let grid = geometric_grid(eta_max, cfg);
    let folds = cv_folds(rows, n_folds, seed);

    let mut avg_loss = vec![0.0f64; grid.len()];
    let mut coef_sum: Vec<DVector<f64>> = vec![DVector::zeros(s.ncols()); grid.len()];
    for fold in &folds {
        let train_rows: Vec<usize> = (0..rows).filter(|i| !fold.contains(i)).collect();
        let (r_tr, s_tr) = take_rows(r, s, &train_rows);
        let (r_va, s_va) = take_rows(r, s, fold);
        let path = fit_path(&r_tr, &s_tr, &grid)?;
        for (g, coef) in path.iter().enumerate() {
            let resid = &r_va - &s_va * coef;
            avg_loss[g] += resid.norm_squared() / fold.len().max(1) as f64;
            coef_sum[g] += coef;
        }
    }
    for l in avg_loss.iter_mut() {
        *l /= folds.len() as f64;
    }

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| avg_loss[a].total_cmp(&avg_loss[b]).then(a.cmp(&b)));
    let chosen = order[rank.min(order.len()) - 1];
    Ok(EtaSelection {
        eta: grid[chosen],
        init: &coef_sum[chosen] / folds.len() as f64,
        grid_index: chosen,
    })
}

/// Cross-validated LASSO penalty selection (Eq.-11 objective). Returns the
/// chosen penalty and the fold-averaged coefficient vector used to
/// initialize STLS.
pub fn select_eta_cv(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    cfg: &LassoConfig,
    seed: u64,
) -> Result<EtaSelection> {
    cv_select_with(r, s, cfg, seed, cfg.selection_rank, |r_tr, s_tr, grid| {
        // Descend the grid with warm starts; larger penalties first.
        let mut out = vec![DVector::zeros(s_tr.ncols()); grid.len()];
        let mut warm = DVector::zeros(s_tr.ncols());
        for g in (0..grid.len()).rev() {
            warm = lasso_warm(r_tr, s_tr, grid[g], warm)?;
            out[g] = warm.clone();
        }
        Ok(out)
    })
}

/// STLS threshold-selection loss `L = ||r - S x||_2 + delta cond(S) ||x||_0`
/// where the l0 norm counts exact nonzeros.
pub fn stls_loss(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    delta_theta: &DVector<f64>,
    delta_coef: f64,
) -> f64 {
    loss_with_cond(r, s, delta_theta, delta_coef * condition_number(s))
}

fn loss_with_cond(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    delta_theta: &DVector<f64>,
    weight: f64,
) -> f64 {
    let fit = (r - s * delta_theta).norm();
    let l0 = delta_theta.iter().filter(|v| **v != 0.0).count() as f64;
    fit + weight * l0
}

/// Sparse increment found by one STLS run.
#[derive(Clone, Debug)]
pub struct SparseSolution {
    pub delta_theta: DVector<f64>,
    pub loss: f64,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub n_stls_iters: usize,
    /// Set when the first thresholding pass emptied the support, so the
    /// initializer was retained untouched.
    pub below_threshold: bool,
    /// Loss of the initializer followed by each accepted iterate.
    pub accepted_losses: Vec<f64>,
    /// Support sizes along the accepted iterates.
    pub accepted_support_sizes: Vec<usize>,
}

fn support_of(x: &DVector<f64>) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i] != 0.0).collect()
}

/// Sequential Threshold Least Squares from an explicit initializer:
/// alternate hard-thresholding at `lambda` with least-squares refits on the
/// surviving support, keeping iterates only while the loss improves.
pub fn stls_with_init(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    init: &DVector<f64>,
    delta_coef: f64,
) -> Result<SparseSolution> {
    check_finite(r, s)?;
    if !(lambda > 0.0) {
        return Err(SensidError::InvalidInput("threshold must be positive".into()));
    }
    if !(delta_coef > 0.0) {
        return Err(SensidError::InvalidInput("delta coefficient must be positive".into()));
    }
    let weight = delta_coef * condition_number(s);
    let mut best = init.clone();
    let mut l_best = loss_with_cond(r, s, &best, weight);
    let mut accepted_losses = vec![l_best];
    let mut accepted_support_sizes = vec![support_of(&best).len()];
    let mut prev = init.clone();
    let mut below_threshold = false;
    let mut n_iters = 0usize;
    let mut accepted_any = false;

    for _j in 1..=10 {
        n_iters += 1;
        let b: Vec<usize> = (0..prev.len()).filter(|&i| prev[i].abs() >= lambda).collect();
        if b.is_empty() {
            below_threshold = !accepted_any;
            break;
        }
        let sb = DMatrix::from_fn(s.nrows(), b.len(), |i, j| s[(i, b[j])]);
        let svd = sb.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin < 1e-10 * smax {
            log::warn!("rank-deficient refit on support of size {}", b.len());
        }
        let xb = svd
            .solve(r, 1e-10 * smax.max(1e-300))
            .map_err(|e| SensidError::Numerical(format!("refit failed: {e}")))?;
        let mut x = DVector::zeros(prev.len());
        for (pos, &idx) in b.iter().enumerate() {
            x[idx] = xb[(pos, 0)];
        }
        let l = loss_with_cond(r, s, &x, weight);
        let nonzero = x.iter().any(|v| *v != 0.0);
        if l < l_best && nonzero {
            l_best = l;
            best = x.clone();
            accepted_losses.push(l);
            accepted_support_sizes.push(support_of(&x).len());
            accepted_any = true;
            prev = x;
        } else {
            break;
        }
    }

    Ok(SparseSolution {
        support: support_of(&best),
        delta_theta: best,
        loss: l_best,
        lambda,
        n_stls_iters: n_iters,
        below_threshold,
        accepted_losses,
        accepted_support_sizes,
    })
}

/// Full STLS run: cross-validated LASSO initialization followed by the
/// thresholded refit loop.
pub fn stls(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    lambda: f64,
    cfg: &LassoConfig,
    delta_coef: f64,
    seed: u64,
) -> Result<SparseSolution> {
    let sel = select_eta_cv(r, s, cfg, seed)?;
    stls_with_init(r, s, lambda, &sel.init, delta_coef)
}

/// Ridge regression `(S^T S + eta I) x = S^T r`.
pub fn ridge(r: &DVector<f64>, s: &DMatrix<f64>, eta: f64) -> Result<DVector<f64>> {
    check_finite(r, s)?;
    if !(eta > 0.0) {
        return Err(SensidError::InvalidInput("ridge penalty must be positive".into()));
    }
    let n = s.ncols();
    let mut lhs = s.transpose() * s;
    for i in 0..n {
        lhs[(i, i)] += eta;
    }
    let rhs = s.transpose() * r;
    nalgebra::Cholesky::new(lhs)
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| SensidError::Numerical("ridge normal matrix not PD".into()))
}

/// Ridge penalty selection over the same CV grid machinery, first-ranked
/// loss.
pub fn ridge_cv(
    r: &DVector<f64>,
    s: &DMatrix<f64>,
    cfg: &LassoConfig,
    seed: u64,
) -> Result<EtaSelection> {
    cv_select_with(r, s, cfg, seed, 1, |r_tr, s_tr, grid| {
        grid.iter().map(|&eta| ridge(r_tr, s_tr, eta)).collect()
    })
}

/// How the STLS threshold is chosen in each sensitivity iteration.
#[derive(Clone, Copy, Debug)]
pub enum ThresholdStrategy {
    /// Gaussian-process Bayesian optimization over the threshold bounds.
    BayesOpt(OptBudget),
    /// A constant threshold for every iteration.
    Fixed(f64),
}

/// Settings of the stage-2 outer loop.
#[derive(Clone, Copy, Debug)]
pub struct DamageSettings {
    pub betas: Betas,
    pub strategy: ThresholdStrategy,
    pub lasso: LassoConfig,
    pub delta_coef: f64,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub seed: u64,
}

impl Default for DamageSettings {
    fn default() -> Self {
        DamageSettings {
            betas: Betas::default(),
            strategy: ThresholdStrategy::BayesOpt(OptBudget::default()),
            lasso: LassoConfig::default(),
            delta_coef: 0.001,
            outer_tol: 1e-6,
            outer_max: 20,
            seed: 0,
        }
    }
}

/// One sensitivity iteration of the damage loop.
#[derive(Clone, Debug)]
pub struct DamageIteration {
    pub lambda: f64,
    pub loss: f64,
    pub support: Vec<usize>,
    pub increment_norm: f64,
    pub below_threshold: bool,
    pub bo_trace: Option<BayesOptTrace>,
}

/// Accumulated damage estimate relative to the intact baseline.
#[derive(Clone, Debug)]
pub struct DamageResult {
    /// Damage ratios `(k_damaged - k_intact) / k_intact` per element.
    pub theta_dmg: DVector<f64>,
    /// Total stiffness coefficients of the damaged model (vs nominal).
    pub theta_model: DVector<f64>,
    /// Elements with nonzero identified damage.
    pub support: Vec<usize>,
    pub history: Vec<DamageIteration>,
    pub converged: bool,
}

/// Stage-2 outer loop: starting from the intact baseline, repeatedly
/// linearize, solve one sparse increment (STLS with the configured
/// threshold strategy) and accumulate until increments vanish.
///
/// A guard-flagged solution (everything below threshold) is treated as a
/// zero increment and as convergence: its retained initializer is not
/// accumulated, which keeps the reported support exact.
pub fn run_damage_id(
    sys: &AssembledSystem,
    theta_intact: &ParameterVector,
    measured: &[ModalData],
    settings: &DamageSettings,
) -> Result<DamageResult> {
    if measured.is_empty() {
        return Err(SensidError::InvalidInput("need at least one measurement set".into()));
    }
    let n_ele = sys.n_ele;
    if theta_intact.len() != n_ele {
        return Err(SensidError::Dimension("intact baseline has wrong length".into()));
    }
    let mut theta_model = theta_intact.0.clone();
    let mut history = Vec::new();
    let mut converged = false;

    for k in 0..settings.outer_max {
        let theta_pv = ParameterVector(theta_model.clone());
        let systems: Vec<_> = measured
            .iter()
            .map(|m| assemble_sensitivity(sys, &theta_pv, m, settings.betas))
            .collect::<Result<_>>()?;
        let (r, s) = stack_systems(&systems)?;
        let iter_seed = settings.seed.wrapping_add(k as u64);

        let (lambda, sol, trace) = match settings.strategy {
            ThresholdStrategy::BayesOpt(budget) => {
                let out = bayes_opt(&r, &s, &budget, &settings.lasso, settings.delta_coef, iter_seed)?;
                (out.lambda_best, out.solution, Some(out.trace))
            }
            ThresholdStrategy::Fixed(lambda) => {
                let sol = stls(&r, &s, lambda, &settings.lasso, settings.delta_coef, iter_seed)?;
                (lambda, sol, None)
            }
        };

        let effective_zero = sol.below_threshold || sol.delta_theta.iter().all(|v| *v == 0.0);
        let increment_norm = if effective_zero { 0.0 } else { sol.delta_theta.norm() };
        history.push(DamageIteration {
            lambda,
            loss: sol.loss,
            support: if effective_zero { Vec::new() } else { sol.support.clone() },
            increment_norm,
            below_threshold: sol.below_threshold,
            bo_trace: trace,
        });
        if effective_zero {
            converged = true;
            break;
        }
        theta_model += &sol.delta_theta;
        let dmg_norm = (&theta_model - &theta_intact.0).norm();
        if increment_norm / dmg_norm.max(1.0) < settings.outer_tol {
            converged = true;
            break;
        }
    }

    let theta_dmg = DVector::from_fn(n_ele, |i, _| {
        (theta_model[i] - theta_intact.0[i]) / (1.0 + theta_intact.0[i])
    });
    let support = (0..n_ele).filter(|&i| theta_dmg[i] != 0.0).collect();
    Ok(DamageResult {
        theta_dmg,
        theta_model,
        support,
        history,
        converged,
    })
}

/// Per-method result of the regularizer comparison.
#[derive(Clone, Debug)]
pub struct MethodEstimate {
    /// Damage ratios relative to the intact baseline.
    pub theta_dmg: DVector<f64>,
    /// Chosen hyperparameter (lambda for STLS, eta otherwise).
    pub hyperparameter: f64,
}

/// STLS / LASSO / ridge solutions of the same damaged-system sensitivity
/// problem assembled at an exact intact baseline.
#[derive(Clone, Debug)]
pub struct RegularizerComparison {
    pub stls: MethodEstimate,
    pub lasso: MethodEstimate,
    pub ridge: MethodEstimate,
}

/// Solves the single stacked sensitivity problem at `theta_intact` with the
/// three regularizers.
pub fn compare_regularizers(
    sys: &AssembledSystem,
    theta_intact: &ParameterVector,
    measured: &[ModalData],
    budget: &OptBudget,
    cfg: &LassoConfig,
    delta_coef: f64,
    seed: u64,
) -> Result<RegularizerComparison> {
    let systems: Vec<_> = measured
        .iter()
        .map(|m| assemble_sensitivity(sys, theta_intact, m, Betas::default()))
        .collect::<Result<_>>()?;
    let (r, s) = stack_systems(&systems)?;

    let to_rel = |inc: &DVector<f64>| {
        DVector::from_fn(sys.n_ele, |i, _| inc[i] / (1.0 + theta_intact.0[i]))
    };

    let bo = bayes_opt(&r, &s, budget, cfg, delta_coef, seed)?;
    let stls_est = MethodEstimate {
        theta_dmg: to_rel(&bo.solution.delta_theta),
        hyperparameter: bo.lambda_best,
    };
    let lasso_sel = select_eta_cv(&r, &s, cfg, seed)?;
    let lasso_est = MethodEstimate {
        theta_dmg: to_rel(&lasso_sel.init),
        hyperparameter: lasso_sel.eta,
    };
    let ridge_sel = ridge_cv(&r, &s, cfg, seed)?;
    let ridge_est = MethodEstimate {
        theta_dmg: to_rel(&ridge_sel.init),
        hyperparameter: ridge_sel.eta,
    };
    Ok(RegularizerComparison {
        stls: stls_est,
        lasso: lasso_est,
        ridge: ridge_est,
    })
}
