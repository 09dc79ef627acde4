//! Modal sensitivity analysis: derivatives of eigenvalues and eigenvectors
//! with respect to the element stiffness coefficients, MAC-based mode
//! pairing, and assembly of the linearized residue equation `r = S * dtheta`
//! for one sensitivity iteration.
//!
//! For mass-normalized shapes the classical results give
//! `d lambda_j / d theta_i = phi_j^T K0_i phi_j` and
//! `d phi_j / d theta_i = sum_{r != j} [phi_r^T K0_i phi_j / (lambda_j -
//! lambda_r)] phi_r`, the superposition running over the full modal basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SensidError};
use crate::model::{solve_eigen, AssembledSystem, EigenSolution, ModalData, ParameterVector};
use crate::model::DEGENERACY_TOL;

/// Residue normalization weights. Eigenvalue residues are taken relative to
/// the current model eigenvalue and shape residues relative to the RMS of
/// the current model shape at the sensors, so both are dimensionless and
/// the weights default to one.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Betas {
    pub beta_lambda: f64,
    pub beta_phi: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Betas {
            beta_lambda: 1.0,
            beta_phi: 1.0,
        }
    }
}

/// Residue vector and Jacobian of one sensitivity iteration, stacked
/// mode-major: for each matched mode one eigenvalue row followed by one row
/// per sensor.
#[derive(Clone, Debug)]
pub struct SensitivitySystem {
    pub residue: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub betas: Betas,
    pub n_modes: usize,
    pub n_sensors: usize,
}

impl SensitivitySystem {
    pub fn n_rows(&self) -> usize {
        self.residue.len()
    }
}

/// Stacks the residues and Jacobians of several observation sets row-wise.
pub fn stack_systems(systems: &[SensitivitySystem]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let first = systems
        .first()
        .ok_or_else(|| SensidError::InvalidInput("no observation sets".into()))?;
    let n_ele = first.jacobian.ncols();
    let rows: usize = systems.iter().map(|s| s.n_rows()).sum();
    let mut r = DVector::zeros(rows);
    let mut s_mat = DMatrix::zeros(rows, n_ele);
    let mut at = 0;
    for s in systems {
        if s.jacobian.ncols() != n_ele {
            return Err(SensidError::Dimension(
                "observation sets disagree on element count".into(),
            ));
        }
        for i in 0..s.n_rows() {
            r[at] = s.residue[i];
            for j in 0..n_ele {
                s_mat[(at, j)] = s.jacobian[(i, j)];
            }
            at += 1;
        }
    }
    Ok((r, s_mat))
}

/// `d lambda_j / d theta_i = phi_j^T K0_i phi_j` for a mass-normalized full
/// shape; non-negative because every `K0_i` is PSD.
pub fn eigenvalue_derivative(
    sys: &AssembledSystem,
    phi_full: &DVector<f64>,
    element: usize,
) -> Result<f64> {
    if phi_full.len() != sys.n_dof {
        return Err(SensidError::Dimension(format!(
            "shape has {} entries, model has {} DOFs",
            phi_full.len(),
            sys.n_dof
        )));
    }
    if element >= sys.n_ele {
        return Err(SensidError::Dimension(format!("element {element} out of range")));
    }
    Ok((phi_full.transpose() * &sys.element_k[element] * phi_full)[(0, 0)])
}

/// Modal-superposition eigenvector derivative over the full basis.
pub fn eigenvector_derivative(
    sys: &AssembledSystem,
    modes: &EigenSolution,
    mode: usize,
    element: usize,
) -> Result<DVector<f64>> {
    let n = sys.n_dof;
    if modes.shapes.nrows() != n || modes.n_modes() != n {
        return Err(SensidError::Dimension(
            "eigenvector derivative needs all N_DOF mass-normalized modes".into(),
        ));
    }
    if mode >= n || element >= sys.n_ele {
        return Err(SensidError::Dimension("mode or element index out of range".into()));
    }
    let lambda_j = modes.eigenvalues[mode];
    for r in 0..n {
        if r != mode && (lambda_j - modes.eigenvalues[r]).abs() / lambda_j.abs() < DEGENERACY_TOL {
            return Err(SensidError::DegenerateModes {
                i: mode,
                j: r,
                tol: DEGENERACY_TOL,
            });
        }
    }
    let phi_j = modes.shapes.column(mode);
    let v = &sys.element_k[element] * phi_j;
    let mut out = DVector::zeros(n);
    for r in 0..n {
        if r == mode {
            continue;
        }
        let phi_r = modes.shapes.column(r);
        let coef = phi_r.dot(&v) / (lambda_j - modes.eigenvalues[r]);
        out.axpy(coef, &phi_r.into_owned(), 1.0);
    }
    Ok(out)
}

/// Modal Assurance Criterion of two shape vectors.
pub fn mac(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let num = a.dot(b);
    let den = a.norm_squared() * b.norm_squared();
    if den == 0.0 {
        return 0.0;
    }
    num * num / den
}

/// Outcome of pairing measured modes against model modes.
#[derive(Clone, Debug)]
pub struct ModeMatch {
    /// Model mode index matched to each measured mode.
    pub pairing: Vec<usize>,
    /// Sign (+1/-1) applied to each matched model shape so that
    /// `phi_meas . phi_model >= 0`.
    pub signs: Vec<f64>,
    /// MAC value of each accepted pair.
    pub mac_values: Vec<f64>,
}

/// Greedy MAC assignment of measured modes to model modes, ties broken by
/// eigenvalue proximity. Fails if the best available MAC for some measured
/// mode drops below 0.5.
pub fn match_modes(measured: &ModalData, model: &ModalData) -> Result<ModeMatch> {
    if model.sensor_dofs != measured.sensor_dofs {
        return Err(SensidError::Dimension(
            "measured and model modal data use different sensor DOFs".into(),
        ));
    }
    if model.n_modes() < measured.n_modes() {
        return Err(SensidError::Dimension(
            "model must provide at least as many modes as measured".into(),
        ));
    }
    let mut taken = vec![false; model.n_modes()];
    let mut pairing = Vec::with_capacity(measured.n_modes());
    let mut signs = Vec::with_capacity(measured.n_modes());
    let mut mac_values = Vec::with_capacity(measured.n_modes());
    for a in 0..measured.n_modes() {
        let phi_a = measured.shapes.column(a).into_owned();
        let mut best: Option<(usize, f64)> = None;
        for b in 0..model.n_modes() {
            if taken[b] {
                continue;
            }
            let phi_b = model.shapes.column(b).into_owned();
            let m = mac(&phi_a, &phi_b);
            let better = match best {
                None => true,
                Some((curr, curr_mac)) => {
                    if (m - curr_mac).abs() <= 1e-12 {
                        // Tie: prefer the closer eigenvalue.
                        (model.eigenvalues[b] - measured.eigenvalues[a]).abs()
                            < (model.eigenvalues[curr] - measured.eigenvalues[a]).abs()
                    } else {
                        m > curr_mac
                    }
                }
            };
            if better {
                best = Some((b, m));
            }
        }
        let (b, m) = best.expect("model has spare modes");
        if m < 0.5 {
            return Err(SensidError::ModeMatch { mode: a, mac: m });
        }
        taken[b] = true;
        let dot = phi_a.dot(&model.shapes.column(b).into_owned());
        pairing.push(b);
        signs.push(if dot < 0.0 { -1.0 } else { 1.0 });
        mac_values.push(m);
    }
    Ok(ModeMatch {
        pairing,
        signs,
        mac_values,
    })
}

/// Solves the model at `theta`, matches its modes to the measured set and
/// builds the residue vector and Jacobian.
///
/// Row layout per matched mode `j` (mode-major): first the eigenvalue row
/// `beta_lambda * (lambda_meas - lambda_fem) / lambda_fem`, then one row per
/// sensor `beta_phi * (phi_meas - s * phi_fem) / rms(phi_fem)`. Jacobian
/// rows carry the matching derivative scalings.
pub fn assemble_sensitivity(
    sys: &AssembledSystem,
    theta: &ParameterVector,
    measured: &ModalData,
    betas: Betas,
) -> Result<SensitivitySystem> {
    if !(betas.beta_lambda > 0.0) || !(betas.beta_phi > 0.0) {
        return Err(SensidError::InvalidInput("betas must be strictly positive".into()));
    }
    let k = sys.apply_parameters(theta)?;
    let full = solve_eigen(&k, &sys.mass)?;
    let model_data = full.restrict(full.n_modes(), &measured.sensor_dofs)?;
    let pairing = match_modes(measured, &model_data)?;

    let n_modes = measured.n_modes();
    let n_sen = measured.n_sensors();
    let rows = n_modes * (n_sen + 1);
    let mut residue = DVector::zeros(rows);
    let mut jacobian = DMatrix::zeros(rows, sys.n_ele);

    for a in 0..n_modes {
        let b = pairing.pairing[a];
        let sign = pairing.signs[a];
        let lambda_fem = full.eigenvalues[b];
        let phi_fem_full = full.shapes.column(b).into_owned();
        let phi_fem_sen = DVector::from_fn(n_sen, |s, _| phi_fem_full[measured.sensor_dofs[s]]);
        let rms = (phi_fem_sen.norm_squared() / n_sen as f64).sqrt();
        if !(rms > 0.0) {
            return Err(SensidError::Numerical(format!(
                "model mode {b} vanishes at every sensor"
            )));
        }

        let row0 = a * (n_sen + 1);
        residue[row0] =
            betas.beta_lambda * (measured.eigenvalues[a] - lambda_fem) / lambda_fem;
        for s in 0..n_sen {
            residue[row0 + 1 + s] = betas.beta_phi
                * (measured.shapes[(s, a)] - sign * phi_fem_sen[s])
                / rms;
        }

        for e in 0..sys.n_ele {
            let dl = eigenvalue_derivative(sys, &phi_fem_full, e)?;
            jacobian[(row0, e)] = betas.beta_lambda * dl / lambda_fem;
            let dphi = eigenvector_derivative(sys, &full, b, e)?;
            for s in 0..n_sen {
                jacobian[(row0 + 1 + s, e)] =
                    betas.beta_phi * sign * dphi[measured.sensor_dofs[s]] / rms;
            }
        }
    }
    if !residue.iter().all(|v| v.is_finite()) || !jacobian.iter().all(|v| v.is_finite()) {
        return Err(SensidError::Numerical("non-finite sensitivity system".into()));
    }
    Ok(SensitivitySystem {
        residue,
        jacobian,
        betas,
        n_modes,
        n_sensors: n_sen,
    })
}
