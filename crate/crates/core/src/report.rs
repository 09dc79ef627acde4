//! External file formats: measurement sets, posterior and damage reports,
//! the regularizer comparison table and the optimization trace.
//!
//! JSON documents carry plain arrays (row-major shape matrices) plus a
//! provenance block; CSV companions hold per-element columns for plotting.
//! Element ids in reports and CSVs are 1-based, matching the usual
//! engineering numbering; vectors remain positional.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes_opt::BayesOptTrace;
use crate::bayes_update::{ParamPosterior, PosteriorEstimate, UpdateSettings};
use crate::bench_sim::{Scenario, Stage};
use crate::error::{Result, SensidError};
use crate::model::ModalData;
use crate::sparse_id::{DamageResult, RegularizerComparison};

/// Reproducibility block attached to every emitted document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(scenario: &str, seed: u64, stage: Option<Stage>, config_hash: String) -> Self {
        Provenance {
            scenario: scenario.to_string(),
            seed,
            stage,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
        }
    }
}

/// SHA-256 hex digest of a serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(cfg).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One observed modal data set in wire form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementObservation {
    pub frequencies_hz: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Rows are sensors, columns are modes.
    pub shapes: Vec<Vec<f64>>,
    pub sensor_dofs: Vec<usize>,
}

impl MeasurementObservation {
    pub fn from_modal(data: &ModalData) -> Self {
        MeasurementObservation {
            frequencies_hz: data.frequencies_hz(),
            eigenvalues: data.eigenvalues.iter().cloned().collect(),
            shapes: matrix_rows(&data.shapes),
            sensor_dofs: data.sensor_dofs.clone(),
        }
    }

    pub fn to_modal(&self) -> Result<ModalData> {
        let n_modes = self.eigenvalues.len();
        let n_sen = self.sensor_dofs.len();
        if self.shapes.len() != n_sen || self.shapes.iter().any(|r| r.len() != n_modes) {
            return Err(SensidError::InvalidInput(
                "shape matrix does not match sensor/mode counts".into(),
            ));
        }
        Ok(ModalData {
            eigenvalues: DVector::from_vec(self.eigenvalues.clone()),
            shapes: DMatrix::from_fn(n_sen, n_modes, |i, j| self.shapes[i][j]),
            sensor_dofs: self.sensor_dofs.clone(),
        })
    }
}

/// Measurement file: the contract between scenario generation and the two
/// identification stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub provenance: Provenance,
    pub n_modes: usize,
    pub observations: Vec<MeasurementObservation>,
}

impl MeasurementFile {
    pub fn new(scenario: &Scenario, stage: Stage, sets: &[ModalData], hash: String) -> Self {
        MeasurementFile {
            provenance: Provenance::new(&scenario.name, scenario.seed, Some(stage), hash),
            n_modes: scenario.n_modes,
            observations: sets.iter().map(MeasurementObservation::from_modal).collect(),
        }
    }

    pub fn to_modal_sets(&self) -> Result<Vec<ModalData>> {
        self.observations.iter().map(|o| o.to_modal()).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpdateIterationRecord {
    pub delta_theta: Vec<f64>,
    pub sigma2: f64,
    pub alpha: f64,
    pub n_inner_iters: usize,
    pub increment_norm: f64,
}

/// Stage-1 output document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub provenance: Provenance,
    pub settings: UpdateSettings,
    pub theta_hat: Vec<f64>,
    pub per_param: Vec<ParamPosterior>,
    pub covariance: Vec<Vec<f64>>,
    pub history: Vec<UpdateIterationRecord>,
    pub converged: bool,
    /// Max-norm error against the generating truth, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_error_inf: Option<f64>,
}

impl PosteriorReport {
    pub fn new(
        estimate: &PosteriorEstimate,
        settings: &UpdateSettings,
        provenance: Provenance,
        truth: Option<&[f64]>,
    ) -> Self {
        let truth_error_inf = truth.map(|t| {
            estimate
                .theta_hat
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        });
        PosteriorReport {
            provenance,
            settings: *settings,
            theta_hat: estimate.theta_hat.iter().cloned().collect(),
            per_param: estimate.per_param.clone(),
            covariance: matrix_rows(&estimate.covariance),
            history: estimate
                .history
                .iter()
                .map(|h| UpdateIterationRecord {
                    delta_theta: h.delta_theta.iter().cloned().collect(),
                    sigma2: h.sigma2,
                    alpha: h.alpha,
                    n_inner_iters: h.n_inner_iters,
                    increment_norm: h.increment_norm,
                })
                .collect(),
            converged: estimate.converged,
            truth_error_inf,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DamageIterationRecord {
    pub lambda: f64,
    pub loss: f64,
    /// 1-based element ids of the iteration's increment support.
    pub support: Vec<usize>,
    pub increment_norm: f64,
    pub below_threshold: bool,
}

/// Stage-2 output document. `support` lists 1-based element ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DamageReport {
    pub provenance: Provenance,
    pub theta_dmg: Vec<f64>,
    pub theta_model: Vec<f64>,
    pub support: Vec<usize>,
    pub history: Vec<DamageIterationRecord>,
    pub converged: bool,
}

impl DamageReport {
    pub fn new(result: &DamageResult, provenance: Provenance) -> Self {
        DamageReport {
            provenance,
            theta_dmg: result.theta_dmg.iter().cloned().collect(),
            theta_model: result.theta_model.iter().cloned().collect(),
            support: result.support.iter().map(|i| i + 1).collect(),
            history: result
                .history
                .iter()
                .map(|h| DamageIterationRecord {
                    lambda: h.lambda,
                    loss: h.loss,
                    support: h.support.iter().map(|i| i + 1).collect(),
                    increment_norm: h.increment_norm,
                    below_threshold: h.below_threshold,
                })
                .collect(),
            converged: result.converged,
        }
    }
}

/// Regularizer comparison document (STLS / LASSO / ridge on one sensitivity
/// problem with an exact intact baseline).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub provenance: Provenance,
    pub theta_dmg_true: Vec<f64>,
    pub stls: Vec<f64>,
    pub lasso: Vec<f64>,
    pub ridge: Vec<f64>,
    pub lambda_stls: f64,
    pub eta_lasso: f64,
    pub eta_ridge: f64,
    pub error_stls: f64,
    pub error_lasso: f64,
    pub error_ridge: f64,
}

/// Relative l2 identification error against the true damage vector.
pub fn relative_l2_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm().max(1e-300)
}

impl CompareReport {
    pub fn new(cmp: &RegularizerComparison, truth: &DVector<f64>, provenance: Provenance) -> Self {
        CompareReport {
            provenance,
            theta_dmg_true: truth.iter().cloned().collect(),
            stls: cmp.stls.theta_dmg.iter().cloned().collect(),
            lasso: cmp.lasso.theta_dmg.iter().cloned().collect(),
            ridge: cmp.ridge.theta_dmg.iter().cloned().collect(),
            lambda_stls: cmp.stls.hyperparameter,
            eta_lasso: cmp.lasso.hyperparameter,
            eta_ridge: cmp.ridge.hyperparameter,
            error_stls: relative_l2_error(&cmp.stls.theta_dmg, truth),
            error_lasso: relative_l2_error(&cmp.lasso.theta_dmg, truth),
            error_ridge: relative_l2_error(&cmp.ridge.theta_dmg, truth),
        }
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// `element,mean,std` rows, 1-based elements.
pub fn write_posterior_csv(path: &Path, report: &PosteriorReport) -> Result<()> {
    let mut out = String::from("element,mean,std\n");
    for (i, p) in report.per_param.iter().enumerate() {
        out.push_str(&format!("{},{:.12e},{:.12e}\n", i + 1, p.mean, p.std));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `element,theta_dmg` rows, 1-based elements.
pub fn write_damage_csv(path: &Path, report: &DamageReport) -> Result<()> {
    let mut out = String::from("element,theta_dmg\n");
    for (i, v) in report.theta_dmg.iter().enumerate() {
        out.push_str(&format!("{},{:.12e}\n", i + 1, v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `element,true,stls,lasso,ridge` rows, 1-based elements.
pub fn write_compare_csv(path: &Path, report: &CompareReport) -> Result<()> {
    let mut out = String::from("element,true,stls,lasso,ridge\n");
    for i in 0..report.theta_dmg_true.len() {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            i + 1,
            report.theta_dmg_true[i],
            report.stls[i],
            report.lasso[i],
            report.ridge[i]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `sensitivity_iter,bo_iter,lambda,loss,incumbent_lambda,incumbent_loss`
/// rows across all sensitivity iterations.
pub fn write_trace_csv(path: &Path, traces: &[(usize, &BayesOptTrace)]) -> Result<()> {
    let mut out = String::from("sensitivity_iter,bo_iter,lambda,loss,incumbent_lambda,incumbent_loss\n");
    for (sens_iter, trace) in traces {
        for e in trace.iter() {
            out.push_str(&format!(
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                sens_iter, e.iteration, e.lambda, e.loss, e.incumbent_lambda, e.incumbent_loss
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_sim::{make_scenario, synth_measurements, ScenarioOverrides};

    #[test]
    fn measurement_file_round_trip() {
        let sc = make_scenario("shear10", 7, ScenarioOverrides::default()).unwrap();
        let sets = synth_measurements(&sc, Stage::Intact).unwrap();
        let file = MeasurementFile::new(&sc, Stage::Intact, &sets, config_hash(&sc));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_json(&path, &file).unwrap();
        let back: MeasurementFile = read_json(&path).unwrap();
        let sets2 = back.to_modal_sets().unwrap();
        assert_eq!(sets.len(), sets2.len());
        for (a, b) in sets.iter().zip(&sets2) {
            assert_eq!(a.eigenvalues, b.eigenvalues);
            assert_eq!(a.shapes, b.shapes);
            assert_eq!(a.sensor_dofs, b.sensor_dofs);
        }
        assert_eq!(back.provenance.scenario, "shear10");
        assert_eq!(back.provenance.stage, Some(Stage::Intact));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = make_scenario("shear10", 7, ScenarioOverrides::default()).unwrap();
        let b = make_scenario("shear10", 7, ScenarioOverrides::default()).unwrap();
        let c = make_scenario("shear10", 8, ScenarioOverrides::default()).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
