//! Parameterized finite-element structures and the undamped generalized
//! eigenproblem.
//!
//! Two model families are supported: a shear building (one lateral DOF per
//! story) and a planar pin-jointed truss. Assembly produces the baseline
//! stiffness `K0`, the mass matrix `M` and the per-element stiffness
//! contributions `K0_i` with `K0 = sum_i K0_i`, so that an updated model is
//! `K(theta) = K0 + sum_i theta_i * K0_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SensidError};

/// Relative gap below which two eigenvalues are reported as repeated.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Structural model definition, deserializable from a JSON document with a
/// `kind` discriminator. Units are SI (N, m, kg).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDefinition {
    ShearBuilding {
        n_stories: usize,
        /// Inter-story stiffness in N/m, identical for every story.
        story_stiffness: f64,
        /// Lumped story mass in kg.
        story_mass: f64,
    },
    PlanarTruss {
        /// Node coordinates in m.
        nodes: Vec<[f64; 2]>,
        /// Bars as pairs of node indices.
        bars: Vec<[usize; 2]>,
        /// Elastic modulus in Pa.
        elastic_modulus: f64,
        /// Cross-section area in m^2.
        cross_section_area: f64,
        /// Material density in kg/m^3.
        density: f64,
        /// Fixed global DOF indices (node i has DOFs 2i, 2i+1).
        supports: Vec<usize>,
    },
}

impl ModelDefinition {
    /// Assembles matrices for either model kind.
    pub fn assemble(&self) -> Result<AssembledSystem> {
        match self {
            ModelDefinition::ShearBuilding { .. } => assemble_shear_building(self),
            ModelDefinition::PlanarTruss { .. } => assemble_truss(self),
        }
    }

    pub fn n_elements(&self) -> usize {
        match self {
            ModelDefinition::ShearBuilding { n_stories, .. } => *n_stories,
            ModelDefinition::PlanarTruss { bars, .. } => bars.len(),
        }
    }
}

/// Assembled mass/stiffness matrices in the (support-reduced) free DOFs.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub n_dof: usize,
    pub n_ele: usize,
    pub mass: DMatrix<f64>,
    pub k0: DMatrix<f64>,
    /// Per-element stiffness contributions; `k0 = sum(element_k)` exactly.
    pub element_k: Vec<DMatrix<f64>>,
    /// Global DOF index represented by each reduced DOF. Identity for the
    /// shear building; skips support DOFs for the truss.
    pub free_dofs: Vec<usize>,
}

impl AssembledSystem {
    /// Stiffness matrix `K0 + sum_i theta_i K0_i` (Eq. 1 parameterization).
    pub fn apply_parameters(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        if theta.len() != self.n_ele {
            return Err(SensidError::Dimension(format!(
                "theta has {} entries, model has {} elements",
                theta.len(),
                self.n_ele
            )));
        }
        for (i, &v) in theta.0.iter().enumerate() {
            if !(v > -1.0) {
                return Err(SensidError::NonPhysicalStiffness { index: i, value: v });
            }
        }
        let mut k = self.k0.clone();
        for (i, ki) in self.element_k.iter().enumerate() {
            let t = theta.0[i];
            if t != 0.0 {
                k += ki * t;
            }
        }
        Ok(k)
    }

    /// Maps a global DOF index to its reduced index, if it is free.
    pub fn reduced_dof(&self, global: usize) -> Option<usize> {
        self.free_dofs.iter().position(|&g| g == global)
    }
}

/// Dimensionless stiffness variation coefficients, one per element.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(pub DVector<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        ParameterVector(DVector::zeros(n))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        ParameterVector(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }
}

impl Serialize for ParameterVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParameterVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(ParameterVector::from_slice(&v))
    }
}

/// Modal quantities restricted to the observed DOFs.
///
/// Eigenvalues are `lambda = (2 pi f)^2` in rad^2/s^2, ascending. Shapes are
/// mass-normalized and stored column-per-mode at the `sensor_dofs` rows, with
/// the largest-magnitude observed entry of each column positive.
#[derive(Clone, Debug)]
pub struct ModalData {
    pub eigenvalues: DVector<f64>,
    pub shapes: DMatrix<f64>,
    pub sensor_dofs: Vec<usize>,
}

impl ModalData {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_dofs.len()
    }

    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| l.sqrt() / (2.0 * std::f64::consts::PI))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_modes();
        if self.shapes.ncols() != n || self.shapes.nrows() != self.sensor_dofs.len() {
            return Err(SensidError::Dimension(
                "shape matrix does not match mode/sensor counts".into(),
            ));
        }
        for j in 0..n {
            let l = self.eigenvalues[j];
            if !(l > 0.0) || !l.is_finite() {
                return Err(SensidError::InvalidInput(format!(
                    "eigenvalue {j} is not strictly positive"
                )));
            }
            if j > 0 && l <= self.eigenvalues[j - 1] {
                return Err(SensidError::InvalidInput(
                    "eigenvalues are not strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Full-resolution eigensolution: all requested modes over every free DOF.
#[derive(Clone, Debug)]
pub struct EigenSolution {
    /// Ascending eigenvalues.
    pub eigenvalues: DVector<f64>,
    /// Mass-normalized shapes, one column per mode, largest-magnitude entry
    /// positive.
    pub shapes: DMatrix<f64>,
}

impl EigenSolution {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Restricts to sensor DOFs and the first `n_modes` modes, re-applying
    /// the observed-entry sign convention.
    pub fn restrict(&self, n_modes: usize, sensor_dofs: &[usize]) -> Result<ModalData> {
        if n_modes > self.n_modes() {
            return Err(SensidError::Dimension(format!(
                "requested {n_modes} modes, solution has {}",
                self.n_modes()
            )));
        }
        let n_dof = self.shapes.nrows();
        let mut shapes = DMatrix::zeros(sensor_dofs.len(), n_modes);
        for (row, &dof) in sensor_dofs.iter().enumerate() {
            if dof >= n_dof {
                return Err(SensidError::Dimension(format!(
                    "sensor DOF {dof} out of range (n_dof = {n_dof})"
                )));
            }
            for j in 0..n_modes {
                shapes[(row, j)] = self.shapes[(dof, j)];
            }
        }
        for j in 0..n_modes {
            let mut col = shapes.column_mut(j);
            flip_to_canonical_sign(&mut col);
        }
        let data = ModalData {
            eigenvalues: DVector::from_fn(n_modes, |j, _| self.eigenvalues[j]),
            shapes,
            sensor_dofs: sensor_dofs.to_vec(),
        };
        data.validate()?;
        Ok(data)
    }
}

fn flip_to_canonical_sign(col: &mut nalgebra::DVectorViewMut<f64>) {
    let mut best = 0usize;
    for i in 0..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

/// Assembles the shear-building chain: tridiagonal `K0` with diagonal
/// `k_i + k_{i+1}` (top story `k_n`), off-diagonal `-k_{i+1}`, and a diagonal
/// mass matrix.
pub fn assemble_shear_building(def: &ModelDefinition) -> Result<AssembledSystem> {
    let (n, k, m) = match def {
        ModelDefinition::ShearBuilding {
            n_stories,
            story_stiffness,
            story_mass,
        } => (*n_stories, *story_stiffness, *story_mass),
        _ => {
            return Err(SensidError::InvalidDefinition(
                "expected a shear_building definition".into(),
            ))
        }
    };
    if n < 1 {
        return Err(SensidError::InvalidDefinition(
            "shear building needs at least one story".into(),
        ));
    }
    if !(k > 0.0) || !(m > 0.0) {
        return Err(SensidError::InvalidDefinition(
            "story stiffness and mass must be strictly positive".into(),
        ));
    }
    let mut element_k = Vec::with_capacity(n);
    for story in 0..n {
        // Story spring connects floor `story` to the one below (ground for
        // the first story).
        let mut ke = DMatrix::zeros(n, n);
        ke[(story, story)] = k;
        if story > 0 {
            ke[(story - 1, story - 1)] = k;
            ke[(story - 1, story)] = -k;
            ke[(story, story - 1)] = -k;
        }
        element_k.push(ke);
    }
    let mut k0 = DMatrix::zeros(n, n);
    for ke in &element_k {
        k0 += ke;
    }
    let mass = DMatrix::from_diagonal(&DVector::from_element(n, m));
    Ok(AssembledSystem {
        n_dof: n,
        n_ele: n,
        mass,
        k0,
        element_k,
        free_dofs: (0..n).collect(),
    })
}

/// Assembles a planar pin-jointed truss with axial bars and a lumped mass
/// matrix (half of rho*A*L of each bar to each end node).
pub fn assemble_truss(def: &ModelDefinition) -> Result<AssembledSystem> {
    let (nodes, bars, e_mod, area, density, supports) = match def {
        ModelDefinition::PlanarTruss {
            nodes,
            bars,
            elastic_modulus,
            cross_section_area,
            density,
            supports,
        } => (nodes, bars, *elastic_modulus, *cross_section_area, *density, supports),
        _ => {
            return Err(SensidError::InvalidDefinition(
                "expected a planar_truss definition".into(),
            ))
        }
    };
    if !(e_mod > 0.0) || !(area > 0.0) || !(density > 0.0) {
        return Err(SensidError::InvalidDefinition(
            "elastic modulus, area and density must be strictly positive".into(),
        ));
    }
    let n_nodes = nodes.len();
    let n_global = 2 * n_nodes;
    let mut sorted_supports: Vec<usize> = supports.clone();
    sorted_supports.sort_unstable();
    sorted_supports.dedup();
    if sorted_supports.len() != supports.len() {
        return Err(SensidError::InvalidDefinition(
            "duplicate support DOF indices".into(),
        ));
    }
    if sorted_supports.iter().any(|&d| d >= n_global) {
        return Err(SensidError::InvalidDefinition(
            "support DOF index out of range".into(),
        ));
    }
    if sorted_supports.len() < 3 {
        return Err(SensidError::InvalidDefinition(
            "planar truss needs at least 3 supported DOFs to remove rigid-body modes".into(),
        ));
    }

    let mut k_full = DMatrix::zeros(n_global, n_global);
    let mut m_diag = DVector::zeros(n_global);
    let mut element_full: Vec<DMatrix<f64>> = Vec::with_capacity(bars.len());
    for (b, bar) in bars.iter().enumerate() {
        let [a, c] = *bar;
        if a == c || a >= n_nodes || c >= n_nodes {
            return Err(SensidError::InvalidDefinition(format!(
                "bar {b} must reference two distinct existing nodes"
            )));
        }
        let dx = nodes[c][0] - nodes[a][0];
        let dy = nodes[c][1] - nodes[a][1];
        let length = (dx * dx + dy * dy).sqrt();
        if !(length > 0.0) {
            return Err(SensidError::Assembly(format!("bar {b} has zero length")));
        }
        let cos = dx / length;
        let sin = dy / length;
        let coef = e_mod * area / length;
        let dofs = [2 * a, 2 * a + 1, 2 * c, 2 * c + 1];
        // Axial-bar stiffness EA/L * [t; -t] [t; -t]^T with t = (cos, sin).
        let t = [cos, sin, -cos, -sin];
        let mut ke = DMatrix::zeros(n_global, n_global);
        for i in 0..4 {
            for j in 0..4 {
                ke[(dofs[i], dofs[j])] = coef * t[i] * t[j];
            }
        }
        k_full += &ke;
        element_full.push(ke);
        let half_mass = density * area * length / 2.0;
        for node in [a, c] {
            m_diag[2 * node] += half_mass;
            m_diag[2 * node + 1] += half_mass;
        }
    }

    let free_dofs: Vec<usize> = (0..n_global)
        .filter(|d| !sorted_supports.contains(d))
        .collect();
    let n_dof = free_dofs.len();
    for &d in &free_dofs {
        if !(m_diag[d] > 0.0) {
            return Err(SensidError::InvalidDefinition(format!(
                "free DOF {d} carries no mass (node not connected to any bar)"
            )));
        }
    }

    let reduce = |full: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(n_dof, n_dof, |i, j| full[(free_dofs[i], free_dofs[j])])
    };
    let k0 = reduce(&k_full);
    let element_k: Vec<DMatrix<f64>> = element_full.iter().map(reduce).collect();
    let mass = DMatrix::from_diagonal(&DVector::from_fn(n_dof, |i, _| m_diag[free_dofs[i]]));

    // A singular constrained K0 means rigid-body (mechanism) modes survive.
    let eig = nalgebra::SymmetricEigen::new(k0.clone());
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let n_rigid = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l < 1e-10 * max_ev)
        .count();
    if n_rigid > 0 {
        return Err(SensidError::Assembly(format!(
            "constrained stiffness is singular: {n_rigid} rigid-body mode(s) remain"
        )));
    }

    Ok(AssembledSystem {
        n_dof,
        n_ele: bars.len(),
        mass,
        k0,
        element_k,
        free_dofs,
    })
}

/// Solves the full generalized symmetric eigenproblem `K phi = lambda M phi`
/// by Cholesky reduction of `M` to a standard symmetric problem.
pub fn solve_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<EigenSolution> {
    let n = k.nrows();
    if k.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(SensidError::Dimension("K and M must be square and equal-sized".into()));
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| SensidError::EigenSolver("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // A = L^-1 K L^-T, computed with two triangular solves.
    let b = l
        .solve_lower_triangular(k)
        .ok_or_else(|| SensidError::EigenSolver("singular mass Cholesky factor".into()))?;
    let mut a = l
        .solve_lower_triangular(&b.transpose())
        .ok_or_else(|| SensidError::EigenSolver("singular mass Cholesky factor".into()))?;
    // Symmetrize away round-off before the symmetric solver.
    a = (&a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(a);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let lt = l.transpose();
    let mut eigenvalues = DVector::zeros(n);
    let mut shapes = DMatrix::zeros(n, n);
    for (col, &idx) in order.iter().enumerate() {
        eigenvalues[col] = eig.eigenvalues[idx];
        let y = eig.eigenvectors.column(idx).into_owned();
        let phi = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| SensidError::EigenSolver("singular mass Cholesky factor".into()))?;
        shapes.set_column(col, &phi);
        let mut c = shapes.column_mut(col);
        flip_to_canonical_sign(&mut c);
    }
    if !eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(SensidError::EigenSolver("non-finite eigenvalues".into()));
    }
    Ok(EigenSolution { eigenvalues, shapes })
}

/// Solves for the `n_modes` smallest modes and restricts them to
/// `sensor_dofs`. Near-repeated eigenvalues among the returned modes are
/// logged as a warning.
pub fn solve_modes(
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n_modes: usize,
    sensor_dofs: &[usize],
) -> Result<ModalData> {
    let n = k.nrows();
    if n_modes > n {
        return Err(SensidError::Dimension(format!(
            "requested {n_modes} modes from an {n}-DOF system"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for &d in sensor_dofs {
        if d >= n {
            return Err(SensidError::Dimension(format!("sensor DOF {d} out of range")));
        }
        if !seen.insert(d) {
            return Err(SensidError::InvalidInput(format!("duplicate sensor DOF {d}")));
        }
    }
    let full = solve_eigen(k, m)?;
    for j in 1..n_modes {
        let gap = (full.eigenvalues[j] - full.eigenvalues[j - 1]).abs() / full.eigenvalues[j];
        if gap < DEGENERACY_TOL {
            log::warn!(
                "modes {} and {} are nearly repeated (relative gap {gap:.2e})",
                j - 1,
                j
            );
        }
    }
    full.restrict(n_modes, sensor_dofs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn shear(n: usize, k: f64, m: f64) -> AssembledSystem {
        assemble_shear_building(&ModelDefinition::ShearBuilding {
            n_stories: n,
            story_stiffness: k,
            story_mass: m,
        })
        .unwrap()
    }

    #[test]
    fn two_story_chain_matches_textbook_stencil() {
        let sys = shear(2, 1.0, 1.0);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]);
        assert_eq!(sys.k0, expected);
        assert_eq!(sys.mass, DMatrix::identity(2, 2));
    }

    #[test]
    fn ten_story_nominal_diagonal() {
        let sys = shear(10, 176.729e6, 100e3);
        assert_relative_eq!(sys.k0[(0, 0)], 353.458e6, max_relative = 1e-12);
        assert_relative_eq!(sys.k0[(9, 9)], 176.729e6, max_relative = 1e-12);
        assert_relative_eq!(sys.k0[(0, 1)], -176.729e6, max_relative = 1e-12);
    }

    #[test]
    fn partition_identity_shear() {
        let sys = shear(7, 3.25, 1.5);
        let mut sum = DMatrix::zeros(7, 7);
        for ke in &sys.element_k {
            sum += ke;
        }
        assert_eq!(sum, sys.k0);
    }

    #[test]
    fn invalid_shear_definition_rejected() {
        let def = ModelDefinition::ShearBuilding {
            n_stories: 3,
            story_stiffness: -1.0,
            story_mass: 1.0,
        };
        assert!(matches!(
            assemble_shear_building(&def),
            Err(SensidError::InvalidDefinition(_))
        ));
    }

    fn single_bar_def() -> ModelDefinition {
        ModelDefinition::PlanarTruss {
            nodes: vec![[0.0, 0.0], [1.0, 0.0]],
            bars: vec![[0, 1]],
            elastic_modulus: 1.0,
            cross_section_area: 1.0,
            density: 1.0,
            supports: vec![0, 1, 3],
        }
    }

    #[test]
    fn single_horizontal_bar_reduced_stiffness() {
        // Horizontal bar with EA/L = 1 into a free node: its contribution on
        // that node's (x, y) DOFs is [[1,0],[0,0]]. A vertical stabilizer bar
        // keeps the assembled system non-singular.
        let def = ModelDefinition::PlanarTruss {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            bars: vec![[0, 1], [2, 1]],
            elastic_modulus: 1.0,
            cross_section_area: 1.0,
            density: 1.0,
            supports: vec![0, 1, 4, 5],
        };
        let sys = assemble_truss(&def).unwrap();
        assert_eq!(sys.n_dof, 2);
        assert_eq!(sys.free_dofs, vec![2, 3]);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!((&sys.element_k[0] - expected).abs().max(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rotated_bar_permutes_axial_block() {
        let horizontal = assemble_truss(&single_bar_def()).unwrap();
        let vertical = assemble_truss(&ModelDefinition::PlanarTruss {
            nodes: vec![[0.0, 0.0], [0.0, 1.0]],
            bars: vec![[0, 1]],
            elastic_modulus: 1.0,
            cross_section_area: 1.0,
            density: 1.0,
            supports: vec![0, 1, 2],
        })
        .unwrap();
        // Rotating by 90 degrees moves the EA/L block from the x DOF to the
        // y DOF of the free node.
        assert_relative_eq!(horizontal.k0[(0, 0)], vertical.k0[(0, 0)], max_relative = 1e-14);
        assert_eq!(horizontal.free_dofs, vec![2]);
        assert_eq!(vertical.free_dofs, vec![3]);
    }

    #[test]
    fn unsupported_truss_reports_rigid_modes() {
        let def = ModelDefinition::PlanarTruss {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            bars: vec![[0, 1], [1, 2]],
            elastic_modulus: 1.0,
            cross_section_area: 1.0,
            density: 1.0,
            supports: vec![0, 1, 5],
        };
        // Collinear chain: transverse mechanism remains even with 3 supports.
        match assemble_truss(&def) {
            Err(SensidError::Assembly(msg)) => assert!(msg.contains("rigid-body")),
            other => panic!("expected assembly error, got {other:?}"),
        }
    }

    #[test]
    fn apply_parameters_identity_and_scaling() {
        let sys = shear(10, 176.729e6, 100e3);
        let zero = ParameterVector::zeros(10);
        assert_eq!(sys.apply_parameters(&zero).unwrap(), sys.k0);

        let mut theta = vec![0.0; 10];
        theta[0] = -0.28;
        theta[2] = -0.33;
        let k = sys
            .apply_parameters(&ParameterVector::from_slice(&theta))
            .unwrap();
        // Story 1 spring scaled by 0.72: its diagonal contribution sits at
        // (0,0) only.
        let k1 = 176.729e6;
        assert_relative_eq!(k[(0, 0)], 0.72 * k1 + k1, max_relative = 1e-12);
        assert_relative_eq!(k[(2, 2)], 0.67 * k1 + k1, max_relative = 1e-12);
        assert_relative_eq!(k[(1, 2)], -0.67 * k1, max_relative = 1e-12);
    }

    #[test]
    fn apply_parameters_rejects_non_physical() {
        let sys = shear(3, 1.0, 1.0);
        let theta = ParameterVector::from_slice(&[0.0, -1.0, 0.0]);
        assert!(matches!(
            sys.apply_parameters(&theta),
            Err(SensidError::NonPhysicalStiffness { index: 1, .. })
        ));
    }

    #[test]
    fn near_singular_parameters_shrink_smallest_eigenvalue() {
        let sys = shear(4, 1.0, 1.0);
        for eps in [1e-2, 1e-4, 1e-6] {
            let theta = ParameterVector(DVector::from_element(4, -1.0 + eps));
            let k = sys.apply_parameters(&theta).unwrap();
            let sol = solve_eigen(&k, &sys.mass).unwrap();
            // K scales linearly with eps, so the smallest eigenvalue does too.
            let nominal = solve_eigen(&sys.k0, &sys.mass).unwrap();
            assert_relative_eq!(sol.eigenvalues[0], eps * nominal.eigenvalues[0], max_relative = 1e-8);
        }
    }

    #[test]
    fn decoupled_system_modes() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let m = DMatrix::identity(2, 2);
        let data = solve_modes(&k, &m, 2, &[0, 1]).unwrap();
        assert_relative_eq!(data.eigenvalues[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(data.eigenvalues[1], 4.0, max_relative = 1e-12);
        assert_relative_eq!(data.shapes[(0, 0)].abs(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(data.shapes[(1, 1)].abs(), 1.0, max_relative = 1e-12);
        assert!(data.shapes[(0, 0)] > 0.0 && data.shapes[(1, 1)] > 0.0);
    }

    /// Characteristic-polynomial root oracle: bracketed sign changes of
    /// det(K - lambda M) over a fine grid, refined by bisection.
    fn det_root_oracle(k: &DMatrix<f64>, m: &DMatrix<f64>, n_roots: usize, hi: f64) -> Vec<f64> {
        let det = |l: f64| (k - m * l).determinant();
        let n_grid = 200_000;
        let mut roots = Vec::new();
        let mut prev_l = 0.0;
        let mut prev_d = det(0.0);
        for g in 1..=n_grid {
            let l = hi * g as f64 / n_grid as f64;
            let d = det(l);
            if prev_d.signum() != d.signum() {
                let (mut a, mut b) = (prev_l, l);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if det(a).signum() == det(mid).signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
                if roots.len() == n_roots {
                    return roots;
                }
            }
            prev_l = l;
            prev_d = d;
        }
        roots
    }

    #[test]
    fn ten_story_frequencies_match_det_oracle() {
        let sys = shear(10, 176.729e6, 100e3);
        let sol = solve_eigen(&sys.k0, &sys.mass).unwrap();
        let oracle = det_root_oracle(&sys.k0, &sys.mass, 3, 1.2 * sol.eigenvalues[2]);
        assert_eq!(oracle.len(), 3);
        for j in 0..3 {
            assert_relative_eq!(sol.eigenvalues[j], oracle[j], max_relative = 1e-8);
        }
    }

    #[test]
    fn full_sensor_shapes_are_mass_orthonormal() {
        let sys = shear(10, 176.729e6, 100e3);
        let sol = solve_eigen(&sys.k0, &sys.mass).unwrap();
        let gram = sol.shapes.transpose() * &sys.mass * &sol.shapes;
        let err = (&gram - DMatrix::identity(10, 10)).abs().max();
        assert!(err < 1e-10, "||Phi^T M Phi - I||_max = {err:e}");
    }

    #[test]
    fn rayleigh_quotient_reproduces_eigenvalues() {
        let sys = shear(8, 2.5e6, 1.2e3);
        let sol = solve_eigen(&sys.k0, &sys.mass).unwrap();
        for j in 0..8 {
            let phi = sol.shapes.column(j);
            let rq = (phi.transpose() * &sys.k0 * phi)[(0, 0)]
                / (phi.transpose() * &sys.mass * phi)[(0, 0)];
            assert_relative_eq!(rq, sol.eigenvalues[j], max_relative = 1e-10);
        }
    }

    #[test]
    fn assembly_order_independence() {
        let sys = shear(6, 10.0, 2.0);
        let perm = [5usize, 2, 0, 4, 1, 3];
        let mut k_perm = DMatrix::zeros(6, 6);
        for &p in &perm {
            k_perm += &sys.element_k[p];
        }
        let a = solve_eigen(&sys.k0, &sys.mass).unwrap();
        let b = solve_eigen(&k_perm, &sys.mass).unwrap();
        for j in 0..6 {
            assert_relative_eq!(a.eigenvalues[j], b.eigenvalues[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn model_definition_json_round_trip() {
        let def = ModelDefinition::PlanarTruss {
            nodes: vec![[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]],
            bars: vec![[0, 1], [1, 2], [2, 0]],
            elastic_modulus: 70e9,
            cross_section_area: 25e-4,
            density: 2770.0,
            supports: vec![0, 1, 3],
        };
        let json = serde_json::to_string(&def).unwrap();
        assert!(json.contains("\"kind\":\"planar_truss\""));
        let back: ModelDefinition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, def);
    }
}
