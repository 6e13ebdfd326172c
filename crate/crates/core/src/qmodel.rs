//! Two-qubit model: Hermitian basis, realification, GKSL generator matrices
//! and gate targets.
//!
//! A Hermitian 4×4 matrix `ρ` is stored as `x ∈ ℝ¹⁶` with the layout
//!
//! ```text
//! ⎡ x1        x2+ix3    x4+ix5    x6+ix7  ⎤
//! ⎢ x2-ix3    x8        x9+ix10   x11+ix12⎥
//! ⎢ x4-ix5    x9-ix10   x13       x14+ix15⎥
//! ⎣ x6-ix7    x11-ix12  x14-ix15  x16     ⎦
//! ```
//!
//! i.e. the upper triangle row by row, each off-diagonal entry contributing
//! its real then imaginary part. The basis is orthogonal but not normalized;
//! [`BETA`] holds the squared Hilbert–Schmidt norms.

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{CMat2, CMat4, Error, Mat16, Result, Vec16, DIM, REAL_DIM};

/// Squared Hilbert–Schmidt norms `Tr(M_j† M_j)` of the basis elements.
pub const BETA: [f64; REAL_DIM] = [
    1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 2.0, 2.0, 1.0,
];

/// Coordinates holding the diagonal entries; their sum is the trace.
pub const TRACE_SLOTS: [usize; DIM] = [0, 7, 12, 15];

/// Tolerance used when validating Hermiticity and unitarity of inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

use Slot::{Diag, Im, Re};

const SLOTS: [Slot; REAL_DIM] = [
    Diag(0),
    Re(0, 1),
    Im(0, 1),
    Re(0, 2),
    Im(0, 2),
    Re(0, 3),
    Im(0, 3),
    Diag(1),
    Re(1, 2),
    Im(1, 2),
    Re(1, 3),
    Im(1, 3),
    Diag(2),
    Re(2, 3),
    Im(2, 3),
    Diag(3),
];

const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The Hermitian basis `M_1..M_16` together with its squared norms.
#[derive(Clone, Debug)]
pub struct HermBasis {
    pub matrices: [CMat4; REAL_DIM],
    pub beta: [f64; REAL_DIM],
}

impl HermBasis {
    pub fn new() -> Self {
        Self {
            matrices: std::array::from_fn(basis_element),
            beta: BETA,
        }
    }
}

impl Default for HermBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Basis element `M_{j+1}` (zero-based index `j`).
pub fn basis_element(j: usize) -> CMat4 {
    let mut m = CMat4::zeros();
    match SLOTS[j] {
        Diag(i) => m[(i, i)] = c(1.0, 0.0),
        Re(a, b) => {
            m[(a, b)] = c(1.0, 0.0);
            m[(b, a)] = c(1.0, 0.0);
        }
        Im(a, b) => {
            m[(a, b)] = c(0.0, 1.0);
            m[(b, a)] = c(0.0, -1.0);
        }
    }
    m
}

/// Coordinates of a Hermitian 4×4 matrix in the basis `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealState(pub Vec16);

impl RealState {
    pub fn trace(&self) -> f64 {
        TRACE_SLOTS.iter().map(|&j| self.0[j]).sum()
    }

    pub fn to_matrix(&self) -> CMat4 {
        derealify(self)
    }

    /// Smallest eigenvalue of the represented Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.to_matrix())
    }

    /// Checks unit trace and positivity, both up to `tol`.
    pub fn validate_density(&self, tol: f64) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }
}

fn hermitian_deviation(m: &CMat4) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..DIM {
        for j in i..DIM {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Reads the coordinates off the upper triangle without checking Hermiticity.
pub(crate) fn coords(m: &CMat4) -> Vec16 {
    Vec16::from_fn(|j, _| match SLOTS[j] {
        Diag(i) => m[(i, i)].re,
        Re(a, b) => m[(a, b)].re,
        Im(a, b) => m[(a, b)].im,
    })
}

/// Realifies a Hermitian matrix; rejects inputs that are not Hermitian to 1e-12.
pub fn realify(rho: &CMat4) -> Result<RealState> {
    let deviation = hermitian_deviation(rho);
    if deviation > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(RealState(coords(rho)))
}

pub fn derealify(x: &RealState) -> CMat4 {
    let mut m = CMat4::zeros();
    for (j, slot) in SLOTS.iter().enumerate() {
        let v = x.0[j];
        match *slot {
            Diag(i) => m[(i, i)] = c(v, 0.0),
            Re(a, b) => {
                m[(a, b)].re = v;
                m[(b, a)].re = v;
            }
            Im(a, b) => {
                m[(a, b)].im = v;
                m[(b, a)].im = -v;
            }
        }
    }
    m
}

/// Smallest eigenvalue of a Hermitian 4×4 matrix, via its real 8×8 embedding.
pub fn min_eigenvalue(m: &CMat4) -> f64 {
    let embed = SMatrix::<f64, 8, 8>::from_fn(|r, col| {
        let z = m[(r % DIM, col % DIM)];
        match (r < DIM, col < DIM) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let sym = (embed + embed.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// `⟨x, y⟩_M = Σ β_j x_j y_j`, equal to `Tr(ρ_x ρ_y)`.
pub fn weighted_inner(x: &Vec16, y: &Vec16) -> f64 {
    (0..REAL_DIM).map(|j| BETA[j] * x[j] * y[j]).sum()
}

pub fn weighted_norm_sq(x: &Vec16) -> f64 {
    weighted_inner(x, x)
}

/// `⟨Ψ, Ψ'⟩_M = Σ (β_i/β_j) Ψ_ij Ψ'_ij`, the Hilbert–Schmidt product of the
/// superoperators the two matrices represent.
pub fn weighted_channel_inner(a: &Mat16, b: &Mat16) -> f64 {
    let mut acc = 0.0;
    for j in 0..REAL_DIM {
        for i in 0..REAL_DIM {
            acc += BETA[i] / BETA[j] * a[(i, j)] * b[(i, j)];
        }
    }
    acc
}

/// Matrix of the linear map `F` on Hermitian matrices: column `j` is the
/// realification of `F(M_j)`.
pub fn superoperator_matrix<F>(f: F) -> Mat16
where
    F: Fn(&CMat4) -> CMat4,
{
    let mut out = Mat16::zeros();
    for j in 0..REAL_DIM {
        let image = f(&basis_element(j));
        debug_assert!(hermitian_deviation(&image) < 1e-9);
        out.set_column(j, &coords(&image));
    }
    out
}

pub fn pauli_x() -> CMat2 {
    CMat2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

pub fn pauli_y() -> CMat2 {
    CMat2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0))
}

pub fn pauli_z() -> CMat2 {
    CMat2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0))
}

/// `σ⁺ = [[0,0],[1,0]]`.
pub fn sigma_plus() -> CMat2 {
    CMat2::new(c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0))
}

/// `σ⁻ = [[0,1],[0,0]]`.
pub fn sigma_minus() -> CMat2 {
    CMat2::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0))
}

pub fn kron(a: &CMat2, b: &CMat2) -> CMat4 {
    CMat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

fn on_first(op: &CMat2) -> CMat4 {
    kron(op, &CMat2::identity())
}

fn on_second(op: &CMat2) -> CMat4 {
    kron(&CMat2::identity(), op)
}

/// `−i[H, ρ]`.
pub fn hamiltonian_action(h: &CMat4, rho: &CMat4) -> CMat4 {
    (h * rho - rho * h) * c(0.0, -1.0)
}

/// `2 L ρ L† − L†L ρ − ρ L†L`.
pub fn lindblad_action(l: &CMat4, rho: &CMat4) -> CMat4 {
    let ld = l.adjoint();
    let ldl = ld * l;
    l * rho * ld * c(2.0, 0.0) - ldl * rho - rho * ldl
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    System1,
    System2,
    System3,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [SystemKind::System1, SystemKind::System2, SystemKind::System3];

    pub fn number(self) -> u8 {
        match self {
            SystemKind::System1 => 1,
            SystemKind::System2 => 2,
            SystemKind::System3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(SystemKind::System1),
            2 => Some(SystemKind::System2),
            3 => Some(SystemKind::System3),
            _ => None,
        }
    }
}

/// Physical parameters of one of the three two-qubit models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub omega1: f64,
    pub omega2: f64,
    /// Qubit–qubit coupling, only used by System 3.
    pub alpha: f64,
    /// Lamb-shift constants.
    pub lambda1: f64,
    pub lambda2: f64,
    /// Dissipation constants.
    pub cap_omega1: f64,
    pub cap_omega2: f64,
    /// System–environment coupling strength.
    pub epsilon: f64,
}

impl SystemSpec {
    /// Parameter set used throughout the reference study:
    /// ω₁ = 1, ω₂ = 1.1, Λ = Ω = 0.5, α = 0.2.
    pub fn paper(kind: SystemKind, epsilon: f64) -> Self {
        Self {
            kind,
            omega1: 1.0,
            omega2: 1.1,
            alpha: 0.2,
            lambda1: 0.5,
            lambda2: 0.5,
            cap_omega1: 0.5,
            cap_omega2: 0.5,
            epsilon,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("cap_omega1", self.cap_omega1),
            ("cap_omega2", self.cap_omega2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSystem(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidSystem(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.kind == SystemKind::System3 && !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidSystem(format!(
                "alpha must be positive for system 3, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn free_hamiltonian(&self) -> CMat4 {
        let (sy, sz) = (pauli_y(), pauli_z());
        match self.kind {
            SystemKind::System1 | SystemKind::System2 => {
                on_first(&sz) * c(self.omega1 / 2.0, 0.0) + on_second(&sz) * c(self.omega2 / 2.0, 0.0)
            }
            SystemKind::System3 => {
                on_first(&sz) + on_second(&sz) + (kron(&sy, &sy) + kron(&sz, &sz)) * c(self.alpha, 0.0)
            }
        }
    }

    /// Hamiltonian `V` multiplying the coherent control.
    pub fn control_hamiltonian(&self) -> CMat4 {
        let sx = pauli_x();
        match self.kind {
            SystemKind::System1 => on_first(&sx) + on_second(&sx),
            SystemKind::System2 => kron(&sx, &sx),
            SystemKind::System3 => on_first(&sx),
        }
    }
}

/// Realified generator `L(u, n₁, n₂) = A + u B_u + n₁ B_n1 + n₂ B_n2`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    pub a: Mat16,
    pub b_u: Mat16,
    pub b_n1: Mat16,
    pub b_n2: Mat16,
}

impl GeneratorSet {
    /// The three control matrices in the order `(u, n₁, n₂)`.
    pub fn control_matrices(&self) -> [&Mat16; 3] {
        [&self.b_u, &self.b_n1, &self.b_n2]
    }

    /// Generator for one set of control values, without sign checks.
    pub fn generator(&self, u: f64, n1: f64, n2: f64) -> Mat16 {
        self.a + self.b_u * u + self.b_n1 * n1 + self.b_n2 * n2
    }
}

/// Builds the realified generator matrices by applying the master-equation
/// right-hand side to every basis element.
pub fn build_generators(spec: &SystemSpec) -> Result<GeneratorSet> {
    spec.validate()?;
    let h = spec.free_hamiltonian();
    let v = spec.control_hamiltonian();
    let eps = spec.epsilon;
    let lower = [on_first(&sigma_minus()), on_second(&sigma_minus())];
    let raise = [on_first(&sigma_plus()), on_second(&sigma_plus())];
    let z = [on_first(&pauli_z()), on_second(&pauli_z())];
    let lamb = [spec.lambda1, spec.lambda2];
    let rate = [spec.cap_omega1, spec.cap_omega2];

    // Spontaneous emission (the "+1" in Ω(n+1)) is control-independent.
    let a = superoperator_matrix(|rho| {
        hamiltonian_action(&h, rho)
            + (lindblad_action(&lower[0], rho) * c(rate[0], 0.0)
                + lindblad_action(&lower[1], rho) * c(rate[1], 0.0))
                * c(eps, 0.0)
    });
    let b_u = superoperator_matrix(|rho| hamiltonian_action(&v, rho));
    let b_n = |l: usize| {
        superoperator_matrix(|rho| {
            hamiltonian_action(&z[l], rho) * c(eps * lamb[l], 0.0)
                + (lindblad_action(&lower[l], rho) + lindblad_action(&raise[l], rho))
                    * c(eps * rate[l], 0.0)
        })
    };
    Ok(GeneratorSet {
        a,
        b_u,
        b_n1: b_n(0),
        b_n2: b_n(1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GateKind {
    Cnot,
    /// Controlled phase `diag(1, 1, 1, e^{iλ})`, λ in radians.
    Cphase { lambda: f64 },
}

impl GateKind {
    pub fn cz() -> Self {
        GateKind::Cphase {
            lambda: std::f64::consts::PI,
        }
    }

    pub fn unitary(&self) -> CMat4 {
        match *self {
            GateKind::Cnot => {
                let mut u = CMat4::zeros();
                u[(0, 0)] = c(1.0, 0.0);
                u[(1, 1)] = c(1.0, 0.0);
                u[(2, 3)] = c(1.0, 0.0);
                u[(3, 2)] = c(1.0, 0.0);
                u
            }
            GateKind::Cphase { lambda } => {
                let mut u = CMat4::identity();
                u[(3, 3)] = Complex64::from_polar(1.0, lambda);
                u
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GateKind::Cnot => "cnot".to_string(),
            GateKind::Cphase { lambda } => {
                let ratio = lambda / std::f64::consts::PI;
                if (ratio - 1.0).abs() < 1e-12 {
                    "cz".to_string()
                } else {
                    format!("cphase({ratio}pi)")
                }
            }
        }
    }
}

/// Target gate with its realified channel and the images of the three
/// special states.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTarget {
    pub kind: GateKind,
    pub unitary: CMat4,
    pub channel: Mat16,
    pub target_states: [Vec16; 3],
}

impl GateTarget {
    pub fn new(kind: GateKind) -> Result<Self> {
        let unitary = kind.unitary();
        let channel = gate_channel_matrix(&unitary)?;
        let target_states = special_coords().map(|x| channel * x);
        Ok(Self {
            kind,
            unitary,
            channel,
            target_states,
        })
    }
}

/// Matrix of `ρ ↦ U ρ U†`; rejects `U` that is not unitary to 1e-12.
pub fn gate_channel_matrix(u: &CMat4) -> Result<Mat16> {
    let deviation = (u.adjoint() * u - CMat4::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if deviation > HERMITIAN_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    let ud = u.adjoint();
    Ok(superoperator_matrix(|m| u * m * ud))
}

/// The three states `ρ₁ = diag(2/5, 3/10, 1/5, 1/10)`, `ρ₂ = J₄/4`, `ρ₃ = 𝕀/4`.
pub fn special_states() -> [CMat4; 3] {
    let rho1 = CMat4::from_diagonal(&nalgebra::Vector4::new(
        c(0.4, 0.0),
        c(0.3, 0.0),
        c(0.2, 0.0),
        c(0.1, 0.0),
    ));
    let rho2 = CMat4::from_element(c(0.25, 0.0));
    let rho3 = CMat4::identity() * c(0.25, 0.0);
    [rho1, rho2, rho3]
}

pub fn special_coords() -> [Vec16; 3] {
    special_states().map(|m| coords(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_hermitian(entries: &[f64]) -> CMat4 {
        let mut m = CMat4::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                m[(i, j)] = c(entries[2 * (i * DIM + j)], entries[2 * (i * DIM + j) + 1]);
            }
        }
        (m + m.adjoint()) * c(0.5, 0.0)
    }

    fn max_abs(m: &CMat4) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn basis_is_orthogonal_with_expected_norms() {
        let basis = HermBasis::new();
        for i in 0..REAL_DIM {
            for j in 0..REAL_DIM {
                let ip = (basis.matrices[i].adjoint() * basis.matrices[j]).trace();
                let expected = if i == j { basis.beta[j] } else { 0.0 };
                assert_abs_diff_eq!(ip.re, expected, epsilon = 1e-15);
                assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn maximally_mixed_has_quarter_on_diagonal_slots() {
        let x = realify(&(CMat4::identity() * c(0.25, 0.0))).unwrap();
        for j in 0..REAL_DIM {
            let expected = if TRACE_SLOTS.contains(&j) { 0.25 } else { 0.0 };
            assert_eq!(x.0[j], expected);
        }
    }

    #[test]
    fn rho1_coordinates() {
        let x = realify(&special_states()[0]).unwrap();
        let mut expected = Vec16::zeros();
        expected[0] = 0.4;
        expected[7] = 0.3;
        expected[12] = 0.2;
        expected[15] = 0.1;
        assert_eq!(x.0, expected);
    }

    #[test]
    fn derealify_basics() {
        assert_eq!(derealify(&RealState(Vec16::zeros())), CMat4::zeros());
        let mut x = Vec16::zeros();
        x[1] = 1.0;
        let m = derealify(&RealState(x));
        assert_eq!(m[(0, 1)], c(1.0, 0.0));
        assert_eq!(m[(1, 0)], c(1.0, 0.0));
        assert_eq!(max_abs(&(m - basis_element(1))), 0.0);
    }

    #[test]
    fn realify_rejects_non_hermitian() {
        let mut m = CMat4::identity();
        m[(0, 1)] = c(1e-6, 0.0);
        assert!(matches!(realify(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn special_states_are_valid() {
        for (m, rho) in special_states().iter().enumerate() {
            let x = realify(rho).unwrap();
            x.validate_density(1e-14).unwrap();
            let purity = weighted_norm_sq(&x.0);
            let direct = (rho * rho).trace().re;
            assert_abs_diff_eq!(purity, direct, epsilon = 1e-15);
            if m == 1 {
                assert_abs_diff_eq!(purity, 1.0, epsilon = 1e-15);
                assert!(max_abs(&(rho * rho - rho)) < 1e-15);
            }
        }
    }

    #[test]
    fn weighted_inner_basis_vectors() {
        let e = |j: usize| Vec16::from_fn(|i, _| if i == j { 1.0 } else { 0.0 });
        assert_eq!(weighted_inner(&e(0), &e(0)), 1.0);
        assert_eq!(weighted_inner(&e(1), &e(1)), 2.0);
    }

    #[test]
    fn unitary_channels_have_norm_sixteen() {
        for kind in [GateKind::Cnot, GateKind::cz(), GateKind::Cphase { lambda: 0.7 }] {
            let psi = GateTarget::new(kind).unwrap().channel;
            assert_abs_diff_eq!(weighted_channel_inner(&psi, &psi), 16.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_gate_gives_identity_matrix() {
        let psi = gate_channel_matrix(&CMat4::identity()).unwrap();
        assert_eq!(psi, Mat16::identity());
    }

    #[test]
    fn cz_channel_flips_last_column_coordinates() {
        let psi = GateTarget::new(GateKind::cz()).unwrap().channel;
        // one-based coordinates 6,7,11,12,14,15 hold ρ₁₄, ρ₂₄, ρ₃₄
        let flipped = [5, 6, 10, 11, 13, 14];
        for i in 0..REAL_DIM {
            for j in 0..REAL_DIM {
                let expected = match (i == j, flipped.contains(&i)) {
                    (false, _) => 0.0,
                    (true, true) => -1.0,
                    (true, false) => 1.0,
                };
                assert_abs_diff_eq!(psi[(i, j)], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cnot_channel_is_signed_permutation() {
        let psi = GateTarget::new(GateKind::Cnot).unwrap().channel;
        let mut negatives = Vec::new();
        for i in 0..REAL_DIM {
            let row: Vec<f64> = psi.row(i).iter().copied().filter(|v| v.abs() > 1e-14).collect();
            assert_eq!(row.len(), 1);
            assert_abs_diff_eq!(row[0].abs(), 1.0, epsilon = 1e-15);
            for j in 0..REAL_DIM {
                if psi[(i, j)] < -0.5 {
                    negatives.push((i, j));
                }
            }
        }
        // only Im ρ₃₄ (coordinate 15) changes sign
        assert_eq!(negatives, vec![(14, 14)]);
        // brute-force: conjugation by the permutation on random Hermitian input
        let u = GateKind::Cnot.unitary();
        let rho = random_hermitian(&(0..32).map(|k| ((k * 37 % 11) as f64) / 7.0 - 0.6).collect::<Vec<_>>());
        let direct = coords(&(u * rho * u.adjoint()));
        assert!((psi * coords(&rho) - direct).amax() < 1e-14);
    }

    #[test]
    fn non_unitary_gate_rejected() {
        let m = CMat4::identity() * c(1.1, 0.0);
        assert!(matches!(gate_channel_matrix(&m), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn cphase_pi_is_cz() {
        let cz = GateKind::Cphase { lambda: std::f64::consts::PI }.unitary();
        let mut expected = CMat4::identity();
        expected[(3, 3)] = c(-1.0, 0.0);
        assert!(max_abs(&(cz - expected)) < 1e-15);
        assert_eq!(GateKind::cz().label(), "cz");
    }

    #[test]
    fn system_validation() {
        let mut spec = SystemSpec::paper(SystemKind::System3, 0.1);
        spec.validate().unwrap();
        spec.alpha = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = SystemSpec::paper(SystemKind::System1, -0.1);
        assert!(spec.validate().is_err());
        spec.epsilon = 0.0;
        spec.cap_omega1 = 0.0;
        assert!(build_generators(&spec).is_err());
    }

    #[test]
    fn generators_preserve_trace() {
        for kind in SystemKind::ALL {
            let gens = build_generators(&SystemSpec::paper(kind, 0.1)).unwrap();
            for m in [&gens.a, &gens.b_u, &gens.b_n1, &gens.b_n2] {
                for j in 0..REAL_DIM {
                    let tr: f64 = TRACE_SLOTS.iter().map(|&i| m[(i, j)]).sum();
                    assert!(tr.abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn system3_control_leaves_identity_fixed() {
        let gens = build_generators(&SystemSpec::paper(SystemKind::System3, 0.1)).unwrap();
        let x = coords(&(CMat4::identity() * c(0.25, 0.0)));
        assert_eq!((gens.b_u * x).amax(), 0.0);
    }

    #[test]
    fn closed_system_has_no_incoherent_generators() {
        for kind in SystemKind::ALL {
            let gens = build_generators(&SystemSpec::paper(kind, 0.0)).unwrap();
            assert_eq!(gens.b_n1.amax(), 0.0);
            assert_eq!(gens.b_n2.amax(), 0.0);
        }
    }

    /// Master-equation right-hand side written out directly with the four
    /// decay/excitation rates, independent of the A/B decomposition.
    fn master_rhs(spec: &SystemSpec, u: f64, n1: f64, n2: f64, rho: &CMat4) -> CMat4 {
        let i2 = CMat2::identity();
        let sz1 = kron(&pauli_z(), &i2);
        let sz2 = kron(&i2, &pauli_z());
        let h_eff = sz1 * c(spec.lambda1 * n1, 0.0) + sz2 * c(spec.lambda2 * n2, 0.0);
        let h = spec.free_hamiltonian() + h_eff * c(spec.epsilon, 0.0) + spec.control_hamiltonian() * c(u, 0.0);
        let mut out = (h * rho - rho * h) * c(0.0, -1.0);
        let pairs = [
            (kron(&sigma_minus(), &i2), kron(&sigma_plus(), &i2), spec.cap_omega1, n1),
            (kron(&i2, &sigma_minus()), kron(&i2, &sigma_plus()), spec.cap_omega2, n2),
        ];
        for (sm, sp, big_omega, n) in pairs {
            let down = (sm * rho * sp) * c(2.0, 0.0) - sp * sm * rho - rho * sp * sm;
            let up = (sp * rho * sm) * c(2.0, 0.0) - sm * sp * rho - rho * sm * sp;
            out += down * c(spec.epsilon * big_omega * (n + 1.0), 0.0);
            out += up * c(spec.epsilon * big_omega * n, 0.0);
        }
        out
    }

    #[test]
    fn generators_match_complex_master_equation() {
        let controls = [(0.0, 0.0, 0.0), (0.7, 0.3, 1.9), (-2.1, 4.0, 0.05)];
        for kind in SystemKind::ALL {
            let spec = SystemSpec::paper(kind, 0.1);
            let gens = build_generators(&spec).unwrap();
            for &(u, n1, n2) in &controls {
                let l = gens.generator(u, n1, n2);
                for j in 0..REAL_DIM {
                    let rhs = master_rhs(&spec, u, n1, n2, &basis_element(j));
                    let col = realify(&rhs).unwrap().0;
                    assert!((l.column(j) - col).amax() < 1e-13);
                }
            }
        }
    }

    /// Superoperator in the matrix-unit basis E_ab, built from the realified
    /// matrix by extending linearly to non-Hermitian inputs.
    fn complex_superop(psi: &Mat16) -> SMatrix<Complex64, 16, 16> {
        let basis = HermBasis::new();
        let mut out = SMatrix::<Complex64, 16, 16>::zeros();
        for a in 0..DIM {
            for b in 0..DIM {
                let mut e = CMat4::zeros();
                e[(a, b)] = c(1.0, 0.0);
                let xs: Vec<Complex64> = (0..REAL_DIM)
                    .map(|j| (basis.matrices[j].adjoint() * e).trace() / basis.beta[j])
                    .collect();
                let mut image = CMat4::zeros();
                for i in 0..REAL_DIM {
                    let yi: Complex64 = (0..REAL_DIM).map(|j| xs[j] * psi[(i, j)]).sum();
                    image += basis.matrices[i] * yi;
                }
                for cc in 0..DIM {
                    for d in 0..DIM {
                        out[(cc * DIM + d, a * DIM + b)] = image[(cc, d)];
                    }
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn realify_round_trip(entries in prop::collection::vec(-3.0f64..3.0, 32)) {
            let rho = random_hermitian(&entries);
            let back = derealify(&realify(&rho).unwrap());
            prop_assert_eq!(back, rho);
        }
    }

    proptest! {
        #[test]
        fn derealify_round_trip(values in prop::collection::vec(-5.0f64..5.0, 16)) {
            let x = RealState(Vec16::from_column_slice(&values));
            prop_assert_eq!(realify(&derealify(&x)).unwrap(), x);
        }

        #[test]
        fn weighted_norm_is_purity(entries in prop::collection::vec(-1.0f64..1.0, 32)) {
            let rho = random_hermitian(&entries);
            let x = realify(&rho).unwrap();
            let direct = (rho * rho).trace().re;
            prop_assert!((weighted_norm_sq(&x.0) - direct).abs() < 1e-12);
        }

        #[test]
        fn channel_inner_matches_hilbert_schmidt(
            a in prop::collection::vec(-1.0f64..1.0, 256),
            b in prop::collection::vec(-1.0f64..1.0, 256),
        ) {
            let pa = Mat16::from_column_slice(&a);
            let pb = Mat16::from_column_slice(&b);
            let direct = (complex_superop(&pa).adjoint() * complex_superop(&pb)).trace();
            let realified = weighted_channel_inner(&pa, &pb);
            prop_assert!((direct.re - realified).abs() < 1e-12 * (1.0 + direct.re.abs()));
            prop_assert!(direct.im.abs() < 1e-12);
        }
    }
}
