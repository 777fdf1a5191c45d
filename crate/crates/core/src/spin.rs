//! Exact collective-spin algebra on the exchange-symmetric subspace of `N`
//! qubits (total spin `J = N/2`, dimension `N + 1`).
//!
//! States are amplitude vectors over the Dicke basis `|J, m⟩` ordered by
//! descending `m` (index `k` holds `m = J - k`), so `jz` reads top-down along
//! its diagonal. Operators are stored as plain dense matrices; the time
//! stepping in [`crate::trajectory`] exploits their sparsity separately.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use thiserror::Error;

use crate::bloch::BlochVector;

/// Tolerance for unit-norm checks on Bloch-vector directions.
const DIRECTION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpinError {
    #[error("ensemble must contain at least one qubit")]
    ZeroQubits,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("amplitude vector has squared norm {norm_sq} (not normalizable)")]
    NotNormalizable { norm_sq: f64 },
    #[error("direction must be a unit vector (norm {norm})")]
    NonUnitDirection { norm: f64 },
}

/// Pure state of the symmetric `N`-qubit ensemble: a complex amplitude
/// vector over the Dicke basis, kept unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricState {
    amplitudes: Array1<Complex64>,
    num_qubits: usize,
}

impl SymmetricState {
    /// Wrap an amplitude vector of length `N + 1`, rescaling it to exact
    /// unit norm. Rejects zero or non-finite input.
    pub fn new(amplitudes: Array1<Complex64>, num_qubits: usize) -> Result<Self, SpinError> {
        if num_qubits == 0 {
            return Err(SpinError::ZeroQubits);
        }
        if amplitudes.len() != num_qubits + 1 {
            return Err(SpinError::DimensionMismatch {
                expected: num_qubits + 1,
                found: amplitudes.len(),
            });
        }
        let norm_sq: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if !norm_sq.is_finite() || norm_sq <= 0.0 {
            return Err(SpinError::NotNormalizable { norm_sq });
        }
        let scale = Complex64::new(1.0 / norm_sq.sqrt(), 0.0);
        Ok(Self {
            amplitudes: amplitudes * scale,
            num_qubits,
        })
    }

    /// State `|J, J⟩` with all spins up along +z.
    pub fn dicke_top(num_qubits: usize) -> Self {
        let mut amps = Array1::zeros(num_qubits + 1);
        amps[0] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes: amps,
            num_qubits,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    /// Hilbert-space dimension `N + 1`.
    pub fn dim(&self) -> usize {
        self.num_qubits + 1
    }

    /// Total spin `J = N/2`.
    pub fn total_spin(&self) -> f64 {
        self.num_qubits as f64 / 2.0
    }

    pub fn amplitudes(&self) -> &Array1<Complex64> {
        &self.amplitudes
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Dense collective angular-momentum operators `jx`, `jy`, `jz` for `N`
/// qubits, each of size `(N+1) × (N+1)`.
///
/// `jz` is diagonal with entries `m = J, …, -J`; `jx` is real tridiagonal and
/// `jy` is purely imaginary tridiagonal (forced by `[jx, jy] = i·jz`).
#[derive(Debug, Clone)]
pub struct CollectiveOps {
    pub jx: Array2<Complex64>,
    pub jy: Array2<Complex64>,
    pub jz: Array2<Complex64>,
    pub num_qubits: usize,
}

impl CollectiveOps {
    /// Build the spin-`J` representation via the ladder-operator matrix
    /// elements `⟨J,m±1|J±|J,m⟩ = sqrt(J(J+1) - m(m±1))`.
    pub fn new(num_qubits: usize) -> Result<Self, SpinError> {
        if num_qubits == 0 {
            return Err(SpinError::ZeroQubits);
        }
        let dim = num_qubits + 1;
        let j = num_qubits as f64 / 2.0;
        let mut jx = Array2::zeros((dim, dim));
        let mut jy = Array2::zeros((dim, dim));
        let mut jz = Array2::zeros((dim, dim));
        for k in 0..dim {
            jz[(k, k)] = Complex64::new(j - k as f64, 0.0);
        }
        for k in 1..dim {
            // Raising element out of |J, m⟩ with m = J - k.
            let m = j - k as f64;
            let a = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            jx[(k - 1, k)] = Complex64::new(a / 2.0, 0.0);
            jx[(k, k - 1)] = Complex64::new(a / 2.0, 0.0);
            jy[(k - 1, k)] = Complex64::new(0.0, -a / 2.0);
            jy[(k, k - 1)] = Complex64::new(0.0, a / 2.0);
        }
        Ok(Self {
            jx,
            jy,
            jz,
            num_qubits,
        })
    }

    /// Operators in axis order `[jx, jy, jz]`.
    pub fn axes(&self) -> [&Array2<Complex64>; 3] {
        [&self.jx, &self.jy, &self.jz]
    }
}

/// Natural-log binomial coefficients `ln C(n, k)` for `k = 0..=n`.
pub(crate) fn ln_binomial_table(n: usize) -> Vec<f64> {
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    (0..=n)
        .map(|k| ln_fact[n] - ln_fact[k] - ln_fact[n - k])
        .collect()
}

/// Fill `buf` with the Dicke-basis amplitudes of the spin coherent state at
/// half-angle cosine/sine `(ch, sh)` and azimuth `phi`.
///
/// The amplitude at `k = J - m` is
/// `sqrt(C(N,k)) · ch^(N-k) · sh^k · e^(i k phi)`; the relative phase sign is
/// fixed so that `⟨J⟩ = (N/2)·n` holds component-wise under the ladder
/// convention of [`CollectiveOps::new`].
fn scs_amplitudes_into(
    buf: &mut [Complex64],
    num_qubits: usize,
    ch: f64,
    sh: f64,
    phi: f64,
    ln_binom: &[f64],
) {
    let n = num_qubits;
    for (k, slot) in buf.iter_mut().enumerate() {
        let up = (n - k) as f64;
        let down = k as f64;
        if (ch == 0.0 && n - k > 0) || (sh == 0.0 && k > 0) {
            *slot = Complex64::new(0.0, 0.0);
            continue;
        }
        let mut ln_mag = 0.5 * ln_binom[k];
        if n - k > 0 {
            ln_mag += up * ch.ln();
        }
        if k > 0 {
            ln_mag += down * sh.ln();
        }
        let mag = ln_mag.exp();
        let phase = down * phi;
        *slot = Complex64::new(mag * phase.cos(), mag * phase.sin());
    }
}

/// Spin coherent state `|n⟩^⊗N` for a unit Bloch vector `n`.
pub fn spin_coherent(direction: BlochVector, num_qubits: usize) -> Result<SymmetricState, SpinError> {
    if num_qubits == 0 {
        return Err(SpinError::ZeroQubits);
    }
    if !direction.is_unit(DIRECTION_TOL) {
        return Err(SpinError::NonUnitDirection {
            norm: direction.norm(),
        });
    }
    let z = direction.z.clamp(-1.0, 1.0);
    let ch = ((1.0 + z) / 2.0).sqrt();
    let sh = ((1.0 - z) / 2.0).sqrt();
    let phi = direction.y.atan2(direction.x);
    let ln_binom = ln_binomial_table(num_qubits);
    let mut amps = Array1::zeros(num_qubits + 1);
    scs_amplitudes_into(
        amps.as_slice_mut().expect("contiguous"),
        num_qubits,
        ch,
        sh,
        phi,
        &ln_binom,
    );
    SymmetricState::new(amps, num_qubits)
}

/// Expectation value `⟨Ψ|op|Ψ⟩` of a Hermitian operator.
///
/// The imaginary residue of the quadratic form is asserted to be below
/// `1e-9` (relative to the value); passing a non-Hermitian matrix is a
/// caller bug.
pub fn expect(state: &SymmetricState, op: &Array2<Complex64>) -> Result<f64, SpinError> {
    if op.nrows() != state.dim() || op.ncols() != state.dim() {
        return Err(SpinError::DimensionMismatch {
            expected: state.dim(),
            found: op.nrows().max(op.ncols()),
        });
    }
    let applied = op.dot(state.amplitudes());
    let value: Complex64 = state
        .amplitudes()
        .iter()
        .zip(applied.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    assert!(
        value.im.abs() <= 1e-9 * (1.0 + value.re.abs()),
        "imaginary residue {} too large for a Hermitian expectation",
        value.im
    );
    Ok(value.re)
}

/// Overlap fidelity `|⟨a|b⟩|²` between two symmetric states.
pub fn fidelity(a: &SymmetricState, b: &SymmetricState) -> Result<f64, SpinError> {
    if a.dim() != b.dim() {
        return Err(SpinError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.inner(b).norm_sqr().clamp(0.0, 1.0))
}

/// Fidelity `(1 + a·b)/2` between two pure qubit states given as unit Bloch
/// vectors.
pub fn qubit_fidelity(a: BlochVector, b: BlochVector) -> f64 {
    debug_assert!(a.is_unit(1e-6) && b.is_unit(1e-6));
    ((1.0 + a.dot(b)) / 2.0).clamp(0.0, 1.0)
}

/// Spin squeezing parameter `ξ² = λ_min(G)/J²` from the 3×3 moment matrix
/// `G_ij = (N/2)⟨JiJj + JjJi⟩ - (N-1)⟨Ji⟩⟨Jj⟩`.
///
/// Equals 1 for every spin coherent state; values below 1 witness pairwise
/// entanglement generated by the measurement backaction.
pub fn squeezing_parameter(state: &SymmetricState, ops: &CollectiveOps) -> Result<f64, SpinError> {
    if ops.num_qubits != state.num_qubits() {
        return Err(SpinError::DimensionMismatch {
            expected: state.dim(),
            found: ops.num_qubits + 1,
        });
    }
    let n = state.num_qubits() as f64;
    let j = state.total_spin();
    let applied: Vec<Array1<Complex64>> = ops
        .axes()
        .iter()
        .map(|op| op.dot(state.amplitudes()))
        .collect();
    let mut first = [0.0f64; 3];
    for (i, v) in applied.iter().enumerate() {
        let val: Complex64 = state
            .amplitudes()
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        first[i] = val.re;
    }
    let mut g = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for k in i..3 {
            let sym: Complex64 = applied[i]
                .iter()
                .zip(applied[k].iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            // ⟨JiJk + JkJi⟩ = 2·Re⟨JiΨ|JkΨ⟩ for Hermitian Ji, Jk.
            let entry = n * sym.re - (n - 1.0) * first[i] * first[k];
            g[i][k] = entry;
            g[k][i] = entry;
        }
    }
    let (_, _, min) = sym3_eigenvalues(&g);
    Ok(min / (j * j))
}

/// Squeezing expressed in decibels, `10·log10(ξ²)`; 0 dB for a coherent
/// state, negative when squeezed.
pub fn squeezing_db(xi_squared: f64) -> f64 {
    10.0 * xi_squared.log10()
}

/// Spin-Husimi Q-function `Q(ϑ, φ) = (N+1)/(4π) · |⟨ϑ,φ|Ψ⟩|²` evaluated on a
/// list of `(theta, phi)` points.
pub fn q_function(state: &SymmetricState, grid: &[(f64, f64)]) -> Vec<f64> {
    let n = state.num_qubits();
    let ln_binom = ln_binomial_table(n);
    let prefactor = (n as f64 + 1.0) / (4.0 * std::f64::consts::PI);
    let mut buf = vec![Complex64::new(0.0, 0.0); n + 1];
    grid.iter()
        .map(|&(theta, phi)| {
            let ch = (theta / 2.0).cos();
            let sh = (theta / 2.0).sin();
            scs_amplitudes_into(&mut buf, n, ch, sh, phi, &ln_binom);
            let overlap: Complex64 = buf
                .iter()
                .zip(state.amplitudes().iter())
                .map(|(s, a)| s.conj() * a)
                .sum();
            prefactor * overlap.norm_sqr()
        })
        .collect()
}

/// Eigenvalues of a real symmetric 3×3 matrix in descending order, computed
/// with the trigonometric closed form.
pub(crate) fn sym3_eigenvalues(a: &[[f64; 3]; 3]) -> (f64, f64, f64) {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let trace = a[0][0] + a[1][1] + a[2][2];
    if p1 <= f64::EPSILON * trace.abs().max(1.0) * trace.abs().max(1.0) {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(|x, y| y.partial_cmp(x).unwrap());
        return (d[0], d[1], d[2]);
    }
    let q = trace / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, k: usize| (a[i][k] - if i == k { q } else { 0.0 }) / p;
    let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
        - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
    let eig1 = q + 2.0 * p * phi.cos();
    let eig3 = q + 2.0 * p * (phi + two_pi_3).cos();
    let eig2 = trace - eig1 - eig3;
    (eig1, eig2, eig3)
}
