//! Two-spin Hilbert-space algebra.
//!
//! The computational basis is `|00>, |01>, |10>, |11>` with spin 1 first and
//! `|0>` the `m = +1/2` state. The singlet-triplet basis is ordered
//! `|T+1>, |T0>, |S0>, |T-1>`.
//!
//! Shifts and couplings enter in Hz. Hamiltonians are returned in rad/s.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat4 = Matrix4<C64>;

/// Proton gyromagnetic ratio in rad s^-1 T^-1.
pub const PROTON_GAMMA: f64 = 2.675_221_874e8;

/// Tolerance used for Hermiticity and trace checks on unit-scale operators.
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Magnetic quantum number `m_S` of each computational basis state.
pub const BASIS_M: [i32; 4] = [1, 0, 0, -1];

/// Physical parameters of a homonuclear spin pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    /// Chemical-shift difference in Hz.
    pub omega: f64,
    /// Scalar coupling in Hz.
    pub j: f64,
    /// Residual dipolar coupling in Hz.
    pub d: f64,
    /// Gyromagnetic ratio in rad s^-1 T^-1.
    pub gamma: f64,
    pub label: String,
}

impl SpinSystem {
    pub fn new(omega: f64, j: f64, d: f64) -> Result<Self> {
        Self::with_gamma(omega, j, d, PROTON_GAMMA)
    }

    pub fn with_gamma(omega: f64, j: f64, d: f64, gamma: f64) -> Result<Self> {
        let sys = Self {
            omega,
            j,
            d,
            gamma,
            label: String::new(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same pair with a different dipolar coupling.
    pub fn with_d(&self, d: f64) -> Self {
        Self { d, ..self.clone() }
    }

    /// Same pair with the chemical shift suppressed, as under an ideal spin lock.
    pub fn locked(&self) -> Self {
        Self {
            omega: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gyromagnetic ratio must be positive, got {}",
                self.gamma
            )));
        }
        for (name, v) in [("omega", self.omega), ("j", self.j), ("d", self.d)] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// A 4x4 operator in the computational basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Operator(pub Mat4);

impl Operator {
    pub fn zero() -> Self {
        Self(Mat4::zeros())
    }

    pub fn identity() -> Self {
        Self(Mat4::identity())
    }

    pub fn from_matrix(m: Mat4) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    /// Outer product `|a><b|`.
    pub fn outer(a: &[C64; 4], b: &[C64; 4]) -> Self {
        Self(Mat4::from_fn(|r, c| a[r] * b[c].conj()))
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(self.0 * other.0 - other.0 * self.0)
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Trace inner product `tr(A^dagger B)`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol * self.max_norm().max(1.0)
    }

    pub fn hermitian_part(&self) -> Self {
        Self((self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// `U^dagger A U`: the matrix of `self` in the basis whose columns are `U`.
    pub fn in_basis(&self, basis: &BasisTransform) -> Self {
        Self(basis.matrix.adjoint() * self.0 * basis.matrix)
    }

    /// Inverse of [`Operator::in_basis`].
    pub fn from_basis(&self, basis: &BasisTransform) -> Self {
        Self(basis.matrix * self.0 * basis.matrix.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0 * C64::new(s, 0.0))
    }

    /// Keeps only elements of coherence order `p` (`m_row - m_col`).
    pub fn order_part(&self, p: i32) -> Self {
        Self(Mat4::from_fn(|r, c| {
            if BASIS_M[r] - BASIS_M[c] == p {
                self.0[(r, c)]
            } else {
                ZERO
            }
        }))
    }
}

impl Add for Operator {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for Operator {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for Operator {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Neg for Operator {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl Mul for Operator {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Mul<f64> for Operator {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl Mul<Operator> for f64 {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        rhs.scale(self)
    }
}

impl Mul<C64> for Operator {
    type Output = Self;
    fn mul(self, rhs: C64) -> Self {
        Self(self.0 * rhs)
    }
}

/// Traceless Hermitian deviation density operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOperator(Operator);

impl DensityOperator {
    /// Checks Hermiticity and tracelessness to [`HERMITIAN_TOL`] (scaled by the norm).
    pub fn new(op: Operator) -> Result<Self> {
        let scale = op.max_norm().max(1.0);
        let dev = op.hermitian_deviation();
        if dev > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = op.trace().norm();
        if tr > HERMITIAN_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "deviation density operator must be traceless, trace = {tr:.3e}"
            )));
        }
        Ok(Self(op))
    }

    /// Strips the trace and the anti-Hermitian part instead of rejecting them.
    pub fn project(op: Operator) -> Self {
        let h = op.hermitian_part();
        let tr = h.trace() / C64::new(4.0, 0.0);
        Self(h - Operator::identity() * tr)
    }

    pub fn operator(&self) -> &Operator {
        &self.0
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0 .0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    /// Population of the normalised state `psi` relative to the mixed background.
    pub fn population(&self, psi: &[C64; 4]) -> f64 {
        let v = nalgebra::Vector4::from_column_slice(psi);
        (v.adjoint() * self.0 .0 * v)[(0, 0)].re
    }
}

/// Single-spin and collective angular-momentum operators.
#[derive(Debug, Clone)]
pub struct ProductOperators {
    pub i1x: Operator,
    pub i1y: Operator,
    pub i1z: Operator,
    pub i2x: Operator,
    pub i2y: Operator,
    pub i2z: Operator,
    pub identity: Operator,
    pub i1p: Operator,
    pub i1m: Operator,
    pub i2p: Operator,
    pub i2m: Operator,
}

fn pauli_half() -> [Matrix2<C64>; 3] {
    let h = C64::new(0.5, 0.0);
    let x = Matrix2::new(ZERO, ONE, ONE, ZERO) * h;
    let y = Matrix2::new(ZERO, -I, I, ZERO) * h;
    let z = Matrix2::new(ONE, ZERO, ZERO, -ONE) * h;
    [x, y, z]
}

fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Mat4 {
    Mat4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn product_operators() -> ProductOperators {
    let [x, y, z] = pauli_half();
    let e = Matrix2::identity();
    let op1 = |m: &Matrix2<C64>| Operator(kron(m, &e));
    let op2 = |m: &Matrix2<C64>| Operator(kron(&e, m));
    let (i1x, i1y, i1z) = (op1(&x), op1(&y), op1(&z));
    let (i2x, i2y, i2z) = (op2(&x), op2(&y), op2(&z));
    ProductOperators {
        i1x,
        i1y,
        i1z,
        i2x,
        i2y,
        i2z,
        identity: Operator::identity(),
        i1p: i1x + i1y * I,
        i1m: i1x - i1y * I,
        i2p: i2x + i2y * I,
        i2m: i2x - i2y * I,
    }
}

impl ProductOperators {
    pub fn fx(&self) -> Operator {
        self.i1x + self.i2x
    }

    pub fn fy(&self) -> Operator {
        self.i1y + self.i2y
    }

    pub fn fz(&self) -> Operator {
        self.i1z + self.i2z
    }

    /// `I1 . I2`
    pub fn dot(&self) -> Operator {
        self.i1x * self.i2x + self.i1y * self.i2y + self.i1z * self.i2z
    }

    pub fn spin1(&self) -> [Operator; 3] {
        [self.i1x, self.i1y, self.i1z]
    }

    pub fn spin2(&self) -> [Operator; 3] {
        [self.i2x, self.i2y, self.i2z]
    }

    /// The sixteen products `E/2, I1a, I2b, 2 I1a I2b`, mutually orthogonal
    /// under the trace inner product.
    pub fn basis16(&self) -> Vec<Operator> {
        let e = [self.identity.scale(0.5)];
        let mut out: Vec<Operator> = e.to_vec();
        out.extend(self.spin1());
        out.extend(self.spin2());
        for a in self.spin1() {
            for b in self.spin2() {
                out.push((a * b).scale(2.0));
            }
        }
        out
    }
}

/// Collective in-phase transverse magnetisation `I1x + I2x`.
pub fn fx() -> Operator {
    product_operators().fx()
}

pub fn fy() -> Operator {
    product_operators().fy()
}

pub fn fz() -> Operator {
    product_operators().fz()
}

/// Anti-phase-in-shift transverse operator `I1y - I2y`.
pub fn i1y_minus_i2y() -> Operator {
    let p = product_operators();
    p.i1y - p.i2y
}

/// Secular rotating-frame Hamiltonian in rad/s.
pub fn hamiltonian(sys: &SpinSystem) -> Operator {
    let p = product_operators();
    let dot = p.dot();
    let zz = p.i1z * p.i2z;
    p.i1z.scale(-PI * sys.omega)
        + p.i2z.scale(PI * sys.omega)
        + dot.scale(2.0 * PI * sys.j)
        + (zz.scale(3.0) - dot).scale(2.0 * PI * sys.d)
}

/// Quantum labels of a singlet-triplet basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StLabel {
    /// Total spin S.
    pub s: u8,
    pub m: i8,
}

/// Change of basis to `|T+1>, |T0>, |S0>, |T-1>`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTransform {
    /// Columns are the basis states in the computational basis.
    pub matrix: Mat4,
    pub labels: [StLabel; 4],
}

pub const T_PLUS: usize = 0;
pub const T_ZERO: usize = 1;
pub const S_ZERO: usize = 2;
pub const T_MINUS: usize = 3;

pub fn singlet_triplet_basis() -> BasisTransform {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let mut m = Mat4::zeros();
    m[(0, T_PLUS)] = ONE;
    m[(1, T_ZERO)] = h;
    m[(2, T_ZERO)] = h;
    m[(1, S_ZERO)] = h;
    m[(2, S_ZERO)] = -h;
    m[(3, T_MINUS)] = ONE;
    BasisTransform {
        matrix: m,
        labels: [
            StLabel { s: 1, m: 1 },
            StLabel { s: 1, m: 0 },
            StLabel { s: 0, m: 0 },
            StLabel { s: 1, m: -1 },
        ],
    }
}

impl BasisTransform {
    pub fn state(&self, k: usize) -> [C64; 4] {
        let col = self.matrix.column(k);
        [col[0], col[1], col[2], col[3]]
    }

    pub fn projector(&self, k: usize) -> Operator {
        let s = self.state(k);
        Operator::outer(&s, &s)
    }
}

pub fn singlet_state() -> [C64; 4] {
    singlet_triplet_basis().state(S_ZERO)
}

pub fn t0_state() -> [C64; 4] {
    singlet_triplet_basis().state(T_ZERO)
}

/// `|S0><S0| - |T0><T0|`: the singlet-minus-T0 population-difference operator.
pub fn singlet_order() -> Operator {
    let b = singlet_triplet_basis();
    b.projector(S_ZERO) - b.projector(T_ZERO)
}

/// Hamiltonian written directly in the singlet-triplet basis, rad/s.
pub fn hamiltonian_st_basis(sys: &SpinSystem) -> Operator {
    let (j, d, w) = (sys.j, sys.d, sys.omega);
    let k = PI / 2.0;
    let mut m = Mat4::zeros();
    m[(T_PLUS, T_PLUS)] = C64::new(k * (j + 2.0 * d), 0.0);
    m[(T_ZERO, T_ZERO)] = C64::new(k * (j - 4.0 * d), 0.0);
    m[(S_ZERO, S_ZERO)] = C64::new(k * (-3.0 * j), 0.0);
    m[(T_MINUS, T_MINUS)] = C64::new(k * (j + 2.0 * d), 0.0);
    m[(T_ZERO, S_ZERO)] = C64::new(k * (-2.0 * w), 0.0);
    m[(S_ZERO, T_ZERO)] = C64::new(k * (-2.0 * w), 0.0);
    Operator(m)
}

/// Spin-label exchange `P|ab> = |ba>`.
pub fn exchange_operator() -> Operator {
    let mut m = Mat4::zeros();
    m[(0, 0)] = ONE;
    m[(1, 2)] = ONE;
    m[(2, 1)] = ONE;
    m[(3, 3)] = ONE;
    Operator(m)
}

/// Thermal equilibrium in deviation form, `I1z + I2z`.
pub fn thermal_deviation() -> DensityOperator {
    DensityOperator(fz())
}

/// `tr(rho . obs)`; rejects non-Hermitian observables.
pub fn expectation(rho: &DensityOperator, obs: &Operator) -> Result<f64> {
    if !obs.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::NotHermitian {
            deviation: obs.hermitian_deviation(),
        });
    }
    Ok(raw_expectation(rho.matrix(), obs))
}

pub(crate) fn raw_expectation(rho: &Mat4, obs: &Operator) -> f64 {
    // tr(rho obs) = sum_rc rho_rc obs_cr
    let mut acc = ZERO;
    for r in 0..4 {
        for c in 0..4 {
            acc += rho[(r, c)] * obs.0[(c, r)];
        }
    }
    acc.re
}

/// Eigen-decomposition of a Hermitian operator, eigenvalues ascending.
pub fn eigh(op: &Operator) -> (Vec<f64>, Mat4) {
    let eig = SymmetricEigen::new(op.0);
    let mut idx: Vec<usize> = (0..4).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = Mat4::zeros();
    for (dst, &src) in idx.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Operator of the population difference between the two {T0,S0}-block
/// eigenstates of `H`, signed so the singlet-like eigenstate counts positive.
///
/// This is the order that coherent storage under a constant `H` conserves;
/// for `omega = 0` it coincides with [`singlet_order`].
pub fn eigen_singlet_order(sys: &SpinSystem) -> Operator {
    let h = hamiltonian(sys);
    let (_, vecs) = eigh(&h);
    let s = singlet_state();
    let t0 = t0_state();
    let overlap = |k: usize, psi: &[C64; 4]| -> f64 {
        let col = vecs.column(k);
        (0..4).map(|i| psi[i].conj() * col[i]).sum::<C64>().norm_sqr()
    };
    let ks = (0..4)
        .max_by(|&a, &b| overlap(a, &s).total_cmp(&overlap(b, &s)))
        .unwrap_or(0);
    let kt = (0..4)
        .filter(|&k| k != ks)
        .max_by(|&a, &b| overlap(a, &t0).total_cmp(&overlap(b, &t0)))
        .unwrap_or(1);
    let col = |k: usize| {
        let c = vecs.column(k);
        [c[0], c[1], c[2], c[3]]
    };
    Operator::outer(&col(ks), &col(ks)) - Operator::outer(&col(kt), &col(kt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn apply(op: &Operator, psi: &[C64; 4]) -> [C64; 4] {
        let mut out = [ZERO; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|k| op.0[(r, k)] * psi[k]).sum();
        }
        out
    }

    #[test]
    fn spin_half_commutation() {
        let p = product_operators();
        for (x, y, z) in [(p.i1x, p.i1y, p.i1z), (p.i2x, p.i2y, p.i2z)] {
            let lhs = x.commutator(&y);
            assert!((lhs - z * I).max_norm() < 1e-15);
        }
        for a in p.spin1() {
            for b in p.spin2() {
                assert!(a.commutator(&b).max_norm() < 1e-15);
            }
        }
    }

    #[test]
    fn trivial_values() {
        let p = product_operators();
        assert_abs_diff_eq!((p.i1z * p.i1z).trace().re, 1.0, epsilon = 1e-15);
        let fz_st = p.fz().in_basis(&singlet_triplet_basis());
        let want = [1.0, 0.0, 0.0, -1.0];
        for r in 0..4 {
            for col in 0..4 {
                let expect = if r == col { want[r] } else { 0.0 };
                assert_abs_diff_eq!(fz_st.0[(r, col)].re, expect, epsilon = 1e-15);
                assert_abs_diff_eq!(fz_st.0[(r, col)].im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn basis16_orthogonal() {
        let ops = product_operators().basis16();
        assert_eq!(ops.len(), 16);
        for (a, x) in ops.iter().enumerate() {
            for (b, y) in ops.iter().enumerate() {
                let ip = x.inner(y);
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip.re, want, epsilon = 1e-14);
                assert_abs_diff_eq!(ip.im, 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_system_gives_zero_hamiltonian() {
        let sys = SpinSystem::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(hamiltonian(&sys).max_norm(), 0.0);
    }

    #[test]
    fn zeeman_only_eigenstates() {
        let sys = SpinSystem::new(37.0, 0.0, 0.0).unwrap();
        let h = hamiltonian(&sys);
        let s01 = [ZERO, ONE, ZERO, ZERO];
        let s10 = [ZERO, ZERO, ONE, ZERO];
        let h01 = apply(&h, &s01);
        let h10 = apply(&h, &s10);
        assert_abs_diff_eq!(h01[1].re, -PI * 37.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h10[2].re, PI * 37.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h01[2].norm() + h10[1].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn st_basis_matches_transformed_hamiltonian() {
        let u = singlet_triplet_basis();
        for (w, j, d) in [(46.6, 3.1, 640.0), (50.0, 10.0, 600.0), (-12.0, -7.0, 0.0)] {
            let sys = SpinSystem::new(w, j, d).unwrap();
            let diff = hamiltonian(&sys).in_basis(&u) - hamiltonian_st_basis(&sys);
            assert!(diff.max_norm() < 1e-10);
        }
    }

    #[test]
    fn st_basis_unitary_and_exchange_symmetry() {
        let u = singlet_triplet_basis();
        let uu = u.matrix.adjoint() * u.matrix;
        assert!((uu - Mat4::identity()).iter().all(|z| z.norm() < 1e-12));
        let p = exchange_operator();
        for k in 0..4 {
            let psi = u.state(k);
            let sign = if k == S_ZERO { -1.0 } else { 1.0 };
            let swapped = apply(&p, &psi);
            for i in 0..4 {
                assert_abs_diff_eq!(swapped[i].re, sign * psi[i].re, epsilon = 1e-15);
            }
        }
        assert!((p * p - Operator::identity()).max_norm() < 1e-15);
    }

    #[test]
    fn exchange_commutes_when_shift_vanishes() {
        let sys = SpinSystem::new(0.0, 10.0, 600.0).unwrap();
        let h = hamiltonian(&sys);
        assert!(h.commutator(&exchange_operator()).max_norm() < 1e-10);
        assert!(h.commutator(&singlet_order()).max_norm() < 1e-10);
    }

    #[test]
    fn singlet_eigenstate_when_shift_vanishes() {
        let sys = SpinSystem::new(0.0, 3.1, 640.0).unwrap();
        let h = hamiltonian_st_basis(&sys);
        assert_abs_diff_eq!(h.0[(S_ZERO, S_ZERO)].re, -1.5 * PI * 3.1, epsilon = 1e-12);
        for k in 0..4 {
            if k != S_ZERO {
                assert_eq!(h.0[(k, S_ZERO)].norm(), 0.0);
            }
        }
    }

    #[test]
    fn first_row_decoupled() {
        let sys = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
        let h = hamiltonian(&sys);
        let u = singlet_triplet_basis();
        let tp = u.state(T_PLUS);
        for k in [T_ZERO, S_ZERO, T_MINUS] {
            let hk = apply(&h, &u.state(k));
            let amp: C64 = (0..4).map(|i| tp[i].conj() * hk[i]).sum();
            assert!(amp.norm() < 1e-12);
        }
    }

    /// Closed-form 2x2 eigenvalues of the {T0,S0} block against numerical
    /// diagonalisation of the full 4x4 matrix.
    #[test]
    fn st_block_closed_form() {
        let sys = SpinSystem::new(50.0, 10.0, 600.0).unwrap();
        let k = PI / 2.0;
        let (a, b, off) = (k * (10.0 - 2400.0), k * (-30.0), k * (-100.0));
        let mean = 0.5 * (a + b);
        let half = (0.25 * (a - b) * (a - b) + off * off).sqrt();
        let tpm = k * (10.0 + 1200.0);
        let mut want = vec![mean - half, mean + half, tpm, tpm];
        want.sort_by(f64::total_cmp);
        let (got, _) = eigh(&hamiltonian(&sys));
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(*g, *w, epsilon = 1e-9);
        }
    }

    #[test]
    fn thermal_state_values() {
        let rho = thermal_deviation();
        let p = product_operators();
        assert_abs_diff_eq!(rho.operator().trace().norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(expectation(&rho, &p.fz()).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(expectation(&rho, &p.fx()).unwrap(), 0.0, epsilon = 1e-15);
        let ps = rho.population(&singlet_state());
        let pt = rho.population(&t0_state());
        assert_abs_diff_eq!(ps - pt, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let q = singlet_order();
        let rho = DensityOperator::new(q).unwrap();
        let singlet = singlet_triplet_basis().projector(S_ZERO);
        assert_abs_diff_eq!(expectation(&rho, &singlet).unwrap(), 1.0, epsilon = 1e-15);
        let a = i1y_minus_i2y();
        let rho2 = DensityOperator::new(a).unwrap();
        assert_abs_diff_eq!(expectation(&rho2, &a).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn non_hermitian_observable_rejected() {
        let p = product_operators();
        let err = expectation(&thermal_deviation(), &p.i1p).unwrap_err();
        assert!(matches!(err, Error::NotHermitian { .. }));
    }

    #[test]
    fn density_checks() {
        assert!(DensityOperator::new(Operator::identity()).is_err());
        assert!(DensityOperator::new(product_operators().i1p).is_err());
        let d = DensityOperator::project(product_operators().i1p + Operator::identity());
        assert!(d.operator().is_hermitian(1e-14));
        assert_abs_diff_eq!(d.operator().trace().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_systems_rejected() {
        assert!(SpinSystem::with_gamma(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(SpinSystem::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(SpinSystem::new(-3.0, -1.0, -5.0).is_ok());
    }

    #[test]
    fn eigen_order_reduces_to_singlet_order() {
        let sys = SpinSystem::new(0.0, 3.1, 640.0).unwrap();
        let q = eigen_singlet_order(&sys);
        assert!((q - singlet_order()).max_norm() < 1e-10);
        let tilted = SpinSystem::new(46.6, 3.1, 640.0).unwrap();
        let qt = eigen_singlet_order(&tilted);
        assert!(qt.commutator(&hamiltonian(&tilted)).max_norm() < 1e-8);
        assert!(qt.inner(&singlet_order()).re > 1.9);
    }
}
