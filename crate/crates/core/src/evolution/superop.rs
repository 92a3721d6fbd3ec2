//! Real superoperator representation on the 16 Hermitian basis operators.
//!
//! Any Hermiticity-preserving linear map on 4x4 operators is a real 16x16
//! matrix in an orthonormal Hermitian basis. Non-Hermitian inputs (phase-graph
//! components) are handled by linearity over their real and imaginary parts.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{SMatrix, SVector};

use super::relaxation::RelaxationChannel;
use crate::error::{Error, Result};
use crate::spin::{fz, Mat4, Operator, C64};

pub type Mat16 = SMatrix<f64, 16, 16>;
pub type Vec16 = SVector<f64, 16>;
type Mat17 = SMatrix<f64, 17, 17>;

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Coefficients `tr(B_k M)` split into real and imaginary parts.
pub fn to_coeffs(m: &Mat4) -> (Vec16, Vec16) {
    let mut re = Vec16::zeros();
    let mut im = Vec16::zeros();
    for d in 0..4 {
        re[d] = m[(d, d)].re;
        im[d] = m[(d, d)].im;
    }
    for (p, &(r, c)) in PAIRS.iter().enumerate() {
        let s = (m[(c, r)] + m[(r, c)]) * FRAC_1_SQRT_2;
        let a = (m[(c, r)] - m[(r, c)]) * C64::new(0.0, FRAC_1_SQRT_2);
        re[4 + 2 * p] = s.re;
        im[4 + 2 * p] = s.im;
        re[5 + 2 * p] = a.re;
        im[5 + 2 * p] = a.im;
    }
    (re, im)
}

pub fn from_coeffs(re: &Vec16, im: &Vec16) -> Mat4 {
    let mut m = Mat4::zeros();
    for d in 0..4 {
        m[(d, d)] = C64::new(re[d], im[d]);
    }
    for (p, &(r, c)) in PAIRS.iter().enumerate() {
        let s = C64::new(re[4 + 2 * p], im[4 + 2 * p]);
        let a = C64::new(re[5 + 2 * p], im[5 + 2 * p]);
        let i = C64::new(0.0, 1.0);
        m[(r, c)] = (s + i * a) * FRAC_1_SQRT_2;
        m[(c, r)] = (s - i * a) * FRAC_1_SQRT_2;
    }
    m
}

fn basis_element(k: usize) -> Mat4 {
    let mut re = Vec16::zeros();
    re[k] = 1.0;
    from_coeffs(&re, &Vec16::zeros())
}

/// Matrix of a Hermiticity-preserving map in the Hermitian basis.
pub fn superoperator(f: impl Fn(&Mat4) -> Mat4) -> Mat16 {
    let mut s = Mat16::zeros();
    for k in 0..16 {
        let (re, _) = to_coeffs(&f(&basis_element(k)));
        s.set_column(k, &re);
    }
    s
}

fn hermitian_coeffs(op: &Operator) -> Vec16 {
    to_coeffs(op.matrix()).0
}

/// Evolution map over one interval: unitary or affine (relaxation toward
/// thermal equilibrium makes the map affine).
#[derive(Debug, Clone, PartialEq)]
pub enum Propagator {
    Identity,
    Unitary(Mat4),
    Affine { lin: Box<Mat16>, off: Vec16 },
}

impl Propagator {
    fn affine_parts(&self) -> (Mat16, Vec16) {
        match self {
            Propagator::Identity => (Mat16::identity(), Vec16::zeros()),
            Propagator::Unitary(u) => (superoperator(|x| u * x * u.adjoint()), Vec16::zeros()),
            Propagator::Affine { lin, off } => (**lin, *off),
        }
    }

    /// Applies the map. `with_offset` is false for phase-graph components that
    /// carry a nonzero winding, which the uniform equilibrium cannot feed.
    pub fn apply(&self, m: &Mat4, with_offset: bool) -> Mat4 {
        match self {
            Propagator::Identity => *m,
            Propagator::Unitary(u) => u * m * u.adjoint(),
            Propagator::Affine { lin, off } => {
                let (re, im) = to_coeffs(m);
                let mut out_re = **lin * re;
                let out_im = **lin * im;
                if with_offset {
                    out_re += off;
                }
                from_coeffs(&out_re, &out_im)
            }
        }
    }

    /// `next` applied after `self`.
    pub fn then(&self, next: &Propagator) -> Propagator {
        match (self, next) {
            (Propagator::Identity, n) => n.clone(),
            (s, Propagator::Identity) => s.clone(),
            (Propagator::Unitary(a), Propagator::Unitary(b)) => Propagator::Unitary(b * a),
            _ => {
                let (l1, o1) = self.affine_parts();
                let (l2, o2) = next.affine_parts();
                Propagator::Affine {
                    lin: Box::new(l2 * l1),
                    off: l2 * o1 + o2,
                }
            }
        }
    }

    /// `n`-fold repetition by binary powering.
    pub fn pow(&self, mut n: u32) -> Propagator {
        let mut acc = Propagator::Identity;
        let mut base = self.clone();
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.then(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.then(&base);
            }
        }
        acc
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(self, Propagator::Affine { .. })
    }
}

fn double_commutator(g: &Mat4, x: &Mat4) -> Mat4 {
    let inner = g * x - x * g;
    g * inner - inner * g
}

/// Generator `A`, `b` of `dv/dt = A v + b` for coherent evolution under `h`
/// plus relaxation of `rho - (I1z + I2z)`.
pub fn liouvillian(h: &Operator, channels: &[RelaxationChannel]) -> (Mat16, Vec16) {
    let hm = *h.matrix();
    let mi = C64::new(0.0, -1.0);
    let mut a = superoperator(|x| (hm * x - x * hm) * mi);
    let mut diss = Mat16::zeros();
    for ch in channels.iter().filter(|c| c.rate > 0.0) {
        for g in &ch.generators {
            let gm = *g.matrix();
            diss += superoperator(|x| double_commutator(&gm, x)) * (-0.5 * ch.rate);
        }
    }
    a += diss;
    let b = -(diss * hermitian_coeffs(&fz()));
    (a, b)
}

fn has_relaxation(channels: &[RelaxationChannel]) -> bool {
    channels.iter().any(|c| c.rate > 0.0)
}

/// Unitary `exp(-i H t)`; `h` must be Hermitian.
pub fn unitary(h: &Operator, t: f64) -> Mat4 {
    let (vals, vecs) = crate::spin::eigh(h);
    let phases = Mat4::from_diagonal(&nalgebra::Vector4::from_fn(|k, _| {
        C64::from_polar(1.0, -vals[k] * t)
    }));
    vecs * phases * vecs.adjoint()
}

/// Exact propagator over `t` via the augmented-matrix exponential.
pub fn exact_propagator(h: &Operator, channels: &[RelaxationChannel], t: f64) -> Propagator {
    if t == 0.0 {
        return Propagator::Identity;
    }
    if !has_relaxation(channels) {
        return Propagator::Unitary(unitary(h, t));
    }
    let (a, b) = liouvillian(h, channels);
    let mut aug = Mat17::zeros();
    aug.fixed_view_mut::<16, 16>(0, 0).copy_from(&(a * t));
    aug.fixed_view_mut::<16, 1>(0, 16).copy_from(&(b * t));
    let e = aug.exp();
    Propagator::Affine {
        lin: Box::new(e.fixed_view::<16, 16>(0, 0).into_owned()),
        off: e.fixed_view::<16, 1>(0, 16).into_owned(),
    }
}

/// Largest number of step halvings tried by [`rk4_propagator`].
pub const MAX_HALVINGS: u32 = 14;

fn rk4_steps(a: &Mat16, b: &Vec16, t: f64, steps: usize) -> (Mat16, Vec16) {
    // Propagate the identity columns and the offset together.
    let h = t / steps as f64;
    let mut lin = Mat16::identity();
    let mut off = Vec16::zeros();
    let step_lin = |m: &Mat16| -> Mat16 {
        let k1 = a * m;
        let k2 = a * (m + k1 * (h / 2.0));
        let k3 = a * (m + k2 * (h / 2.0));
        let k4 = a * (m + k3 * h);
        m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    let step_off = |v: &Vec16| -> Vec16 {
        let k1 = a * v + b;
        let k2 = a * (v + k1 * (h / 2.0)) + b;
        let k3 = a * (v + k2 * (h / 2.0)) + b;
        let k4 = a * (v + k3 * h) + b;
        v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    for _ in 0..steps {
        lin = step_lin(&lin);
        off = step_off(&off);
    }
    (lin, off)
}

/// Fixed-step fourth-order integration, halving the step until the map
/// changes by less than `tol` (max-norm on the propagator entries, which
/// bounds the change of any expectation of unit-norm states).
pub fn rk4_propagator(
    h: &Operator,
    channels: &[RelaxationChannel],
    t: f64,
    tol: f64,
) -> Result<Propagator> {
    if t == 0.0 {
        return Ok(Propagator::Identity);
    }
    let (a, b) = liouvillian(h, channels);
    let scale = a.abs().max().max(1e-12);
    let mut steps = ((t * scale * 2.0).ceil() as usize).max(1);
    let (mut lin, mut off) = rk4_steps(&a, &b, t, steps);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_HALVINGS {
        steps *= 2;
        let (lin2, off2) = rk4_steps(&a, &b, t, steps);
        change = (lin2 - lin).abs().max().max((off2 - off).abs().max());
        lin = lin2;
        off = off2;
        if change < tol {
            return Ok(Propagator::Affine {
                lin: Box::new(lin),
                off,
            });
        }
    }
    Err(Error::NonConvergence {
        halvings: MAX_HALVINGS,
        step: t / steps as f64,
        change,
    })
}
