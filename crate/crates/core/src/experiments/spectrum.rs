//! Stick spectra from eigenstate coherences.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::spin::{product_operators, DensityOperator, Mat4, Operator, C64, HERMITIAN_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickLine {
    /// Hz
    pub frequency: f64,
    pub amplitude: f64,
}

/// Lines sorted by frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StickSpectrum {
    pub lines: Vec<StickLine>,
}

impl StickSpectrum {
    pub fn total_abs_amplitude(&self) -> f64 {
        self.lines.iter().map(|l| l.amplitude.abs()).sum()
    }

    /// Lines whose `|amplitude|` exceeds `threshold`.
    pub fn significant(&self, threshold: f64) -> Vec<StickLine> {
        self.lines
            .iter()
            .copied()
            .filter(|l| l.amplitude.abs() > threshold)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,amplitude\n");
        for l in &self.lines {
            out.push_str(&format!("{:e},{:e}\n", l.frequency, l.amplitude));
        }
        out
    }
}

/// Eigenvectors of `h` that are also eigenvectors of `I1z + I2z`, with the
/// matching energies. `h` must conserve total `z` magnetisation.
fn magnetisation_eigenbasis(h: &Operator) -> (Vec<f64>, Mat4) {
    let fz = product_operators().fz();
    let shift = 10.0 * (h.max_norm() + 1.0);
    let eig = SymmetricEigen::new(h.0 + fz.0 * C64::new(shift, 0.0));
    let vecs = eig.eigenvectors;
    let energies = (0..4)
        .map(|k| {
            let v = vecs.column(k);
            (v.adjoint() * h.0 * v)[(0, 0)].re
        })
        .collect();
    (energies, vecs)
}

/// Single-quantum lines of `rho` under `h`. Line `i -> j` sits at
/// `(E_i - E_j) / 2 pi` with amplitude `Re(rho_ji <i|F+|j>)` in the
/// eigenbasis. Coincident lines are merged.
pub fn stick_spectrum(rho: &DensityOperator, h: &Operator) -> Result<StickSpectrum> {
    if !h.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::NotHermitian {
            deviation: h.hermitian_deviation(),
        });
    }
    let comm = h.commutator(&product_operators().fz()).max_norm();
    if comm > 1e-9 * (h.max_norm() + 1.0) {
        return Err(Error::InvalidInput(
            "Hamiltonian does not conserve total z magnetisation".into(),
        ));
    }
    let (e, v) = magnetisation_eigenbasis(h);
    let p = product_operators();
    let fplus = (p.i1x + p.i2x).0 + (p.i1y + p.i2y).0 * C64::new(0.0, 1.0);
    let fp = v.adjoint() * fplus * v;
    let r = v.adjoint() * rho.matrix() * v;
    let mut lines: Vec<StickLine> = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            if fp[(i, j)].norm() < 1e-12 {
                continue;
            }
            lines.push(StickLine {
                frequency: (e[i] - e[j]) / (2.0 * PI),
                amplitude: (r[(j, i)] * fp[(i, j)]).re,
            });
        }
    }
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    let mut merged: Vec<StickLine> = Vec::new();
    for l in lines {
        match merged.last_mut() {
            Some(m) if (m.frequency - l.frequency).abs() < 1e-9 => m.amplitude += l.amplitude,
            _ => merged.push(l),
        }
    }
    Ok(StickSpectrum { lines: merged })
}
