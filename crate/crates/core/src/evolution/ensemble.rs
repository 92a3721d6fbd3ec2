//! Spatially resolved spin states for gradient and diffusion physics.
//!
//! Two representations are provided:
//!
//! * [`PhaseGraph`]: an exact, sample-size independent bookkeeping of the
//!   winding imposed by each distinct gradient. Only the unwound component
//!   contributes to the ensemble mean, and diffusion attenuates a component of
//!   wavenumber `k` by `exp(-D k^2 t)`.
//! * [`ZEnsemble`]: an explicit grid of slices along `z` with Monte Carlo
//!   displacement under diffusion.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::superop::Propagator;
use crate::error::{Error, Result};
use crate::spin::{raw_expectation, DensityOperator, Mat4, Operator, BASIS_M, C64};

/// Components smaller than this (max-norm) are dropped from a phase graph.
const PRUNE_TOL: f64 = 1e-15;

fn order_part(m: &Mat4, p: i32) -> Mat4 {
    Mat4::from_fn(|r, c| {
        if BASIS_M[r] - BASIS_M[c] == p {
            m[(r, c)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

fn max_abs(m: &Mat4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Hermitian defect of `m` relative to its adjoint partner `partner`.
fn pair_drift(m: &Mat4, partner: &Mat4) -> f64 {
    max_abs(&(m - partner.adjoint()))
}

/// Exact winding bookkeeping for a uniform sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGraph {
    gamma: f64,
    /// Magnitudes of the distinct gradient areas seen so far.
    channels: Vec<f64>,
    components: BTreeMap<Vec<i32>, Mat4>,
}

impl PhaseGraph {
    pub fn new(rho: &DensityOperator, gamma: f64) -> Self {
        let mut components = BTreeMap::new();
        components.insert(Vec::new(), *rho.matrix());
        Self {
            gamma,
            channels: Vec::new(),
            components,
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Ensemble-mean density operator (the unwound component).
    pub fn mean(&self) -> Mat4 {
        let zero = vec![0; self.channels.len()];
        self.components.get(&zero).copied().unwrap_or_else(Mat4::zeros)
    }

    fn wavenumber(&self, key: &[i32]) -> f64 {
        key.iter()
            .zip(&self.channels)
            .map(|(&n, &a)| f64::from(n) * self.gamma * a)
            .sum()
    }

    pub fn apply(&mut self, prop: &Propagator) {
        let zero = vec![0; self.channels.len()];
        if matches!(prop, Propagator::Affine { .. }) {
            self.components.entry(zero.clone()).or_insert_with(Mat4::zeros);
        }
        for (key, m) in self.components.iter_mut() {
            *m = prop.apply(m, *key == zero);
        }
    }

    /// Gradient of signed effective area `area` (T s / m).
    pub fn gradient(&mut self, area: f64) {
        if area == 0.0 {
            return;
        }
        let mag = area.abs();
        let sign = area.signum() as i32;
        let ch = match self
            .channels
            .iter()
            .position(|&a| (a - mag).abs() <= 1e-12 * mag)
        {
            Some(c) => c,
            None => {
                self.channels.push(mag);
                let old = std::mem::take(&mut self.components);
                self.components = old
                    .into_iter()
                    .map(|(mut k, m)| {
                        k.push(0);
                        (k, m)
                    })
                    .collect();
                self.channels.len() - 1
            }
        };
        let mut next: BTreeMap<Vec<i32>, Mat4> = BTreeMap::new();
        for (key, m) in &self.components {
            for p in -2..=2 {
                let part = order_part(m, p);
                if max_abs(&part) <= PRUNE_TOL {
                    continue;
                }
                let mut k = key.clone();
                k[ch] -= sign * p;
                *next.entry(k).or_insert_with(Mat4::zeros) += part;
            }
        }
        self.components = next;
    }

    /// Analytic diffusion attenuation `exp(-D k^2 t)` of every winding.
    pub fn diffuse(&mut self, coefficient: f64, t: f64) {
        if coefficient == 0.0 || t == 0.0 {
            return;
        }
        let factors: Vec<f64> = self
            .components
            .keys()
            .map(|k| {
                let q = self.wavenumber(k);
                (-coefficient * q * q * t).exp()
            })
            .collect();
        for (m, f) in self.components.values_mut().zip(factors) {
            *m *= C64::new(f, 0.0);
        }
        self.prune();
    }

    fn prune(&mut self) {
        let zero = vec![0; self.channels.len()];
        self.components
            .retain(|k, m| *k == zero || max_abs(m) > PRUNE_TOL);
    }

    /// Restores `M_{-k} = M_k^dagger`; returns the largest defect found.
    pub fn symmetrize(&mut self) -> f64 {
        let mut drift: f64 = 0.0;
        let keys: Vec<Vec<i32>> = self.components.keys().cloned().collect();
        for key in keys {
            let neg: Vec<i32> = key.iter().map(|n| -n).collect();
            if neg < key {
                continue;
            }
            let m = self.components[&key];
            let partner = self.components.get(&neg).copied().unwrap_or_else(Mat4::zeros);
            drift = drift.max(pair_drift(&m, &partner));
            let fixed = (m + partner.adjoint()) * C64::new(0.5, 0.0);
            self.components.insert(key.clone(), fixed);
            if neg != key {
                self.components.insert(neg, fixed.adjoint());
            }
        }
        drift
    }
}

/// Uniform grid of slices over the sample length.
#[derive(Debug, Clone, PartialEq)]
pub struct ZEnsemble {
    gamma: f64,
    length: f64,
    z: Vec<f64>,
    rho: Vec<Mat4>,
    /// Signed sum of applied gradient areas.
    net_area: f64,
    diffusion_steps: u64,
}

impl ZEnsemble {
    /// `n` slices at the midpoints of a uniform partition of `[-L/2, L/2]`.
    pub fn new(rho: &DensityOperator, n: usize, length: f64, gamma: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("ensemble needs at least one slice".into()));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample length must be positive, got {length}"
            )));
        }
        let z = (0..n)
            .map(|j| -length / 2.0 + (j as f64 + 0.5) * length / n as f64)
            .collect();
        Ok(Self {
            gamma,
            length,
            z,
            rho: vec![*rho.matrix(); n],
            net_area: 0.0,
            diffusion_steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn positions(&self) -> &[f64] {
        &self.z
    }

    pub fn slices(&self) -> &[Mat4] {
        &self.rho
    }

    pub fn net_area(&self) -> f64 {
        self.net_area
    }

    pub fn mean(&self) -> Mat4 {
        let n = self.rho.len() as f64;
        let sum = self.rho.iter().fold(Mat4::zeros(), |acc, m| acc + m);
        sum * C64::new(1.0 / n, 0.0)
    }

    /// Per-slice expectation values in slice order.
    pub fn slice_expectations(&self, obs: &Operator) -> Vec<f64> {
        self.rho
            .par_iter()
            .map(|m| raw_expectation(m, obs))
            .collect()
    }

    pub fn apply(&mut self, prop: &Propagator) {
        self.rho.par_iter_mut().for_each(|m| *m = prop.apply(m, true));
    }

    /// Each slice acquires `exp(-i gamma area z (I1z + I2z))`.
    pub fn gradient(&mut self, area: f64) {
        if area == 0.0 {
            return;
        }
        let ga = self.gamma * area;
        self.rho
            .par_iter_mut()
            .zip(self.z.par_iter())
            .for_each(|(m, &z)| {
                for r in 0..4 {
                    for c in 0..4 {
                        let p = BASIS_M[r] - BASIS_M[c];
                        if p != 0 {
                            m[(r, c)] *= C64::from_polar(1.0, -ga * z * f64::from(p));
                        }
                    }
                }
            });
        self.net_area += area;
    }

    /// Gaussian displacement of every slice, variance `2 D t`.
    ///
    /// Slice `j` draws from its own stream of a generator seeded by `seed`
    /// and the number of previous diffusion steps, so the result does not
    /// depend on the thread count.
    pub fn diffuse(&mut self, coefficient: f64, t: f64, seed: u64) -> Result<()> {
        if !(coefficient >= 0.0 && t >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "diffusion needs D >= 0 and t >= 0, got D = {coefficient}, t = {t}"
            )));
        }
        if coefficient == 0.0 || t == 0.0 {
            return Ok(());
        }
        let sigma = (2.0 * coefficient * t).sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let step_seed = seed ^ self.diffusion_steps.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.z.par_iter_mut().enumerate().for_each(|(j, z)| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            rng.set_stream(j as u64);
            *z += normal.sample(&mut rng);
        });
        self.diffusion_steps += 1;
        Ok(())
    }

    pub fn symmetrize(&mut self) -> f64 {
        self.rho
            .par_iter_mut()
            .map(|m| {
                let d = pair_drift(m, m);
                *m = (*m + m.adjoint()) * C64::new(0.5, 0.0);
                d
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// State carried through a pulse program.
#[derive(Debug, Clone, PartialEq)]
pub enum SpinState {
    Uniform(PhaseGraph),
    Slices(ZEnsemble),
}

impl SpinState {
    pub fn uniform(rho: &DensityOperator, gamma: f64) -> Self {
        SpinState::Uniform(PhaseGraph::new(rho, gamma))
    }

    pub fn slices(rho: &DensityOperator, n: usize, length: f64, gamma: f64) -> Result<Self> {
        Ok(SpinState::Slices(ZEnsemble::new(rho, n, length, gamma)?))
    }

    pub fn mean(&self) -> Mat4 {
        match self {
            SpinState::Uniform(g) => g.mean(),
            SpinState::Slices(e) => e.mean(),
        }
    }

    /// Mean density operator, Hermitian-projected.
    pub fn mean_density(&self) -> DensityOperator {
        DensityOperator::project(Operator(self.mean()))
    }

    pub fn expectation(&self, obs: &Operator) -> f64 {
        match self {
            SpinState::Uniform(g) => raw_expectation(&g.mean(), obs),
            // Ordered summation of per-slice values keeps results independent
            // of the thread count.
            SpinState::Slices(e) => {
                let v = e.slice_expectations(obs);
                v.iter().sum::<f64>() / v.len() as f64
            }
        }
    }

    pub fn apply(&mut self, prop: &Propagator) {
        match self {
            SpinState::Uniform(g) => g.apply(prop),
            SpinState::Slices(e) => e.apply(prop),
        }
    }

    pub fn gradient(&mut self, area: f64) {
        match self {
            SpinState::Uniform(g) => g.gradient(area),
            SpinState::Slices(e) => e.gradient(area),
        }
    }

    /// Analytic attenuation for uniform states, Monte Carlo for slices.
    pub fn diffuse(&mut self, coefficient: f64, t: f64, seed: u64) -> Result<()> {
        match self {
            SpinState::Uniform(g) => {
                if !(coefficient >= 0.0 && t >= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "diffusion needs D >= 0 and t >= 0, got D = {coefficient}, t = {t}"
                    )));
                }
                g.diffuse(coefficient, t);
                Ok(())
            }
            SpinState::Slices(e) => e.diffuse(coefficient, t, seed),
        }
    }

    pub fn symmetrize(&mut self) -> f64 {
        match self {
            SpinState::Uniform(g) => g.symmetrize(),
            SpinState::Slices(e) => e.symmetrize(),
        }
    }
}
