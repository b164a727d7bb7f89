//! Split-operator propagation of the oscillator wavefunction through a
//! bang-bang schedule, in units `ħ = m = ω₀ = 1`.
//!
//! The Hamiltonian is `H = p²/2 + u(t)·x²/2` with the schedule's
//! piecewise-constant `u`. Frictionless cooling means the populations of the
//! instantaneous eigenstates are the same at `t = 0` (frequency 1) and at
//! `t = T` (frequency `1/γ²`).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::Schedule;

/// Largest admissible eigenstate amplitude at the grid edges.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Probability allowed in the edge bands before propagation aborts.
pub const LEAK_TOLERANCE: f64 = 1e-8;

/// Each edge band covers this fraction of the grid points.
const EDGE_FRACTION: usize = 32;

/// Uniform periodic grid on `[−L/2, L/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub n_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

impl SpatialGrid {
    /// `n_points` must be a power of two (at least 64) and `span > 0`.
    pub fn new(n_points: usize, span: f64) -> Result<Self> {
        if n_points < 64 || !n_points.is_power_of_two() {
            return Err(Error::GridSpan(format!(
                "n_points must be a power of two >= 64, got {n_points}"
            )));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::GridSpan(format!(
                "span must be positive, got {span}"
            )));
        }
        Ok(Self {
            n_points,
            x_min: -0.5 * span,
            x_max: 0.5 * span,
            dx: span / n_points as f64,
        })
    }

    /// 4096 points on `[−8γ, 8γ)`.
    pub fn for_gamma(gamma: f64) -> Result<Self> {
        Self::new(4096, 16.0 * gamma)
    }

    pub fn span(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.x(i))
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / self.span();
        (0..n)
            .map(|j| if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * dk)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub grid: SpatialGrid,
    pub amplitudes: Vec<Complex64>,
    pub t: f64,
}

impl WaveState {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx
    }

    pub fn expectation_x2(&self) -> f64 {
        self.grid
            .positions()
            .zip(&self.amplitudes)
            .map(|(x, a)| x * x * a.norm_sqr())
            .sum::<f64>()
            * self.grid.dx
    }

    /// Probability carried by the outer `1/32` of the points on each side.
    pub fn edge_probability(&self) -> f64 {
        let n = self.amplitudes.len();
        let band = (n / EDGE_FRACTION).max(1);
        let sum = |s: &[Complex64]| s.iter().map(|a| a.norm_sqr()).sum::<f64>();
        (sum(&self.amplitudes[..band]) + sum(&self.amplitudes[n - band..])) * self.grid.dx
    }

    fn normalize(&mut self) {
        let scale = self.norm().sqrt().recip();
        self.amplitudes.iter_mut().for_each(|a| *a *= scale);
    }
}

/// The `n`-th eigenstate of the oscillator with frequency `omega`, normalized
/// on the grid.
pub fn eigenstate(n: usize, omega: f64, grid: &SpatialGrid) -> Result<WaveState> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::InvalidStep(format!(
            "omega must be positive, got {omega}"
        )));
    }
    let scale = omega.sqrt();
    let prefactor = omega.powf(0.25) * PI.powf(-0.25);
    let value = |x: f64| {
        let xi = scale * x;
        // Normalized Hermite functions, stable three-term recursion.
        let mut prev = 0.0;
        let mut cur = prefactor * (-0.5 * xi * xi).exp();
        for k in 0..n {
            let next = (2.0 / (k + 1) as f64).sqrt() * xi * cur
                - (k as f64 / (k + 1) as f64).sqrt() * prev;
            prev = cur;
            cur = next;
        }
        cur
    };
    let tail = value(grid.x_min).abs().max(value(grid.x_max).abs());
    if tail >= TAIL_TOLERANCE {
        return Err(Error::GridSpan(format!(
            "eigenstate {n} at omega = {omega} has edge amplitude {tail:.3e} on span {}",
            grid.span()
        )));
    }
    let mut psi = WaveState {
        grid: *grid,
        amplitudes: grid
            .positions()
            .map(|x| Complex64::new(value(x), 0.0))
            .collect(),
        t: 0.0,
    };
    psi.normalize();
    Ok(psi)
}

pub fn ground_state(omega: f64, grid: &SpatialGrid) -> Result<WaveState> {
    eigenstate(0, omega, grid)
}

/// Exact evolution of the initial ground state for a trap width `b` and
/// velocity `bdot`, up to a global phase.
pub fn scaling_solution(b: f64, bdot: f64, grid: &SpatialGrid) -> Result<WaveState> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::DomainViolation { x1: b });
    }
    let amp = b.powf(-0.5) * PI.powf(-0.25);
    let amplitudes = grid
        .positions()
        .map(|x| {
            let x2 = x * x;
            Complex64::from_polar(amp * (-x2 / (2.0 * b * b)).exp(), bdot * x2 / (2.0 * b))
        })
        .collect();
    Ok(WaveState {
        grid: *grid,
        amplitudes,
        t: 0.0,
    })
}

fn overlap(a: &WaveState, b: &WaveState) -> Result<Complex64> {
    if a.grid != b.grid || a.amplitudes.len() != b.amplitudes.len() {
        return Err(Error::GridMismatch);
    }
    let sum: Complex64 = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(p, q)| p.conj() * q)
        .sum();
    Ok(sum * a.grid.dx)
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &WaveState, b: &WaveState) -> Result<f64> {
    Ok(overlap(a, b)?.norm_sqr())
}

/// `min_φ ‖a − e^{iφ} b‖`, evaluated pointwise so that it stays accurate for
/// nearly equal states.
pub fn phase_aligned_distance(a: &WaveState, b: &WaveState) -> Result<f64> {
    let ov = overlap(b, a)?;
    let phase = if ov.norm() > 0.0 {
        ov / ov.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let sum: f64 = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(p, q)| (p - phase * q).norm_sqr())
        .sum();
    Ok((sum * a.grid.dx).sqrt())
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::default(); len],
        }
    }

    fn kinetic(&mut self, psi: &mut [Complex64], factors: &[Complex64]) {
        self.forward.process_with_scratch(psi, &mut self.scratch);
        psi.iter_mut().zip(factors).for_each(|(a, f)| *a *= f);
        self.inverse.process_with_scratch(psi, &mut self.scratch);
    }
}

/// Strang-split propagation (kinetic half step, potential step, kinetic half
/// step) through every segment of `schedule`.
pub fn split_step_propagate(psi: WaveState, schedule: &Schedule, dt: f64) -> Result<WaveState> {
    propagate_observed(psi, schedule, dt, |_| {})
}

/// As [`split_step_propagate`], calling `observer` after every step.
///
/// Each segment of duration `d` takes `⌈d/dt⌉` equal steps, so the switching
/// instants are hit exactly. Fails with [`Error::BoundaryLeak`] as soon as the
/// edge probability exceeds [`LEAK_TOLERANCE`].
pub fn propagate_observed(
    mut psi: WaveState,
    schedule: &Schedule,
    dt: f64,
    mut observer: impl FnMut(&WaveState),
) -> Result<WaveState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    let grid = psi.grid;
    let n = grid.n_points;
    let mut plans = Plans::new(n);
    let k2: Vec<f64> = grid.wavenumbers().iter().map(|k| k * k).collect();
    let x2: Vec<f64> = grid.positions().map(|x| x * x).collect();
    let t_start = psi.t;
    let mut elapsed = 0.0;
    for seg in &schedule.segments {
        if seg.duration == 0.0 {
            continue;
        }
        let steps = (seg.duration / dt).ceil().max(1.0) as usize;
        let h = seg.duration / steps as f64;
        let u = seg.control.value;
        // The inverse FFT is unnormalized; fold 1/n into the kinetic factor.
        let kin: Vec<Complex64> = k2
            .iter()
            .map(|k| Complex64::from_polar(1.0 / n as f64, -0.25 * k * h))
            .collect();
        let pot: Vec<Complex64> = x2
            .iter()
            .map(|x| Complex64::from_polar(1.0, -0.5 * u * x * h))
            .collect();
        for i in 1..=steps {
            plans.kinetic(&mut psi.amplitudes, &kin);
            psi.amplitudes
                .iter_mut()
                .zip(&pot)
                .for_each(|(a, p)| *a *= p);
            plans.kinetic(&mut psi.amplitudes, &kin);
            psi.t = t_start
                + if i == steps {
                    elapsed + seg.duration
                } else {
                    elapsed + i as f64 * h
                };
            let leak = psi.edge_probability();
            if leak > LEAK_TOLERANCE {
                return Err(Error::BoundaryLeak {
                    probability: leak,
                    t: psi.t,
                });
            }
            observer(&psi);
        }
        elapsed += seg.duration;
    }
    Ok(psi)
}
