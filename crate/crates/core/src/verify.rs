//! Independent numerical checks of a synthesized schedule.
//!
//! The schedule is re-integrated with fixed-step RK4 (step sizes adjusted so
//! every switching instant is hit exactly) and the trajectory is checked for
//! terminal error, first-integral drift, the Ermakov residual, the
//! switching-ratio law and the `XY` / `Y(XY)ⁿ` structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{first_integral, vector_field, ControlKind, PhaseState};
use crate::synthesis::{Schedule, SynthesisSolution};

/// Pass thresholds used by [`VerificationReport::passed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub endpoint: f64,
    pub drift: f64,
    pub ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            endpoint: 1e-6,
            drift: 1e-8,
            ratio: 1e-6,
        }
    }
}

/// Consecutive switching points closer than this in `x1` count as mirror images.
pub const MIRROR_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: PhaseState,
    /// Control active on the step that produced this sample.
    pub u: f64,
    /// Index of the schedule segment the sample belongs to.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `(|x1(T) − γ|, |x2(T)|)`.
    pub endpoint_error: [f64; 2],
    /// Largest first-integral drift over all segments.
    pub max_integral_drift: f64,
    /// Largest `|ẍ1 + u x1 − 1/x1³|` away from switching instants.
    pub max_ermakov_residual: f64,
    pub max_ratio_deviation: f64,
    pub ratio_check: bool,
    pub structure_check: bool,
    pub switchings: usize,
    pub n_turns: Option<usize>,
    pub thresholds: Thresholds,
}

impl VerificationReport {
    pub fn endpoint_ok(&self) -> bool {
        self.endpoint_error[0] <= self.thresholds.endpoint
            && self.endpoint_error[1] <= self.thresholds.endpoint
    }

    pub fn drift_ok(&self) -> bool {
        self.max_integral_drift <= self.thresholds.drift
    }

    pub fn passed(&self) -> bool {
        self.endpoint_ok() && self.drift_ok() && self.ratio_check && self.structure_check
    }
}

/// One classical RK4 step of the phase-plane system.
pub fn rk4_step(s: PhaseState, u: f64, h: f64) -> Result<PhaseState> {
    let shift = |base: PhaseState, k: (f64, f64), f: f64| {
        PhaseState::new(base.x1 + f * k.0, base.x2 + f * k.1)
    };
    let k1 = vector_field(s, u)?;
    let k2 = vector_field(shift(s, k1, 0.5 * h), u)?;
    let k3 = vector_field(shift(s, k2, 0.5 * h), u)?;
    let k4 = vector_field(shift(s, k3, h), u)?;
    Ok(PhaseState::new(
        s.x1 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s.x2 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    ))
}

/// RK4 re-integration of `schedule` from `(1, 0)`.
///
/// Each segment of duration `d` is covered by `⌈d/dt⌉` equal steps, so the
/// samples land exactly on every switching instant and on `T`. A sample on a
/// boundary is stored once and belongs to the segment it closes.
pub fn integrate_schedule(schedule: &Schedule, dt: f64) -> Result<Vec<TrajectorySample>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    let mut samples = vec![TrajectorySample {
        t: 0.0,
        state: PhaseState::START,
        u: schedule
            .segments
            .first()
            .map_or(schedule.boundary_u_initial, |s| s.control.value),
        segment: 0,
    }];
    let mut state = PhaseState::START;
    let mut t0 = 0.0;
    for (k, seg) in schedule.segments.iter().enumerate() {
        if seg.duration == 0.0 {
            continue;
        }
        let steps = (seg.duration / dt).ceil().max(1.0) as usize;
        let h = seg.duration / steps as f64;
        let u = seg.control.value;
        for i in 1..=steps {
            state = rk4_step(state, u, h)?;
            let t = if i == steps {
                t0 + seg.duration
            } else {
                t0 + i as f64 * h
            };
            samples.push(TrajectorySample {
                t,
                state,
                u,
                segment: k,
            });
        }
        t0 += seg.duration;
    }
    Ok(samples)
}

/// Index ranges `[first, last]` of the samples spanning each segment,
/// `first` being the boundary sample the segment starts from.
fn segment_spans(samples: &[TrajectorySample], n_segments: usize) -> Vec<Option<(usize, usize)>> {
    let mut spans = vec![None; n_segments];
    for (i, s) in samples.iter().enumerate().skip(1) {
        let entry = spans[s.segment].get_or_insert((i - 1, i));
        entry.1 = i;
    }
    spans
}

/// Maximum residual `|b̈ + ω²b − ω₀²/b³|` of the Ermakov equation along the
/// samples, in the time units set by `omega0` (`omega0 = 1` is rescaled
/// time).
///
/// `b = x1` and `ḃ = x2` are read from the samples and `b̈` is the
/// fourth-order central difference of `x2`. The stencil never straddles a
/// switching instant, which leaves a two-sample guard band on each side.
pub fn ermakov_residual(samples: &[TrajectorySample], schedule: &Schedule, omega0: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, span) in segment_spans(samples, schedule.segments.len())
        .into_iter()
        .enumerate()
    {
        let Some((first, last)) = span else { continue };
        let u = schedule.segments[k].control.value;
        let h = (samples[last].t - samples[first].t) / (last - first) as f64;
        for i in first + 2..=last.saturating_sub(2) {
            let v = |j: usize| samples[j].state.x2;
            let accel = (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / (12.0 * h);
            let b = samples[i].state.x1;
            let r = (accel + u * b - 1.0 / (b * b * b)).abs();
            worst = worst.max(r);
        }
    }
    // d/dt_phys = ω₀ d/dt_rescaled, ω² = u ω₀².
    worst * omega0 * omega0
}

fn max_integral_drift(samples: &[TrajectorySample], schedule: &Schedule) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, span) in segment_spans(samples, schedule.segments.len())
        .into_iter()
        .enumerate()
    {
        let Some((first, last)) = span else { continue };
        let u = schedule.segments[k].control.value;
        let Ok(i0) = first_integral(samples[first].state, u) else {
            return f64::INFINITY;
        };
        for s in &samples[first + 1..=last] {
            let i = first_integral(s.state, u).unwrap_or(f64::INFINITY);
            worst = worst.max((i - i0).abs());
        }
    }
    worst
}

/// States at the switching instants, read off the sampled trajectory.
fn sampled_switchings(samples: &[TrajectorySample], schedule: &Schedule) -> Vec<PhaseState> {
    let spans = segment_spans(samples, schedule.segments.len());
    let n = schedule.segments.len().saturating_sub(1);
    spans[..n]
        .iter()
        .zip(&schedule.segments[..n])
        .map(|(span, seg)| span.map_or(seg.end, |(_, last)| samples[last].state))
        .collect()
}

/// `XY` or `Y(XY)ⁿ`, with every `XY` junction in `x2 > 0` and every `YX`
/// junction in `x2 < 0`.
fn structure_ok(schedule: &Schedule, switchings: &[PhaseState]) -> bool {
    if schedule.turn_count().is_none() {
        return false;
    }
    schedule
        .segments
        .windows(2)
        .zip(switchings)
        .all(
            |(pair, p)| match (pair[0].control.kind, pair[1].control.kind) {
                (ControlKind::X, ControlKind::Y) => p.x2 > 0.0,
                (ControlKind::Y, ControlKind::X) => p.x2 < 0.0,
                _ => false,
            },
        )
}

/// Returns the largest deviation from the alternating ratio law and whether
/// the law (including the no-mirror-image condition) holds.
fn ratio_law(
    schedule: &Schedule,
    switchings: &[PhaseState],
    s: Option<f64>,
    tol: f64,
) -> (f64, bool) {
    match schedule.segments.first().map(|seg| seg.control.kind) {
        None => (0.0, false),
        Some(ControlKind::X) => (0.0, switchings.len() == 1 && switchings[0].x2 > 0.0),
        Some(ControlKind::Y) => {
            if switchings.is_empty() {
                return (0.0, false);
            }
            let root = s.map_or_else(|| switchings[0].ratio().abs(), f64::sqrt);
            let mut dev: f64 = 0.0;
            for (j, p) in switchings.iter().enumerate() {
                let expected = if j % 2 == 0 { -root } else { root };
                dev = dev.max((p.ratio() - expected).abs());
            }
            let separated = switchings
                .windows(2)
                .all(|w| (w[1].x1 - w[0].x1).abs() > MIRROR_SEPARATION);
            (dev, dev <= tol && separated)
        }
    }
}

/// Verifies an arbitrary schedule meant to steer `(1, 0)` to `(γ, 0)`.
///
/// `s` is the expected switching ratio; when absent it is taken from the
/// first sampled switching point.
pub fn check_schedule(
    schedule: &Schedule,
    gamma: f64,
    s: Option<f64>,
    dt: f64,
    thresholds: Thresholds,
) -> Result<VerificationReport> {
    let samples = integrate_schedule(schedule, dt)?;
    let end = samples.last().map_or(PhaseState::START, |s| s.state);
    let switchings = sampled_switchings(&samples, schedule);
    let (max_ratio_deviation, ratio_check) = ratio_law(schedule, &switchings, s, thresholds.ratio);
    Ok(VerificationReport {
        endpoint_error: [(end.x1 - gamma).abs(), end.x2.abs()],
        max_integral_drift: max_integral_drift(&samples, schedule),
        max_ermakov_residual: ermakov_residual(&samples, schedule, 1.0),
        max_ratio_deviation,
        ratio_check,
        structure_check: structure_ok(schedule, &switchings),
        switchings: switchings.len(),
        n_turns: schedule.turn_count(),
        thresholds,
    })
}

/// Full report for a synthesized solution at the default thresholds.
pub fn check_solution(solution: &SynthesisSolution, dt: f64) -> Result<VerificationReport> {
    let mut report = check_schedule(
        &solution.schedule,
        solution.gamma,
        solution.s,
        dt,
        Thresholds::default(),
    )?;
    report.structure_check &= report.n_turns == Some(solution.n_turns);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::ControlBounds;
    use crate::synthesis::{build_schedule, synthesize};

    fn bounds(u1: f64, u2: f64) -> ControlBounds {
        ControlBounds::new(u1, u2).unwrap()
    }

    #[test]
    fn zero_turn_schedule_reaches_target() {
        let sch = build_schedule(&bounds(1.0, 8.0), 2.0, 0, None).unwrap();
        let samples = integrate_schedule(&sch, 1e-4).unwrap();
        let last = samples.last().unwrap();
        assert_eq!(last.t, sch.total_time);
        assert!(last.state.max_abs_diff(&PhaseState::new(2.0, 0.0)) < 1e-6);
        // Oracle: closed-form chain.
        assert!(last.state.max_abs_diff(&sch.end_state()) < 1e-10);
        assert!(samples.windows(2).all(|w| w[1].t > w[0].t));
        for s in &samples[1..] {
            assert_eq!(s.u, sch.control_at(s.t - 1e-12));
        }
    }

    #[test]
    fn equilibrium_schedule_is_stationary() {
        let b = bounds(3.0, 1.0);
        let sch = Schedule::from_arcs(&b, 2.0, [(ControlKind::Y, 0.73)]).unwrap();
        let samples = integrate_schedule(&sch, 1e-3).unwrap();
        assert!(samples.iter().all(|s| s.state == PhaseState::START));
        assert_eq!(ermakov_residual(&samples, &sch, 1.0), 0.0);
    }

    #[test]
    fn empty_schedule_gives_single_sample() {
        let sch = Schedule::from_arcs(&bounds(1.0, 8.0), 2.0, []).unwrap();
        let samples = integrate_schedule(&sch, 1e-3).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].t, 0.0);
        assert_eq!(samples[0].state, PhaseState::START);
    }

    #[test]
    fn rejects_bad_step() {
        let sch = build_schedule(&bounds(1.0, 8.0), 2.0, 0, None).unwrap();
        assert!(integrate_schedule(&sch, 0.0).is_err());
        assert!(integrate_schedule(&sch, -1e-3).is_err());
    }

    #[test]
    fn residual_is_small_on_valid_trajectories() {
        for (u2, g) in [(8.0, 2.0), (8.0, 9.0), (20.0, 10.0)] {
            let sol = synthesize(&bounds(1.0, u2), g).unwrap();
            let samples = integrate_schedule(&sol.schedule, 1e-4).unwrap();
            let r = ermakov_residual(&samples, &sol.schedule, 1.0);
            assert!(r < 1e-8, "u2 = {u2}, γ = {g}: residual {r}");
            // Physical units scale by ω₀².
            let r2 = ermakov_residual(&samples, &sol.schedule, 3.0);
            assert!((r2 - 9.0 * r).abs() <= 1e-12 * r2.max(1e-300));
        }
    }

    #[test]
    fn residual_detects_corruption() {
        let sol = synthesize(&bounds(1.0, 8.0), 2.0).unwrap();
        let mut samples = integrate_schedule(&sol.schedule, 1e-4).unwrap();
        let mid = samples.len() / 3;
        samples[mid].state.x2 += 1e-3;
        // Oracle: the stencil centred next to the bad sample sees 8·δ/(12h).
        let r = ermakov_residual(&samples, &sol.schedule, 1.0);
        assert!(r > 1e-3);
        assert!(r > 0.5 * 8.0 * 1e-3 / (12.0 * 1e-4));
    }

    #[test]
    fn report_for_zero_turns_passes() {
        let sol = synthesize(&bounds(1.0, 8.0), 2.0).unwrap();
        let rep = check_solution(&sol, 1e-4).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.switchings, 1);
        assert!(rep.max_ermakov_residual < 1e-8);
    }

    #[test]
    fn report_for_two_turns_counts_four_switchings() {
        let sol = synthesize(&bounds(1.0, 50.0), 14.0).unwrap();
        let rep = check_solution(&sol, 1e-4).unwrap();
        assert_eq!(rep.switchings, 4);
        assert_eq!(rep.switchings % 2, 0);
        assert_eq!(rep.n_turns, Some(2));
        assert!(rep.structure_check);
        // The inner dive reaches x1 ≈ 0.038, a time scale near 5e-5.
        let fine = check_solution(&sol, 2e-6).unwrap();
        assert!(fine.passed(), "{fine:?}");
    }

    #[test]
    fn spurious_trailing_segment_fails_structure() {
        let mut sol = synthesize(&bounds(1.0, 8.0), 9.0).unwrap();
        let b = sol.bounds;
        let mut arcs: Vec<_> = sol
            .schedule
            .segments
            .iter()
            .map(|s| (s.control.kind, s.duration))
            .collect();
        arcs.push((ControlKind::X, 0.05));
        sol.schedule = Schedule::from_arcs(&b, sol.gamma, arcs).unwrap();
        let rep = check_solution(&sol, 1e-4).unwrap();
        assert!(!rep.structure_check);
        assert!(!rep.passed());
    }

    #[test]
    fn coarse_step_reports_larger_error() {
        let sol = synthesize(&bounds(1.0, 8.0), 2.0).unwrap();
        let fine = check_solution(&sol, 1e-4).unwrap();
        let coarse = check_solution(&sol, 1e-1).unwrap();
        assert!(
            coarse.endpoint_error[0] + coarse.endpoint_error[1]
                > fine.endpoint_error[0] + fine.endpoint_error[1]
        );
        assert!(coarse.structure_check);
    }

    #[test]
    fn ratio_inferred_without_known_s() {
        let sol = synthesize(&bounds(1.0, 20.0), 10.0).unwrap();
        let rep = check_schedule(&sol.schedule, 10.0, None, 1e-4, Thresholds::default()).unwrap();
        assert!(rep.ratio_check && rep.max_ratio_deviation < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sol = synthesize(&bounds(1.0, 8.0), 9.0).unwrap();
        let exact = sol.schedule.end_state();
        let err = |dt: f64| {
            let s = integrate_schedule(&sol.schedule, dt).unwrap();
            s.last().unwrap().state.max_abs_diff(&exact)
        };
        let (e1, e2) = (err(1e-2), err(1e-3));
        let slope = (e1 / e2).log10();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}: {e1:e} {e2:e}");
    }
}
