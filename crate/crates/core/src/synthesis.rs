//! Minimum-time synthesis for the transfer `(1, 0) → (γ, 0)`.
//!
//! Two families of candidates exist: the one-switching `XY` path, and for
//! every `n ≥ 1` the spiral `Y(XY)ⁿ` path with `2n` switchings whose switching
//! points all share `|x2/x1| = √s`. The ratio `s` is the unique root of a
//! transcendental equation on `(u1, (u2 − 1)²/4]`. [`synthesize`] evaluates
//! every feasible candidate and keeps the fastest.
//!
//! Closed-form durations are evaluated in algebraically equivalent forms that
//! avoid `acos`/`asin` near `±1` (e.g. `atan2` with both the sine and cosine
//! known), which keeps the assembled schedule within round-off of the target.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{propagate_constant, BangControl, ControlBounds, ControlKind, PhaseState};

/// Tolerance for [`Segment`] chaining and end-point consistency.
pub const CHAIN_TOLERANCE: f64 = 1e-10;

/// A constant-control arc of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub control: BangControl,
    pub duration: f64,
    pub start: PhaseState,
    pub end: PhaseState,
}

/// Piecewise-constant control schedule starting from `(1, 0)`.
///
/// The boundary values `u(0) = 1` and `u(T) = 1/γ⁴` are instantaneous jumps
/// carried as metadata; they take no time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    pub boundary_u_initial: f64,
    pub boundary_u_final: f64,
    pub total_time: f64,
}

impl Schedule {
    /// Chains `propagate_constant` from `(1, 0)` through the given arcs.
    pub fn from_arcs(
        bounds: &ControlBounds,
        gamma: f64,
        arcs: impl IntoIterator<Item = (ControlKind, f64)>,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        let mut segments = Vec::new();
        let mut state = PhaseState::START;
        for (kind, duration) in arcs {
            if !(duration.is_finite() && duration >= 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "segment duration {duration}"
                )));
            }
            let control = bounds.control(kind);
            let end = propagate_constant(state, control.value, duration)?;
            segments.push(Segment {
                control,
                duration,
                start: state,
                end,
            });
            state = end;
        }
        let total_time = segments.iter().map(|s| s.duration).sum();
        Ok(Self {
            segments,
            boundary_u_initial: 1.0,
            boundary_u_final: gamma.powi(-4),
            total_time,
        })
    }

    /// Final state, `(1, 0)` for an empty schedule.
    pub fn end_state(&self) -> PhaseState {
        self.segments.last().map_or(PhaseState::START, |s| s.end)
    }

    /// States at which the control jumps between `−u1` and `u2`.
    pub fn switching_points(&self) -> Vec<PhaseState> {
        let n = self.segments.len().saturating_sub(1);
        self.segments[..n].iter().map(|s| s.end).collect()
    }

    pub fn kinds(&self) -> Vec<ControlKind> {
        self.segments.iter().map(|s| s.control.kind).collect()
    }

    /// Start times of each segment followed by the total time.
    pub fn switch_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        out.push(0.0);
        for s in &self.segments {
            t += s.duration;
            out.push(t);
        }
        out
    }

    /// Control active at time `t` (right-continuous, `1/γ⁴` past the end).
    pub fn control_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return self.boundary_u_initial;
        }
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.duration;
            if t < acc {
                return s.control.value;
            }
        }
        self.boundary_u_final
    }

    /// Number of `X(YX)…` turns if the kinds read `XY` (0) or `Y(XY)ⁿ` (n).
    pub fn turn_count(&self) -> Option<usize> {
        use ControlKind::{X, Y};
        let kinds = self.kinds();
        match kinds.as_slice() {
            [X, Y] => Some(0),
            [Y, rest @ ..] if !rest.is_empty() && rest.len() % 2 == 0 => rest
                .chunks(2)
                .all(|pair| pair == [X, Y])
                .then_some(rest.len() / 2),
            _ => None,
        }
    }
}

/// Durations of the one-switching `XY` strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroTurnTimes {
    pub total: f64,
    pub t_x: f64,
    pub t_y: f64,
    /// The `XY` junction `(κ, μ)`, `μ > 0`.
    pub switching: PhaseState,
}

/// Durations of an `n`-turn spiral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnTimes {
    pub n: usize,
    pub s: f64,
    pub total: f64,
    pub t_i: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeBreakdown {
    ZeroTurns {
        t_x0: f64,
        t_y0: f64,
    },
    Turns {
        t_i: f64,
        t_x: f64,
        t_y: f64,
        t_f: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub n: usize,
    pub time: f64,
}

/// First-integral constants of the arcs of an `n`-turn spiral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YConstants {
    /// `c₁ … c_{n+1}` of the `Y` arcs, `c = x2² + u2 x1² + 1/x1²`.
    pub c: Vec<f64>,
    /// Constants `x2² − u1 x1² + 1/x1²` of the `n` intermediate `X` arcs.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSolution {
    pub bounds: ControlBounds,
    pub gamma: f64,
    pub n_turns: usize,
    pub s: Option<f64>,
    pub time_breakdown: TimeBreakdown,
    pub switching_points: Vec<PhaseState>,
    pub schedule: Schedule,
    /// Every feasible `(n, Tₙ)`, including `n = 0`.
    pub candidates: Vec<Candidate>,
    pub y_constants: Option<YConstants>,
}

impl SynthesisSolution {
    pub fn total_time(&self) -> f64 {
        self.schedule.total_time
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// `T₀` and its `X`/`Y` split for the one-switching path.
pub fn time_zero_turns(bounds: &ControlBounds, gamma: f64) -> Result<ZeroTurnTimes> {
    check_gamma(gamma)?;
    let (u1, u2) = (bounds.u1(), bounds.u2());
    let g2 = gamma * gamma;
    let g2m1 = (gamma - 1.0) * (gamma + 1.0);

    let x_arg = (u1 * g2m1 * (u2 * g2 - 1.0) / (g2 * (u1 + u2) * (u1 + 1.0))).sqrt();
    let t_x = x_arg.asinh() / u1.sqrt();

    // asin(√a) with 1 − a = (u2γ² − 1)(u2γ² + u1) / ((u1 + u2)(u2γ⁴ − 1)).
    let sin = (u2 * g2m1 * (u1 * g2 + 1.0)).sqrt();
    let cos = ((u2 * g2 - 1.0) * (u2 * g2 + u1)).sqrt();
    let t_y = sin.atan2(cos) / u2.sqrt();

    let kappa2 = (u2 * g2 * g2 + 1.0 + g2 * (u1 - 1.0)) / (g2 * (u1 + u2));
    let mu2 = (1.0 - u1) + u1 * kappa2 - 1.0 / kappa2;
    Ok(ZeroTurnTimes {
        total: t_x + t_y,
        t_x,
        t_y,
        switching: PhaseState::new(kappa2.sqrt(), mu2.max(0.0).sqrt()),
    })
}

/// Duration of every intermediate `X` arc of a spiral with ratio `s > u1`.
pub fn t_x(bounds: &ControlBounds, s: f64) -> f64 {
    // acosh((s + u1)/(s − u1)) / (2√u1)
    let root = bounds.u1().sqrt();
    (root / s.sqrt()).atanh() / root
}

/// Duration of every intermediate `Y` arc of a spiral with ratio `s`.
pub fn t_y(bounds: &ControlBounds, s: f64) -> f64 {
    // (2π − acos((s − u2)/(s + u2))) / (2√u2)
    let root = bounds.u2().sqrt();
    (PI - (root / s.sqrt()).atan()) / root
}

/// Time from `(1, 0)` along `Y` to the first switching point.
pub fn t_initial(bounds: &ControlBounds, s: f64) -> f64 {
    let u2 = bounds.u2();
    let c1 = u2 + 1.0;
    let w1 = 2.0 * (bounds.s_plus() - s).max(0.0).sqrt();
    let cos = -(s * c1 + u2 * w1) / ((s + u2) * (u2 - 1.0));
    let sin = 4.0 * (s * u2).sqrt() / ((u2 - 1.0) * (c1 + w1));
    sin.atan2(cos) / (2.0 * u2.sqrt())
}

/// Time from the last switching point along `Y` to `(γ, 0)`.
pub fn t_final(bounds: &ControlBounds, gamma: f64, s: f64) -> f64 {
    let u2 = bounds.u2();
    let g2 = gamma * gamma;
    let c = u2 * g2 + 1.0 / g2;
    let spread = u2 * g2 - 1.0 / g2; // √(c² − 4u2)
    let w = (spread * spread - 4.0 * s).max(0.0).sqrt();
    let kappa2 = (c + w) / (2.0 * (s + u2));
    let cos = (-s * c + u2 * w) / ((s + u2) * spread);
    let sin = 2.0 * (s * u2).sqrt() * kappa2 / spread;
    sin.atan2(cos) / (2.0 * u2.sqrt())
}

/// Left side minus right side of the switching-ratio equation at `s`.
pub fn ratio_residual(bounds: &ControlBounds, gamma: f64, n: usize, s: f64) -> f64 {
    let (u1, u2) = (bounds.u1(), bounds.u2());
    let g2 = gamma * gamma;
    let c1 = u2 + 1.0;
    let cn = u2 * g2 + 1.0 / g2;
    let spread = u2 * g2 - 1.0 / g2;
    let w1 = 2.0 * (bounds.s_plus() - s).max(0.0).sqrt();
    let wn = (spread * spread - 4.0 * s).max(0.0).sqrt();
    (c1 + w1) / (cn + wn) - ((s - u1) / (s + u2)).powi(n as i32)
}

/// Root of the switching-ratio equation in `(u1, (u2 − 1)²/4]`, or `None`
/// when the `n`-turn strategy is infeasible.
///
/// The equation is solved in `w = √(c₁² − 4(s + u2))`, which removes the
/// square-root singularity at the upper end of the interval. The residual is
/// increasing in `w`, so a sign check at `w = 0` decides feasibility and
/// bisection runs until the bracket cannot shrink further.
pub fn solve_ratio(bounds: &ControlBounds, gamma: f64, n: usize) -> Result<Option<f64>> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::InvalidSchedule(
            "switching ratio needs n >= 1".into(),
        ));
    }
    let (u1, u2) = (bounds.u1(), bounds.u2());
    let s_plus = bounds.s_plus();
    if s_plus <= u1 {
        return Ok(None);
    }
    let g2 = gamma * gamma;
    let c1 = u2 + 1.0;
    let cn = u2 * g2 + 1.0 / g2;
    let spread = u2 * g2 - 1.0 / g2;
    let w_max = 2.0 * (s_plus - u1).sqrt();

    let s_of = |w: f64| s_plus - 0.25 * w * w;
    let residual = |w: f64| {
        let s = s_of(w);
        let wn = (spread * spread - 4.0 * s).max(0.0).sqrt();
        let ratio = 0.25 * (w_max - w) * (w_max + w) / (0.25 * (c1 - w) * (c1 + w));
        (c1 + w) / (cn + wn) - ratio.powi(n as i32)
    };

    let f0 = residual(0.0);
    if f0 > 0.0 {
        return Ok(None);
    }
    if f0 == 0.0 {
        return Ok(Some(s_plus));
    }
    let (mut lo, mut hi) = (0.0, w_max);
    let (mut flo, mut fhi) = (f0, residual(w_max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = residual(mid);
        if fm <= 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    let w = if -flo <= fhi { lo } else { hi };
    Ok(Some(s_of(w)))
}

/// `Tₙ = T_I + n·T_X + (n − 1)·T_Y + T_F`, or `None` when infeasible.
pub fn time_n_turns(bounds: &ControlBounds, gamma: f64, n: usize) -> Result<Option<TurnTimes>> {
    let Some(s) = solve_ratio(bounds, gamma, n)? else {
        return Ok(None);
    };
    Ok(Some(turn_times(bounds, gamma, n, s)))
}

fn turn_times(bounds: &ControlBounds, gamma: f64, n: usize, s: f64) -> TurnTimes {
    let (t_i, t_x, t_y, t_f) = (
        t_initial(bounds, s),
        t_x(bounds, s),
        t_y(bounds, s),
        t_final(bounds, gamma, s),
    );
    let total = t_i + n as f64 * t_x + (n as f64 - 1.0) * t_y + t_f;
    TurnTimes {
        n,
        s,
        total,
        t_i,
        t_x,
        t_y,
        t_f,
    }
}

/// Upper bound on the number of turns of a spiral that can beat `T₀`.
pub fn max_turns(bounds: &ControlBounds, gamma: f64) -> Result<usize> {
    let t0 = time_zero_turns(bounds, gamma)?.total;
    let s_plus = bounds.s_plus();
    if s_plus <= bounds.u1() {
        return Ok(0);
    }
    Ok((t0 / t_x(bounds, s_plus)).floor() as usize)
}

/// Constants of the `Y` arcs (by the ratio recursion, with the last one
/// pinned to its closed form) and of the intermediate `X` arcs.
pub fn y_constants(bounds: &ControlBounds, gamma: f64, n: usize, s: f64) -> YConstants {
    let (u1, u2) = (bounds.u1(), bounds.u2());
    let g2 = gamma * gamma;
    let r = (s - u1) / (s + u2);
    // A = c + √(c² − 4(s + u2)) shrinks by r from one Y arc to the next.
    let mut a = u2 + 1.0 + 2.0 * (bounds.s_plus() - s).max(0.0).sqrt();
    let mut c = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n);
    for i in 0..=n {
        c.push((a * a + 4.0 * (s + u2)) / (2.0 * a));
        if i < n {
            let kappa2 = 2.0 / a;
            x.push((s - u1) * kappa2 + 1.0 / kappa2);
        }
        a /= r;
    }
    c[0] = u2 + 1.0;
    c[n] = u2 * g2 + 1.0 / g2;
    YConstants { c, x }
}

/// Assembles the schedule for `n` turns (`s` required iff `n ≥ 1`).
pub fn build_schedule(
    bounds: &ControlBounds,
    gamma: f64,
    n: usize,
    s: Option<f64>,
) -> Result<Schedule> {
    use ControlKind::{X, Y};
    check_gamma(gamma)?;
    match (n, s) {
        (0, None) => {
            let z = time_zero_turns(bounds, gamma)?;
            Schedule::from_arcs(bounds, gamma, [(X, z.t_x), (Y, z.t_y)])
        }
        (n, Some(s)) if n >= 1 => {
            if !(s > bounds.u1() && s <= bounds.s_plus()) {
                return Err(Error::InvalidSchedule(format!(
                    "ratio {s} outside ({}, {}]",
                    bounds.u1(),
                    bounds.s_plus()
                )));
            }
            let tt = turn_times(bounds, gamma, n, s);
            let mut arcs = vec![(Y, tt.t_i)];
            for k in 0..n {
                arcs.push((X, tt.t_x));
                arcs.push((Y, if k + 1 == n { tt.t_f } else { tt.t_y }));
            }
            Schedule::from_arcs(bounds, gamma, arcs)
        }
        _ => Err(Error::InvalidSchedule(format!(
            "{n} turns with ratio {s:?}"
        ))),
    }
}

/// Global minimum-time solution over the zero-turn path and every feasible
/// spiral up to [`max_turns`]. Ties go to the smaller `n`.
pub fn synthesize(bounds: &ControlBounds, gamma: f64) -> Result<SynthesisSolution> {
    let zero = time_zero_turns(bounds, gamma)?;
    let n_max = max_turns(bounds, gamma)?;

    let mut candidates = vec![Candidate {
        n: 0,
        time: zero.total,
    }];
    let mut best: Option<TurnTimes> = None;
    let mut best_time = zero.total;
    for n in 1..=n_max {
        if let Some(tt) = time_n_turns(bounds, gamma, n)? {
            candidates.push(Candidate { n, time: tt.total });
            if tt.total < best_time {
                best_time = tt.total;
                best = Some(tt);
            }
        }
    }

    let (n_turns, s, time_breakdown, y) = match best {
        None => (
            0,
            None,
            TimeBreakdown::ZeroTurns {
                t_x0: zero.t_x,
                t_y0: zero.t_y,
            },
            None,
        ),
        Some(tt) => (
            tt.n,
            Some(tt.s),
            TimeBreakdown::Turns {
                t_i: tt.t_i,
                t_x: tt.t_x,
                t_y: tt.t_y,
                t_f: tt.t_f,
            },
            Some(y_constants(bounds, gamma, tt.n, tt.s)),
        ),
    };
    let schedule = build_schedule(bounds, gamma, n_turns, s)?;
    Ok(SynthesisSolution {
        bounds: *bounds,
        gamma,
        n_turns,
        s,
        time_breakdown,
        switching_points: schedule.switching_points(),
        schedule,
        candidates,
        y_constants: y,
    })
}
