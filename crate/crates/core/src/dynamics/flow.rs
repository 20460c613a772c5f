//! Hamiltonian flow between kicks.
//!
//! The cosine potential is a pendulum, so its flow is written in Jacobi
//! elliptic functions: rotating orbits through `F(pi x | 2A/E)` and
//! librating orbits through `sn(2 pi sqrt(A) t | E/2A)`. Orbits within a thin
//! band around the separatrix, and all tabulated potentials, use a fourth
//! order symplectic composition of velocity-Verlet steps with step halving.

use super::elliptic::{ellip_f, ellip_k, jacobi_am};
use super::state::PhaseState;
use crate::error::{Error, Result};
use crate::model::{Potential, TorusRate};
use crate::quadrature::{gauss_legendre, integrate_with, periodic_mean};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Integrator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Base step of the symplectic integrator.
    pub h: f64,
    /// Largest accepted energy change over one segment.
    pub energy_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            h: 1e-3,
            energy_tol: 1e-8,
        }
    }
}

/// Relative width of the band around the separatrix handled symplectically.
const SEPARATRIX_BAND: f64 = 1e-3;
const MAX_HALVINGS: u32 = 20;
/// Above this elliptic parameter the fixed Gauss rule is replaced by adaptive
/// quadrature.
const SMOOTH_PARAMETER: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowMethod {
    Static,
    Free,
    Rotating,
    Librating,
    Symplectic,
}

/// Optional per-segment quadratures.
#[derive(Clone, Copy, Default)]
pub struct SegmentOptions<'a> {
    /// Integrate the force along the path instead of reading off `Δk`.
    pub drift_quadrature: bool,
    /// Integrate this local rate along the path.
    pub rate: Option<&'a dyn TorusRate>,
}

/// One flow segment with its path functionals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: PhaseState,
    pub end: PhaseState,
    pub method: FlowMethod,
    /// `∫ -V'(X_r) dr` over the segment.
    pub drift: f64,
    /// Whether `drift` came from quadrature along the path (otherwise it is
    /// `end.k - start.k`, exact for the closed-form flows).
    pub drift_by_quadrature: bool,
    /// `∫ rate(X_r) dr` when requested.
    pub rate_integral: Option<f64>,
    /// Extremes of `K` over the segment.
    pub k_min: f64,
    pub k_max: f64,
    /// `H(end) - H(start)`
    pub energy_error: f64,
}

/// Advances `state` by `dt` under the Hamiltonian flow.
pub fn flow(state: &PhaseState, dt: f64, potential: &Potential, params: &FlowParams) -> Result<PhaseState> {
    flow_segment(state, dt, potential, params, &SegmentOptions::default()).map(|s| s.end)
}

pub fn flow_segment(
    state: &PhaseState,
    dt: f64,
    potential: &Potential,
    params: &FlowParams,
    opts: &SegmentOptions,
) -> Result<Segment> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::Precondition(format!("flow duration must be >= 0, got {dt}")));
    }
    let seg = if potential.is_zero() {
        free(state, dt, opts)
    } else if let Some(amp) = potential.cosine_amplitude() {
        let e = state.energy(potential);
        let vbar = 2.0 * amp;
        if e <= 1e-300 {
            static_segment(state, dt, opts)
        } else if (e - vbar).abs() <= SEPARATRIX_BAND * vbar {
            symplectic(state, dt, potential, params, opts)?
        } else if e > vbar {
            rotating(state, dt, amp, e, potential, opts)
        } else {
            librating(state, dt, amp, e, potential, opts)
        }
    } else {
        symplectic(state, dt, potential, params, opts)?
    };
    if !seg.end.is_finite() {
        return Err(Error::IntegrationFailure {
            halvings: 0,
            drift: f64::NAN,
            tolerance: params.energy_tol,
            t: state.t,
            k: state.k,
            dt,
        });
    }
    Ok(seg)
}

fn static_segment(state: &PhaseState, dt: f64, opts: &SegmentOptions) -> Segment {
    let end = PhaseState::from_parts(state.cell(), state.a(), state.k, state.t + dt);
    Segment {
        start: *state,
        end,
        method: FlowMethod::Static,
        drift: 0.0,
        drift_by_quadrature: opts.drift_quadrature,
        rate_integral: opts.rate.map(|r| r.local_rate(state.a()) * dt),
        k_min: state.k,
        k_max: state.k,
        energy_error: 0.0,
    }
}

fn free(state: &PhaseState, dt: f64, opts: &SegmentOptions) -> Segment {
    let k = state.k;
    let end = state.displaced(k * dt, k, state.t + dt);
    let rate_integral = opts.rate.map(|r| {
        let a0 = state.a();
        if k == 0.0 {
            r.local_rate(a0) * dt
        } else {
            periodic_time_integral(
                |s| r.local_rate((a0 + k * s).rem_euclid(1.0)),
                dt,
                1.0 / k.abs(),
                true,
                false,
            )
        }
    });
    Segment {
        start: *state,
        end,
        method: FlowMethod::Free,
        drift: 0.0,
        drift_by_quadrature: opts.drift_quadrature,
        rate_integral,
        k_min: k,
        k_max: k,
        energy_error: 0.0,
    }
}

fn gl24() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(24))
}

/// `∫_0^len g`; smooth integrands get 24-point Gauss rules on pieces no longer
/// than a quarter period.
fn partial_integral(g: &impl Fn(f64) -> f64, len: f64, smooth: bool, period: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if smooth {
        let (x, w) = gl24();
        let pieces = if period.is_finite() && period > 0.0 {
            (4.0 * len / period).ceil().max(1.0)
        } else {
            1.0
        };
        let width = len / pieces;
        let half = 0.5 * width;
        (0..pieces as usize)
            .map(|i| {
                let lo = i as f64 * width;
                x.iter().zip(w).map(|(x, w)| w * g(lo + half * (x + 1.0))).sum::<f64>() * half
            })
            .sum()
    } else {
        integrate_with(g, 0.0, len, 1e-12, 1e-13)
    }
}

/// `∫_0^dt g` for `g` periodic with `period`; whole periods are summed with a
/// refined trapezoid rule, or skipped when their integral vanishes.
fn periodic_time_integral(
    g: impl Fn(f64) -> f64,
    dt: f64,
    period: f64,
    smooth: bool,
    full_period_vanishes: bool,
) -> f64 {
    if !(period.is_finite() && period > 0.0) || dt < period {
        return partial_integral(&g, dt, smooth, period);
    }
    let n = (dt / period).floor();
    let rest = (dt - n * period).max(0.0);
    let full = if full_period_vanishes {
        0.0
    } else {
        period * periodic_mean(|s| g(period * s), 1e-13)
    };
    n * full + partial_integral(&g, rest, smooth, period)
}

/// Is there an integer `j` with `lo <= offset + j * period <= hi`?
fn hits(lo: f64, hi: f64, offset: f64, period: f64) -> bool {
    ((lo - offset) / period).ceil() <= (hi - offset) / period
}

fn rotating(
    state: &PhaseState,
    dt: f64,
    amp: f64,
    e: f64,
    potential: &Potential,
    opts: &SegmentOptions,
) -> Segment {
    let m = 2.0 * amp / e;
    let kk = ellip_k(m);
    let root = (2.0 * e).sqrt();
    let omega = PI * root;
    let s = if state.k >= 0.0 { 1.0 } else { -1.0 };
    let theta0 = PI * state.a();
    let u0 = ellip_f(theta0, m);
    let theta_at = |tau: f64| jacobi_am(u0 + s * omega * tau, m, kk);
    let theta1 = theta_at(dt);
    let sn = theta1.sin();
    let k1 = s * root * (1.0 - m * sn * sn).max(0.0).sqrt();
    let end = PhaseState::from_parts(state.cell(), theta1 / PI, k1, state.t + dt);

    let (lo, hi) = if theta0 <= theta1 { (theta0, theta1) } else { (theta1, theta0) };
    let (mut amin, mut amax) = (state.k.abs().min(k1.abs()), state.k.abs().max(k1.abs()));
    if hits(lo, hi, 0.0, PI) {
        amax = root;
    }
    if hits(lo, hi, 0.5 * PI, PI) {
        amin = root * (1.0 - m).sqrt();
    }
    let (k_min, k_max) = if s > 0.0 { (amin, amax) } else { (-amax, -amin) };

    let period = 2.0 * kk / omega;
    let smooth = m <= SMOOTH_PARAMETER;
    let a_at = |tau: f64| (theta_at(tau) / PI).rem_euclid(1.0);
    let (drift, by_quad) = if opts.drift_quadrature {
        let g = |tau: f64| potential.force(a_at(tau));
        (periodic_time_integral(g, dt, period, smooth, true), true)
    } else {
        (k1 - state.k, false)
    };
    let rate_integral = opts.rate.map(|r| {
        periodic_time_integral(|tau| r.local_rate(a_at(tau)), dt, period, smooth, false)
    });
    Segment {
        start: *state,
        end,
        method: FlowMethod::Rotating,
        drift,
        drift_by_quadrature: by_quad,
        rate_integral,
        k_min,
        k_max,
        energy_error: end.energy(potential) - e,
    }
}

fn librating(
    state: &PhaseState,
    dt: f64,
    amp: f64,
    e: f64,
    potential: &Potential,
    opts: &SegmentOptions,
) -> Segment {
    // sin(pi delta) = sqrt(p) sn(c t | p), p = E / 2A, c = 2 pi sqrt(A)
    let p = e / (2.0 * amp);
    let kk = ellip_k(p);
    let root = (2.0 * e).sqrt();
    let c = 2.0 * PI * amp.sqrt();
    let (centre, delta0) = if state.a() < 0.5 {
        (state.cell(), state.a())
    } else {
        (state.cell() + 1, state.a() - 1.0)
    };
    let sqp = p.sqrt();
    let phi0 = ((PI * delta0).sin() / sqp).clamp(-1.0, 1.0).asin();
    let tau0 = if state.k >= 0.0 {
        ellip_f(phi0, p)
    } else {
        ellip_f(PI - phi0, p)
    };
    let phase_at = |t: f64| jacobi_am(tau0 + c * t, p, kk);
    let delta_at = |phi: f64| (sqp * phi.sin()).clamp(-1.0, 1.0).asin() / PI;
    let phi1 = phase_at(dt);
    let k1 = root * phi1.cos();
    let end = PhaseState::from_parts(centre, delta_at(phi1), k1, state.t + dt);

    let tau1 = tau0 + c * dt;
    let mut k_min = state.k.min(k1);
    let mut k_max = state.k.max(k1);
    if hits(tau0, tau1, kk, 2.0 * kk) {
        k_min = k_min.min(0.0);
        k_max = k_max.max(0.0);
    }
    if hits(tau0, tau1, 0.0, 4.0 * kk) {
        k_max = root;
    }
    if hits(tau0, tau1, 2.0 * kk, 4.0 * kk) {
        k_min = -root;
    }

    let period = 4.0 * kk / c;
    let smooth = p <= SMOOTH_PARAMETER;
    let a_at = |t: f64| delta_at(phase_at(t)).rem_euclid(1.0);
    let (drift, by_quad) = if opts.drift_quadrature {
        let g = |t: f64| potential.force(a_at(t));
        (periodic_time_integral(g, dt, period, smooth, true), true)
    } else {
        (k1 - state.k, false)
    };
    let rate_integral = opts.rate.map(|r| {
        periodic_time_integral(|t| r.local_rate(a_at(t)), dt, period, smooth, false)
    });
    Segment {
        start: *state,
        end,
        method: FlowMethod::Librating,
        drift,
        drift_by_quadrature: by_quad,
        rate_integral,
        k_min,
        k_max,
        energy_error: end.energy(potential) - e,
    }
}

const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3;

fn symplectic(
    state: &PhaseState,
    dt: f64,
    potential: &Potential,
    params: &FlowParams,
    opts: &SegmentOptions,
) -> Result<Segment> {
    let c = [
        0.5 * YOSHIDA_W1,
        0.5 * (YOSHIDA_W0 + YOSHIDA_W1),
        0.5 * (YOSHIDA_W0 + YOSHIDA_W1),
        0.5 * YOSHIDA_W1,
    ];
    let d = [YOSHIDA_W1, YOSHIDA_W0, YOSHIDA_W1];
    let e0 = state.energy(potential);
    let mut h = params.h;
    let mut last_err = f64::NAN;
    for _ in 0..=MAX_HALVINGS {
        let n = (dt / h).ceil().max(1.0) as u64;
        let step = dt / n as f64;
        let mut x = state.a();
        let mut k = state.k;
        let mut drift = 0.0;
        let (mut k_min, mut k_max) = (k, k);
        let mut rate_acc = 0.0;
        let mut rate_prev = opts.rate.map(|r| r.local_rate(x)).unwrap_or(0.0);
        for _ in 0..n {
            for i in 0..3 {
                x += c[i] * step * k;
                let imp = d[i] * step * potential.force(x.rem_euclid(1.0));
                k += imp;
                drift += imp;
            }
            x += c[3] * step * k;
            k_min = k_min.min(k);
            k_max = k_max.max(k);
            if let Some(r) = opts.rate {
                let cur = r.local_rate(x.rem_euclid(1.0));
                rate_acc += 0.5 * step * (rate_prev + cur);
                rate_prev = cur;
            }
        }
        if dt == 0.0 {
            drift = 0.0;
        }
        let end = PhaseState::from_parts(state.cell(), x, k, state.t + dt);
        let err = end.energy(potential) - e0;
        if err.abs() <= params.energy_tol {
            return Ok(Segment {
                start: *state,
                end,
                method: FlowMethod::Symplectic,
                drift,
                drift_by_quadrature: true,
                rate_integral: opts.rate.map(|_| rate_acc),
                k_min,
                k_max,
                energy_error: err,
            });
        }
        last_err = err;
        h *= 0.5;
    }
    Err(Error::IntegrationFailure {
        halvings: MAX_HALVINGS,
        drift: last_err,
        tolerance: params.energy_tol,
        t: state.t,
        k: state.k,
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Potential, PotentialSpec};

    struct Unit;
    impl TorusRate for Unit {
        fn local_rate(&self, a: f64) -> f64 {
            1.0 + 0.3 * (2.0 * PI * a).cos()
        }
    }

    /// Classical RK4 on `x' = k, k' = -V'(x)` with a tiny step.
    fn rk4(v: &Potential, x: f64, k: f64, dt: f64, n: usize) -> (f64, f64, f64, f64) {
        let h = dt / n as f64;
        let (mut x, mut k) = (x, k);
        let (mut drift, mut rate) = (0.0, 0.0);
        let f = |x: f64, k: f64| (k, -v.derivative(x), -v.derivative(x), Unit.local_rate(x.rem_euclid(1.0)));
        for _ in 0..n {
            let a = f(x, k);
            let b = f(x + 0.5 * h * a.0, k + 0.5 * h * a.1);
            let c = f(x + 0.5 * h * b.0, k + 0.5 * h * b.1);
            let d = f(x + h * c.0, k + h * c.1);
            x += h / 6.0 * (a.0 + 2.0 * b.0 + 2.0 * c.0 + d.0);
            k += h / 6.0 * (a.1 + 2.0 * b.1 + 2.0 * c.1 + d.1);
            drift += h / 6.0 * (a.2 + 2.0 * b.2 + 2.0 * c.2 + d.2);
            rate += h / 6.0 * (a.3 + 2.0 * b.3 + 2.0 * c.3 + d.3);
        }
        (x, k, drift, rate)
    }

    fn check_against_rk4(x0: f64, k0: f64, dt: f64, expect: FlowMethod) {
        let v = Potential::cosine(0.5).unwrap();
        let s = PhaseState::new(x0, k0, 0.0);
        let opts = SegmentOptions {
            drift_quadrature: true,
            rate: Some(&Unit),
        };
        let seg = flow_segment(&s, dt, &v, &FlowParams::default(), &opts).unwrap();
        assert_eq!(seg.method, expect);
        let (x, k, drift, rate) = rk4(&v, x0, k0, dt, 200_000);
        assert!((seg.end.x_line() - x).abs() < 1e-9, "x {} vs {x}", seg.end.x_line());
        assert!((seg.end.k - k).abs() < 1e-9, "k {} vs {k}", seg.end.k);
        assert!((seg.drift - drift).abs() < 1e-9, "drift {} vs {drift}", seg.drift);
        assert!((seg.rate_integral.unwrap() - rate).abs() < 1e-9, "rate {:?} vs {rate}", seg.rate_integral);
        assert!(seg.energy_error.abs() < 1e-12);
    }

    #[test]
    fn rotating_orbits_match_reference() {
        check_against_rk4(0.25, 1.2, 0.7, FlowMethod::Rotating);
        check_against_rk4(0.9, -3.0, 2.3, FlowMethod::Rotating);
        check_against_rk4(0.0, 1.45, 5.0, FlowMethod::Rotating);
    }

    #[test]
    fn librating_orbits_match_reference() {
        check_against_rk4(0.1, 0.5, 3.1, FlowMethod::Librating);
        check_against_rk4(0.8, -0.9, 1.7, FlowMethod::Librating);
        check_against_rk4(0.45, 0.0, 4.0, FlowMethod::Librating);
    }

    #[test]
    fn separatrix_band_uses_symplectic_path() {
        // E = 1 exactly at x = 0.5, k = 0 is the unstable equilibrium
        let v = Potential::cosine(0.5).unwrap();
        let s = PhaseState::new(0.0, (2.0f64).sqrt() * 1.0002, 0.0);
        let seg = flow_segment(&s, 0.6, &v, &FlowParams::default(), &SegmentOptions::default()).unwrap();
        assert_eq!(seg.method, FlowMethod::Symplectic);
        let (x, k, _, _) = rk4(&v, 0.0, s.k, 0.6, 200_000);
        assert!((seg.end.x_line() - x).abs() < 1e-8);
        assert!((seg.end.k - k).abs() < 1e-8);
        assert!(seg.energy_error.abs() <= 1e-8);
    }

    #[test]
    fn tabulated_potential_flow() {
        let n = 128;
        let values: Vec<f64> = (0..n)
            .map(|j| 0.5 * (1.0 - (2.0 * PI * j as f64 / n as f64).cos()))
            .collect();
        let v = Potential::new(PotentialSpec::Tabulated {
            values,
            reflection_point: Some(0.0),
        })
        .unwrap();
        let s = PhaseState::new(0.3, 2.0, 0.0);
        let seg = flow_segment(&s, 3.0, &v, &FlowParams::default(), &SegmentOptions::default()).unwrap();
        assert!(seg.energy_error.abs() <= 1e-8);
        assert!((seg.drift - (seg.end.k - s.k)).abs() < 1e-12);
    }

    #[test]
    fn free_flight() {
        let v = Potential::zero();
        let s = PhaseState::new(0.3, 2.0, 0.0);
        let out = flow(&s, 0.5, &v, &FlowParams::default()).unwrap();
        assert!((out.x_line() - 1.3).abs() < 1e-15);
        assert!((out.a() - 0.3).abs() < 1e-15);
        assert_eq!(out.k, 2.0);
    }

    #[test]
    fn momentum_range_is_bracketed() {
        let v = Potential::cosine(0.5).unwrap();
        for &(x0, k0, dt) in &[(0.3, 2.0, 0.2), (0.1, 0.4, 0.9), (0.6, -5.0, 0.05), (0.2, 1.3, 7.0)] {
            let s = PhaseState::new(x0, k0, 0.0);
            let seg = flow_segment(&s, dt, &v, &FlowParams::default(), &SegmentOptions::default()).unwrap();
            for i in 0..=400 {
                let p = flow(&s, dt * i as f64 / 400.0, &v, &FlowParams::default()).unwrap();
                assert!(p.k >= seg.k_min - 1e-12 && p.k <= seg.k_max + 1e-12);
            }
        }
    }
}
