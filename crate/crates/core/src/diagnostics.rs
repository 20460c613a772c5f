//! Path diagnostics of a finished trajectory: the sign-weighted martingale,
//! occupation of high energy, and the square-root-energy decomposition.

use crate::dynamics::{flow, flow_segment, FlowParams, PhaseState, SegmentOptions, Trajectory};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Potential};
use serde::{Deserialize, Serialize};

/// Processes sampled at each alarm of the log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrack {
    pub times: Vec<f64>,
    /// `M'_t = sum w_n S(K_{t_n-})`, `S(k) = 1` for `k >= 0` and `-1` otherwise.
    pub m_prime: Vec<f64>,
    /// Running maximum of `-M'`, started at 0.
    pub a_prime: Vec<f64>,
    /// `[M]_t`
    pub qv: Vec<f64>,
    /// `<M>_t`
    pub pred_qv: Vec<f64>,
}

fn require_log(traj: &Trajectory) -> Result<()> {
    if traj.functionals.alarms > 0 && traj.events.is_empty() {
        return Err(Error::Precondition("trajectory was run without an event log".into()));
    }
    Ok(())
}

pub fn martingale_track(traj: &Trajectory) -> Result<MartingaleTrack> {
    require_log(traj)?;
    let n = traj.events.len();
    let mut tr = MartingaleTrack {
        times: Vec::with_capacity(n),
        m_prime: Vec::with_capacity(n),
        a_prime: Vec::with_capacity(n),
        qv: Vec::with_capacity(n),
        pred_qv: Vec::with_capacity(n),
    };
    let (mut m, mut a, mut q) = (0.0f64, 0.0f64, 0.0f64);
    for ev in &traj.events {
        let sign = if ev.k_pre >= 0.0 { 1.0 } else { -1.0 };
        m += ev.w * sign;
        q += ev.w * ev.w;
        a = a.max(-m);
        tr.times.push(ev.t);
        tr.m_prime.push(m);
        tr.a_prime.push(a);
        tr.qv.push(q);
        tr.pred_qv.push(ev.pred_qv);
    }
    Ok(tr)
}

/// Fraction of `[0, t]` spent at high energy or momentum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub eps: f64,
    /// Time fraction with `t^{-1/2} E^{1/2} >= eps`.
    pub energy_fraction: f64,
    /// Time fraction with `t^{-1/2} |K| >= eps`.
    pub momentum_fraction: f64,
}

/// Both occupation fractions. Energy is constant between kicks, so that
/// variant is exact; for `|K|` the threshold crossings inside each flight are
/// located by bisection to `h / 100`.
pub fn occupation_fraction(
    traj: &Trajectory,
    model: &ModelSpec,
    params: &FlowParams,
    eps: f64,
) -> Result<OccupationReport> {
    require_log(traj)?;
    let t = traj.horizon;
    if !(t > 0.0) {
        return Err(Error::Precondition("occupation needs a positive horizon".into()));
    }
    let pot = model.potential();
    let e_thr = eps * eps * t;
    let k_thr = eps * t.sqrt();
    let t0 = traj.initial.t;
    let t_end = t0 + t;
    let mut starts = Vec::with_capacity(traj.events.len() + 1);
    starts.push(traj.initial);
    starts.extend(traj.events.iter().map(|e| e.state_after()));
    let (mut e_time, mut k_time) = (0.0, 0.0);
    for (i, st) in starts.iter().enumerate() {
        let until = starts.get(i + 1).map(|s| s.t).unwrap_or(t_end);
        let dt = until - st.t;
        if dt <= 0.0 {
            continue;
        }
        if st.energy(pot) >= e_thr {
            e_time += dt;
        }
        k_time += momentum_time_above(st, dt, pot, params, k_thr)?;
    }
    Ok(OccupationReport {
        eps,
        energy_fraction: (e_time / t).clamp(0.0, 1.0),
        momentum_fraction: (k_time / t).clamp(0.0, 1.0),
    })
}

fn momentum_time_above(st: &PhaseState, dt: f64, pot: &Potential, params: &FlowParams, thr: f64) -> Result<f64> {
    if thr <= 0.0 {
        return Ok(dt);
    }
    let seg = flow_segment(st, dt, pot, params, &SegmentOptions::default())?;
    if seg.k_min >= thr || seg.k_max <= -thr {
        return Ok(dt);
    }
    if seg.k_min > -thr && seg.k_max < thr {
        return Ok(0.0);
    }
    // scan finely enough to see each oscillation, then bisect sign changes
    let kmax = seg.k_min.abs().max(seg.k_max.abs()).max(1e-9);
    let step = (0.05f64).min(1.0 / (8.0 * kmax)).min(dt);
    let n = (dt / step).ceil() as usize;
    let above = |tau: f64| -> Result<bool> { Ok(flow(st, tau, pot, params)?.k.abs() >= thr) };
    let tol = params.h / 100.0;
    let mut total = 0.0;
    let mut prev_t = 0.0;
    let mut prev_above = st.k.abs() >= thr;
    let mut last_switch = 0.0;
    for j in 1..=n {
        let cur_t = (j as f64 * step).min(dt);
        let cur_above = above(cur_t)?;
        if cur_above != prev_above {
            let (mut lo, mut hi) = (prev_t, cur_t);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if above(mid)? == prev_above {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let cross = 0.5 * (lo + hi);
            if prev_above {
                total += cross - last_switch;
            }
            last_switch = cross;
            prev_above = cur_above;
        }
        prev_t = cur_t;
    }
    if prev_above {
        total += dt - last_switch;
    }
    Ok(total)
}

/// Per-kick increments of the martingale and increasing parts of `E^{1/2}`,
/// with `E` measured from `min V`, plus the exact split of `E` itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub martingale: Vec<f64>,
    pub increasing: Vec<f64>,
    /// `sum w_n K_{t_n-}`
    pub energy_martingale: f64,
    /// `E_0 + sum w_n^2 / 2`
    pub energy_increasing: f64,
}

/// Increments for one kick of size `w` at momentum `k` and potential value `v`.
#[inline]
pub fn sqrt_energy_increments(k: f64, w: f64, v: f64) -> (f64, f64) {
    if w == 0.0 {
        return (0.0, 0.0);
    }
    let up = (0.5 * (k + w) * (k + w) + v).sqrt();
    let down = (0.5 * (k - w) * (k - w) + v).sqrt();
    let mid = (0.5 * k * k + v).sqrt();
    // the increasing part is exactly 0 when V = 0 and |w| <= |k|; clamp rounding
    (0.5 * (up - down), (0.5 * (up + down) - mid).max(0.0))
}

pub fn energy_decomposition(traj: &Trajectory, potential: &Potential) -> Result<EnergyDecomposition> {
    require_log(traj)?;
    let mut out = EnergyDecomposition {
        energy_increasing: traj.initial.energy(potential),
        ..Default::default()
    };
    let vmin = potential.vmin();
    for ev in &traj.events {
        // energy above the bottom of the well keeps the square root convex
        let (m, a) = sqrt_energy_increments(ev.k_pre, ev.w, potential.value(ev.a) - vmin);
        out.martingale.push(m);
        out.increasing.push(a);
        out.energy_martingale += ev.w * ev.k_pre;
        out.energy_increasing += 0.5 * ev.w * ev.w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, NoObserver, SimParams};

    #[test]
    fn single_kick_increments() {
        let (m, a) = sqrt_energy_increments(3.0, 1.0, 0.0);
        assert!((m - 0.5 * (8f64.sqrt() - 2f64.sqrt())).abs() < 1e-15);
        assert!((a - 0.5 * (8f64.sqrt() + 2f64.sqrt() - 2.0 * 4.5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn occupation_thresholds() {
        let m = ModelSpec::standard_cosine();
        let tr = simulate(&m, PhaseState::new(0.0, 0.0, 0.0), &SimParams::new(50.0, 2), &mut NoObserver).unwrap();
        let fp = FlowParams::default();
        let zero = occupation_fraction(&tr, &m, &fp, 0.0).unwrap();
        assert_eq!((zero.energy_fraction, zero.momentum_fraction), (1.0, 1.0));
        let big = occupation_fraction(&tr, &m, &fp, 1e6).unwrap();
        assert_eq!((big.energy_fraction, big.momentum_fraction), (0.0, 0.0));
        let mid = occupation_fraction(&tr, &m, &fp, 0.1).unwrap();
        assert!(mid.momentum_fraction <= 1.0 && mid.momentum_fraction >= 0.0);
    }
}
