//! Low-momentum incursions. An incursion starts at the first kick after the
//! previous exit that lands inside `|K| < lo` and ends at the first later time
//! with `|K| > hi`, where `lo = t^{1/4}` and `hi = 2 t^{1/4}` by default.
//!
//! `K` is observed on the event log: the initial state and the left and right
//! limits at every alarm. A crossing of `hi` by the flow alone is therefore
//! registered at the next alarm.

use crate::dynamics::{KickEvent, Trajectory};
use crate::error::{Error, Result};
use crate::stats;
use serde::{Deserialize, Serialize};

/// Threshold exponents; `lo = t^{lower}` and `hi = 2 t^{upper}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lower: 0.25,
            upper: 0.25,
        }
    }
}

impl Thresholds {
    pub fn levels(&self, t: f64) -> (f64, f64) {
        (t.powf(self.lower), 2.0 * t.powf(self.upper))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncursionEvent {
    pub j: usize,
    pub sigma: f64,
    pub varsigma: f64,
    pub theta: f64,
    pub s1: i8,
    pub s2: i8,
    /// `t^{-1/4}` times the integral of `V'` over `(sigma, varsigma)`, read off
    /// the log as `K_sigma + kicks strictly between - K_{varsigma-}`.
    pub y: f64,
    /// Event-log indices of `sigma`, `varsigma` and `theta`.
    pub sigma_index: usize,
    pub varsigma_index: usize,
    pub theta_index: usize,
    /// No kick qualified for `varsigma`, so it was set to `theta`.
    pub varsigma_fallback: bool,
}

/// Incursions of one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub complete: Vec<IncursionEvent>,
    /// Start signs of all incursions begun before the horizon, complete or not.
    pub started_signs: Vec<i8>,
    /// An incursion was still open at the horizon.
    pub truncated: bool,
    /// Time of `theta_0`, if reached.
    pub theta0: Option<f64>,
}

impl Detection {
    pub fn started(&self) -> usize {
        self.started_signs.len()
    }
}

fn sign(k: f64) -> i8 {
    if k >= 0.0 {
        1
    } else {
        -1
    }
}

/// Detects incursions on the event log of `traj` using horizon `t`.
pub fn detect(traj: &Trajectory, t: f64, th: &Thresholds) -> Result<Detection> {
    if traj.functionals.alarms > 0 && traj.events.is_empty() {
        return Err(Error::Precondition("incursion detection needs the event log".into()));
    }
    Ok(detect_events(traj.initial.k, traj.initial.t, &traj.events, t, th))
}

pub fn detect_events(k0: f64, t0: f64, events: &[KickEvent], t: f64, th: &Thresholds) -> Detection {
    let (lo, hi) = th.levels(t);
    let scale = t.powf(-0.25);
    let mut out = Detection::default();
    // theta_0
    let mut pos = if k0.abs() >= lo {
        out.theta0 = Some(t0);
        0
    } else {
        match events
            .iter()
            .position(|e| e.k_pre.abs() >= lo || e.k_post.abs() >= lo)
        {
            Some(i) => {
                out.theta0 = Some(events[i].t);
                // reached by the flow before the alarm: its kick may start an incursion
                if events[i].k_pre.abs() >= lo {
                    i
                } else {
                    i + 1
                }
            }
            None => return out,
        }
    };
    loop {
        // sigma: first fired kick landing inside |K| < lo
        let Some(si) = events[pos..]
            .iter()
            .position(|e| e.fired && e.k_post.abs() < lo)
            .map(|i| pos + i)
        else {
            break;
        };
        out.started_signs.push(sign(events[si].k_post));
        // theta: first later sample above hi
        let Some(ti) = events[si + 1..]
            .iter()
            .position(|e| e.k_pre.abs() > hi || e.k_post.abs() > hi)
            .map(|i| si + 1 + i)
        else {
            out.truncated = true;
            break;
        };
        let theta_ev = &events[ti];
        let theta_is_jump = theta_ev.k_pre.abs() <= hi;
        // varsigma: earliest kick after which every sample up to theta exceeds lo
        let mut above = true;
        let mut vi = None;
        for e in (si + 1..=ti).rev() {
            let ev = &events[e];
            let own_post_ok = e == ti || ev.k_post.abs() > lo;
            if ev.fired && above && own_post_ok && (e < ti || theta_is_jump) {
                vi = Some(e);
            }
            if e < ti {
                above &= ev.k_post.abs() > lo;
            }
            above &= ev.k_pre.abs() > lo;
            if !above {
                break;
            }
        }
        let (vidx, fallback) = match vi {
            Some(v) => (v, false),
            None => (ti, true),
        };
        let v_ev = &events[vidx];
        let k_sigma = events[si].k_post;
        // sum of the flow increments between consecutive alarms, exactly zero
        // when the force vanishes
        let flow_change: f64 = (si + 1..=vidx).map(|e| events[e].k_pre - events[e - 1].k_post).sum();
        let s2_k = if fallback {
            if theta_is_jump {
                theta_ev.k_post
            } else {
                theta_ev.k_pre
            }
        } else {
            v_ev.k_post
        };
        out.complete.push(IncursionEvent {
            j: out.complete.len() + 1,
            sigma: events[si].t,
            varsigma: v_ev.t,
            theta: theta_ev.t,
            s1: sign(k_sigma),
            s2: sign(s2_k),
            y: -scale * flow_change,
            sigma_index: si,
            varsigma_index: vidx,
            theta_index: ti,
            varsigma_fallback: fallback,
        });
        // a flow exit leaves the kick at `theta` free to start the next incursion
        pos = if theta_is_jump { ti + 1 } else { ti };
    }
    out
}

/// Net count of `+ -> -` minus `- -> +` transitions along the sign sequence
/// `s1_1, s2_1, s1_2, s2_2, ...`; always in `{-1, 0, 1}`.
pub fn crossing_parity(incursions: &[IncursionEvent]) -> i64 {
    let seq: Vec<i8> = incursions.iter().flat_map(|i| [i.s1, i.s2]).collect();
    seq.windows(2)
        .map(|w| match (w[0], w[1]) {
            (1, -1) => 1,
            (-1, 1) => -1,
            _ => 0,
        })
        .sum()
}

/// Mean and standard error of a group of `Y` values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

impl GroupMean {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return GroupMean::default();
        }
        let mean = stats::mean(values);
        let se = if n > 1 {
            (stats::variance(values) / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        GroupMean { n, mean, se }
    }
}

/// Pooled statistics over many trajectories at one horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IncursionStats {
    pub t: f64,
    pub trajectories: usize,
    /// Total incursions started.
    pub n_y: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub mean_count: f64,
    pub mean_count_se: f64,
    /// Exit counts indexed `[s1 == -1][s2 == -1]`.
    pub exits: [[usize; 2]; 2],
    /// `rho[s1][s2]` among complete incursions.
    pub rho: [[f64; 2]; 2],
    /// `c[s1][s2]`
    pub c: [[GroupMean; 2]; 2],
    pub mean_duration: f64,
    pub rms_y: f64,
    pub fallbacks: usize,
}

fn slot(s: i8) -> usize {
    if s > 0 {
        0
    } else {
        1
    }
}

impl IncursionStats {
    pub fn aggregate(t: f64, per_trajectory: &[Detection]) -> Self {
        let mut st = IncursionStats {
            t,
            trajectories: per_trajectory.len(),
            ..Default::default()
        };
        let counts: Vec<f64> = per_trajectory.iter().map(|d| d.started() as f64).collect();
        st.n_y = per_trajectory.iter().map(|d| d.started()).sum();
        for d in per_trajectory {
            for s in &d.started_signs {
                if *s > 0 {
                    st.n_plus += 1;
                } else {
                    st.n_minus += 1;
                }
            }
        }
        if !counts.is_empty() {
            st.mean_count = stats::mean(&counts);
            st.mean_count_se = if counts.len() > 1 {
                (stats::variance(&counts) / counts.len() as f64).sqrt()
            } else {
                0.0
            };
        }
        let mut ys: [[Vec<f64>; 2]; 2] = Default::default();
        let mut dur = Vec::new();
        let mut y2 = Vec::new();
        for inc in per_trajectory.iter().flat_map(|d| d.complete.iter()) {
            let (a, b) = (slot(inc.s1), slot(inc.s2));
            st.exits[a][b] += 1;
            ys[a][b].push(inc.y);
            dur.push(inc.theta - inc.sigma);
            y2.push(inc.y * inc.y);
            st.fallbacks += inc.varsigma_fallback as usize;
        }
        for a in 0..2 {
            let row = st.exits[a][0] + st.exits[a][1];
            for b in 0..2 {
                st.rho[a][b] = if row > 0 {
                    st.exits[a][b] as f64 / row as f64
                } else {
                    f64::NAN
                };
                st.c[a][b] = GroupMean::of(&ys[a][b]);
            }
        }
        if !dur.is_empty() {
            st.mean_duration = stats::mean(&dur);
            st.rms_y = stats::mean(&y2).sqrt();
        }
        st
    }

    fn complete_by_start(&self, s: usize) -> usize {
        self.exits[s][0] + self.exits[s][1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub t: f64,
    pub mean_count: f64,
    pub se: f64,
    /// `mean_count / t^{1/4}`
    pub normalized: f64,
    pub bound: f64,
    pub mean_duration: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountScaling {
    pub rows: Vec<CountRow>,
    pub count_slope: f64,
    pub duration_slope: f64,
    pub passed: bool,
}

/// Checks `E[N_Y(t)] / t^{1/4} <= sqrt(r2) (1 + slack)` at every horizon and
/// fits log-log slopes of the count and the mean duration.
pub fn count_scaling(per_t: &[IncursionStats], r2: f64, slack: f64) -> Result<CountScaling> {
    if per_t.len() < 3 {
        return Err(Error::Precondition("count scaling needs at least 3 horizons".into()));
    }
    let bound = r2.sqrt() * (1.0 + slack);
    let rows: Vec<CountRow> = per_t
        .iter()
        .map(|s| {
            let norm = s.mean_count / s.t.powf(0.25);
            CountRow {
                t: s.t,
                mean_count: s.mean_count,
                se: s.mean_count_se,
                normalized: norm,
                bound,
                mean_duration: s.mean_duration,
                passed: norm <= bound,
            }
        })
        .collect();
    let log = |rows: &[CountRow], f: fn(&CountRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| f(r) > 0.0)
            .map(|r| (r.t.ln(), f(r).ln()))
            .collect();
        if pts.len() >= 2 {
            stats::ols_slope(&pts)
        } else {
            f64::NAN
        }
    };
    Ok(CountScaling {
        passed: rows.iter().all(|r| r.passed),
        count_slope: log(&rows, |r| r.mean_count),
        duration_slope: log(&rows, |r| r.mean_duration),
        rows,
    })
}

/// Minimum number of complete incursions per start sign for a verdict.
pub const MIN_PER_SIGN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub verdict: Verdict,
    pub rho_plus_minus: f64,
    pub rho_minus_plus: f64,
    pub difference: f64,
    pub se: f64,
}

/// `|rho_{+,-} - rho_{-,+}| <= 3` pooled standard errors.
pub fn exit_symmetry(st: &IncursionStats) -> SymmetryReport {
    let (np, nm) = (st.complete_by_start(0), st.complete_by_start(1));
    let (rpm, rmp) = (st.rho[0][1], st.rho[1][0]);
    if np < MIN_PER_SIGN || nm < MIN_PER_SIGN {
        return SymmetryReport {
            verdict: Verdict::Inconclusive,
            rho_plus_minus: rpm,
            rho_minus_plus: rmp,
            difference: f64::NAN,
            se: f64::NAN,
        };
    }
    let pooled = (st.exits[0][1] + st.exits[1][0]) as f64 / (np + nm) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / np as f64 + 1.0 / nm as f64)).sqrt();
    let diff = rpm - rmp;
    SymmetryReport {
        verdict: if diff.abs() <= 3.0 * se { Verdict::Pass } else { Verdict::Fail },
        rho_plus_minus: rpm,
        rho_minus_plus: rmp,
        difference: diff,
        se,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntisymmetryReport {
    pub verdict: Verdict,
    pub c_pp: GroupMean,
    pub c_mm: GroupMean,
    /// `c_{+,-} + c_{-,+}` with combined standard error.
    pub cross_sum: f64,
    pub cross_se: f64,
    pub rms_y: f64,
    pub rms_bound_ok: bool,
}

/// `c_{+,+}`, `c_{-,-}` and `c_{+,-} + c_{-,+}` within 3 SE of zero, and
/// `E[Y^2]^{1/2} < 5`.
pub fn drift_antisymmetry(st: &IncursionStats) -> AntisymmetryReport {
    let (cpp, cmm, cpm, cmp) = (st.c[0][0], st.c[1][1], st.c[0][1], st.c[1][0]);
    let cross_sum = cpm.mean + cmp.mean;
    let cross_se = (cpm.se.powi(2) + cmp.se.powi(2)).sqrt();
    let rms_ok = st.rms_y < 5.0;
    let enough = st.complete_by_start(0) >= MIN_PER_SIGN
        && st.complete_by_start(1) >= MIN_PER_SIGN
        && [cpp, cmm, cpm, cmp].iter().all(|g| g.n >= 2);
    // all-zero groups (no force) have zero spread and are trivially centred
    let within = |m: f64, se: f64| m == 0.0 || m.abs() <= 3.0 * se;
    let verdict = if !enough {
        Verdict::Inconclusive
    } else if within(cpp.mean, cpp.se) && within(cmm.mean, cmm.se) && within(cross_sum, cross_se) && rms_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    AntisymmetryReport {
        verdict,
        c_pp: cpp,
        c_mm: cmm,
        cross_sum,
        cross_se,
        rms_y: st.rms_y,
        rms_bound_ok: rms_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, k_pre: f64, w: f64) -> KickEvent {
        KickEvent {
            t,
            cell: 0,
            a: 0.0,
            k_pre,
            w,
            k_post: k_pre + w,
            fired: w != 0.0,
            pred_qv: 0.0,
        }
    }

    #[test]
    fn hand_traced_single_incursion() {
        // t = 16: lo = 2, hi = 4
        let events = vec![
            ev(1.0, 0.5, 2.0),  // 2.5: theta_0
            ev(2.0, 2.5, -1.5), // 1.0: sigma
            ev(3.0, 1.0, 1.5),  // 2.5
            ev(4.0, 2.5, -1.0), // 1.5: back inside
            ev(5.0, 1.5, 1.0),  // 2.5: varsigma
            ev(6.0, 2.5, 2.0),  // 4.5: theta
        ];
        let d = detect_events(0.0, 0.0, &events, 16.0, &Thresholds::default());
        assert_eq!(d.theta0, Some(1.0));
        assert_eq!(d.complete.len(), 1);
        let inc = d.complete[0];
        assert_eq!((inc.sigma, inc.varsigma, inc.theta), (2.0, 5.0, 6.0));
        assert_eq!((inc.s1, inc.s2), (1, 1));
        // K_2 + (1.5 - 1.0) - K_{5-} = 1.0 + 0.5 - 1.5 = 0
        assert!(inc.y.abs() < 1e-15);
        assert!(!d.truncated);
    }

    #[test]
    fn no_return_means_no_incursion() {
        let events = vec![ev(1.0, 0.0, 3.0), ev(2.0, 3.0, 1.0), ev(3.0, 4.0, 0.5)];
        let d = detect_events(0.0, 0.0, &events, 16.0, &Thresholds::default());
        assert!(d.complete.is_empty() && d.started() == 0);
    }
}
