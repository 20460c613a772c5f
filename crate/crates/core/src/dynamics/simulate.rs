use super::flow::{flow_segment, FlowParams, Segment, SegmentOptions};
use super::sampler::KickSampler;
use super::state::PhaseState;
use crate::error::{Error, Result};
use crate::model::{KickField, ModelSpec};
use crate::rng::{stream, unit_and_sign, Domain, StreamRng};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Per-trajectory settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub horizon: f64,
    pub h: f64,
    pub energy_tol: f64,
    pub seed: u64,
    /// Keep the full event log.
    pub record_events: bool,
    /// Integrate the force along closed-form segments as an independent check.
    pub drift_quadrature: bool,
    /// Accumulate `∫ rate(X_r) dr`.
    pub predictable_qv: bool,
    /// Times (relative to the start) at which to take snapshots.
    pub sample_times: Vec<f64>,
}

impl SimParams {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimParams {
            horizon,
            h: 1e-3,
            energy_tol: 1e-8,
            seed,
            record_events: true,
            drift_quadrature: true,
            predictable_qv: true,
            sample_times: Vec::new(),
        }
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            h: self.h,
            energy_tol: self.energy_tol,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if !(self.h > 0.0) || !(self.energy_tol > 0.0) {
            return Err(Error::Config("integrator step and energy tolerance must be positive".into()));
        }
        if self.sample_times.windows(2).any(|w| w[0] > w[1])
            || self.sample_times.iter().any(|s| !(*s >= 0.0 && *s <= self.horizon))
        {
            return Err(Error::Config("sample times must be sorted and within the horizon".into()));
        }
        Ok(())
    }
}

/// Initial law of `(X_0, K_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Point { x: f64, k: f64 },
    /// Independent normals for position and momentum.
    Gaussian {
        mean_x: f64,
        sd_x: f64,
        mean_k: f64,
        sd_k: f64,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Point { x: 0.0, k: 0.0 }
    }
}

impl InitialSpec {
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> PhaseState {
        match *self {
            InitialSpec::Point { x, k } => PhaseState::new(x, k, 0.0),
            InitialSpec::Gaussian {
                mean_x,
                sd_x,
                mean_k,
                sd_k,
            } => {
                let zx: f64 = StandardNormal.sample(rng);
                let zk: f64 = StandardNormal.sample(rng);
                PhaseState::new(mean_x + sd_x * zx, mean_k + sd_k * zk, 0.0)
            }
        }
    }
}

/// One Poisson alarm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickEvent {
    pub t: f64,
    pub cell: i64,
    pub a: f64,
    pub k_pre: f64,
    pub w: f64,
    pub k_post: f64,
    pub fired: bool,
    /// Predictable quadratic variation accumulated up to `t` (0 when not tracked).
    pub pred_qv: f64,
}

impl KickEvent {
    pub fn state_after(&self) -> PhaseState {
        PhaseState::from_parts(self.cell, self.a, self.k_post, self.t)
    }
}

/// State and running functionals at a requested time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: f64,
    pub k: f64,
    pub energy: f64,
    pub kick_sum: f64,
    pub qv: f64,
    pub drift: f64,
}

/// Functionals tracked along every trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    /// `M_T`, the sum of kicks.
    pub kick_sum: f64,
    /// `[M]_T`, the sum of squared kicks.
    pub qv: f64,
    /// `<M>_T` when tracked.
    pub pred_qv: f64,
    /// `∫_0^T -V'(X_r) dr`.
    pub drift_integral: f64,
    /// True when every segment's drift came from quadrature.
    pub drift_by_quadrature: bool,
    /// `sup_{r <= T} |K_r - K_0 - M_r|`.
    pub drift_sup: f64,
    /// `E_0 + sum (w K^- + w^2 / 2)`.
    pub energy_bookkeeping: f64,
    pub alarms: u64,
    pub kicks: u64,
    pub segments: u64,
    pub max_segment_energy_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub index: u64,
    pub horizon: f64,
    pub initial: PhaseState,
    pub final_state: PhaseState,
    pub events: Vec<KickEvent>,
    pub snapshots: Vec<Snapshot>,
    pub functionals: Functionals,
}

impl Trajectory {
    /// `K_T - K_0 - M_T`
    pub fn decomposition_residual(&self) -> f64 {
        self.final_state.k - self.initial.k - self.functionals.kick_sum - self.functionals.drift_integral
    }
}

/// Pull-based callbacks; every method has an empty default.
pub trait Observer {
    fn on_segment(&mut self, _segment: &Segment) {}
    fn on_event(&mut self, _event: &KickEvent) {}
    fn on_snapshot(&mut self, _snapshot: &Snapshot) {}
}

/// Observer that ignores everything.
pub struct NoObserver;
impl Observer for NoObserver {}

/// Exponential waiting time with mean `1 / rate`.
#[inline]
pub fn next_alarm<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let (u, _) = unit_and_sign(rng.next_u64());
    -(-u).ln_1p() / rate
}

/// Coin flip with success probability `coin`, then a kick on success.
#[inline]
pub fn attempt_kick_with<R: RngCore + ?Sized>(
    state: &PhaseState,
    coin: f64,
    sampler: &KickSampler,
    rng: &mut R,
) -> KickEvent {
    let (u, _) = unit_and_sign(rng.next_u64());
    let fired = u < coin;
    let w = if fired { sampler.sample(state.a(), rng) } else { 0.0 };
    KickEvent {
        t: state.t,
        cell: state.cell(),
        a: state.a(),
        k_pre: state.k,
        w,
        k_post: state.k + w,
        fired,
        pred_qv: 0.0,
    }
}

pub fn attempt_kick<R: RngCore + ?Sized>(
    state: &PhaseState,
    kicks: &KickField,
    sampler: &KickSampler,
    rng: &mut R,
) -> KickEvent {
    attempt_kick_with(state, kicks.coin(state.a()), sampler, rng)
}

/// Runs trajectories of one model under fixed parameters.
pub struct Simulator<'m> {
    model: &'m ModelSpec,
    sampler: KickSampler,
    params: SimParams,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m ModelSpec, params: SimParams) -> Result<Self> {
        params.check()?;
        Ok(Simulator {
            model,
            sampler: KickSampler::new(model.kicks()),
            params,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    /// Stream for trajectory `index`.
    pub fn rng(&self, index: u64) -> StreamRng {
        stream(self.params.seed, Domain::Trajectory, index)
    }

    /// Draws the initial state from trajectory `index`'s stream, then runs it.
    pub fn run_from(&self, initial: &InitialSpec, index: u64, obs: &mut dyn Observer) -> Result<Trajectory> {
        let mut rng = self.rng(index);
        let start = initial.draw(&mut rng);
        self.run_with(start, index, &mut rng, obs)
    }

    pub fn run(&self, initial: PhaseState, index: u64, obs: &mut dyn Observer) -> Result<Trajectory> {
        let mut rng = self.rng(index);
        self.run_with(initial, index, &mut rng, obs)
    }

    fn run_with(
        &self,
        initial: PhaseState,
        index: u64,
        rng: &mut StreamRng,
        obs: &mut dyn Observer,
    ) -> Result<Trajectory> {
        if !initial.is_finite() {
            return Err(Error::Precondition("initial state must be finite".into()));
        }
        let p = &self.params;
        let pot = self.model.potential();
        let kicks = self.model.kicks();
        let rate = kicks.rate();
        let fp = p.flow_params();
        let opts = SegmentOptions {
            drift_quadrature: p.drift_quadrature,
            rate: if p.predictable_qv { Some(kicks) } else { None },
        };
        let t0 = initial.t;
        let t_end = t0 + p.horizon;
        let mut f = Functionals {
            drift_by_quadrature: true,
            energy_bookkeeping: initial.energy(pot),
            ..Default::default()
        };
        let mut events = Vec::new();
        let mut snapshots = Vec::with_capacity(p.sample_times.len());
        let mut next_sample = 0usize;
        let mut st = initial;

        let advance = |st: &mut PhaseState, target: f64, f: &mut Functionals, obs: &mut dyn Observer| -> Result<()> {
            let seg = flow_segment(st, target - st.t, pot, &fp, &opts)?;
            f.segments += 1;
            f.drift_integral += seg.drift;
            f.drift_by_quadrature &= seg.drift_by_quadrature;
            if let Some(r) = seg.rate_integral {
                f.pred_qv += r;
            }
            let base = initial.k + f.kick_sum;
            f.drift_sup = f
                .drift_sup
                .max((seg.k_min - base).abs())
                .max((seg.k_max - base).abs());
            f.max_segment_energy_error = f.max_segment_energy_error.max(seg.energy_error.abs());
            obs.on_segment(&seg);
            *st = seg.end;
            st.t = target;
            Ok(())
        };

        loop {
            let t_alarm = st.t + next_alarm(rng, rate);
            let stop = t_alarm.min(t_end);
            while next_sample < p.sample_times.len() && t0 + p.sample_times[next_sample] <= stop {
                let ts = t0 + p.sample_times[next_sample];
                advance(&mut st, ts, &mut f, obs)?;
                let snap = Snapshot {
                    t: ts,
                    x: st.x_line(),
                    k: st.k,
                    energy: st.energy(pot),
                    kick_sum: f.kick_sum,
                    qv: f.qv,
                    drift: f.drift_integral,
                };
                obs.on_snapshot(&snap);
                snapshots.push(snap);
                next_sample += 1;
            }
            advance(&mut st, stop, &mut f, obs)?;
            if t_alarm > t_end {
                break;
            }
            let mut ev = attempt_kick(&st, kicks, &self.sampler, rng);
            ev.pred_qv = f.pred_qv;
            f.alarms += 1;
            if ev.fired {
                f.kicks += 1;
                f.energy_bookkeeping += ev.w * ev.k_pre + 0.5 * ev.w * ev.w;
                f.kick_sum += ev.w;
                f.qv += ev.w * ev.w;
                st.k = ev.k_post;
            }
            obs.on_event(&ev);
            if p.record_events {
                events.push(ev);
            }
        }
        Ok(Trajectory {
            index,
            horizon: p.horizon,
            initial,
            final_state: st,
            events,
            snapshots,
            functionals: f,
        })
    }
}

/// One trajectory of `model` from `initial` under `params`, stream index 0.
pub fn simulate(
    model: &ModelSpec,
    initial: PhaseState,
    params: &SimParams,
    obs: &mut dyn Observer,
) -> Result<Trajectory> {
    Simulator::new(model, params.clone())?.run(initial, 0, obs)
}
