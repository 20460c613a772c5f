//! Parallel ensembles of trajectories and the statistics of their diffusive
//! rescaling.

use crate::dynamics::{InitialSpec, NoObserver, SimParams, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{stream, Domain};
use crate::stats::{self, KsResult};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest tolerated fraction of failed trajectories.
pub const MAX_FAILURE_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub horizon: f64,
    /// Rescaled times `s ∈ (0, 1]`, sorted.
    pub s_grid: Vec<f64>,
    pub seed: u64,
    pub initial: InitialSpec,
    pub workers: usize,
    pub h: f64,
    pub energy_tol: f64,
    /// Keep event logs (needed by incursion detection).
    pub record_events: bool,
}

impl EnsembleConfig {
    pub fn new(n: usize, horizon: f64, seed: u64) -> Self {
        EnsembleConfig {
            n,
            horizon,
            s_grid: vec![0.25, 0.5, 0.75, 1.0],
            seed,
            initial: InitialSpec::default(),
            workers: 1,
            h: 1e-3,
            energy_tol: 1e-8,
            record_events: false,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("ensemble horizon must be positive".into()));
        }
        if self.s_grid.windows(2).any(|w| w[0] >= w[1])
            || self.s_grid.iter().any(|s| !(*s > 0.0 && *s <= 1.0))
        {
            return Err(Error::Config("s_grid must be strictly increasing within (0, 1]".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::new(self.horizon, self.seed);
        p.h = self.h;
        p.energy_tol = self.energy_tol;
        p.record_events = self.record_events;
        p.drift_quadrature = false;
        p.predictable_qv = false;
        p.sample_times = self.s_grid.iter().map(|s| s * self.horizon).collect();
        if p.sample_times.last() == Some(&self.horizon) {
            // avoid rounding past the horizon
            *p.sample_times.last_mut().unwrap() = self.horizon;
        }
        p
    }
}

/// Rescaled observables of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub index: u64,
    /// `t^{-3/2} (X_{st} - X_0)` on the s-grid.
    pub x: Vec<f64>,
    /// `t^{-1/2} K_{st}` on the s-grid.
    pub k: Vec<f64>,
    /// `E_{st}` on the s-grid.
    pub energy: Vec<f64>,
    /// `t^{-1/2} K_t`
    pub k_final: f64,
    /// `t^{-3/2} (X_t - X_0)`
    pub x_final: f64,
    /// `E_t`
    pub energy_final: f64,
    /// `[M]_t`
    pub qv: f64,
    /// `sup_{s <= 1} |t^{-1/2} ∫_0^{st} -V'(X_r) dr|`
    pub drift_sup: f64,
}

impl ScalingSample {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let t = traj.horizon;
        let x0 = traj.initial.x_line();
        let (sx, sk) = (t.powf(-1.5), t.powf(-0.5));
        ScalingSample {
            index: traj.index,
            x: traj.snapshots.iter().map(|s| (s.x - x0) * sx).collect(),
            k: traj.snapshots.iter().map(|s| s.k * sk).collect(),
            energy: traj.snapshots.iter().map(|s| s.energy).collect(),
            k_final: traj.final_state.k * sk,
            x_final: (traj.final_state.x_line() - x0) * sx,
            energy_final: traj.snapshots.last().map(|s| s.energy).unwrap_or(f64::NAN),
            qv: traj.functionals.qv,
            drift_sup: traj.functionals.drift_sup * sk,
        }
    }
}

/// Outcome of a parallel run: per-index results plus the failure count.
#[derive(Clone, Debug)]
pub struct EnsembleRun<T> {
    pub results: Vec<T>,
    pub failed: usize,
}

/// Runs `config.n` trajectories on `config.workers` threads and maps each
/// through `f`. Output is ordered by trajectory index and does not depend on
/// the worker count.
pub fn run_ensemble_map<T, F>(model: &ModelSpec, config: &EnsembleConfig, f: F) -> Result<EnsembleRun<T>>
where
    T: Send,
    F: Fn(&Trajectory) -> T + Sync,
{
    config.check()?;
    let sim = Simulator::new(model, config.sim_params())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<T>> = pool.install(|| {
        (0..config.n as u64)
            .into_par_iter()
            .map(|i| sim.run_from(&config.initial, i, &mut NoObserver).map(|tr| f(&tr)))
            .collect()
    });
    let total = outcomes.len();
    let mut results = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for o in outcomes {
        match o {
            Ok(v) => results.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::EnsembleFailure {
            failed,
            total,
            first: Box::new(first.expect("a failure")),
        });
    }
    Ok(EnsembleRun { results, failed })
}

pub fn run_ensemble(model: &ModelSpec, config: &EnsembleConfig) -> Result<EnsembleRun<ScalingSample>> {
    run_ensemble_map(model, config, ScalingSample::from_trajectory)
}

/// Value with a bootstrap standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|self - other| <= z * sqrt(se1^2 + se2^2)`
    pub fn agrees(&self, other: &Estimate, z: f64) -> bool {
        (self.value - other.value).abs() <= z * (self.se.powi(2) + other.se.powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimates {
    /// Quadrature of the model.
    pub quadrature: f64,
    /// `mean([M]_t) / t`
    pub quadratic_variation: Estimate,
    /// `Var(K_t) / t`
    pub momentum_variance: Estimate,
}

impl SigmaEstimates {
    /// The three estimates agree pairwise within `z` standard errors.
    pub fn concordant(&self, z: f64) -> bool {
        let q = Estimate {
            value: self.quadrature,
            se: 0.0,
        };
        q.agrees(&self.quadratic_variation, z)
            && q.agrees(&self.momentum_variance, z)
            && self.quadratic_variation.agrees(&self.momentum_variance, z)
    }
}

pub fn estimate_sigma(
    samples: &[ScalingSample],
    model: &ModelSpec,
    horizon: f64,
    resamples: usize,
    seed: u64,
) -> Result<SigmaEstimates> {
    if samples.len() < 100 {
        return Err(Error::Precondition(format!(
            "sigma estimation needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let quadrature = crate::model::sigma(model)?;
    let qv: Vec<f64> = samples.iter().map(|s| s.qv / horizon).collect();
    let k: Vec<f64> = samples.iter().map(|s| s.k_final).collect();
    Ok(SigmaEstimates {
        quadrature,
        quadratic_variation: Estimate {
            value: stats::mean(&qv),
            se: stats::bootstrap_mean_se(&qv, resamples, seed, 1),
        },
        momentum_variance: Estimate {
            value: stats::variance(&k),
            se: stats::bootstrap_se(&k, resamples, seed, 2, |xs| {
                let v: Vec<f64> = xs.iter().map(|x| **x).collect();
                stats::variance(&v)
            }),
        },
    })
}

/// Limit law of `(t^{-3/2} X_{st}, t^{-1/2} K_{st})`: the integral of a Brownian
/// motion with diffusion constant `sigma` and the motion itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianJointReference {
    pub sigma: f64,
}

impl GaussianJointReference {
    pub fn new(sigma: f64) -> Self {
        GaussianJointReference { sigma }
    }

    /// `sigma [[s^3/3, s^2/2], [s^2/2, s]]`
    pub fn covariance(&self, s: f64) -> [[f64; 2]; 2] {
        let g = self.sigma;
        [[g * s.powi(3) / 3.0, g * s * s / 2.0], [g * s * s / 2.0, g * s]]
    }

    pub fn inverse_covariance(&self, s: f64) -> [[f64; 2]; 2] {
        let c = self.covariance(s);
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        [[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]]
    }

    /// Joint density at `s = 1`.
    pub fn density(&self, x: f64, k: f64) -> f64 {
        let g = self.sigma;
        3f64.sqrt() / (std::f64::consts::PI * g)
            * (-(6.0 / g) * (x - k / 2.0).powi(2) - k * k / (2.0 * g)).exp()
    }

    /// Draw `(x, k)` at rescaled time `s`.
    pub fn sample<R: RngCore + ?Sized>(&self, s: f64, rng: &mut R) -> (f64, f64) {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        // k = sqrt(sigma s) z2;  x | k has mean s k / 2 and variance sigma s^3 / 12
        let k = (self.sigma * s).sqrt() * z2;
        let x = 0.5 * s * k + (self.sigma * s.powi(3) / 12.0).sqrt() * z1;
        (x, k)
    }

    /// Maps `(x, k)` at `s = 1` to independent standard normals.
    pub fn whiten(&self, x: f64, k: f64) -> (f64, f64) {
        let z2 = k / self.sigma.sqrt();
        let z1 = (x - 0.5 * k) / (self.sigma / 12.0).sqrt();
        (z1, z2)
    }
}

/// Per-s moments and KS test of the momentum marginal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub s: f64,
    pub mean_x: f64,
    pub mean_k: f64,
    pub cov_xx: f64,
    pub cov_xk: f64,
    pub cov_kk: f64,
    pub ks: KsResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub sigma: f64,
    pub rows: Vec<CltRow>,
    /// Largest relative deviation of the `s = 1` covariance from the reference.
    pub covariance_rel_error: f64,
    /// Chi-square of a 6 x 6 equiprobable histogram of the whitened `s = 1`
    /// sample against the reference density.
    pub joint_chi2: f64,
    pub joint_chi2_p: f64,
}

pub fn clt_tests(samples: &[ScalingSample], s_grid: &[f64], reference: &GaussianJointReference) -> Result<StatsSummary> {
    if samples.len() < 1000 {
        return Err(Error::Precondition(format!(
            "CLT tests need at least 1000 samples, got {}",
            samples.len()
        )));
    }
    let mut rows = Vec::new();
    for (j, &s) in s_grid.iter().enumerate() {
        let xs: Vec<f64> = samples.iter().map(|p| p.x[j]).collect();
        let ks: Vec<f64> = samples.iter().map(|p| p.k[j]).collect();
        let sd = (reference.sigma * s).sqrt();
        rows.push(CltRow {
            s,
            mean_x: stats::mean(&xs),
            mean_k: stats::mean(&ks),
            cov_xx: stats::variance(&xs),
            cov_xk: stats::covariance(&xs, &ks),
            cov_kk: stats::variance(&ks),
            ks: stats::ks_test(&ks, |v| stats::normal_cdf(v, 0.0, sd)),
        });
    }
    let xs: Vec<f64> = samples.iter().map(|p| p.x_final).collect();
    let ks: Vec<f64> = samples.iter().map(|p| p.k_final).collect();
    let target = reference.covariance(1.0);
    let emp = [
        [stats::variance(&xs), stats::covariance(&xs, &ks)],
        [stats::covariance(&xs, &ks), stats::variance(&ks)],
    ];
    let mut rel = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            rel = rel.max((emp[i][j] - target[i][j]).abs() / target[i][j].abs());
        }
    }
    let (chi2, p) = joint_histogram_chi2(&xs, &ks, reference, 6);
    Ok(StatsSummary {
        sigma: reference.sigma,
        rows,
        covariance_rel_error: rel,
        joint_chi2: chi2,
        joint_chi2_p: p,
    })
}

/// Chi-square of the whitened pairs on a `bins x bins` equiprobable grid.
pub fn joint_histogram_chi2(xs: &[f64], ks: &[f64], reference: &GaussianJointReference, bins: usize) -> (f64, f64) {
    let mut counts = vec![0u64; bins * bins];
    for (x, k) in xs.iter().zip(ks) {
        let (z1, z2) = reference.whiten(*x, *k);
        let cell = |z: f64| ((stats::normal_cdf(z, 0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[cell(z1) * bins + cell(z2)] += 1;
    }
    stats::chi2_test(&counts, &vec![1.0 / (bins * bins) as f64; bins * bins])
}

/// KS test of `t^{-1/2} |K_t|` against the half-normal law with scale `sqrt(sigma)`.
pub fn abs_momentum_test(samples: &[ScalingSample], sigma: f64) -> Result<KsResult> {
    if samples.len() < 1000 {
        return Err(Error::Precondition(format!(
            "absolute momentum test needs at least 1000 samples, got {}",
            samples.len()
        )));
    }
    let a: Vec<f64> = samples.iter().map(|s| s.k_final.abs()).collect();
    Ok(half_normal_ks(&a, sigma))
}

pub fn half_normal_ks(values: &[f64], sigma: f64) -> KsResult {
    let sd = sigma.sqrt();
    stats::ks_test(values, |v| (2.0 * stats::normal_cdf(v, 0.0, sd) - 1.0).max(0.0))
}

/// KS test of `t^{-1/2} K_t` against `N(0, sigma)`.
pub fn momentum_ks(samples: &[ScalingSample], sigma: f64) -> KsResult {
    let k: Vec<f64> = samples.iter().map(|s| s.k_final).collect();
    stats::ks_test(&k, |v| stats::normal_cdf(v, 0.0, sigma.sqrt()))
}

/// Synthetic draws from the reference law, shaped like ensemble samples.
pub fn synthetic_samples(reference: &GaussianJointReference, s_grid: &[f64], n: usize, seed: u64) -> Vec<ScalingSample> {
    (0..n as u64)
        .map(|i| {
            let mut rng = stream(seed, Domain::Synthetic, i);
            // independent increments reproduce the joint law at every s
            let (mut x, mut k, mut s_prev) = (0.0, 0.0, 0.0);
            let (mut xv, mut kv) = (Vec::new(), Vec::new());
            for &s in s_grid.iter().chain(std::iter::once(&1.0)) {
                let ds = s - s_prev;
                let (dx, dk) = if ds > 0.0 { reference.sample(ds, &mut rng) } else { (0.0, 0.0) };
                x += k * ds + dx;
                k += dk;
                s_prev = s;
                xv.push(x);
                kv.push(k);
            }
            let (xf, kf) = (*xv.last().unwrap(), *kv.last().unwrap());
            xv.truncate(s_grid.len());
            kv.truncate(s_grid.len());
            ScalingSample {
                index: i,
                x: xv,
                k: kv,
                energy: vec![0.0; s_grid.len()],
                k_final: kf,
                x_final: xf,
                energy_final: 0.0,
                qv: 0.0,
                drift_sup: 0.0,
            }
        })
        .collect()
}

/// One row of the drift decay table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// `E[sup_s |t^{-1/2} ∫_0^{st} -V'|]` per horizon.
pub fn drift_decay(per_t: &[(f64, &[ScalingSample])], resamples: usize, seed: u64) -> Result<Vec<DriftRow>> {
    if per_t.len() < 3 || per_t.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Precondition("drift scan needs at least 3 increasing horizons".into()));
    }
    Ok(per_t
        .iter()
        .enumerate()
        .map(|(i, (t, s))| {
            let d: Vec<f64> = s.iter().map(|p| p.drift_sup).collect();
            DriftRow {
                t: *t,
                mean: stats::mean(&d),
                se: stats::bootstrap_mean_se(&d, resamples, seed, 100 + i as u64),
            }
        })
        .collect())
}

/// Runs one ensemble per horizon and tabulates the drift statistic.
pub fn drift_decay_scan(model: &ModelSpec, t_list: &[f64], base: &EnsembleConfig, resamples: usize) -> Result<Vec<DriftRow>> {
    if t_list.len() < 3 || t_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("drift scan needs at least 3 increasing horizons".into()));
    }
    let mut runs = Vec::new();
    for &t in t_list {
        let mut c = base.clone();
        c.horizon = t;
        runs.push((t, run_ensemble(model, &c)?.results));
    }
    let refs: Vec<(f64, &[ScalingSample])> = runs.iter().map(|(t, r)| (*t, r.as_slice())).collect();
    drift_decay(&refs, resamples, base.seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySlope {
    pub slope: Estimate,
    /// 95% confidence interval from the bootstrap standard error.
    pub lower: f64,
    pub upper: f64,
}

/// Least-squares slope of mean energy against time, using energies recorded at
/// `times` (at least 3). The slope is the average of per-trajectory slopes, so
/// its bootstrap error accounts for correlation along each path.
pub fn energy_growth(samples: &[ScalingSample], times: &[f64], resamples: usize, seed: u64) -> Result<EnergySlope> {
    if times.len() < 3 {
        return Err(Error::Precondition("energy growth needs at least 3 horizons".into()));
    }
    let slopes: Vec<f64> = samples
        .iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = times.iter().cloned().zip(s.energy.iter().cloned()).collect();
            stats::ols_slope(&pts)
        })
        .collect();
    let value = stats::mean(&slopes);
    let se = stats::bootstrap_mean_se(&slopes, resamples, seed, 200);
    Ok(EnergySlope {
        slope: Estimate { value, se },
        lower: value - 1.96 * se,
        upper: value + 1.96 * se,
    })
}
