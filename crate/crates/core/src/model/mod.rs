//! Potentials, kick fields, model constants and numerical checks of the
//! standing assumptions.

mod kicks;
mod potential;

pub use kicks::{JumpFamily, KickField, KickSpec, MixtureComponent, TorusRate};
pub(crate) use kicks::SymTable;
pub use potential::{Potential, PotentialSpec};

use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;
use crate::quadrature::{integrate, integrate_half_line, periodic_mean};
use serde::{Deserialize, Serialize};

/// Serializable model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub potential: PotentialSpec,
    pub kicks: KickSpec,
}

/// Constants derived from a model. `rho`, `r1`, `r2` and `nu` are extrema over
/// a 256-point torus grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub vbar: f64,
    pub r1: f64,
    pub r2: f64,
    pub nu: f64,
    pub rho: f64,
    pub sigma: f64,
    pub kappa_mean: f64,
}

const CONST_GRID: usize = 256;

/// Potential plus kick field plus derived constants. Immutable once built.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    config: ModelConfig,
    potential: Potential,
    kicks: KickField,
    derived: DerivedConstants,
}

impl ModelSpec {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let potential = Potential::new(config.potential.clone())?;
        let kicks = KickField::new(config.kicks.clone())?;
        let derived = compute_derived(&potential, &kicks);
        Ok(ModelSpec {
            config,
            potential,
            kicks,
            derived,
        })
    }

    /// Cosine potential `A(1 - cos 2 pi x)` with Laplace kicks of scale `b`,
    /// rate `R` and coin `kappa0 + kappa1 cos 2 pi a`.
    pub fn cosine_laplace(amplitude: f64, rate: f64, kappa0: f64, kappa1: f64, b: f64) -> Result<Self> {
        let coin = if kappa1 == 0.0 {
            PeriodicFn::constant(kappa0)
        } else {
            PeriodicFn::cosine(kappa0, kappa1)
        };
        Self::new(ModelConfig {
            potential: PotentialSpec::Cosine {
                amplitude,
                reflection_point: Some(0.0),
            },
            kicks: KickSpec {
                rate,
                coin,
                jumps: JumpFamily::Laplace {
                    scale: PeriodicFn::constant(b),
                },
            },
        })
    }

    /// The reference inhomogeneous model: `A = 0.5`, `R = 1`,
    /// `kappa = 0.5 + 0.1 cos 2 pi a`, Laplace `b = 1`. Here `sigma = 1`.
    pub fn standard_cosine() -> Self {
        Self::cosine_laplace(0.5, 1.0, 0.5, 0.1, 1.0).expect("valid built-in model")
    }

    /// `V = 0`, `R = 1`, `kappa = 0.5`, Laplace `b = 1`; `sigma = 1`.
    pub fn free_homogeneous() -> Self {
        Self::new(ModelConfig {
            potential: PotentialSpec::Zero {
                reflection_point: Some(0.0),
            },
            kicks: KickSpec {
                rate: 1.0,
                coin: PeriodicFn::constant(0.5),
                jumps: JumpFamily::Laplace {
                    scale: PeriodicFn::constant(1.0),
                },
            },
        })
        .expect("valid built-in model")
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn kicks(&self) -> &KickField {
        &self.kicks
    }

    pub fn derived(&self) -> &DerivedConstants {
        &self.derived
    }

    /// Largest relative disagreement between stored and recomputed constants.
    pub fn derived_consistency(&self) -> f64 {
        let fresh = compute_derived(&self.potential, &self.kicks);
        let d = &self.derived;
        [
            (d.vbar, fresh.vbar),
            (d.r1, fresh.r1),
            (d.r2, fresh.r2),
            (d.nu, fresh.nu),
            (d.rho, fresh.rho),
            (d.sigma, fresh.sigma),
        ]
        .iter()
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
        .fold(0.0, f64::max)
    }
}

fn compute_derived(potential: &Potential, kicks: &KickField) -> DerivedConstants {
    let mut r1 = f64::INFINITY;
    let mut r2 = 0.0f64;
    let mut nu = f64::INFINITY;
    let mut rho = 0.0f64;
    for j in 0..CONST_GRID {
        let a = j as f64 / CONST_GRID as f64;
        let rate = kicks.local_rate(a);
        r1 = r1.min(rate);
        r2 = r2.max(rate);
        nu = nu.min(kicks.coin(a));
        rho = rho.max(kicks.fourth_moment(a));
    }
    let (clo, _) = kicks.spec().coin.range(CONST_GRID);
    nu = nu.min(clo);
    DerivedConstants {
        vbar: potential.vbar(),
        r1,
        r2,
        nu,
        rho,
        sigma: periodic_mean(|a| kicks.local_rate(a), 1e-13),
        kappa_mean: periodic_mean(|a| kicks.coin(a), 1e-13),
    }
}

/// `∫ v^p P_a(v) dv` by adaptive quadrature, splitting at zero.
fn density_moment(kicks: &KickField, a: f64, p: i32, tol: f64) -> f64 {
    let f = |v: f64| (kicks.density(a, v) + kicks.density(a, -v)) * v.powi(p);
    match kicks.support_bound() {
        Some(vm) => integrate(f, 0.0, vm, tol),
        None => {
            // split at a few scales so the adaptive rule sees the bulk
            let s = kicks.second_moment(a).sqrt().max(1e-3);
            let mut acc = 0.0;
            let knots = [0.0, 0.5 * s, 2.0 * s, 8.0 * s];
            for w in knots.windows(2) {
                acc += integrate(&f, w[0], w[1], tol);
            }
            acc + integrate_half_line(|u| f(u + 8.0 * s), tol)
        }
    }
}

/// Total mass of point atoms at `v = 0` (zero-width mixture components).
fn atom_at_zero(kicks: &KickField, a: f64) -> f64 {
    match kicks.jumps() {
        JumpFamily::GaussianMixture { components } => components
            .iter()
            .filter(|c| c.sd.eval(a) == 0.0)
            .map(|c| c.weight)
            .sum(),
        _ => 0.0,
    }
}

/// `sigma = ∫_0^1 da ∫ dv j_a(v) v^2` by adaptive quadrature in `v` and
/// trapezoid refinement in `a`.
pub fn sigma(model: &ModelSpec) -> Result<f64> {
    let kicks = model.kicks();
    let s = periodic_mean(
        |a| kicks.rate() * kicks.coin(a) * density_moment(kicks, a, 2, 1e-12),
        1e-10,
    );
    if !s.is_finite() {
        return Err(Error::InvalidModel("divergent second moment".into()));
    }
    if s <= 0.0 {
        return Err(Error::InvalidModel(
            "sigma vanishes: the local second-moment rate must be bounded below by r1 > 0".into(),
        ));
    }
    Ok(s)
}

/// Spatially averaged kick law: density `∫ kappa P_a / ∫ kappa` and rate
/// `R ∫ kappa`.
#[derive(Clone, Debug)]
pub struct AveragedKick {
    pub rate: f64,
    pub kappa_mean: f64,
    pub v_max: f64,
    /// Density at `v = j * v_max / (len - 1)` for `v >= 0`; symmetric in `v`.
    pub half: Vec<f64>,
    /// Trapezoid mass on `[-v_max, v_max]` before renormalization.
    pub raw_mass: f64,
}

impl AveragedKick {
    pub fn step(&self) -> f64 {
        self.v_max / (self.half.len() - 1) as f64
    }

    /// Linear interpolation of the normalized table.
    pub fn density(&self, v: f64) -> f64 {
        let x = v.abs();
        if x > self.v_max {
            return 0.0;
        }
        let u = x / self.step();
        let i = (u.floor() as usize).min(self.half.len() - 2);
        let f = u - i as f64;
        self.half[i] * (1.0 - f) + self.half[i + 1] * f
    }

    /// `∫ P~(v) v^p dv` over the table.
    pub fn moment(&self, p: i32) -> f64 {
        integrate(|v| 2.0 * self.density(v) * v.powi(p), 0.0, self.v_max, 1e-12)
    }
}

/// Unnormalized `∫ kappa(a) P_a(v) da`.
pub fn averaged_density_exact(model: &ModelSpec, v: f64) -> f64 {
    let k = model.kicks();
    periodic_mean(|a| k.coin(a) * k.density(a, v), 1e-12) / model.derived().kappa_mean
}

/// Tabulates the averaged kick law on `points` nodes of `[0, v_max]`.
/// `v_max = None` picks `16` local standard deviations (or the support bound).
pub fn averaged_kick(model: &ModelSpec, v_max: Option<f64>, points: usize) -> Result<AveragedKick> {
    if points < 3 {
        return Err(Error::Precondition("averaged kick grid needs >= 3 points".into()));
    }
    let k = model.kicks();
    let v_max = v_max.unwrap_or_else(|| {
        k.support_bound()
            .unwrap_or_else(|| 16.0 * k.velocity_scale() / std::f64::consts::SQRT_2)
    });
    let step = v_max / (points - 1) as f64;
    let mut half: Vec<f64> = (0..points)
        .map(|j| averaged_density_exact(model, j as f64 * step))
        .collect();
    let inner: f64 = half[1..points - 1].iter().sum();
    let raw_mass = 2.0 * step * (inner + 0.5 * (half[0] + half[points - 1]));
    if !(raw_mass > 0.0 && raw_mass.is_finite()) {
        return Err(Error::InvalidModel("averaged kick density is not normalizable".into()));
    }
    for h in &mut half {
        *h /= raw_mass;
    }
    Ok(AveragedKick {
        rate: model.kicks().rate() * model.derived().kappa_mean,
        kappa_mean: model.derived().kappa_mean,
        v_max,
        half,
        raw_mass,
    })
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed violation (0 when none).
    pub violation: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<AssumptionCheck>,
    pub constants: DerivedConstants,
    /// Fitted exponential tail rate (worst over the grid).
    pub tail_rate: f64,
    /// Finite-difference estimate of `sup |P_a'(v) / P_a(v)|`; reported only.
    pub derivative_ratio: f64,
    pub advisories: Vec<String>,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Numerical checks of the model assumptions on a `grid_resolution`-point
/// torus grid. Hard failures (bad coin, non-normalizable density) are errors;
/// everything else is reported as flags.
pub fn validate(model: &ModelSpec, grid_resolution: usize) -> Result<ValidationReport> {
    if grid_resolution < 64 {
        return Err(Error::Precondition(format!(
            "grid_resolution must be at least 64, got {grid_resolution}"
        )));
    }
    let k = model.kicks();
    let pot = model.potential();
    let n = grid_resolution;
    let grid = |j: usize| j as f64 / n as f64;
    let mut advisories = Vec::new();

    let (clo, chi) = k.spec().coin.range(n);
    if clo <= 0.0 || chi > 1.0 {
        return Err(Error::InvalidModel(format!(
            "coin leaves (0, 1]: range [{clo}, {chi}]"
        )));
    }

    // normalization and moments by quadrature
    let mut m2 = Vec::with_capacity(n);
    let mut rho = 0.0f64;
    let mut worst_mass = 0.0f64;
    for j in 0..n {
        let a = grid(j);
        let atom = atom_at_zero(k, a);
        let mass = density_moment(k, a, 0, 1e-11) + atom;
        if !mass.is_finite() || (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidModel(format!(
                "jump density at a = {a} is not normalizable (mass {mass})"
            )));
        }
        worst_mass = worst_mass.max((mass - 1.0).abs());
        m2.push(k.rate() * k.coin(a) * density_moment(k, a, 2, 1e-11));
        rho = rho.max(density_moment(k, a, 4, 1e-11));
    }
    let r1 = m2.iter().cloned().fold(f64::INFINITY, f64::min);
    let r2 = m2.iter().cloned().fold(0.0, f64::max);
    let sigma_q = sigma(model).unwrap_or(0.0);
    let check_i_big = AssumptionCheck {
        name: "I".into(),
        passed: r1 > 0.0 && r2.is_finite(),
        violation: if r1 > 0.0 { 0.0 } else { -r1 },
        detail: format!("second-moment rate in [{r1}, {r2}], mass error {worst_mass:.1e}"),
    };

    // tail rate and derivative ratio
    let mut eta = f64::INFINITY;
    let mut mu = 0.0f64;
    let tail_points = n.min(64);
    for j in 0..tail_points {
        let a = j as f64 / tail_points as f64;
        if let Some((e, m)) = tail_fit(k, a) {
            eta = eta.min(e);
            mu = mu.max(m);
        }
    }
    if !eta.is_finite() {
        eta = 0.0;
    }
    let check_i_small = AssumptionCheck {
        name: "i".into(),
        passed: eta > 0.0,
        violation: if eta > 0.0 { 0.0 } else { 1.0 },
        detail: format!("log-density slope beyond the 99th percentile gives rate {eta}"),
    };
    let check_ii_big = AssumptionCheck {
        name: "II".into(),
        passed: rho.is_finite() && rho > 0.0 || rho == 0.0 && r1 == 0.0,
        violation: if rho.is_finite() { 0.0 } else { f64::MAX },
        detail: format!("fourth moments bounded by rho = {rho}"),
    };
    let gaussian = matches!(k.jumps(), JumpFamily::GaussianMixture { .. });
    if gaussian {
        advisories.push(
            "gaussian mixture tails make the derivative-ratio bound grow without limit; \
             results are advisory"
                .into(),
        );
    }
    let check_ii_small = AssumptionCheck {
        name: "ii".into(),
        passed: mu.is_finite() && !gaussian,
        violation: 0.0,
        detail: format!("derivative ratio estimate {mu}"),
    };

    // symmetry of P_a
    let vs = k.velocity_scale().max(1e-6);
    let mut asym = 0.0f64;
    for j in 0..n {
        let a = grid(j);
        for i in 1..=64 {
            let v = i as f64 * 8.0 * vs / 64.0;
            asym = asym.max((k.density(a, v) - k.density(a, -v)).abs());
        }
    }
    let check_iii_big = AssumptionCheck {
        name: "III".into(),
        passed: asym <= 1e-12,
        violation: asym,
        detail: "max |P_a(v) - P_a(-v)| on the grid".into(),
    };

    // bounded potential with bounded derivative
    let mut v_viol = 0.0f64;
    let mut period_err = 0.0f64;
    for j in 0..4 * n {
        let x = j as f64 / (4 * n) as f64;
        v_viol = v_viol.max(-pot.value(x));
        period_err = period_err.max((pot.value(x + 1.0) - pot.value(x)).abs());
    }
    let check_iv = AssumptionCheck {
        name: "IV".into(),
        passed: v_viol <= 1e-12
            && period_err <= 1e-12
            && pot.vbar().is_finite()
            && pot.max_slope().is_finite(),
        violation: v_viol.max(period_err),
        detail: format!(
            "V in [{}, {}], max |V'| = {}",
            pot.vmin(),
            pot.vbar(),
            pot.max_slope()
        ),
    };

    // reflection symmetry
    let refl = pot.reflection_point().or(if pot.is_zero() { Some(0.0) } else { None });
    let check_iii_small = match refl {
        Some(r) => {
            let mut worst = 0.0f64;
            for j in 0..n {
                let x = grid(j);
                let rx = (2.0 * r - x).rem_euclid(1.0);
                worst = worst.max((pot.value(rx) - pot.value(x)).abs());
                for i in 0..32 {
                    let v = i as f64 * 8.0 * vs / 32.0;
                    worst = worst.max((k.intensity(rx, v) - k.intensity(x, v)).abs());
                }
            }
            AssumptionCheck {
                name: "iii".into(),
                passed: worst <= 1e-12,
                violation: worst,
                detail: format!("reflection about {r}"),
            }
        }
        None => AssumptionCheck {
            name: "iii".into(),
            passed: true,
            violation: 0.0,
            detail: "no reflection point declared; not checked".into(),
        },
    };

    let mut constants = *model.derived();
    constants.r1 = r1;
    constants.r2 = r2;
    constants.rho = rho;
    constants.sigma = sigma_q;
    let checks = vec![
        check_i_big,
        check_ii_big,
        check_iii_big,
        check_iv,
        check_i_small,
        check_ii_small,
        check_iii_small,
    ];
    let passed = checks.iter().all(|c| c.passed || c.name == "ii" && gaussian);
    Ok(ValidationReport {
        passed,
        checks,
        constants,
        tail_rate: eta,
        derivative_ratio: if mu.is_finite() { mu } else { f64::MAX },
        advisories,
    })
}

/// Least-squares slope of `ln P_a(|v|)` beyond the 99th percentile of `|v|`,
/// and the largest finite-difference log-derivative below the 99.9th.
fn tail_fit(k: &KickField, a: f64) -> Option<(f64, f64)> {
    let sym = |v: f64| 0.5 * (k.density(a, v) + k.density(a, -v));
    let end = k.support_bound().unwrap_or(f64::INFINITY);
    let q99 = abs_quantile(k, a, 0.99)?;
    let q999 = abs_quantile(k, a, 0.999)?;
    let span = (q999 - q99).max(1e-9);
    let upper = (q99 + 3.0 * span).min(end);
    let mut pts = Vec::new();
    for i in 0..=40 {
        let v = q99 + (upper - q99) * i as f64 / 40.0;
        let p = sym(v);
        if p > 1e-300 {
            pts.push((v, p.ln()));
        }
    }
    let eta = if pts.len() >= 2 {
        -crate::stats::ols_slope(&pts)
    } else {
        // compact support ending at the 99th percentile: decays faster than any rate
        1.0 / span
    };
    let mut mu = 0.0f64;
    let h = 1e-5 * span.max(q99);
    for i in 1..=200 {
        let v = q999 * i as f64 / 200.0;
        if v + h >= end {
            break;
        }
        let (p0, p1) = (sym(v - h), sym(v + h));
        if p0 > 0.0 && p1 > 0.0 {
            mu = mu.max(((p1.ln() - p0.ln()) / (2.0 * h)).abs());
        }
    }
    Some((eta, mu))
}

/// Quantile of `|v|` under `P_a` by bisection on the quadrature CDF.
fn abs_quantile(k: &KickField, a: f64, p: f64) -> Option<f64> {
    let cdf = |u: f64| integrate(|v| k.density(a, v) + k.density(a, -v), 0.0, u, 1e-10);
    let atom = atom_at_zero(k, a);
    if atom >= p {
        return None;
    }
    let mut hi = k.support_bound().unwrap_or_else(|| k.second_moment(a).sqrt().max(1e-6));
    if k.support_bound().is_none() {
        while cdf(hi) + atom < p {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) + atom < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
