use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian component of a jump mixture. `sd = 0` is a point mass at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub sd: PeriodicFn,
}

/// Family of jump densities `P_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpFamily {
    /// Two-sided exponential with position dependent scale `b(a)`; variance `2 b^2`.
    Laplace { scale: PeriodicFn },
    GaussianMixture { components: Vec<MixtureComponent> },
    /// Density samples on a uniform grid over `[-v_max, v_max]`, symmetrized by
    /// averaging `P(v)` and `P(-v)` and renormalized.
    Tabulated { v_max: f64, values: Vec<f64> },
    /// One-sided exponentials with unequal weights or scales. Deliberately
    /// asymmetric; used only as a test fixture.
    Skewed {
        weight_positive: f64,
        scale_positive: f64,
        scale_negative: f64,
    },
}

/// Serializable kick field: Poisson clock rate, coin and jump family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickSpec {
    pub rate: f64,
    pub coin: PeriodicFn,
    pub jumps: JumpFamily,
}

/// Normalized symmetric table used by the tabulated family.
#[derive(Clone, Debug)]
pub(crate) struct SymTable {
    pub v_max: f64,
    /// Density at `v = j * v_max / (len - 1)`, `j = 0..len`.
    pub half: Vec<f64>,
    pub m2: f64,
    pub m4: f64,
}

impl SymTable {
    fn new(v_max: f64, values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 3 || !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::InvalidModel(
                "tabulated jump density needs v_max > 0 and at least 3 values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel(
                "tabulated jump density must be finite and non-negative".into(),
            ));
        }
        // Grid points v_i = -v_max + 2 v_max i / (n - 1); fold onto v >= 0.
        let dv = 2.0 * v_max / (n - 1) as f64;
        let half_len = (n - 1) / 2 + 1;
        let sym = |x: f64| -> f64 {
            // linear interpolation of the raw table at v = x
            let u = (x + v_max) / dv;
            let i = (u.floor() as usize).min(n - 2);
            let f = u - i as f64;
            values[i] * (1.0 - f) + values[i + 1] * f
        };
        let step = v_max / (half_len - 1) as f64;
        let mut half: Vec<f64> = (0..half_len)
            .map(|j| {
                let v = j as f64 * step;
                0.5 * (sym(v) + sym(-v))
            })
            .collect();
        let mass = 2.0 * trapezoid_moment(&half, step, 0);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidModel(
                "tabulated jump density is not normalizable".into(),
            ));
        }
        for h in &mut half {
            *h /= mass;
        }
        let m2 = 2.0 * trapezoid_moment(&half, step, 2);
        let m4 = 2.0 * trapezoid_moment(&half, step, 4);
        Ok(SymTable {
            v_max,
            half,
            m2,
            m4,
        })
    }

    pub fn step(&self) -> f64 {
        self.v_max / (self.half.len() - 1) as f64
    }

    pub fn density(&self, v: f64) -> f64 {
        let x = v.abs();
        if x >= self.v_max {
            return if x == self.v_max {
                *self.half.last().unwrap()
            } else {
                0.0
            };
        }
        let u = x / self.step();
        let i = (u.floor() as usize).min(self.half.len() - 2);
        let f = u - i as f64;
        self.half[i] * (1.0 - f) + self.half[i + 1] * f
    }
}

/// Exact `∫_0^{v_max} v^p g(v) dv` for the piecewise linear `g` on the grid.
fn trapezoid_moment(half: &[f64], step: f64, p: i32) -> f64 {
    let mut acc = 0.0;
    for i in 0..half.len() - 1 {
        let (x0, x1) = (i as f64 * step, (i + 1) as f64 * step);
        let (g0, g1) = (half[i], half[i + 1]);
        // g(v) = g0 + (g1 - g0)(v - x0)/step, integrate v^p g exactly
        let slope = (g1 - g0) / step;
        let c = g0 - slope * x0;
        let pf = p as f64;
        let ip = |x: f64| c * x.powi(p + 1) / (pf + 1.0) + slope * x.powi(p + 2) / (pf + 2.0);
        acc += ip(x1) - ip(x0);
    }
    acc
}

/// Validated kick field `j_a(v) = R kappa(a) P_a(v)`.
#[derive(Clone, Debug)]
pub struct KickField {
    spec: KickSpec,
    table: Option<SymTable>,
}

impl KickField {
    /// Checks the hard constraints: positive rate, coin in (0, 1], normalizable
    /// densities. Softer assumptions are left to `validate`.
    pub fn new(spec: KickSpec) -> Result<Self> {
        if !(spec.rate > 0.0 && spec.rate.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "kick rate must be positive and finite, got {}",
                spec.rate
            )));
        }
        check_coin(&spec.coin)?;
        let mut table = None;
        match &spec.jumps {
            JumpFamily::Laplace { scale } => {
                let (lo, _) = scale.range(1024);
                if !scale.is_finite() || lo <= 0.0 {
                    return Err(Error::InvalidModel(
                        "laplace scale must be positive everywhere".into(),
                    ));
                }
            }
            JumpFamily::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidModel("gaussian mixture has no components".into()));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components.iter().any(|c| !(c.weight >= 0.0) || !c.sd.is_finite())
                    || (total - 1.0).abs() > 1e-9
                {
                    return Err(Error::InvalidModel(
                        "mixture weights must be non-negative and sum to 1".into(),
                    ));
                }
                if components.iter().any(|c| c.sd.range(1024).0 < 0.0) {
                    return Err(Error::InvalidModel("mixture sd must be non-negative".into()));
                }
            }
            JumpFamily::Tabulated { v_max, values } => {
                table = Some(SymTable::new(*v_max, values)?);
            }
            JumpFamily::Skewed {
                weight_positive,
                scale_positive,
                scale_negative,
            } => {
                if !(0.0..=1.0).contains(weight_positive)
                    || !(*scale_positive > 0.0)
                    || !(*scale_negative > 0.0)
                {
                    return Err(Error::InvalidModel("bad skewed jump parameters".into()));
                }
            }
        }
        Ok(KickField { spec, table })
    }

    /// Laplace kicks with constant coin and scale.
    pub fn laplace(rate: f64, coin: f64, scale: f64) -> Result<Self> {
        Self::new(KickSpec {
            rate,
            coin: PeriodicFn::constant(coin),
            jumps: JumpFamily::Laplace {
                scale: PeriodicFn::constant(scale),
            },
        })
    }

    pub fn spec(&self) -> &KickSpec {
        &self.spec
    }

    pub fn rate(&self) -> f64 {
        self.spec.rate
    }

    #[inline]
    pub fn coin(&self, a: f64) -> f64 {
        self.spec.coin.eval(a)
    }

    pub fn jumps(&self) -> &JumpFamily {
        &self.spec.jumps
    }

    pub(crate) fn table(&self) -> Option<&SymTable> {
        self.table.as_ref()
    }

    /// True when `P_a` does not depend on `a`.
    pub fn jumps_homogeneous(&self) -> bool {
        match &self.spec.jumps {
            JumpFamily::Laplace { scale } => scale.is_constant(),
            JumpFamily::GaussianMixture { components } => {
                components.iter().all(|c| c.sd.is_constant())
            }
            JumpFamily::Tabulated { .. } | JumpFamily::Skewed { .. } => true,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.spec.coin.is_constant() && self.jumps_homogeneous()
    }

    /// `P_a(v)`
    pub fn density(&self, a: f64, v: f64) -> f64 {
        match &self.spec.jumps {
            JumpFamily::Laplace { scale } => {
                let b = scale.eval(a);
                (-v.abs() / b).exp() / (2.0 * b)
            }
            JumpFamily::GaussianMixture { components } => components
                .iter()
                .map(|c| {
                    let s = c.sd.eval(a);
                    if s == 0.0 {
                        0.0
                    } else {
                        c.weight * (-0.5 * (v / s).powi(2)).exp() / (s * (2.0 * PI).sqrt())
                    }
                })
                .sum(),
            JumpFamily::Tabulated { .. } => self.table.as_ref().unwrap().density(v),
            JumpFamily::Skewed {
                weight_positive,
                scale_positive,
                scale_negative,
            } => {
                if v >= 0.0 {
                    weight_positive * (-v / scale_positive).exp() / scale_positive
                } else {
                    (1.0 - weight_positive) * (v / scale_negative).exp() / scale_negative
                }
            }
        }
    }

    /// `j_a(v) = R kappa(a) P_a(v)`
    pub fn intensity(&self, a: f64, v: f64) -> f64 {
        self.spec.rate * self.coin(a) * self.density(a, v)
    }

    /// `∫ P_a(v) v^2 dv` in closed form.
    pub fn second_moment(&self, a: f64) -> f64 {
        match &self.spec.jumps {
            JumpFamily::Laplace { scale } => 2.0 * scale.eval(a).powi(2),
            JumpFamily::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * c.sd.eval(a).powi(2))
                .sum(),
            JumpFamily::Tabulated { .. } => self.table.as_ref().unwrap().m2,
            JumpFamily::Skewed {
                weight_positive: p,
                scale_positive: bp,
                scale_negative: bn,
            } => 2.0 * (p * bp * bp + (1.0 - p) * bn * bn),
        }
    }

    /// `∫ P_a(v) v^4 dv` in closed form.
    pub fn fourth_moment(&self, a: f64) -> f64 {
        match &self.spec.jumps {
            JumpFamily::Laplace { scale } => 24.0 * scale.eval(a).powi(4),
            JumpFamily::GaussianMixture { components } => components
                .iter()
                .map(|c| 3.0 * c.weight * c.sd.eval(a).powi(4))
                .sum(),
            JumpFamily::Tabulated { .. } => self.table.as_ref().unwrap().m4,
            JumpFamily::Skewed {
                weight_positive: p,
                scale_positive: bp,
                scale_negative: bn,
            } => 24.0 * (p * bp.powi(4) + (1.0 - p) * bn.powi(4)),
        }
    }

    /// Local second-moment rate `R kappa(a) ∫ P_a(v) v^2 dv`.
    #[inline]
    pub fn local_rate(&self, a: f64) -> f64 {
        self.spec.rate * self.coin(a) * self.second_moment(a)
    }

    /// Upper end of the support of `|v|`, if bounded.
    pub fn support_bound(&self) -> Option<f64> {
        self.table.as_ref().map(|t| t.v_max)
    }

    /// A velocity scale for grids: the largest local standard deviation.
    pub fn velocity_scale(&self) -> f64 {
        (0..256)
            .map(|j| self.second_moment(j as f64 / 256.0).sqrt())
            .fold(0.0, f64::max)
    }
}

fn check_coin(coin: &PeriodicFn) -> Result<()> {
    if !coin.is_finite() {
        return Err(Error::InvalidModel("coin must be finite".into()));
    }
    let (lo, hi) = coin.range(4096);
    if lo <= 0.0 || hi > 1.0 {
        return Err(Error::InvalidModel(format!(
            "coin must lie in (0, 1], observed range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Anything that exposes a local second-moment rate on the torus.
pub trait TorusRate {
    fn local_rate(&self, a: f64) -> f64;
}

impl TorusRate for KickField {
    fn local_rate(&self, a: f64) -> f64 {
        KickField::local_rate(self, a)
    }
}
