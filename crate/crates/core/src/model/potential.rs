use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Serializable description of a period-1 potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reflection_point: Option<f64>,
    },
    /// `V(x) = amplitude * (1 - cos 2 pi x)`; minimum 0 at x = 0.
    Cosine {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reflection_point: Option<f64>,
    },
    /// Values at `x = j / n`, joined by a periodic cubic spline.
    Tabulated {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reflection_point: Option<f64>,
    },
}

#[derive(Clone, Debug)]
enum Shape {
    Zero,
    Cosine { amplitude: f64 },
    Spline(PeriodicSpline),
}

/// Bounded periodic potential with period 1.
#[derive(Clone, Debug)]
pub struct Potential {
    spec: PotentialSpec,
    shape: Shape,
    vbar: f64,
    vmin: f64,
    max_slope: f64,
}

impl Potential {
    pub fn new(spec: PotentialSpec) -> Result<Self> {
        let shape = match &spec {
            PotentialSpec::Zero { .. } => Shape::Zero,
            PotentialSpec::Cosine { amplitude, .. } => {
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "cosine amplitude must be finite and non-negative, got {amplitude}"
                    )));
                }
                Shape::Cosine {
                    amplitude: *amplitude,
                }
            }
            PotentialSpec::Tabulated { values, .. } => {
                if values.len() < 4 || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(
                        "tabulated potential needs at least 4 finite values".into(),
                    ));
                }
                Shape::Spline(PeriodicSpline::new(values))
            }
        };
        if let Some(r) = spec.reflection_point() {
            if !r.is_finite() {
                return Err(Error::InvalidModel("reflection point must be finite".into()));
            }
        }
        let mut pot = Potential {
            spec,
            shape,
            vbar: 0.0,
            vmin: 0.0,
            max_slope: 0.0,
        };
        match pot.shape {
            Shape::Zero => {}
            Shape::Cosine { amplitude } => {
                pot.vbar = 2.0 * amplitude;
                pot.max_slope = TAU * amplitude;
            }
            Shape::Spline(_) => {
                let n = 8192;
                let (mut lo, mut hi, mut slope) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
                for j in 0..n {
                    let x = j as f64 / n as f64;
                    let v = pot.value(x);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    slope = slope.max(pot.derivative(x).abs());
                }
                pot.vbar = hi;
                pot.vmin = lo;
                pot.max_slope = slope;
            }
        }
        Ok(pot)
    }

    pub fn zero() -> Self {
        Self::new(PotentialSpec::Zero {
            reflection_point: None,
        })
        .expect("zero potential")
    }

    pub fn cosine(amplitude: f64) -> Result<Self> {
        Self::new(PotentialSpec::Cosine {
            amplitude,
            reflection_point: Some(0.0),
        })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, Shape::Zero)
            || matches!(self.shape, Shape::Cosine { amplitude } if amplitude == 0.0)
    }

    /// `A` when the potential is `A (1 - cos 2 pi x)` with `A > 0`.
    pub fn cosine_amplitude(&self) -> Option<f64> {
        match self.shape {
            Shape::Cosine { amplitude } if amplitude > 0.0 => Some(amplitude),
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Cosine { amplitude } => amplitude * (1.0 - (TAU * x).cos()),
            Shape::Spline(s) => s.value(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Cosine { amplitude } => amplitude * TAU * (TAU * x).sin(),
            Shape::Spline(s) => s.derivative(x),
        }
    }

    /// `-dV/dx`
    #[inline]
    pub fn force(&self, x: f64) -> f64 {
        -self.derivative(x)
    }

    /// Supremum of `V` over the torus.
    pub fn vbar(&self) -> f64 {
        self.vbar
    }

    pub fn vmin(&self) -> f64 {
        self.vmin
    }

    pub fn max_slope(&self) -> f64 {
        self.max_slope
    }

    pub fn reflection_point(&self) -> Option<f64> {
        self.spec.reflection_point()
    }
}

impl PotentialSpec {
    pub fn reflection_point(&self) -> Option<f64> {
        match self {
            PotentialSpec::Zero { reflection_point }
            | PotentialSpec::Cosine {
                reflection_point, ..
            }
            | PotentialSpec::Tabulated {
                reflection_point, ..
            } => *reflection_point,
        }
    }
}

/// Periodic cubic spline through equispaced samples on [0, 1).
#[derive(Clone, Debug)]
struct PeriodicSpline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicSpline {
    fn new(y: &[f64]) -> Self {
        let n = y.len();
        let h = 1.0 / n as f64;
        let rhs: Vec<f64> = (0..n)
            .map(|j| 6.0 / (h * h) * (y[(j + 1) % n] - 2.0 * y[j] + y[(j + n - 1) % n]))
            .collect();
        let m = solve_cyclic(n, 1.0, 4.0, 1.0, &rhs);
        PeriodicSpline { y: y.to_vec(), m }
    }

    fn locate(&self, x: f64) -> (usize, f64, f64) {
        let n = self.y.len();
        let u = x.rem_euclid(1.0) * n as f64;
        let j = (u.floor() as usize).min(n - 1);
        (j, u - j as f64, 1.0 / n as f64)
    }

    fn value(&self, x: f64) -> f64 {
        let n = self.y.len();
        let (j, t, h) = self.locate(x);
        let (y0, y1) = (self.y[j], self.y[(j + 1) % n]);
        let (m0, m1) = (self.m[j], self.m[(j + 1) % n]);
        let s = 1.0 - t;
        s * y0 + t * y1 + h * h / 6.0 * ((s * s * s - s) * m0 + (t * t * t - t) * m1)
    }

    fn derivative(&self, x: f64) -> f64 {
        let n = self.y.len();
        let (j, t, h) = self.locate(x);
        let (y0, y1) = (self.y[j], self.y[(j + 1) % n]);
        let (m0, m1) = (self.m[j], self.m[(j + 1) % n]);
        let s = 1.0 - t;
        (y1 - y0) / h + h / 6.0 * (-(3.0 * s * s - 1.0) * m0 + (3.0 * t * t - 1.0) * m1)
    }
}

/// Solves the cyclic tridiagonal system with constant bands (Sherman-Morrison).
fn solve_cyclic(n: usize, lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Vec<f64> {
    let gamma = -diag;
    let mut b = vec![diag; n];
    b[0] = diag - gamma;
    b[n - 1] = diag - lower * upper / gamma;
    let thomas = |d: &[f64]| -> Vec<f64> {
        let mut c_star = vec![0.0; n];
        let mut d_star = vec![0.0; n];
        c_star[0] = upper / b[0];
        d_star[0] = d[0] / b[0];
        for i in 1..n {
            let denom = b[i] - lower * c_star[i - 1];
            c_star[i] = upper / denom;
            d_star[i] = (d[i] - lower * d_star[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d_star[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d_star[i] - c_star[i] * x[i + 1];
        }
        x
    };
    let x = thomas(rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lower;
    let z = thomas(&u);
    let fact = (x[0] + upper * x[n - 1] / gamma) / (1.0 + z[0] + upper * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_values_and_bounds() {
        let v = Potential::cosine(0.5).unwrap();
        assert_eq!(v.value(0.0), 0.0);
        assert!((v.value(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(v.vbar(), 1.0);
        for j in 0..100 {
            let x = j as f64 * 0.0137;
            assert!((v.value(x + 1.0) - v.value(x)).abs() < 1e-12);
            assert!((v.value(-x) - v.value(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_amplitude_rejected() {
        assert!(Potential::cosine(-0.1).is_err());
    }

    #[test]
    fn spline_reproduces_smooth_function() {
        let n = 64;
        let f = |x: f64| 0.3 * (1.0 - (TAU * x).cos()) + 0.1 * (2.0 * TAU * x).sin().powi(2);
        let values: Vec<f64> = (0..n).map(|j| f(j as f64 / n as f64)).collect();
        let v = Potential::new(PotentialSpec::Tabulated {
            values,
            reflection_point: None,
        })
        .unwrap();
        for j in 0..333 {
            let x = j as f64 / 333.0;
            assert!((v.value(x) - f(x)).abs() < 2e-5, "x={x}");
            let d = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6;
            assert!((v.derivative(x) - d).abs() < 2e-3, "x={x}");
        }
        // nodes are interpolated exactly and the spline is periodic
        assert!((v.value(0.25) - f(0.25)).abs() < 1e-12);
        assert!((v.value(0.999_999_999) - v.value(0.0)).abs() < 1e-7);
    }
}
