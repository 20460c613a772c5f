//! Elliptic integrals and the Jacobi amplitude, parameter convention `m = k^2`.

use std::f64::consts::{FRAC_PI_2, PI};

/// Carlson's symmetric integral `R_F(x, y, z)` by duplication.
pub fn carlson_rf(x0: f64, y0: f64, z0: f64) -> f64 {
    let (mut x, mut y, mut z) = (x0, y0, z0);
    let mut a = (x + y + z) / 3.0;
    let q = (3.0 * f64::EPSILON).powf(-1.0 / 6.0)
        * (a - x).abs().max((a - y).abs()).max((a - z).abs());
    let mut scale = 1.0;
    let a0 = a;
    for _ in 0..64 {
        if q * scale < a.abs() {
            break;
        }
        let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
        let lam = sx * sy + sx * sz + sy * sz;
        x = 0.25 * (x + lam);
        y = 0.25 * (y + lam);
        z = 0.25 * (z + lam);
        a = 0.25 * (a + lam);
        scale *= 0.25;
    }
    let xd = (a0 - x0) * scale / a;
    let yd = (a0 - y0) * scale / a;
    let zd = -xd - yd;
    let e2 = xd * yd - zd * zd;
    let e3 = xd * yd * zd;
    (1.0 - e2 / 10.0 + e3 / 14.0 + e2 * e2 / 24.0 - 3.0 * e2 * e3 / 44.0) / a.sqrt()
}

/// Complete integral `K(m)` for `m < 1`.
pub fn ellip_k(m: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, (1.0 - m).sqrt());
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    PI / (2.0 * a)
}

/// Incomplete integral `F(phi | m)` for any real `phi` and `m <= 1`
/// (quasi-periodic: `F(phi + pi) = F(phi) + 2K`).
pub fn ellip_f(phi: f64, m: f64) -> f64 {
    let j = (phi / PI).round();
    let r = phi - j * PI;
    let (s, c) = r.sin_cos();
    let base = s * carlson_rf(c * c, 1.0 - m * s * s, 1.0);
    if j == 0.0 {
        base
    } else {
        base + 2.0 * j * ellip_k(m)
    }
}

/// Jacobi amplitude `am(u | m)` for `0 <= m < 1` and any real `u`, given the
/// complete integral `kk = K(m)`.
pub fn jacobi_am(u: f64, m: f64, kk: f64) -> f64 {
    let j = (u / (2.0 * kk)).round();
    let r = u - 2.0 * j * kk;
    j * PI + am_reduced(r, m)
}

/// `am` for `|u| <= K`, descending AGM (Abramowitz & Stegun 16.4).
fn am_reduced(u: f64, m: f64) -> f64 {
    if m == 0.0 {
        return u;
    }
    let mut a = [0.0f64; 16];
    let mut c = [0.0f64; 16];
    a[0] = 1.0;
    let mut b = (1.0 - m).sqrt();
    c[0] = m.sqrt();
    let mut n = 0;
    while n < 15 && c[n].abs() > 1e-16 {
        let an = 0.5 * (a[n] + b);
        c[n + 1] = 0.5 * (a[n] - b);
        b = (a[n] * b).sqrt();
        a[n + 1] = an;
        n += 1;
    }
    let mut phi = (1u64 << n) as f64 * a[n] * u;
    for i in (1..=n).rev() {
        phi = 0.5 * (phi + (c[i] / a[i] * phi.sin()).clamp(-1.0, 1.0).asin());
    }
    phi.clamp(-FRAC_PI_2, FRAC_PI_2)
}
