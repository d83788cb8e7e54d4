//! Slow reference evaluations used by `selftest`, independent of the production
//! special-function code.

use std::f64::consts::FRAC_PI_2;

/// Tanh-sinh quadrature of `f` over `[0, 1]`. The integrand receives `(y, 1 - y)`
/// with the complement computed without cancellation. Halves the step until two
/// levels agree to `rel_tol`.
pub fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    let node = |tau: f64| -> Option<f64> {
        let q = FRAC_PI_2 * tau.sinh();
        let y = 1.0 / (1.0 + (-2.0 * q).exp());
        let yc = 1.0 / (1.0 + (2.0 * q).exp());
        if y == 0.0 || yc == 0.0 {
            return None;
        }
        let w = FRAC_PI_2 * tau.cosh() * y * yc * 2.0;
        Some(w * f(y, yc))
    };
    const TAU_MAX: f64 = 6.5;
    let mut h = 0.5;
    let mut sum = node(0.0).unwrap_or(0.0);
    let mut k = 1;
    while k as f64 * h <= TAU_MAX {
        let t = k as f64 * h;
        sum += node(t).unwrap_or(0.0) + node(-t).unwrap_or(0.0);
        k += 1;
    }
    let mut prev = sum * h;
    for _ in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= TAU_MAX {
            let t = k as f64 * h;
            sum += node(t).unwrap_or(0.0) + node(-t).unwrap_or(0.0);
            k += 2;
        }
        let est = sum * h;
        if (est - prev).abs() <= rel_tol * est.abs() {
            return est;
        }
        prev = est;
    }
    prev
}

/// `Γ(a, x) = x^a e^{-x} ∫_0^1 (1-y)^{-a-1} e^{-x y/(1-y)} dy` for `x > 0`.
pub fn upper_gamma(a: f64, x: f64) -> f64 {
    let integral = tanh_sinh(|y, yc| (-(a + 1.0) * yc.ln() - x * y / yc).exp(), 1e-14);
    x.powf(a) * (-x).exp() * integral
}

/// `E_1(x) = Γ(0, x)`.
pub fn expint_e1(x: f64) -> f64 {
    upper_gamma(0.0, x)
}

/// `2F1(1, 2/L - 1; 2/L; z) = Σ_n (c-1)/(c-1+n) z^n` with `c = 2/L`, summed with
/// Neumaier compensation.
pub fn hyp2f1_learning(l: u32, z: f64) -> f64 {
    let cm1 = 2.0 / l as f64 - 1.0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut zn = 1.0;
    for n in 0..2_000_000u32 {
        let term = cm1 / (cm1 + n as f64) * zn;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
        if term.abs() <= 1e-18 * sum.abs() && n > 2 {
            break;
        }
        zn *= z;
    }
    sum + comp
}

/// Central finite-difference derivative with step `h`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
