//! Special functions: upper incomplete gamma on `a ∈ (-1, 1]`, the exponential
//! integral `E1`, and the `2F1(1, 2/L - 1, 2/L; z)` family used for deep-net
//! learning times.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecFunError {
    #[error("argument x = {x} must be positive")]
    NonPositiveX { x: f64 },
    #[error("parameter a = {a} outside (-1, 1]")]
    AOutOfRange { a: f64 },
    #[error("hypergeometric argument z = {z} outside [0, 1)")]
    ZOutOfRange { z: f64 },
    #[error("depth L = {l} must be at least 3")]
    DepthTooSmall { l: u32 },
    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },
}

pub type Result<T> = std::result::Result<T, SpecFunError>;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments of `Γ(a, x)`, validated on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaArgs {
    a: f64,
    x: f64,
}

impl GammaArgs {
    pub fn new(a: f64, x: f64) -> Result<Self> {
        if !(a > -1.0 && a <= 1.0) {
            return Err(SpecFunError::AOutOfRange { a });
        }
        if !(x > 0.0) {
            return Err(SpecFunError::NonPositiveX { x });
        }
        Ok(Self { a, x })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn x(&self) -> f64 {
        self.x
    }
}

const MAX_ITER: usize = 100_000;
const CF_SWITCH: f64 = 1.5;
const SMALL_A: f64 = 0.1;
const TINY: f64 = 1e-300;

/// `Γ(a, x) = ∫_x^∞ t^{a-1} e^{-t} dt`.
pub fn upper_gamma(args: GammaArgs) -> Result<f64> {
    let (a, x) = (args.a, args.x);
    if x >= CF_SWITCH {
        return Ok(upper_gamma_scaled(args)? * (-x).exp());
    }
    upper_gamma_small_x(a, x)
}

/// `e^x Γ(a, x)`; stays finite where `Γ(a, x)` underflows.
pub fn upper_gamma_scaled(args: GammaArgs) -> Result<f64> {
    let (a, x) = (args.a, args.x);
    if a == 1.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        return expint_e1_scaled(x);
    }
    if x >= CF_SWITCH {
        return Ok(x.powf(a) * gamma_cf(a, x)?);
    }
    Ok(upper_gamma_small_x(a, x)? * x.exp())
}

fn upper_gamma_small_x(a: f64, x: f64) -> Result<f64> {
    if a == 1.0 {
        return Ok((-x).exp());
    }
    if a == 0.0 {
        return expint_e1(x);
    }
    if a.abs() < SMALL_A {
        return small_a_series(a, x);
    }
    if a > 0.0 {
        Ok(gamma_fn(a) - lower_gamma_series(a, x)?)
    } else {
        // a + 1 lies in (0, 1); step down by the recurrence.
        let upper = upper_gamma_small_x(a + 1.0, x)?;
        Ok((upper - x.powf(a) * (-x).exp()) / a)
    }
}

/// Lentz evaluation of the continued fraction
/// `1/(x+1-a- 1(1-a)/(x+3-a- 2(2-a)/(x+5-a- ...)))`, so that `Γ(a,x) = x^a e^{-x} · cf`.
fn gamma_cf(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok(h);
        }
    }
    Err(SpecFunError::NotConverged {
        what: "incomplete gamma continued fraction",
        iterations: MAX_ITER,
    })
}

/// `γ(a, x) = x^a e^{-x} Σ_n x^n / (a (a+1) ... (a+n))`, for `a > 0`.
fn lower_gamma_series(a: f64, x: f64) -> Result<f64> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            return Ok(sum * (a * x.ln() - x).exp());
        }
    }
    Err(SpecFunError::NotConverged {
        what: "lower gamma series",
        iterations: MAX_ITER,
    })
}

/// Riemann zeta at 2..=21, for the Maclaurin series of `ln Γ(1 + a)`.
const ZETA: [f64; 20] = [
    1.644_934_066_848_226_4,
    1.202_056_903_159_594_3,
    1.082_323_233_711_138_2,
    1.036_927_755_143_37,
    1.017_343_061_984_449,
    1.008_349_277_381_922_8,
    1.004_077_356_197_944_3,
    1.002_008_392_826_082_2,
    1.000_994_575_127_818_1,
    1.000_494_188_604_119_5,
    1.000_246_086_553_308,
    1.000_122_713_347_578_5,
    1.000_061_248_135_058_7,
    1.000_030_588_236_307,
    1.000_015_282_259_408_7,
    1.000_007_637_197_637_9,
    1.000_003_817_293_265,
    1.000_001_908_212_716_6,
    1.000_000_953_962_033_9,
    1.000_000_476_932_986_8,
];

/// `Γ(a, x)` for `|a|` near zero without the `1/a` cancellation:
/// `[(Γ(1+a) - 1) - (x^a - 1)]/a - Σ_{n≥1} (-1)^n x^{a+n} / (n! (a+n))`.
fn small_a_series(a: f64, x: f64) -> Result<f64> {
    let mut lg = -EULER_GAMMA * a;
    let mut ak = a;
    for (k, z) in ZETA.iter().enumerate() {
        ak *= a;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        lg += sign * z * ak / (k as f64 + 2.0);
    }
    let head = if a == 0.0 {
        -EULER_GAMMA - x.ln()
    } else {
        (lg.exp_m1() - (a * x.ln()).exp_m1()) / a
    };
    let xa = x.powf(a);
    let mut pow = 1.0;
    let mut tail = 0.0;
    for n in 1..MAX_ITER {
        pow *= -x / n as f64;
        let term = xa * pow / (a + n as f64);
        tail += term;
        if term.abs() < 1e-17 * tail.abs().max(head.abs()) {
            return Ok(head - tail);
        }
    }
    Err(SpecFunError::NotConverged {
        what: "small-a incomplete gamma series",
        iterations: MAX_ITER,
    })
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function for positive arguments (Lanczos, g = 7).
pub fn gamma_fn(a: f64) -> f64 {
    if a < 0.5 {
        return std::f64::consts::PI / ((std::f64::consts::PI * a).sin() * gamma_fn(1.0 - a));
    }
    let z = a - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Exponential integral `E1(x) = Γ(0, x)`.
pub fn expint_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveX { x });
    }
    if x <= 1.0 {
        e1_series(x)
    } else {
        Ok(e1_cf(x)? * (-x).exp())
    }
}

/// `e^x E1(x)`.
pub fn expint_e1_scaled(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(SpecFunError::NonPositiveX { x });
    }
    if x <= 1.0 {
        Ok(e1_series(x)? * x.exp())
    } else {
        e1_cf(x)
    }
}

fn e1_series(x: f64) -> Result<f64> {
    // E1(x) = -γ - ln x - Σ_{n≥1} (-x)^n / (n n!)
    let mut pow = 1.0;
    let mut sum = 0.0;
    for n in 1..MAX_ITER {
        pow *= -x / n as f64;
        let term = pow / n as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            return Ok(-EULER_GAMMA - x.ln() - sum);
        }
    }
    Err(SpecFunError::NotConverged {
        what: "E1 series",
        iterations: MAX_ITER,
    })
}

/// Continued fraction for `e^x E1(x)`, modified Lentz.
fn e1_cf(x: f64) -> Result<f64> {
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok(h);
        }
    }
    Err(SpecFunError::NotConverged {
        what: "E1 continued fraction",
        iterations: MAX_ITER,
    })
}

const HYP_MAX_TERMS: usize = 50_000_000;

/// `2F1(1, 2/L - 1, 2/L; z)` by its power series.
///
/// With `c = 2/L` the k-th term collapses to `(c - 1)/(c - 1 + k) · z^k`.
pub fn hyp2f1_learning(l: u32, z: f64) -> Result<f64> {
    if l < 3 {
        return Err(SpecFunError::DepthTooSmall { l });
    }
    if !(0.0..1.0).contains(&z) {
        return Err(SpecFunError::ZOutOfRange { z });
    }
    let c = 2.0 / l as f64;
    let mut sum = 1.0;
    let mut zk = 1.0;
    for k in 1..HYP_MAX_TERMS {
        zk *= z;
        let term = (c - 1.0) / (c - 1.0 + k as f64) * zk;
        sum += term;
        if term.abs() < 1e-14 * sum.abs() {
            return Ok(sum);
        }
    }
    Err(SpecFunError::NotConverged {
        what: "2F1 series",
        iterations: HYP_MAX_TERMS,
    })
}
