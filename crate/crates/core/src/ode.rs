//! Fixed-step classical Runge-Kutta integration, used by the envelope code and
//! as an oracle in tests.

/// Integrates `y' = f(t, y)` from `t0` to `t1` in `steps` equal RK4 steps.
pub fn rk4<F>(f: F, y0: &[f64], t0: f64, t1: f64, steps: usize) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let mut y = y0.to_vec();
    if steps == 0 {
        return y;
    }
    let h = (t1 - t0) / steps as f64;
    let n = y.len();
    let mut tmp = vec![0.0; n];
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        let k2 = f(t + 0.5 * h, &tmp);
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        let k3 = f(t + 0.5 * h, &tmp);
        for j in 0..n {
            tmp[j] = y[j] + h * k3[j];
        }
        let k4 = f(t + h, &tmp);
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Samples an RK4 solution at each time in `times` (ascending, starting at or after `t0`).
pub fn rk4_path<F>(f: F, y0: &[f64], t0: f64, times: &[f64], steps_per_unit: f64) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.to_vec();
    let mut t = t0;
    for &target in times {
        let steps = ((target - t) * steps_per_unit).ceil().max(1.0) as usize;
        if target > t {
            y = rk4(&f, &y, t, target, steps);
            t = target;
        }
        out.push(y.clone());
    }
    out
}

/// First time the scalar ODE `y' = f(t, y)` reaches `level` from below, refined by bisection
/// on RK4 sub-steps. Returns `None` if `level` is not reached by `t_max`.
pub fn rk4_crossing<F>(f: F, y0: f64, level: f64, h: f64, t_max: f64) -> Option<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let g = |t: f64, y: &[f64]| vec![f(t, y[0])];
    let mut t = 0.0;
    let mut y = y0;
    while t < t_max {
        let next = rk4(g, &[y], t, t + h, 1)[0];
        if next >= level {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let ym = rk4(g, &[y], t, t + mid, 1)[0];
                if ym >= level {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-15 * (t + h) {
                    break;
                }
            }
            return Some(t + 0.5 * (lo + hi));
        }
        y = next;
        t += h;
    }
    None
}
