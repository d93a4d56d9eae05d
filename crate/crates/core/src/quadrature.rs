//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 60;

/// Integral of `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// The absolute tolerance is rescaled from successive estimates, since the
/// one-panel Simpson value can be far off for near-singular integrands.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut estimate = whole;
    for _ in 0..4 {
        let tol = rel_tol * estimate.abs().max(f64::MIN_POSITIVE);
        let next = recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH);
        let settled = (next - estimate).abs() <= rel_tol * next.abs();
        estimate = next;
        if settled {
            break;
        }
    }
    estimate
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = adaptive_simpson(|x| x * x * x - x, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn near_singular_log() {
        // int_0^{1-e} dx / (1 - x) = -log e
        let e = 1e-6;
        let v = adaptive_simpson(|x| 1.0 / (1.0 - x), 0.0, 1.0 - e, 1e-10);
        assert!((v + e.ln()).abs() < 1e-8);
    }
}
