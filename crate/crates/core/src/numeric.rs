//! Scalar minimization and fixed-point helpers shared by the solvers.

/// Golden-section search for the minimum of `f` on `[a, b]`.
///
/// Assumes `f` is unimodal on the bracket; shrinks it below `tol` width.
pub(crate) fn golden_section_min<F: Fn(f64) -> f64>(
    f: &F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Bounded scalar minimization: coarse grid seed, then golden-section
/// refinement on the bracketing interval.
pub(crate) fn minimize_scalar<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    grid: usize,
    tol: f64,
) -> f64 {
    debug_assert!(grid >= 2 && hi > lo);
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best_i = 0usize;
    let mut best = f64::INFINITY;
    for i in 0..grid {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let a = if best_i == 0 {
        lo
    } else {
        lo + step * (best_i - 1) as f64
    };
    let b = if best_i == grid - 1 {
        hi
    } else {
        lo + step * (best_i + 1) as f64
    };
    golden_section_min(&f, a, b, tol)
}

pub(crate) struct FixedPointOutcome {
    pub value: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Damped fixed-point iteration for x = g(x).
pub(crate) fn damped_fixed_point<G: Fn(f64) -> f64>(
    g: G,
    x0: f64,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> FixedPointOutcome {
    let mut x = x0;
    for _ in 0..max_iter {
        let gx = g(x);
        let residual = (gx - x).abs();
        if residual <= tol {
            return FixedPointOutcome {
                value: x,
                residual,
                converged: true,
            };
        }
        x += damping * (gx - x);
    }
    let residual = (g(x) - x).abs();
    FixedPointOutcome {
        value: x,
        residual,
        converged: residual <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_minimum() {
        let x = minimize_scalar(|x| (x - 1.7).powi(2), 0.0, 6.0, 256, 1e-12);
        assert!((x - 1.7).abs() < 1e-9);
    }

    #[test]
    fn boundary_minimum_stays_in_bounds() {
        let x = minimize_scalar(|x| -x, 0.0, 6.0, 256, 1e-12);
        assert!(x <= 6.0 && x > 5.999_999);
    }

    #[test]
    fn fixed_point_converges_on_linear_map() {
        let out = damped_fixed_point(|x| 0.5 * x + 1.0, 0.0, 0.5, 1e-12, 10_000);
        assert!(out.converged);
        assert!((out.value - 2.0).abs() < 1e-10);
    }
}
