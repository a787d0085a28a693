//! Scalar roots used by the herding models.

/// Bisection on `[lo, hi]` for a function positive at `lo` side and nonpositive at `hi`
/// side, or the reverse. Stops when the bracket no longer shrinks.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let lo_sign = f(lo) > 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nonnegative root of `y = tanh(gamma * y)`: 0 for `gamma <= 1`, otherwise the unique
/// positive root.
pub fn tanh_fixed_point(gamma: f64) -> f64 {
    if gamma <= 1.0 {
        return 0.0;
    }
    // tanh(gamma*y) - y is positive on (0, y*) and negative on (y*, 1].
    let f = |y: f64| (gamma * y).tanh() - y;
    let mut lo = 0.5;
    while f(lo) <= 0.0 {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return 0.0;
        }
    }
    bisect(f, lo, 1.0)
}

/// Positive root `y*` of `1 - y * tanh(gamma * y) = 0`.
pub fn convergence_root(gamma: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    let g = |y: f64| y * (gamma * y).tanh() - 1.0;
    let mut hi = 1.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    bisect(g, 0.0, hi)
}

/// `2 * sqrt(beta) * |y*|`, the constant bounding the scaled distance between the
/// finite opinion process and its deterministic limit.
pub fn convergence_constant(beta: f64, gamma: f64) -> f64 {
    assert!(beta > 0.0, "beta must be positive");
    2.0 * beta.sqrt() * convergence_root(gamma).abs()
}

/// Herding intensity above which the stationary opinion law is bimodal: `(n/2) ln((n+2)/n)`.
pub fn gamma_threshold(n: usize) -> f64 {
    assert!(n >= 2, "threshold needs n >= 2");
    let n = n as f64;
    0.5 * n * (2.0 / n).ln_1p()
}
