//! Gauss-Legendre quadrature nodes, plus composite panels for long ranges.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre polynomial; nodes come out ascending.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Tricomi-style initial guess, then Newton.
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The `n`-point rule mapped onto `[a, b]`.
pub fn on_interval(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Composite rule on `[a, b]`: panels no longer than `max_len`, `order`
/// points each. Panel boundaries are uniform, so the node set depends only
/// on `(a, b, max_len, order)`.
pub fn composite(order: usize, a: f64, b: f64, max_len: f64) -> Vec<(f64, f64)> {
    assert!(b >= a && max_len > 0.0);
    if b == a {
        return Vec::new();
    }
    let n_panels = ((b - a) / max_len).ceil().max(1.0) as usize;
    let step = (b - a) / n_panels as f64;
    let mut out = Vec::with_capacity(n_panels * order);
    for p in 0..n_panels {
        let lo = a + p as f64 * step;
        out.extend(on_interval(order, lo, lo + step));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_interval_length() {
        for n in 1..=24 {
            let s: f64 = gauss_legendre(n).iter().map(|(_, w)| w).sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}: weight sum {s}");
        }
    }

    #[test]
    fn exact_on_polynomials_up_to_2n_minus_1() {
        // 5-point rule integrates x^9 over [0, 1] exactly: 1/10.
        let q: f64 = on_interval(5, 0.0, 1.0)
            .iter()
            .map(|(x, w)| w * x.powi(9))
            .sum();
        assert!((q - 0.1).abs() < 1e-14);
    }

    #[test]
    fn composite_matches_single_panel_on_smooth_integrand() {
        let f = |x: f64| (1.5 * x).sin() * (-x).exp();
        let a: f64 = on_interval(40, 0.0, 3.0).iter().map(|(x, w)| w * f(*x)).sum();
        let b: f64 = composite(12, 0.0, 3.0, 0.5).iter().map(|(x, w)| w * f(*x)).sum();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn high_order_nodes_stay_sorted_and_inside() {
        let nodes = gauss_legendre(64);
        for pair in nodes.windows(2) {
            assert!(pair[0].0 < pair[1].0);
        }
        assert!(nodes.iter().all(|(x, _)| x.abs() < 1.0));
    }
}
