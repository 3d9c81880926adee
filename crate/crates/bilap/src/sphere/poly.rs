//! Orthogonal-polynomial helpers: Gauss-Legendre rules, Chebyshev (second
//! kind) rules, Gegenbauer and associated Legendre recurrences.

/// Legendre polynomial P_n(x) and its derivative, by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    // derivative from P_n and P_{n-1}
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Exact for polynomials of degree <= 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, dp) = legendre_with_deriv(n, 0.0);
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// Gauss-Chebyshev rule of the second kind: integrates
/// f(t) * sqrt(1 - t^2) on [-1, 1] exactly for polynomial f of degree <= 2n - 1.
///
/// Nodes and weights are analytic: t_k = cos(k pi / (n+1)),
/// w_k = pi/(n+1) * sin^2(k pi / (n+1)).
pub fn gauss_chebyshev2(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let np1 = (n + 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 1..=n {
        let angle = std::f64::consts::PI * k as f64 / np1;
        nodes.push(angle.cos());
        weights.push(std::f64::consts::PI / np1 * angle.sin().powi(2));
    }
    (nodes, weights)
}

/// Gegenbauer polynomial C_n^{(lambda)}(x) by recurrence.
pub fn gegenbauer(n: usize, lambda: f64, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0 * lambda * x,
        _ => {
            let mut c_prev = 1.0;
            let mut c = 2.0 * lambda * x;
            for k in 2..=n {
                let kf = k as f64;
                let c_next =
                    (2.0 * x * (kf + lambda - 1.0) * c - (kf + 2.0 * lambda - 2.0) * c_prev) / kf;
                c_prev = c;
                c = c_next;
            }
            c
        }
    }
}

/// Chebyshev polynomial of the second kind U_n(x) = C_n^{(1)}(x).
pub fn chebyshev_u(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0 * x,
        _ => {
            let mut u_prev = 1.0;
            let mut u = 2.0 * x;
            for _ in 2..=n {
                let u_next = 2.0 * x * u - u_prev;
                u_prev = u;
                u = u_next;
            }
            u
        }
    }
}

/// All of U_0 .. U_n at x, plus derivatives U'_0 .. U'_n.
///
/// Derivatives follow the differentiated recurrence
/// U'_k = 2 U_{k-1} + 2x U'_{k-1} - U'_{k-2}, stable for the mode counts
/// used here (a few hundred).
pub fn chebyshev_u_all_with_deriv(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; n + 1];
    let mut du = vec![0.0; n + 1];
    u[0] = 1.0;
    if n >= 1 {
        u[1] = 2.0 * x;
        du[1] = 2.0;
    }
    for k in 2..=n {
        u[k] = 2.0 * x * u[k - 1] - u[k - 2];
        du[k] = 2.0 * u[k - 1] + 2.0 * x * du[k - 1] - du[k - 2];
    }
    (u, du)
}

/// Associated Legendre function P_l^m(x) for m >= 0, without
/// Condon-Shortley phase.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    assert!(m <= l);
    // P_m^m = (2m-1)!! (1-x^2)^{m/2}
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        let llf = ll as f64;
        let mf = m as f64;
        pll = ((2.0 * llf - 1.0) * x * pmmp1 - (llf + mf - 1.0) * pmm) / (llf - mf);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        // degree 11 exactness: check x^10 -> 2/11
        let int: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(10)).sum();
        assert_abs_diff_eq!(int, 2.0 / 11.0, epsilon = 1e-13);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn chebyshev2_rule_matches_semicircle_moments() {
        let (x, w) = gauss_chebyshev2(8);
        // int t^2 sqrt(1-t^2) = pi/8
        let int: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert_abs_diff_eq!(int, std::f64::consts::PI / 8.0, epsilon = 1e-13);
    }

    #[test]
    fn chebyshev_u_values() {
        assert_abs_diff_eq!(chebyshev_u(2, 0.3), 4.0 * 0.09 - 1.0, epsilon = 1e-15);
        let (u, du) = chebyshev_u_all_with_deriv(5, 0.4);
        assert_abs_diff_eq!(u[5], chebyshev_u(5, 0.4), epsilon = 1e-13);
        // FD check on the derivative
        let h = 1e-6;
        let fd = (chebyshev_u(5, 0.4 + h) - chebyshev_u(5, 0.4 - h)) / (2.0 * h);
        assert_abs_diff_eq!(du[5], fd, epsilon = 1e-7);
    }

    #[test]
    fn gegenbauer_lambda_one_is_chebyshev_u() {
        for n in 0..8 {
            assert_abs_diff_eq!(
                gegenbauer(n, 1.0, 0.37),
                chebyshev_u(n, 0.37),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn assoc_legendre_low_orders() {
        let x = 0.42_f64;
        assert_abs_diff_eq!(assoc_legendre(1, 0, x), x, epsilon = 1e-15);
        assert_abs_diff_eq!(assoc_legendre(1, 1, x), (1.0 - x * x).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            assoc_legendre(2, 0, x),
            0.5 * (3.0 * x * x - 1.0),
            epsilon = 1e-15
        );
    }
}
