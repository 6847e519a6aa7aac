//! Two-sample Kolmogorov–Smirnov test.

/// `sup_x |F_a(x) − F_b(x)|` over the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic survival function `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2j²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let a2 = -2.0 * lambda * lambda;
    let mut fac = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0;
    for j in 1..=100 {
        let term = fac * (a2 * (j * j) as f64).exp();
        sum += term;
        if term.abs() <= 1e-3 * prev || term.abs() <= 1e-12 * sum {
            return sum.clamp(0.0, 1.0);
        }
        fac = -fac;
        prev = term.abs();
    }
    1.0
}

/// Asymptotic p-value with the effective-size correction
/// `λ = (√nₑ + 0.12 + 0.11/√nₑ)·D`, `nₑ = nm/(n+m)`.
pub fn ks_pvalue_asymptotic(d: f64, n: usize, m: usize) -> f64 {
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

/// Exact `P(D ≥ d)` under the null by counting monotone lattice paths that
/// stay strictly inside the band `|i/n − j/m| < d`.
pub fn ks_pvalue_exact(d: f64, n: usize, m: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let tol = 1e-12;
    let inside = |i: usize, j: usize| (i as f64 / n as f64 - j as f64 / m as f64).abs() < d - tol;
    let mut row = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            row[j] = if !inside(i, j) {
                0.0
            } else if i == 0 && j == 0 {
                1.0
            } else {
                let up = if i > 0 { row[j] } else { 0.0 };
                let left = if j > 0 { row[j - 1] } else { 0.0 };
                up + left
            };
        }
    }
    let mut total = 1.0f64;
    for k in 1..=n {
        total = total * (m + k) as f64 / k as f64;
    }
    (1.0 - row[m] / total).clamp(0.0, 1.0)
}

/// Sample sizes up to which the exact p-value may be requested.
pub const EXACT_LIMIT: usize = 25;

/// `(D, p)`; the exact distribution is used when requested and both samples
/// have at most [`EXACT_LIMIT`] elements.
pub fn ks_test(a: &[f64], b: &[f64], exact: bool) -> (f64, f64) {
    let d = ks_statistic(a, b);
    let p = if exact && a.len() <= EXACT_LIMIT && b.len() <= EXACT_LIMIT {
        ks_pvalue_exact(d, a.len(), b.len())
    } else {
        ks_pvalue_asymptotic(d, a.len(), b.len())
    };
    (d, p.max(f64::MIN_POSITIVE))
}
