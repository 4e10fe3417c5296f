//! Reference implementations the acceptance and property suites check the
//! library against. Everything here is written from the defining formulas,
//! on purpose sharing no code path with the implementation under test.
#![allow(dead_code)]

/// Survival function of the chi-squared distribution with one degree of
/// freedom, as the regularized upper incomplete gamma Q(1/2, x/2):
/// a power series for the lower function on small arguments, a Lentz
/// continued fraction for the upper one otherwise. The implementation under
/// test goes through erfc instead.
pub fn chi2_survival(x: f64) -> f64 {
    assert!(x >= 0.0 && x.is_finite(), "bad statistic {x}");
    let a = 0.5;
    let y = x / 2.0;
    if y == 0.0 {
        return 1.0;
    }
    // exp(a ln y - y - ln gamma(a)); gamma(1/2) = sqrt(pi)
    let prefactor = (a * y.ln() - y - 0.5 * std::f64::consts::PI.ln()).exp();
    if y < a + 1.0 {
        // P(a,y) = prefactor * sum_n y^n / (a (a+1) ... (a+n)), Q = 1 - P
        let mut denom = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..500 {
            denom += 1.0;
            term *= y / denom;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        1.0 - prefactor * sum
    } else {
        // Q(a,y) = prefactor * continued fraction (modified Lentz)
        let tiny = 1e-300;
        let mut b = y + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        prefactor * h
    }
}

/// Pearson's chi-squared statistic from first principles: observed vs
/// expected cell counts under independence, summed over all four cells.
pub fn chi2_from_expected(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = (a + b + c + d) as f64;
    let observed = [a as f64, b as f64, c as f64, d as f64];
    let rows = [(a + b) as f64, (c + d) as f64];
    let cols = [(a + c) as f64, (b + d) as f64];
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] * cols[j] / n;
            let diff = observed[i * 2 + j] - expected;
            stat += diff * diff / expected;
        }
    }
    stat
}

/// Risk ratio and Katz interval from the written-out formulas, with the
/// arithmetic deliberately ordered differently from the library.
pub fn rr_by_hand(a: u64, b: u64, c: u64, d: u64) -> (f64, f64, f64) {
    let (af, bf, cf, df) = (a as f64, b as f64, c as f64, d as f64);
    let rr = (af * (cf + df)) / (cf * (af + bf));
    let se = (1.0 / af + 1.0 / cf - 1.0 / (af + bf) - 1.0 / (cf + df)).sqrt();
    let log_rr = rr.ln();
    (
        rr,
        (log_rr - 1.96 * se).exp(),
        (log_rr + 1.96 * se).exp(),
    )
}

/// Textbook Benjamini-Hochberg: sort, find the largest rank k whose p-value
/// sits at or under (k/m) alpha, reject everything at or under that
/// p-value.
pub fn bh_by_hand(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut threshold = None;
    for k in (1..=m).rev() {
        if sorted[k - 1] <= k as f64 / m as f64 * alpha {
            threshold = Some(sorted[k - 1]);
            break;
        }
    }
    p_values
        .iter()
        .map(|&p| threshold.is_some_and(|t| p <= t))
        .collect()
}
