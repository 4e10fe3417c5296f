//! Contingency-table statistics: relative risk with Katz confidence
//! intervals, Pearson's chi-squared test, and Benjamini-Hochberg false
//! discovery control.

use crate::{Error, Result};

/// A 2x2 table of patient counts for one diagnosis within one stratum:
///
/// ```text
///            comorbidity   no comorbidity
/// cases           a              b
/// controls        c              d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> ContingencyTable {
        ContingencyTable { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// The reliability gate: every cell strictly greater than 10.
    pub fn all_cells_exceed(&self, threshold: u64) -> bool {
        self.a > threshold && self.b > threshold && self.c > threshold && self.d > threshold
    }
}

/// Relative risk point estimate with its 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeRisk {
    pub rr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Risk ratio (a/(a+b)) / (c/(c+d)) with the Katz log-normal interval
/// exp(ln RR ± 1.96 sqrt(1/a − 1/(a+b) + 1/c − 1/(c+d))).
///
/// Requires a, c > 0 and both margins nonzero; gated tables never reach this
/// in the pipeline, but direct callers get a structured error.
pub fn relative_risk(t: ContingencyTable) -> Result<RelativeRisk> {
    let ContingencyTable { a, b, c, d } = t;
    if a == 0 || c == 0 {
        return Err(Error::UndefinedRelativeRisk { a, b, c, d });
    }
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let risk_cases = a / (a + b);
    let risk_controls = c / (c + d);
    let rr = risk_cases / risk_controls;
    let se = (1.0 / a - 1.0 / (a + b) + 1.0 / c - 1.0 / (c + d)).sqrt();
    let delta = 1.96 * se;
    Ok(RelativeRisk {
        rr,
        ci_low: (rr.ln() - delta).exp(),
        ci_high: (rr.ln() + delta).exp(),
    })
}

/// Pearson's chi-squared statistic for a 2x2 table (one degree of freedom,
/// no continuity correction): N (ad − bc)^2 / ((a+b)(c+d)(a+c)(b+d)).
///
/// Errors if any margin is zero; the statistic is undefined there.
pub fn chi_squared_stat(t: ContingencyTable) -> Result<f64> {
    let ContingencyTable { a, b, c, d } = t;
    let (row1, row2, col1, col2) = (a + b, c + d, a + c, b + d);
    if row1 == 0 || row2 == 0 || col1 == 0 || col2 == 0 {
        return Err(Error::DegenerateTable { a, b, c, d });
    }
    let n = t.total() as f64;
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let det = a * d - b * c;
    Ok(n * det * det / (row1 as f64 * row2 as f64 * col1 as f64 * col2 as f64))
}

/// Upper tail of the chi-squared distribution with one degree of freedom.
/// For 1 dof, P(X^2 >= x) = erfc(sqrt(x/2)).
pub fn chi_squared_p(stat: f64) -> f64 {
    libm::erfc((stat / 2.0).sqrt())
}

/// Chi-squared test of independence for a 2x2 table.
pub fn chi_squared_test(t: ContingencyTable) -> Result<f64> {
    Ok(chi_squared_p(chi_squared_stat(t)?))
}

/// Outcome of a Benjamini-Hochberg pass over one family of p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    /// Level the procedure controlled the FDR at.
    pub alpha: f64,
    /// Number of hypotheses in the family.
    pub m: usize,
    /// For each input p-value in input order: whether it was rejected.
    pub rejected: Vec<bool>,
    /// BH-adjusted q-values in input order, clamped to [0, 1].
    pub q_values: Vec<f64>,
}

/// Benjamini-Hochberg step-up at level `alpha`.
///
/// Rejects hypotheses 1..=k* in p-value order, where k* is the largest k
/// with p(k) <= (k/m) alpha. q-values are the monotone adjusted values
/// q(i) = min over j >= rank(i) of (m/j) p(j). Equal p-values always share
/// one outcome since the threshold comparison is on the value, not the rank
/// position.
///
/// NaN p-values are a caller bug and panic; p-values outside [0, 1] too.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> BhResult {
    assert!((0.0..=1.0).contains(&alpha), "alpha {alpha} outside [0, 1]");
    let m = p_values.len();
    for &p in p_values {
        assert!(
            (0.0..=1.0).contains(&p),
            "p-value {p} outside [0, 1]"
        );
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));

    // Largest k with p(k) <= (k/m) alpha. Comparing p*m <= k*alpha avoids
    // the division and its rounding.
    let mut cutoff = None;
    for (rank0, &idx) in order.iter().enumerate() {
        let k = rank0 + 1;
        if p_values[idx] * m as f64 <= k as f64 * alpha {
            cutoff = Some(p_values[idx]);
        }
    }

    let rejected = p_values
        .iter()
        .map(|&p| cutoff.is_some_and(|c| p <= c))
        .collect();

    // Suffix minimum of (m/k) p(k) over the sorted order.
    let mut q_sorted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for rank0 in (0..m).rev() {
        let k = rank0 + 1;
        let raw = p_values[order[rank0]] * m as f64 / k as f64;
        running = running.min(raw);
        q_sorted[rank0] = running.min(1.0);
    }
    let mut q_values = vec![0.0; m];
    for (rank0, &idx) in order.iter().enumerate() {
        q_values[idx] = q_sorted[rank0];
    }

    BhResult {
        alpha,
        m,
        rejected,
        q_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn relative_risk_known_value() {
        // risk 30/100 vs 15/100
        let t = ContingencyTable::new(30, 70, 15, 85);
        let rr = relative_risk(t).unwrap();
        assert!(close(rr.rr, 2.0, 1e-12), "{rr:?}");
        // se = sqrt(1/30 - 1/100 + 1/15 - 1/100) = sqrt(0.08)
        let expect_low = (2.0f64.ln() - 1.96 * 0.08f64.sqrt()).exp();
        let expect_high = (2.0f64.ln() + 1.96 * 0.08f64.sqrt()).exp();
        assert!(close(rr.ci_low, expect_low, 1e-12));
        assert!(close(rr.ci_high, expect_high, 1e-12));
        assert!(rr.ci_low < rr.rr && rr.rr < rr.ci_high);
    }

    #[test]
    fn relative_risk_undefined_cases() {
        assert!(relative_risk(ContingencyTable::new(0, 10, 5, 10)).is_err());
        assert!(relative_risk(ContingencyTable::new(5, 10, 0, 10)).is_err());
    }

    #[test]
    fn chi_squared_known_value() {
        // Balanced 2x2 with det = ad - bc
        let t = ContingencyTable::new(20, 80, 10, 90);
        // chi2 = 200*(20*90-80*10)^2/(100*100*30*170)
        let expect = 200.0 * (1800.0f64 - 800.0).powi(2) / (100.0 * 100.0 * 30.0 * 170.0);
        let got = chi_squared_stat(t).unwrap();
        assert!(close(got, expect, 1e-12), "{got} vs {expect}");
    }

    #[test]
    fn chi_squared_independence_gives_zero() {
        // Proportional rows: no association
        let t = ContingencyTable::new(10, 90, 30, 270);
        assert!(chi_squared_stat(t).unwrap().abs() < 1e-12);
        assert!(close(chi_squared_test(t).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn chi_squared_p_reference_points() {
        // Critical values of the 1-dof distribution
        assert!(close(chi_squared_p(3.841458820694124), 0.05, 1e-9));
        assert!(close(chi_squared_p(6.634896601021215), 0.01, 1e-9));
        assert!(close(chi_squared_p(0.0), 1.0, 1e-15));
    }

    #[test]
    fn chi_squared_degenerate_margins() {
        assert!(chi_squared_stat(ContingencyTable::new(0, 0, 5, 10)).is_err());
        assert!(chi_squared_stat(ContingencyTable::new(0, 5, 0, 10)).is_err());
    }

    #[test]
    fn bh_textbook_example() {
        // m = 5, alpha = 0.05: sorted p (0.01, 0.02, 0.03, 0.04, 0.2);
        // thresholds (0.01, 0.02, 0.03, 0.04, 0.05) so k* = 4.
        let p = [0.04, 0.01, 0.2, 0.03, 0.02];
        let r = benjamini_hochberg(&p, 0.05);
        assert_eq!(r.rejected, vec![true, true, false, true, true]);
        // q(5) = 0.2, q(4) = min(0.05, 0.2) = 0.05 etc.
        assert!(close(r.q_values[2], 0.2, 1e-12));
        assert!(close(r.q_values[0], 0.05, 1e-12));
        assert!(close(r.q_values[1], 0.05, 1e-12));
    }

    #[test]
    fn bh_rejects_none_when_smallest_p_large() {
        let p = [0.5, 0.9, 0.7];
        let r = benjamini_hochberg(&p, 0.05);
        assert!(r.rejected.iter().all(|&x| !x));
        assert!(r.q_values.iter().all(|&q| q <= 1.0));
    }

    #[test]
    fn bh_step_up_rescues_laggards() {
        // p = (0.01, 0.049, 0.05), m = 3: k=3 threshold is 0.05, so all
        // three reject even though 0.049 > (2/3)*0.05.
        let p = [0.049, 0.05, 0.01];
        let r = benjamini_hochberg(&p, 0.05);
        assert_eq!(r.rejected, vec![true, true, true]);
    }

    #[test]
    fn bh_ties_share_outcome() {
        let p = [0.03, 0.03, 0.9, 0.9];
        let r = benjamini_hochberg(&p, 0.05);
        assert_eq!(r.rejected[0], r.rejected[1]);
        assert_eq!(r.rejected[2], r.rejected[3]);
        assert_eq!(r.q_values[0], r.q_values[1]);
    }

    #[test]
    fn bh_empty_family() {
        let r = benjamini_hochberg(&[], 0.05);
        assert_eq!(r.m, 0);
        assert!(r.rejected.is_empty());
    }

    #[test]
    fn bh_qvalues_monotone_in_p() {
        let p = [0.001, 0.2, 0.013, 0.9, 0.04, 0.04];
        let r = benjamini_hochberg(&p, 0.05);
        let mut pairs: Vec<(f64, f64)> =
            p.iter().copied().zip(r.q_values.iter().copied()).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-15, "{pairs:?}");
        }
    }
}
