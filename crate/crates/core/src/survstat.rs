//! Core survival statistics.
//!
//! Kaplan–Meier product-limit estimation with Greenwood standard errors,
//! the two-sample log-rank test, Harrell's concordance index, and the
//! chi-square upper-tail probability backing the log-rank p-value.

use serde::Serialize;

use crate::error::{Error, Result};

/// One subject's follow-up: time in months and whether the event was observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalRecord {
    /// Follow-up duration in months; strictly positive.
    pub time: f64,
    /// `true` when the event (recurrence) was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "survival time must be finite and > 0, got {time}"
            )));
        }
        Ok(Self { time, event })
    }
}

/// Kaplan–Meier curve sampled at the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    /// Distinct event times, strictly ascending.
    pub event_times: Vec<f64>,
    /// Product-limit survival estimate after each event time.
    pub survival: Vec<f64>,
    /// Number of subjects at risk just before each event time.
    pub at_risk: Vec<usize>,
    /// Greenwood standard error of the survival estimate at each step.
    pub std_err: Vec<f64>,
}

/// Two-sample log-rank test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub p_value: f64,
    /// `-log2(p_value)`, the scale used for reporting group separation.
    pub neg_log2_p: f64,
}

fn validate_records(records: &[SurvivalRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} must be non-empty")));
    }
    for (i, r) in records.iter().enumerate() {
        if !r.time.is_finite() || r.time <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{what}[{i}] has invalid time {}",
                r.time
            )));
        }
    }
    Ok(())
}

/// Indices of `records` sorted ascending by time (events before censorings at ties).
fn sorted_order(records: &[SurvivalRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .time
            .partial_cmp(&records[b].time)
            .expect("times validated finite")
    });
    order
}

/// Kaplan–Meier product-limit estimator.
///
/// Censored subjects leave the risk set after their censoring time; tied
/// event times are processed as a single step with the combined death count.
/// Returns an empty curve (survival identically 1) when no event occurred.
pub fn km_estimate(records: &[SurvivalRecord]) -> Result<KmCurve> {
    validate_records(records, "records")?;
    let order = sorted_order(records);
    let n = records.len();

    let mut event_times = Vec::new();
    let mut survival = Vec::new();
    let mut at_risk = Vec::new();
    let mut std_err = Vec::new();

    let mut surv = 1.0_f64;
    let mut greenwood_sum = 0.0_f64;
    let mut n_risk = n;
    let mut i = 0;
    while i < n {
        let t = records[order[i]].time;
        let mut deaths = 0usize;
        let mut leaving = 0usize;
        while i < n && records[order[i]].time == t {
            if records[order[i]].event {
                deaths += 1;
            }
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            let nr = n_risk as f64;
            let d = deaths as f64;
            surv *= 1.0 - d / nr;
            // Greenwood: Var(S) = S^2 * sum d / (n (n - d)); the term is
            // dropped at a final step where the risk set is exhausted.
            if n_risk > deaths {
                greenwood_sum += d / (nr * (nr - d));
            }
            event_times.push(t);
            survival.push(surv);
            at_risk.push(n_risk);
            std_err.push(surv * greenwood_sum.sqrt());
        }
        n_risk -= leaving;
    }

    Ok(KmCurve {
        event_times,
        survival,
        at_risk,
        std_err,
    })
}

/// Two-sample log-rank test.
///
/// At each distinct pooled event time the observed-minus-expected event count
/// for group A is accumulated along with the hypergeometric variance; the
/// statistic is `(sum(O - E))^2 / sum(V)` referred to chi-square with 1
/// degree of freedom.
pub fn logrank_test(group_a: &[SurvivalRecord], group_b: &[SurvivalRecord]) -> Result<LogRankResult> {
    validate_records(group_a, "group_a")?;
    validate_records(group_b, "group_b")?;

    // Pool with a group tag, then sweep ascending times.
    let mut pooled: Vec<(f64, bool, bool)> = group_a
        .iter()
        .map(|r| (r.time, r.event, true))
        .chain(group_b.iter().map(|r| (r.time, r.event, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("times validated finite"));

    let mut risk_a = group_a.len();
    let mut risk_b = group_b.len();
    let mut o_minus_e = 0.0_f64;
    let mut variance = 0.0_f64;

    let n = pooled.len();
    let mut i = 0;
    while i < n {
        let t = pooled[i].0;
        let mut deaths_a = 0usize;
        let mut deaths_b = 0usize;
        let mut leave_a = 0usize;
        let mut leave_b = 0usize;
        while i < n && pooled[i].0 == t {
            let (_, event, in_a) = pooled[i];
            if in_a {
                leave_a += 1;
                if event {
                    deaths_a += 1;
                }
            } else {
                leave_b += 1;
                if event {
                    deaths_b += 1;
                }
            }
            i += 1;
        }
        let d = deaths_a + deaths_b;
        if d > 0 {
            let na = risk_a as f64;
            let nb = risk_b as f64;
            let nt = na + nb;
            let df = d as f64;
            o_minus_e += deaths_a as f64 - df * na / nt;
            if nt > 1.0 {
                variance += df * (na / nt) * (nb / nt) * (nt - df) / (nt - 1.0);
            }
        }
        risk_a -= leave_a;
        risk_b -= leave_b;
    }

    if variance <= 0.0 {
        return Err(Error::DegenerateTest(
            "no comparable events across groups (zero log-rank variance)".into(),
        ));
    }
    let chi_square = o_minus_e * o_minus_e / variance;
    let p_value = chi2_sf(chi_square, 1)?;
    Ok(LogRankResult {
        chi_square,
        p_value,
        neg_log2_p: 0.0 - p_value.log2(), // keeps p = 1 at +0.0
    })
}

/// Harrell's concordance index.
///
/// A pair is comparable when the shorter time belongs to a subject with an
/// observed event and the times differ; pairs with equal times are never
/// comparable. Concordant pairs score 1, tied risk scores 0.5.
pub fn concordance_index(records: &[SurvivalRecord], risk: &[f64]) -> Result<f64> {
    validate_records(records, "records")?;
    if records.len() != risk.len() {
        return Err(Error::InvalidArgument(format!(
            "records ({}) and risk ({}) lengths differ",
            records.len(),
            risk.len()
        )));
    }
    if records.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 records".into()));
    }
    if risk.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("risk scores must be finite".into()));
    }

    let n = records.len();
    let mut comparable = 0u64;
    let mut score = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let (short, long) = if records[i].time < records[j].time {
                (i, j)
            } else if records[j].time < records[i].time {
                (j, i)
            } else {
                continue; // equal times: not comparable under either event pattern
            };
            if !records[short].event {
                continue;
            }
            comparable += 1;
            if risk[short] > risk[long] {
                score += 1.0;
            } else if risk[short] == risk[long] {
                score += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::DegenerateMetric(
            "no comparable pairs for concordance".into(),
        ));
    }
    Ok(score / comparable as f64)
}

/// Upper-tail probability of the chi-square distribution with `dof` degrees
/// of freedom, via the regularized incomplete gamma function.
///
/// Series expansion below `x = dof + 1`, continued fraction above.
pub fn chi2_sf(x: f64, dof: u32) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "chi-square statistic must be finite and >= 0, got {x}"
        )));
    }
    if dof == 0 {
        return Err(Error::InvalidArgument("dof must be >= 1".into()));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let a = f64::from(dof) / 2.0;
    let y = x / 2.0;
    if x < f64::from(dof) + 1.0 {
        Ok(1.0 - gamma_p_series(a, y))
    } else {
        Ok(gamma_q_cont_frac(a, y))
    }
}

/// ln Γ(z) for z > 0 (Lanczos approximation, g = 7, 9 coefficients).
pub fn ln_gamma(z: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if z < 0.5 {
        // Reflection: Γ(z) Γ(1−z) = π / sin(πz)
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) by series expansion.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    for k in 1..1000 {
        term *= x / (a + k as f64);
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by modified-Lentz continued fraction.
fn gamma_q_cont_frac(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
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
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}
