//! Significance tests for comparing the service arm with the baseline arm.
//!
//! All p-values are two-sided. The chi-squared test is Pearson's statistic
//! without continuity correction.

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("degenerate contingency table: a row or column sums to zero")]
    DegenerateTable,
    #[error("degenerate test: {0}")]
    Degenerate(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    ChiSquared2x2,
    ZProportions,
    ZMeansUnpooled,
    ZMeansPooled,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            TestMethod::ChiSquared2x2 => "pearson chi-squared 2x2",
            TestMethod::ZProportions => "two-proportion z (pooled)",
            TestMethod::ZMeansUnpooled => "two-sample z (unpooled)",
            TestMethod::ZMeansPooled => "two-sample z (pooled)",
        };
        f.write_str(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom; chi-squared only.
    pub df: Option<u32>,
    pub method: TestMethod,
}

/// P(X > x) for X ~ chi-squared with one degree of freedom.
pub fn chi2_df1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

/// P(Z > z) for a standard normal Z.
pub fn normal_sf(z: f64) -> f64 {
    (0.5 * libm::erfc(z / SQRT_2)).clamp(0.0, 1.0)
}

/// P(|Z| > |z|).
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / SQRT_2).clamp(0.0, 1.0)
}

/// Pearson chi-squared test on the table
///
/// ```text
///            success  failure
///   arm 1       a        b
///   arm 2       c        d
/// ```
pub fn chi_squared_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<TestResult, StatsError> {
    let (r1, r2) = (a + b, c + d);
    let (c1, c2) = (a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(StatsError::DegenerateTable);
    }
    let n = (r1 + r2) as f64;
    let cross = a as f64 * d as f64 - b as f64 * c as f64;
    let statistic = n * cross * cross / (r1 as f64 * r2 as f64 * c1 as f64 * c2 as f64);
    Ok(TestResult {
        statistic,
        p_value: chi2_df1_sf(statistic),
        df: Some(1),
        method: TestMethod::ChiSquared2x2,
    })
}

/// Pooled two-proportion z-test of x1/n1 against x2/n2.
pub fn z_test_proportions(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<TestResult, StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::InvalidInput("sample sizes must be positive"));
    }
    if x1 > n1 || x2 > n2 {
        return Err(StatsError::InvalidInput("successes exceed sample size"));
    }
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    if pooled == 0.0 || pooled == 1.0 {
        return Err(StatsError::Degenerate("pooled proportion is 0 or 1"));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let z = (x1 as f64 / n1f - x2 as f64 / n2f) / se;
    Ok(TestResult {
        statistic: z,
        p_value: normal_two_sided_p(z),
        df: None,
        method: TestMethod::ZProportions,
    })
}

fn check_means_input(s1: f64, n1: u64, s2: f64, n2: u64) -> Result<(), StatsError> {
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::InvalidInput("each sample needs at least two units"));
    }
    if !(s1 >= 0.0 && s2 >= 0.0) {
        return Err(StatsError::InvalidInput("standard deviations must be >= 0"));
    }
    Ok(())
}

/// Two-sample z-test of means with unpooled (Welch-style) variance.
pub fn z_test_means(
    m1: f64,
    s1: f64,
    n1: u64,
    m2: f64,
    s2: f64,
    n2: u64,
) -> Result<TestResult, StatsError> {
    check_means_input(s1, n1, s2, n2)?;
    let se = (s1 * s1 / n1 as f64 + s2 * s2 / n2 as f64).sqrt();
    if se == 0.0 {
        return Err(StatsError::Degenerate("zero combined standard error"));
    }
    let z = (m1 - m2) / se;
    Ok(TestResult {
        statistic: z,
        p_value: normal_two_sided_p(z),
        df: None,
        method: TestMethod::ZMeansUnpooled,
    })
}

/// Two-sample z-test of means with a pooled variance estimate.
pub fn z_test_means_pooled(
    m1: f64,
    s1: f64,
    n1: u64,
    m2: f64,
    s2: f64,
    n2: u64,
) -> Result<TestResult, StatsError> {
    check_means_input(s1, n1, s2, n2)?;
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled_var = ((n1f - 1.0) * s1 * s1 + (n2f - 1.0) * s2 * s2) / (n1f + n2f - 2.0);
    let se = (pooled_var * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return Err(StatsError::Degenerate("zero combined standard error"));
    }
    let z = (m1 - m2) / se;
    Ok(TestResult {
        statistic: z,
        p_value: normal_two_sided_p(z),
        df: None,
        method: TestMethod::ZMeansPooled,
    })
}

/// Mean, sample standard deviation (n - 1 denominator) and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

impl SampleSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(SampleSummary {
            mean,
            sd,
            n: values.len() as u64,
        })
    }

    pub fn z_test(&self, other: &SampleSummary) -> Result<TestResult, StatsError> {
        z_test_means(self.mean, self.sd, self.n, other.mean, other.sd, other.n)
    }
}
