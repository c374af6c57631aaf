//! Shared statistics: Pearson correlation, Welch's two-sample t-test, and
//! population z-score normalization.
//!
//! The t-test p-value comes from our own regularized incomplete beta
//! (Lanczos log-gamma + Lentz continued fraction) so the crate stays
//! dependency-light; statrs is used only in tests as an oracle.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("input vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("zero variance in {which} input")]
    ZeroVariance { which: &'static str },
}

/// Result of Welch's unequal-variance t-test.
///
/// `degenerate` is set when both samples have zero variance, where the
/// t statistic is 0 (equal means, p = 1) or infinite (different means,
/// p = 0) by convention rather than by formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub degenerate: bool,
}

/// A z-score-normalized vector together with the moments used.
///
/// `sigma` is the population standard deviation (divide by n, not n-1).
/// When the input is constant, every z is 0 and `zero_variance` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreVector {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sigma: f64,
    pub zero_variance: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n-1 denominator).
fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pearson correlation of two equal-length vectors of at least two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFewValues {
            needed: 2,
            got: xs.len(),
        });
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance { which: "first" });
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance { which: "second" });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Welch's two-sample t-test (unequal variances), two-tailed.
///
/// Degrees of freedom follow Welch-Satterthwaite. Each sample needs at
/// least two values. See [`WelchTTest`] for the zero-variance convention.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTTest, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewValues {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a, ma), sample_variance(b, mb));

    if va == 0.0 && vb == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchTTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate: true,
            }
        } else {
            WelchTTest {
                t: if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                df,
                p: 0.0,
                degenerate: true,
            }
        });
    }

    let (ea, eb) = (va / na, vb / nb);
    let se2 = ea + eb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (ea * ea / (na - 1.0) + eb * eb / (nb - 1.0));
    Ok(WelchTTest {
        t,
        df,
        p: student_t_two_tailed_p(t, df),
        degenerate: false,
    })
}

/// Two-tailed p-value for a t statistic with (possibly fractional) df.
pub fn student_t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

/// Z-score normalize with the population standard deviation.
pub fn zscore_normalize(values: &[f64]) -> Result<ZScoreVector, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let mu = mean(values);
    let var = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / values.len() as f64;
    let sigma = var.sqrt();
    // Constant input can still leave sigma a few ulps above zero; treat
    // anything below the rounding floor of the data scale as constant.
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if sigma <= scale * 1e-12 {
        return Ok(ZScoreVector {
            values: vec![0.0; values.len()],
            mean: mu,
            sigma: 0.0,
            zero_variance: true,
        });
    }
    Ok(ZScoreVector {
        values: values.iter().map(|x| (x - mu) / sigma).collect(),
        mean: mu,
        sigma,
        zero_variance: false,
    })
}

/// Regularized incomplete beta function I_x(a, b) for a, b > 0.
///
/// Continued-fraction evaluation (Lentz), switching to the symmetric form
/// when x is past the distribution's bulk so the fraction converges fast.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Natural log of the gamma function (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
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
    const G: f64 = 7.0;
    if x < 0.5 {
        // Reflection: Gamma(x) * Gamma(1-x) = pi / sin(pi*x)
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
