//! Small statistics toolkit: confidence intervals, goodness-of-fit
//! thresholds and least-squares fits. Distribution functions come from
//! `statrs`.

use num_traits::Float;
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma, Normal};

/// Two-sided confidence level used throughout.
pub const CONFIDENCE: f64 = 0.99;

/// Standard normal quantile `z_{1-(1-level)/2}`.
pub fn z_two_sided(level: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilson<F> {
    pub p_hat: F,
    pub lo: F,
    pub hi: F,
}

impl<F: Float> Wilson<F> {
    pub fn new(successes: u64, trials: u64, level: f64) -> Self {
        assert!(trials > 0, "Wilson interval needs at least one trial");
        let n = F::from(trials).unwrap();
        let p = F::from(successes).unwrap() / n;
        let z = F::from(z_two_sided(level)).unwrap();
        let z2 = z * z;
        let two = F::from(2.0).unwrap();
        let four = F::from(4.0).unwrap();
        let denom = F::one() + z2 / n;
        let center = (p + z2 / (two * n)) / denom;
        let half = z * ((p * (F::one() - p) + z2 / (four * n)) / n).sqrt() / denom;
        Wilson {
            p_hat: p,
            lo: (center - half).max(F::zero()),
            hi: (center + half).min(F::one()),
        }
    }

    pub fn half_width(&self) -> F {
        (self.hi - self.lo) / F::from(2.0).unwrap()
    }

    pub fn contains(&self, v: F) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn mean<F: Float>(xs: &[F]) -> F {
    let n = F::from(xs.len()).unwrap();
    xs.iter().fold(F::zero(), |a, &b| a + b) / n
}

/// Unbiased sample variance.
pub fn variance<F: Float>(xs: &[F]) -> F {
    let m = mean(xs);
    let n = F::from(xs.len()).unwrap();
    xs.iter().fold(F::zero(), |a, &b| a + (b - m) * (b - m)) / (n - F::one())
}

pub fn pearson<F: Float>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in a.iter().zip(b) {
        sab = sab + (x - ma) * (y - mb);
        saa = saa + (x - ma) * (x - ma);
        sbb = sbb + (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Sample covariance with a normal-approximation half-width at `level`.
pub fn covariance_with_ci(a: &[f64], b: &[f64], level: f64) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = mean(a);
    let mb = mean(b);
    let prods: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)).collect();
    let cov = prods.iter().sum::<f64>() / (n - 1.0);
    let se = (variance(&prods) / n).sqrt();
    (cov, z_two_sided(level) * se)
}

pub fn chi_square_quantile(dof: f64, p: f64) -> f64 {
    ChiSquared::new(dof).unwrap().inverse_cdf(p)
}

/// Kolmogorov–Smirnov distance between the sample and Uniform(0,1).
pub fn ks_uniform(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// `P(|T_n - n| >= eps * n)` for `T_n ~ Gamma(n, 1)`.
pub fn gamma_two_sided_tail(n: u64, eps: f64) -> f64 {
    let g = Gamma::new(n as f64, 1.0).unwrap();
    let nf = n as f64;
    g.sf(nf * (1.0 + eps)) + g.cdf(nf * (1.0 - eps))
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `NaN` with fewer than three points.
    pub slope_se: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points");
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit { slope, intercept, slope_se }
}
