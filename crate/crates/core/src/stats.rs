//! Small statistics helpers used by distribution checks and result tables.

/// Two-sample Kolmogorov-Smirnov statistic with its sample sizes.
#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
}

impl KsResult {
    /// Asymptotic critical value `sqrt(-ln(alpha/2)/2) * sqrt((n+m)/(n m))`.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        (-(alpha / 2.0).ln() / 2.0).sqrt() * ((n + m) / (n * m)).sqrt()
    }

    /// True when the samples are not distinguishable at level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.statistic < self.critical_value(alpha)
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    KsResult {
        statistic: d,
        n,
        m,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
