//! Statistical test machinery for the benchmark suite: goodness-of-fit
//! tests, tail probabilities and finite differences. Everything here is
//! test-side tooling; nothing feeds back into the estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Survival function of the chi-square distribution.
pub fn chi2_sf(stat: f64, df: f64) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    (1.0 - dist.cdf(stat)).max(0.0)
}

/// Chi-square goodness-of-fit of observed counts against a probability
/// vector. Bins whose expected count falls below `min_expected` are pooled
/// into one overflow bin to keep the asymptotics honest. Returns
/// `(statistic, degrees of freedom, p-value)`.
pub fn chi2_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> (f64, f64, f64) {
    assert_eq!(observed.len(), probs.len(), "bin count mismatch");
    let n: u64 = observed.iter().sum();
    let total_p: f64 = probs.iter().sum();
    let mut stat = 0.0;
    let mut kept = 0usize;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p / total_p * n as f64;
        if e < min_expected {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            kept += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        kept += 1;
    }
    let df = (kept.max(2) - 1) as f64;
    (stat, df, chi2_sf(stat, df))
}

/// Two-sample chi-square test that two count vectors over the same bins come
/// from a common distribution. Bins are pooled as in [`chi2_gof`], using the
/// combined expected count.
pub fn chi2_two_sample(a: &[u64], b: &[u64], min_expected: f64) -> (f64, f64, f64) {
    assert_eq!(a.len(), b.len(), "bin count mismatch");
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let total = na + nb;

    let mut stat = 0.0;
    let mut kept = 0usize;
    let (mut pa, mut pb, mut pc) = (0.0, 0.0, 0.0);
    let add_cell = |oa: f64, ob: f64, col: f64| {
        let ea = col * na / total;
        let eb = col * nb / total;
        let mut s = 0.0;
        if ea > 0.0 {
            s += (oa - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            s += (ob - eb).powi(2) / eb;
        }
        s
    };
    for (&oa, &ob) in a.iter().zip(b) {
        let col = (oa + ob) as f64;
        let min_col_exp = col * na.min(nb) / total;
        if min_col_exp < min_expected {
            pa += oa as f64;
            pb += ob as f64;
            pc += col;
        } else {
            stat += add_cell(oa as f64, ob as f64, col);
            kept += 1;
        }
    }
    if pc > 0.0 {
        stat += add_cell(pa, pb, pc);
        kept += 1;
    }
    let df = (kept.max(2) - 1) as f64;
    (stat, df, chi2_sf(stat, df))
}

/// Survival function of the Kolmogorov distribution,
/// `P(sup |B(t)| > x) = 2 sum_j (-1)^{j-1} exp(-2 j^2 x^2)`.
///
/// The alternating series converges fast for large `x` but needs ever more
/// terms as `x` shrinks, so below 1 the complementary theta-series form of
/// the CDF is used instead.
pub fn kolmogorov_sf(x: f64) -> f64 {
    use std::f64::consts::PI;
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        let scale = -PI * PI / (8.0 * x * x);
        let mut cdf = 0.0;
        for j in 0..50 {
            let odd = (2 * j + 1) as f64;
            let term = (scale * odd * odd).exp();
            cdf += term;
            if term < 1e-16 * cdf {
                break;
            }
        }
        cdf *= (2.0 * PI).sqrt() / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-2.0 * (j as f64) * (j as f64) * x * x).exp();
        total += if j % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a theoretical CDF. Returns
/// `(D, p)` with the finite-sample corrected asymptotic p-value. Assumes a
/// continuous law; heavily tied samples inflate the statistic, use
/// [`ks_test_discrete`] for those.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    assert!(!sample.is_empty(), "empty sample");
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let lambda = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    (d, kolmogorov_sf(lambda))
}

/// Kolmogorov-Smirnov test for a purely discrete law. `counts[j]` is the
/// observed count of the j-th support point and `cdf[j]` the theoretical CDF
/// there (inclusive of the atom), in increasing support order. Between atoms
/// both CDFs are flat, so the supremum gap is attained at the atoms and the
/// left-limit gap at one atom equals the right gap at the previous one; the
/// maximum over atoms is therefore the full statistic. The continuous
/// Kolmogorov asymptotics give a conservative p-value here.
pub fn ks_test_discrete(counts: &[u64], cdf: &[f64]) -> (f64, f64) {
    assert_eq!(counts.len(), cdf.len(), "one CDF value per support point");
    let n: u64 = counts.iter().sum();
    assert!(n > 0, "empty sample");
    let nf = n as f64;
    let mut cum = 0u64;
    let mut d: f64 = 0.0;
    for (&c, &f) in counts.iter().zip(cdf) {
        cum += c;
        d = d.max((cum as f64 / nf - f).abs());
    }
    let lambda = d * (nf.sqrt() + 0.12 + 0.11 / nf.sqrt());
    (d, kolmogorov_sf(lambda))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Half-width of simultaneous binomial confidence bands: `m` points checked
/// at overall level `alpha` with a Bonferroni split, around success
/// probability `p` from `n` trials.
pub fn simultaneous_binomial_halfwidth(n: usize, p: f64, alpha: f64, m: usize) -> f64 {
    let z = normal_quantile(1.0 - alpha / (2.0 * m as f64));
    z * (p * (1.0 - p) / n as f64).sqrt()
}

/// Central finite-difference gradient with per-coordinate step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    assert!(xs.len() >= 2, "need at least two observations");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
