//! Sample statistics and two-sample / goodness-of-fit tests.

use rand::seq::SliceRandom;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::exec::Execution;
use crate::rng::RngStream;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of a Bernoulli frequency `p` estimated from `n` draws.
pub fn binomial_std_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("sd > 0").cdf(x)
}

/// Upper quantile `z` with `P(Z > z) = tail` for a standard normal.
pub fn normal_upper_quantile(tail: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> TestOutcome {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestOutcome {
    let xa = sorted(a);
    let xb = sorted(b);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = xa[i].min(xb[j]);
        while i < na && xa[i] <= v {
            i += 1;
        }
        while j < nb && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sn = ne.sqrt();
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Pairwise-distance sums within the first group, within the second, and
/// over all pairs. Coordinates are transposed into columns and the inner
/// loop is branch-free so that it vectorises.
fn energy_sums(z: &[f64], dim: usize, in_first: &[bool]) -> (f64, f64, f64) {
    let n = in_first.len();
    let cols: Vec<Vec<f64>> = (0..dim).map(|k| (0..n).map(|i| z[i * dim + k]).collect()).collect();
    let w: Vec<f64> = in_first.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut d = vec![0.0; n];
    let (mut aa, mut bb, mut total) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let rest = &mut d[i + 1..];
        rest.fill(0.0);
        for col in &cols {
            let ci = col[i];
            for (acc, &cj) in rest.iter_mut().zip(&col[i + 1..]) {
                let e = cj - ci;
                *acc += e * e;
            }
        }
        let (mut rt, mut ra) = (0.0, 0.0);
        for (acc, &wj) in rest.iter_mut().zip(&w[i + 1..]) {
            let r = acc.sqrt();
            rt += r;
            ra += r * wj;
        }
        if in_first[i] {
            aa += ra;
        } else {
            bb += rt - ra;
        }
        total += rt;
    }
    (aa, bb, total)
}

fn energy_from_sums(aa: f64, bb: f64, total: f64, n: usize, m: usize) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let cross = total - aa - bb;
    let e = 2.0 * cross / (nf * mf) - 2.0 * aa / (nf * nf) - 2.0 * bb / (mf * mf);
    e * nf * mf / (nf + mf)
}

/// Largest gap of `points` (sorted) restricted to `[a, b]`, counting the
/// ends of the interval.
pub fn max_gap(points: impl Iterator<Item = f64>, a: f64, b: f64) -> f64 {
    let mut last = a;
    let mut gap: f64 = 0.0;
    for p in points {
        if p <= a {
            continue;
        }
        if p >= b {
            break;
        }
        gap = gap.max(p - last);
        last = p;
    }
    gap.max(b - last)
}

/// Energy-distance statistic `nm/(n+m) · (2E|X-Y| - E|X-X'| - E|Y-Y'|)`
/// for row-major samples of dimension `dim`.
pub fn energy_statistic(x: &[f64], y: &[f64], dim: usize) -> f64 {
    let (n, m) = (x.len() / dim, y.len() / dim);
    let mut z = Vec::with_capacity(x.len() + y.len());
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    let labels: Vec<bool> = (0..n + m).map(|i| i < n).collect();
    let (aa, bb, total) = energy_sums(&z, dim, &labels);
    energy_from_sums(aa, bb, total, n, m)
}

/// Pooled samples up to this size keep their distance triangle in memory
/// (as `f32`, about 200 MB at the limit) for the permutation test.
const CACHED_TRIANGLE_MAX: usize = 10_500;

/// Upper distance triangle, row by row, with the row totals.
fn distance_triangle(z: &[f64], dim: usize, n: usize) -> (Vec<f32>, Vec<f64>) {
    let mut tri = Vec::with_capacity(n * (n - 1) / 2);
    let mut totals = Vec::with_capacity(n);
    let cols: Vec<Vec<f64>> = (0..dim).map(|k| (0..n).map(|i| z[i * dim + k]).collect()).collect();
    let mut d = vec![0.0; n];
    for i in 0..n {
        let rest = &mut d[i + 1..];
        rest.fill(0.0);
        for col in &cols {
            let ci = col[i];
            for (acc, &cj) in rest.iter_mut().zip(&col[i + 1..]) {
                let e = cj - ci;
                *acc += e * e;
            }
        }
        let start = tri.len();
        tri.extend(rest.iter().map(|v| v.sqrt() as f32));
        totals.push(tri[start..].iter().map(|&v| f64::from(v)).sum());
    }
    (tri, totals)
}

fn triangle_sums(tri: &[f32], totals: &[f64], in_first: &[bool]) -> (f64, f64, f64) {
    let n = in_first.len();
    let w: Vec<f64> = in_first.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let (mut aa, mut bb, mut total) = (0.0, 0.0, 0.0);
    let mut off = 0;
    for i in 0..n {
        let row = &tri[off..off + (n - 1 - i)];
        off += row.len();
        let ra: f64 = row.iter().zip(&w[i + 1..]).map(|(&d, &wj)| f64::from(d) * wj).sum();
        if in_first[i] {
            aa += ra;
        } else {
            bb += totals[i] - ra;
        }
        total += totals[i];
    }
    (aa, bb, total)
}

/// Permutation test on the energy statistic. Small pooled samples reuse a
/// cached distance triangle across permutations; larger ones recompute.
pub fn energy_test(
    x: &[f64],
    y: &[f64],
    dim: usize,
    permutations: usize,
    stream: &RngStream,
    exec: Execution,
) -> TestOutcome {
    assert!(dim > 0 && x.len().is_multiple_of(dim) && y.len().is_multiple_of(dim));
    let (n, m) = (x.len() / dim, y.len() / dim);
    let mut z = Vec::with_capacity(x.len() + y.len());
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    let labels: Vec<bool> = (0..n + m).map(|i| i < n).collect();
    let cached = (n + m <= CACHED_TRIANGLE_MAX && n + m >= 2).then(|| distance_triangle(&z, dim, n + m));
    let sums = |l: &[bool]| match &cached {
        Some((tri, totals)) => triangle_sums(tri, totals, l),
        None => energy_sums(&z, dim, l),
    };
    let (aa, bb, total) = sums(&labels);
    let observed = energy_from_sums(aa, bb, total, n, m);
    let perm_stats = exec.map(permutations, |k| {
        let mut rng = stream.child(k as u64).generator();
        let mut l = labels.clone();
        l.shuffle(&mut rng);
        let (a, b, _) = sums(&l);
        energy_from_sums(a, b, total, n, m)
    });
    let exceed = perm_stats.iter().filter(|&&s| s >= observed).count();
    TestOutcome {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
    }
}

fn double_centered(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = (xs[i] - xs[j]).abs();
        }
    }
    let row: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row[i] - row[j];
        }
    }
    d
}

fn dcor_from_centered(a: &[f64], b: &[f64], n: usize, perm: &[usize]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let pi = perm[i];
        for j in 0..n {
            let av = a[i * n + j];
            let bv = b[pi * n + perm[j]];
            ab += av * bv;
            aa += av * av;
            bb += bv * bv;
        }
    }
    if aa <= 0.0 || bb <= 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).max(0.0).sqrt()
}

/// Sample distance correlation of two scalar samples.
pub fn distance_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let ident: Vec<usize> = (0..n).collect();
    dcor_from_centered(&double_centered(xs), &double_centered(ys), n, &ident)
}

/// Permutation test of independence based on distance correlation.
pub fn distance_correlation_test(
    xs: &[f64],
    ys: &[f64],
    permutations: usize,
    stream: &RngStream,
    exec: Execution,
) -> TestOutcome {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let a = double_centered(xs);
    let b = double_centered(ys);
    let ident: Vec<usize> = (0..n).collect();
    let observed = dcor_from_centered(&a, &b, n, &ident);
    let perm_stats = exec.map(permutations, |k| {
        let mut rng = stream.child(k as u64).generator();
        let mut p = ident.clone();
        p.shuffle(&mut rng);
        dcor_from_centered(&a, &b, n, &p)
    });
    let exceed = perm_stats.iter().filter(|&&s| s >= observed).count();
    TestOutcome {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut g = RngStream::new(seed).generator();
        (0..n).map(|_| shift + g.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn kolmogorov_survival_known_values() {
        // Tabulated: P(K > 1.36) ≈ 0.0495, P(K > 1.63) ≈ 0.0098.
        assert!((kolmogorov_survival(1.358_1) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.627_6) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn ks_detects_shift_and_accepts_null() {
        let a = normals(1, 2000, 0.0);
        let b = normals(2, 2000, 0.0);
        let c = normals(3, 2000, 0.3);
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        let r = ks_one_sample(&a, |x| normal_cdf(x, 0.0, 1.0));
        assert!(r.p_value > 0.01);
        let r = ks_one_sample(&c, |x| normal_cdf(x, 0.0, 1.0));
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn ks_two_sample_handles_ties() {
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(ks_two_sample(&a, &b).statistic, 0.0);
    }

    #[test]
    fn max_gap_counts_ends() {
        assert_eq!(max_gap([0.2, 0.3].into_iter(), 0.0, 1.0), 0.7);
        assert_eq!(max_gap(std::iter::empty(), 0.0, 1.0), 1.0);
        assert_eq!(max_gap([-1.0, 0.5, 2.0].into_iter(), 0.0, 1.0), 0.5);
    }

    #[test]
    fn energy_statistic_by_brute_force() {
        let x: [f64; 3] = [0.0, 1.0, 3.0];
        let y: [f64; 2] = [2.0, 5.0];
        // Direct definition over ordered pairs.
        let mut xy = 0.0;
        for a in &x {
            for b in &y {
                xy += (a - b).abs();
            }
        }
        let mut xx = 0.0;
        for a in &x {
            for b in &x {
                xx += (a - b).abs();
            }
        }
        let mut yy = 0.0;
        for a in &y {
            for b in &y {
                yy += (a - b).abs();
            }
        }
        let e = 2.0 * xy / 6.0 - xx / 9.0 - yy / 4.0;
        let expect = e * 6.0 / 5.0;
        assert!((energy_statistic(&x, &y, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_test_power_and_size() {
        let s = RngStream::new(10);
        let a = normals(4, 600, 0.0);
        let b = normals(5, 600, 0.0);
        let c = normals(6, 600, 0.4);
        let null = energy_test(&a, &b, 2, 199, &s, Execution::default());
        assert!(null.p_value > 0.01, "{null:?}");
        let alt = energy_test(&a, &c, 2, 199, &s, Execution::default());
        assert!(alt.p_value <= 0.01, "{alt:?}");
    }

    #[test]
    fn distance_correlation_detects_dependence() {
        let s = RngStream::new(12);
        let x = normals(7, 300, 0.0);
        let y = normals(8, 300, 0.0);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        // Uncorrelated but dependent.
        assert!(pearson(&x, &sq).abs() < 0.2);
        let dep = distance_correlation_test(&x, &sq, 199, &s, Execution::default());
        assert!(dep.p_value <= 0.01);
        let ind = distance_correlation_test(&x, &y, 199, &s, Execution::default());
        assert!(ind.p_value > 0.01);
        assert!((distance_correlation(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        let mut g = RngStream::new(0).generator();
        let u: Vec<f64> = (0..1000).map(|_| g.random::<f64>()).collect();
        assert!((mean(&u) - 0.5).abs() < 0.05);
    }
}
