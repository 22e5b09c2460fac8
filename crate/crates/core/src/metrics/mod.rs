//! Generalisation, specificity and biomarker acceptance rates for virtual cohorts.

pub mod plot;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::mesh::{chamfer_distance, hausdorff_distance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hd,
    Cd,
}

impl Metric {
    pub fn distance(self, a: &Mat, b: &Mat) -> Result<f64> {
        match self {
            Metric::Hd => hausdorff_distance(a, b),
            Metric::Cd => chamfer_distance(a, b),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hd" => Ok(Metric::Hd),
            "cd" => Ok(Metric::Cd),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl ErrorSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no values to summarise".into()));
        }
        let stats = BiomarkerStats::from_values(&values)?;
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Ok(Self { values, mean: stats.mean, std: stats.std, median, min: stats.min, max: stats.max })
    }
}

/// Distance between each input shape and its reconstruction, `pairs[i] = (input, reconstruction)`.
pub fn generalisation(pairs: &[(Mat, Mat)], metric: Metric) -> Result<ErrorSummary> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let values = pairs.iter().map(|(a, b)| metric.distance(a, b)).collect::<Result<Vec<_>>>()?;
    ErrorSummary::from_values(values)
}

/// For each virtual shape, the distance to its closest real shape.
pub fn specificity(virtual_shapes: &[Mat], real: &[Mat], metric: Metric) -> Result<ErrorSummary> {
    if virtual_shapes.is_empty() || real.is_empty() {
        return Err(Error::InvalidArgument("specificity needs virtual and real shapes".into()));
    }
    let mut values = Vec::with_capacity(virtual_shapes.len());
    for v in virtual_shapes {
        let mut best = f64::INFINITY;
        for r in real {
            best = best.min(metric.distance(v, r)?);
        }
        values.push(best);
    }
    ErrorSummary::from_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); zero for a single value.
    pub std: f64,
    pub mode: f64,
}

impl BiomarkerStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no biomarker values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite biomarker value".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { min: sorted[0], max: sorted[sorted.len() - 1], mean, std, mode: half_sample_mode(&sorted) })
    }
}

/// Half-sample mode of sorted data: repeatedly keep the densest half until three or fewer
/// points remain.
pub fn half_sample_mode(sorted: &[f64]) -> f64 {
    let mut x = sorted;
    loop {
        match x.len() {
            0 => return f64::NAN,
            1 => return x[0],
            2 => return 0.5 * (x[0] + x[1]),
            3 => {
                let (lo, hi) = (x[1] - x[0], x[2] - x[1]);
                return if lo < hi {
                    0.5 * (x[0] + x[1])
                } else if hi < lo {
                    0.5 * (x[1] + x[2])
                } else {
                    x[1]
                };
            }
            n => {
                let h = n.div_ceil(2);
                let start = (0..=n - h)
                    .min_by(|&a, &b| (x[a + h - 1] - x[a]).total_cmp(&(x[b + h - 1] - x[b])))
                    .unwrap();
                x = &x[start..start + h];
            }
        }
    }
}

/// `M ± 3B` with `B = √(σ² + (M − μ)²)`.
pub fn chebyshev_interval(stats: &BiomarkerStats) -> (f64, f64) {
    let b = (stats.std.powi(2) + (stats.mode - stats.mean).powi(2)).sqrt();
    (stats.mode - 3.0 * b, stats.mode + 3.0 * b)
}

pub fn normal_interval(stats: &BiomarkerStats) -> (f64, f64) {
    (stats.mean - 2.0 * stats.std, stats.mean + 2.0 * stats.std)
}

/// Percentages of virtual values inside `[min, max]`, `M ± 3B` and `μ ± 2σ` of the real values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub minmax: f64,
    pub chebyshev: f64,
    pub normal: f64,
}

pub fn acceptance_rates(real: &[f64], virtual_values: &[f64]) -> Result<AcceptanceReport> {
    if virtual_values.is_empty() {
        return Err(Error::InvalidArgument("no virtual biomarker values".into()));
    }
    let stats = BiomarkerStats::from_values(real)?;
    let pct = |(lo, hi): (f64, f64)| {
        100.0 * virtual_values.iter().filter(|&&v| v >= lo && v <= hi).count() as f64 / virtual_values.len() as f64
    };
    Ok(AcceptanceReport {
        minmax: pct((stats.min, stats.max)),
        chebyshev: pct(chebyshev_interval(&stats)),
        normal: pct(normal_interval(&stats)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub mean_difference: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs two equal-length samples of at least two".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(PairedTTest { t: mean.signum() * f64::INFINITY, df, p_value: p, mean_difference: mean });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(PairedTTest { t, df, p_value: 2.0 * dist.sf(t.abs()), mean_difference: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn stats(mean: f64, std: f64, mode: f64) -> BiomarkerStats {
        BiomarkerStats { min: f64::MIN, max: f64::MAX, mean, std, mode }
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        Mat::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn chebyshev_examples() {
        assert_eq!(chebyshev_interval(&stats(100.0, 10.0, 100.0)), (70.0, 130.0));
        assert_eq!(chebyshev_interval(&stats(5.0, 0.0, 5.0)), (5.0, 5.0));
        assert_eq!(chebyshev_interval(&stats(0.0, 3.0, 4.0)), (-11.0, 19.0));
    }

    #[test]
    fn acceptance_examples() {
        let real: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(
            acceptance_rates(&real, &[5.0, 10.0, 12.0]).unwrap(),
            AcceptanceReport { minmax: 100.0, chebyshev: 100.0, normal: 100.0 }
        );
        // one value just above the maximum but inside both wider intervals
        let mut v = vec![10.0; 9];
        v.push(19.5);
        let r = acceptance_rates(&real, &v).unwrap();
        assert_eq!((r.minmax, r.chebyshev, r.normal), (90.0, 100.0, 100.0));
        assert!(acceptance_rates(&[], &v).is_err());
        assert!(acceptance_rates(&real, &[]).is_err());
    }

    #[test]
    fn gaussian_normal_acceptance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(50.0, 4.0).unwrap();
        let real: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let virt: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let r = acceptance_rates(&real, &virt).unwrap();
        assert!((r.normal - 95.45).abs() < 1.0, "{}", r.normal);
    }

    #[test]
    fn half_sample_mode_finds_the_peak() {
        assert_eq!(half_sample_mode(&[1.0, 2.0, 2.25, 3.0, 9.0]), 2.125);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(3.0, 0.1).unwrap();
        let mut v: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        v.extend((0..200).map(|_| rng.random_range(10.0..20.0)));
        v.sort_by(f64::total_cmp);
        assert!((half_sample_mode(&v) - 3.0).abs() < 0.05);
    }

    #[test]
    fn specificity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real: Vec<Mat> = (0..4).map(|_| random_cloud(&mut rng, 6)).collect();
        let copy = specificity(&real, &real, Metric::Hd).unwrap();
        assert!(copy.values.iter().all(|&v| v == 0.0));
        let v: Vec<Mat> = (0..3).map(|_| random_cloud(&mut rng, 5)).collect();
        let one = specificity(&v, &real[..1], Metric::Cd).unwrap();
        for (s, x) in one.values.iter().zip(&v) {
            assert_eq!(*s, chamfer_distance(x, &real[0]).unwrap());
        }
        let all = specificity(&v, &real, Metric::Hd).unwrap();
        for (s, x) in all.values.iter().zip(&v) {
            let mut best = f64::INFINITY;
            for r in &real {
                best = best.min(hausdorff_distance(x, r).unwrap());
            }
            assert_eq!(*s, best);
        }
        assert!((all.mean - all.values.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn generalisation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 7);
        let g = generalisation(&[(x.clone(), x.clone())], Metric::Hd).unwrap();
        assert_eq!(g.mean, 0.0);
        assert!(generalisation(&[], Metric::Cd).is_err());
    }

    #[test]
    fn paired_t_test_reference() {
        // scipy.stats.ttest_rel([1, 2, 3, 4, 6], [1.5, 2.1, 2.9, 4.8, 6.9]) → t = −2.269127, p = 0.085810
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 6.0], &[1.5, 2.1, 2.9, 4.8, 6.9]).unwrap();
        assert!((r.t + 2.269127).abs() < 1e-6, "{}", r.t);
        assert!((r.p_value - 0.085810).abs() < 1e-6, "{}", r.p_value);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    proptest! {
        #[test]
        fn acceptance_is_affine_invariant(seed in 0u64..300, a in 0.1f64..10.0, b in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let real: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
            let virt: Vec<f64> = (0..40).map(|_| rng.random_range(-0.5..1.5)).collect();
            let r1 = acceptance_rates(&real, &virt).unwrap();
            let map = |v: &Vec<f64>| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
            let r2 = acceptance_rates(&map(&real), &map(&virt)).unwrap();
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn specificity_is_monotone_in_the_real_cohort(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let real: Vec<Mat> = (0..4).map(|_| random_cloud(&mut rng, 5)).collect();
            let v: Vec<Mat> = (0..3).map(|_| random_cloud(&mut rng, 5)).collect();
            let fewer = specificity(&v, &real[..2], Metric::Hd).unwrap();
            let more = specificity(&v, &real, Metric::Hd).unwrap();
            for (a, b) in more.values.iter().zip(&fewer.values) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn chebyshev_contains_normal_when_mode_is_mean(mean in -50.0f64..50.0, std in 0.0f64..20.0) {
            let s = stats(mean, std, mean);
            let (clo, chi) = chebyshev_interval(&s);
            let (nlo, nhi) = normal_interval(&s);
            prop_assert!(clo <= nlo && chi >= nhi);
        }

        #[test]
        fn stats_invariants(seed in 0u64..300, n in 1usize..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = BiomarkerStats::from_values(&v).unwrap();
            prop_assert!(s.min <= s.mode && s.mode <= s.max && s.std >= 0.0);
        }
    }
}
