//! Heavy-tailed noise generators and label corruption.

use log::warn;
use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Pareto, StandardNormal, StudentT, Uniform};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default share of labels hit by the uniform part of sparse noise.
pub const DEFAULT_SPARSE_FRACTION: f64 = 0.1;
/// Default standard deviation of the Gaussian part of sparse noise.
pub const DEFAULT_SPARSE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Pareto(shape = `tail`, scale 1), re-centered to zero mean.
    Pareto { tail: f64 },
    StudentT { dof: f64 },
    /// `round(fraction * n)` labels get Uniform[-beta, beta]; every label gets
    /// Gaussian(0, gaussian_sigma).
    Sparse {
        beta: f64,
        fraction: f64,
        gaussian_sigma: f64,
    },
}

impl NoiseKind {
    pub fn pareto(tail: f64) -> Self {
        NoiseKind::Pareto { tail }
    }

    pub fn student_t(dof: f64) -> Self {
        NoiseKind::StudentT { dof }
    }

    pub fn sparse(beta: f64) -> Self {
        NoiseKind::Sparse {
            beta,
            fraction: DEFAULT_SPARSE_FRACTION,
            gaussian_sigma: DEFAULT_SPARSE_SIGMA,
        }
    }

    /// The six corruption settings: two levels each of Pareto, Student-t and
    /// sparse noise.
    pub fn six_settings() -> [NoiseKind; 6] {
        [
            NoiseKind::pareto(1.01),
            NoiseKind::pareto(2.01),
            NoiseKind::student_t(2.5),
            NoiseKind::student_t(5.0),
            NoiseKind::sparse(5.0),
            NoiseKind::sparse(10.0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Pareto { tail } => {
                if !(tail.is_finite() && tail > 1.0) {
                    return Err(Error::param(format!(
                        "pareto tail must exceed 1 for a finite mean, got {tail}"
                    )));
                }
            }
            NoiseKind::StudentT { dof } => {
                if !(dof.is_finite() && dof > 0.0) {
                    return Err(Error::param(format!("student-t dof must be > 0, got {dof}")));
                }
            }
            NoiseKind::Sparse {
                beta,
                fraction,
                gaussian_sigma,
            } => {
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::param(format!("sparse beta must be > 0, got {beta}")));
                }
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::param(format!("sparse fraction must lie in (0, 1], got {fraction}")));
                }
                if !(gaussian_sigma.is_finite() && gaussian_sigma >= 0.0) {
                    return Err(Error::param(format!(
                        "sparse gaussian sigma must be >= 0, got {gaussian_sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Variance of one scalar draw, `None` when infinite or undefined.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            NoiseKind::Pareto { tail: a } if a > 2.0 => Some(a / ((a - 1.0).powi(2) * (a - 2.0))),
            NoiseKind::StudentT { dof } if dof > 2.0 => Some(dof / (dof - 2.0)),
            _ => None,
        }
    }
}

/// One scalar draw. Sparse noise is vector-level; use [`sparse_noise`].
pub fn draw_noise(kind: &NoiseKind, rng: &mut dyn RngCore) -> Result<f64> {
    kind.validate()?;
    match *kind {
        NoiseKind::Pareto { tail } => {
            let dist = Pareto::new(1.0, tail).map_err(|e| Error::param(e.to_string()))?;
            Ok(dist.sample(rng) - tail / (tail - 1.0))
        }
        NoiseKind::StudentT { dof } => {
            let dist = StudentT::new(dof).map_err(|e| Error::param(e.to_string()))?;
            Ok(dist.sample(rng))
        }
        NoiseKind::Sparse { .. } => Err(Error::param(
            "sparse noise is drawn per label vector, not per scalar",
        )),
    }
}

/// Sparse corruption vector of length `n`: exactly `round(fraction * n)`
/// positions receive Uniform[-beta, beta], and all positions receive
/// Gaussian(0, gaussian_sigma).
pub fn sparse_noise(
    n: usize,
    beta: f64,
    fraction: f64,
    gaussian_sigma: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    NoiseKind::Sparse {
        beta,
        fraction,
        gaussian_sigma,
    }
    .validate()?;
    let hits = ((fraction * n as f64 + 0.5).floor() as usize).min(n);
    let uniform = Uniform::new_inclusive(-beta, beta).map_err(|e| Error::param(e.to_string()))?;
    let gauss = Normal::new(0.0, gaussian_sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut out = vec![0.0; n];
    for i in index::sample(rng, n, hits) {
        out[i] = uniform.sample(rng);
    }
    for x in out.iter_mut() {
        *x += gauss.sample(rng);
    }
    Ok(out)
}

/// One relabelled copy of `data` per noise kind. Inputs are untouched and the
/// copies share feature storage.
pub fn corrupt_labels(
    data: &Dataset,
    kinds: &[NoiseKind],
    rng: &mut dyn RngCore,
) -> Result<Vec<Dataset>> {
    if kinds.is_empty() {
        return Err(Error::param("need at least one noise kind"));
    }
    kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            kind.validate()?;
            if kind.variance().is_none() && !matches!(kind, NoiseKind::Sparse { .. }) {
                warn!("{kind:?} has infinite variance; bounded-variance assumptions do not hold");
            }
            let noise = match *kind {
                NoiseKind::Sparse {
                    beta,
                    fraction,
                    gaussian_sigma,
                } => sparse_noise(data.len(), beta, fraction, gaussian_sigma, rng)?,
                _ => (0..data.len())
                    .map(|_| draw_noise(kind, rng))
                    .collect::<Result<_>>()?,
            };
            let labels = data.labels.iter().zip(&noise).map(|(y, e)| y + e).collect();
            data.relabel(labels, format!("{}#source{j}", data.provenance))
        })
        .collect()
}

/// Zero-mean, unit-variance draws from a fixed tail family, for oracle noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailFamily {
    Gaussian,
    StudentT { dof: f64 },
    Pareto { tail: f64 },
}

#[derive(Debug, Clone)]
pub struct StandardSampler {
    inner: SamplerInner,
}

#[derive(Debug, Clone)]
enum SamplerInner {
    Gaussian,
    StudentT { dist: StudentT<f64>, scale: f64 },
    Pareto { dist: Pareto<f64>, mean: f64, scale: f64 },
}

impl TailFamily {
    /// Requires finite variance: `dof > 2` or `tail > 2`.
    pub fn sampler(&self) -> Result<StandardSampler> {
        let inner = match *self {
            TailFamily::Gaussian => SamplerInner::Gaussian,
            TailFamily::StudentT { dof } => {
                if !(dof > 2.0 && dof.is_finite()) {
                    return Err(Error::param(format!("standardized student-t needs dof > 2, got {dof}")));
                }
                SamplerInner::StudentT {
                    dist: StudentT::new(dof).map_err(|e| Error::param(e.to_string()))?,
                    scale: ((dof - 2.0) / dof).sqrt(),
                }
            }
            TailFamily::Pareto { tail } => {
                let var = NoiseKind::pareto(tail).variance().ok_or_else(|| {
                    Error::param(format!("standardized pareto needs tail > 2, got {tail}"))
                })?;
                SamplerInner::Pareto {
                    dist: Pareto::new(1.0, tail).map_err(|e| Error::param(e.to_string()))?,
                    mean: tail / (tail - 1.0),
                    scale: 1.0 / var.sqrt(),
                }
            }
        };
        Ok(StandardSampler { inner })
    }
}

impl StandardSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.inner {
            SamplerInner::Gaussian => StandardNormal.sample(rng),
            SamplerInner::StudentT { dist, scale } => dist.sample(rng) * scale,
            SamplerInner::Pareto { dist, mean, scale } => (dist.sample(rng) - mean) * scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SparseVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(kind: NoiseKind, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| draw_noise(&kind, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn pareto_is_centered() {
        let kind = NoiseKind::pareto(2.01);
        let sigma2 = kind.variance().unwrap();
        assert!((sigma2 - 197.04).abs() < 0.01);
        let (mean, _) = moments(kind, 1_000_000, 1);
        assert!(mean.abs() <= 3.0 * sigma2.sqrt() / 1000.0, "mean {mean}");
    }

    #[test]
    fn student_t_moments() {
        let (_, var) = moments(NoiseKind::student_t(2.5), 1_000_000, 2);
        assert!((var - 5.0).abs() <= 0.5, "variance {var}");
        let (mean, _) = moments(NoiseKind::student_t(5.0), 1_000_000, 3);
        assert!(mean.abs() <= 3.0 * (5.0f64 / 3.0).sqrt() / 1000.0, "mean {mean}");
    }

    #[test]
    fn pareto_tail_must_exceed_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(draw_noise(&NoiseKind::pareto(1.0), &mut rng).is_err());
        assert!(draw_noise(&NoiseKind::pareto(0.5), &mut rng).is_err());
        assert!(draw_noise(&NoiseKind::pareto(1.01), &mut rng).is_ok());
        assert!(draw_noise(&NoiseKind::sparse(5.0), &mut rng).is_err());
    }

    #[test]
    fn six_settings_are_valid() {
        for k in NoiseKind::six_settings() {
            k.validate().unwrap();
        }
    }

    #[test]
    fn standardized_samplers_have_unit_variance() {
        for family in [
            TailFamily::Gaussian,
            TailFamily::StudentT { dof: 5.0 },
            TailFamily::Pareto { tail: 4.5 },
        ] {
            let s = family.sampler().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let n = 400_000;
            let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.01, "{family:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "{family:?} var {var}");
        }
        assert!(TailFamily::StudentT { dof: 2.0 }.sampler().is_err());
        assert!(TailFamily::Pareto { tail: 1.5 }.sampler().is_err());
    }

    fn toy(n: usize) -> Dataset {
        let feats = (0..n).map(|i| SparseVector::from_dense(&[1.0, i as f64])).collect();
        Dataset::new(feats, vec![1.0; n], 2, "toy").unwrap()
    }

    #[test]
    fn sparse_hits_exact_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = sparse_noise(1000, 5.0, 0.1, 0.0, &mut rng).unwrap();
        assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 100);
        assert!(v.iter().all(|x| x.abs() <= 5.0));
    }

    #[test]
    fn corruption_is_deterministic_and_shares_features() {
        let data = toy(50);
        let kinds = NoiseKind::six_settings();
        let a = corrupt_labels(&data, &kinds, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = corrupt_labels(&data, &kinds, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(data.labels, vec![1.0; 50]);
        for d in &a {
            assert!(std::sync::Arc::ptr_eq(&d.features, &data.features));
        }
    }

    #[test]
    fn near_identity_corruption() {
        let data = toy(200);
        let kinds = [NoiseKind::student_t(1e6); 6];
        let out = corrupt_labels(&data, &kinds, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        for d in out {
            let rms = (d.labels.iter().map(|y| (y - 1.0).powi(2)).sum::<f64>() / 200.0).sqrt();
            // unit-variance draws; this is a smoke check that labels move by O(1)
            assert!(rms < 1.5, "rms {rms}");
        }
    }
}
