//! Data handling: synthetic Gaussian mixtures with exact class posteriors,
//! IDX and CSV ingestion, train/validation splits, and the anchor-removal
//! modification.

mod csv;
mod idx;

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use csv::{load_csv, write_csv, LabelColumn};
pub use idx::load_idx;

/// Evaluates the analytic clean class posterior `P(Y | X = x)`.
///
/// Synthetic sources attach one of these so estimators can be tested against
/// exact values instead of trained approximations.
pub trait PosteriorOracle: Send + Sync {
    fn num_classes(&self) -> usize;
    fn clean_posterior(&self, x: &[f64]) -> Vec<f64>;
}

/// A feature matrix with optional clean labels, noisy labels, and an optional
/// analytic posterior oracle. Instances are rows.
#[derive(Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub classes: usize,
    pub clean_labels: Option<Vec<usize>>,
    pub noisy_labels: Option<Vec<usize>>,
    pub oracle: Option<Arc<dyn PosteriorOracle>>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("n", &self.len())
            .field("dim", &self.dim())
            .field("classes", &self.classes)
            .field("clean_labels", &self.clean_labels.is_some())
            .field("noisy_labels", &self.noisy_labels.is_some())
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl Dataset {
    pub fn new(features: Matrix, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::domain("a dataset needs at least 2 classes"));
        }
        Ok(Dataset {
            features,
            classes,
            clean_labels: None,
            noisy_labels: None,
            oracle: None,
        })
    }

    pub fn with_clean_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_labels(&labels)?;
        self.clean_labels = Some(labels);
        Ok(self)
    }

    pub fn with_noisy_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.check_labels(&labels)?;
        self.noisy_labels = Some(labels);
        Ok(self)
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn PosteriorOracle>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!(
                "{} labels for {} instances",
                labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn instance(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn clean_labels(&self) -> Result<&[usize]> {
        self.clean_labels
            .as_deref()
            .ok_or_else(|| Error::precondition("dataset has no clean labels"))
    }

    pub fn noisy_labels(&self) -> Result<&[usize]> {
        self.noisy_labels
            .as_deref()
            .ok_or_else(|| Error::precondition("dataset has no noisy labels"))
    }

    /// New dataset holding the given instances, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Matrix::zeros(indices.len(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::domain(format!("subset index {i} out of range")));
            }
            features.row_mut(r).copy_from_slice(self.instance(i));
        }
        let pick = |labels: &Option<Vec<usize>>| {
            labels
                .as_ref()
                .map(|ls| indices.iter().map(|&i| ls[i]).collect())
        };
        Ok(Dataset {
            features,
            classes: self.classes,
            clean_labels: pick(&self.clean_labels),
            noisy_labels: pick(&self.noisy_labels),
            oracle: self.oracle.clone(),
        })
    }

    /// Oracle clean posteriors for every instance, row per instance.
    pub fn oracle_posteriors(&self) -> Result<Matrix> {
        let oracle = self
            .oracle
            .as_ref()
            .ok_or_else(|| Error::precondition("dataset has no posterior oracle"))?;
        let mut out = Matrix::zeros(self.len(), self.classes);
        for i in 0..self.len() {
            let p = oracle.clean_posterior(self.instance(i));
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }
}

/// Isotropic Gaussian mixture: class `i` draws features from
/// `N(means[i], sigma^2 I)` with prior `priors[i]`.
///
/// Its posterior is exact, `P(Y=i|x) ~ priors[i] exp(-||x - means[i]||^2 / (2 sigma^2))`,
/// which is what makes it the desk-scale stand-in for image benchmarks.
#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    means: Matrix,
    sigma: f64,
    priors: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn new(means: Matrix, sigma: f64, priors: Vec<f64>) -> Result<Self> {
        let classes = means.rows();
        if classes < 2 {
            return Err(Error::domain("mixture needs at least 2 components"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if priors.len() != classes {
            return Err(Error::shape(format!(
                "{} priors for {classes} components",
                priors.len()
            )));
        }
        if priors.iter().any(|&p| p < 0.0) {
            return Err(Error::domain("priors must be nonnegative"));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "priors sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(GaussianMixtureSpec {
            means,
            sigma,
            priors,
        })
    }

    pub fn uniform_priors(means: Matrix, sigma: f64) -> Result<Self> {
        let c = means.rows();
        // Exact simplex vector: distribute the rounding remainder on the
        // first component so the sum is exactly one.
        let p = 1.0 / c as f64;
        let mut priors = vec![p; c];
        priors[0] = 1.0 - p * (c - 1) as f64;
        GaussianMixtureSpec::new(means, sigma, priors)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    #[inline]
    pub fn means(&self) -> &Matrix {
        &self.means
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
}

impl PosteriorOracle for GaussianMixtureSpec {
    fn num_classes(&self) -> usize {
        self.means.rows()
    }

    fn clean_posterior(&self, x: &[f64]) -> Vec<f64> {
        // Log-space with max subtraction; exact up to rounding even for far
        // apart components.
        let inv2s2 = 1.0 / (2.0 * self.sigma * self.sigma);
        let mut logs: Vec<f64> = (0..self.num_classes())
            .map(|i| {
                let mu = self.means.row(i);
                let sq: f64 = x
                    .iter()
                    .zip(mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                self.priors[i].ln() - sq * inv2s2
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut logs {
            *l = (*l - max).exp();
        }
        let total: f64 = logs.iter().sum();
        for l in &mut logs {
            *l /= total;
        }
        logs
    }
}

/// Samples `n` labeled instances from the mixture; the returned dataset
/// carries clean labels and the exact posterior oracle.
pub fn generate_gaussian_mixture(
    spec: &GaussianMixtureSpec,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("cannot generate an empty dataset"));
    }
    let dim = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut class = spec.num_classes() - 1;
        for (j, &p) in spec.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                class = j;
                break;
            }
        }
        labels.push(class);
        let mu = spec.means.row(class);
        let row = features.row_mut(i);
        for (v, &m) in row.iter_mut().zip(mu) {
            let z: f64 = rng.sample(StandardNormal);
            *v = m + spec.sigma * z;
        }
    }
    let oracle: Arc<dyn PosteriorOracle> = Arc::new(spec.clone());
    Ok(Dataset::new(features, spec.num_classes())?
        .with_clean_labels(labels)?
        .with_oracle(oracle))
}

/// Drops, within each clean class, the `ceil(fraction * n_class)` instances
/// with the highest score. Ties break toward dropping the lower index.
///
/// `scores` is one scalar per instance, normally the instance's maximum
/// estimated class posterior.
pub fn remove_top_posterior(ds: &Dataset, fraction: f64, scores: &[f64]) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::domain(format!(
            "removal fraction must lie in [0, 1), got {fraction}"
        )));
    }
    if scores.len() != ds.len() {
        return Err(Error::shape(format!(
            "{} scores for {} instances",
            scores.len(),
            ds.len()
        )));
    }
    let clean = ds.clean_labels()?;
    if fraction == 0.0 {
        return ds.subset(&(0..ds.len()).collect::<Vec<_>>());
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in clean.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut dropped = vec![false; ds.len()];
    for members in &mut by_class {
        let k = (fraction * members.len() as f64).ceil() as usize;
        // Highest score first; equal scores drop the lower index first.
        members.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("scores must not contain NaN")
                .then(a.cmp(&b))
        });
        for &i in members.iter().take(k) {
            dropped[i] = true;
        }
    }
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| !dropped[i]).collect();
    if keep.is_empty() {
        return Err(Error::domain("removal would drop every instance"));
    }
    ds.subset(&keep)
}

/// Seeded uniform shuffle split into `floor(n * (1 - fraction))` training
/// instances and the remainder for validation.
pub fn split_train_val(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::domain(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::domain("need at least 2 instances to split"));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, explicit so the draw sequence is pinned by this crate.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let train_n = ((n as f64) * (1.0 - fraction)).floor() as usize;
    let train_n = train_n.clamp(1, n - 1);
    let train = ds.subset(&indices[..train_n])?;
    let val = ds.subset(&indices[train_n..])?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blob_spec(dist: f64, sigma: f64) -> GaussianMixtureSpec {
        let means = Matrix::from_rows(&[vec![dist, 0.0], vec![-dist, 0.0]]).unwrap();
        GaussianMixtureSpec::uniform_priors(means, sigma).unwrap()
    }

    #[test]
    fn oracle_posterior_at_far_mean_is_an_anchor() {
        let spec = two_blob_spec(10.0, 0.5);
        let p = spec.clean_posterior(&[10.0, 0.0]);
        assert!(p[0] > 0.999_999_999);
        assert!(p[1] < 1e-9);
    }

    #[test]
    fn equal_means_posterior_equals_priors() {
        let means = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let spec = GaussianMixtureSpec::new(means, 1.0, vec![0.3, 0.7]).unwrap();
        let p = spec.clean_posterior(&[4.0, -2.0]);
        assert!((p[0] - 0.3).abs() < 1e-12);
        assert!((p[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn bisector_point_is_fifty_fifty() {
        let spec = two_blob_spec(3.0, 1.0);
        let p = spec.clean_posterior(&[0.0, 17.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_posteriors_sum_to_one() {
        let spec = two_blob_spec(2.0, 0.7);
        let ds = generate_gaussian_mixture(&spec, 200, 3).unwrap();
        let post = ds.oracle_posteriors().unwrap();
        for i in 0..ds.len() {
            let s: f64 = post.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = two_blob_spec(2.0, 1.0);
        let a = generate_gaussian_mixture(&spec, 50, 11).unwrap();
        let b = generate_gaussian_mixture(&spec, 50, 11).unwrap();
        assert_eq!(a.features.as_slice(), b.features.as_slice());
        assert_eq!(a.clean_labels, b.clean_labels);
        let c = generate_gaussian_mixture(&spec, 50, 12).unwrap();
        assert_ne!(a.features.as_slice(), c.features.as_slice());
    }

    #[test]
    fn removal_zero_fraction_is_identity() {
        let spec = two_blob_spec(2.0, 1.0);
        let ds = generate_gaussian_mixture(&spec, 30, 5).unwrap();
        let scores = vec![0.5; 30];
        let kept = remove_top_posterior(&ds, 0.0, &scores).unwrap();
        assert_eq!(kept.len(), 30);
        assert_eq!(kept.features.as_slice(), ds.features.as_slice());
    }

    #[test]
    fn removal_drops_top_scores_in_class() {
        let features = Matrix::zeros(4, 1);
        let ds = Dataset::new(features, 2)
            .unwrap()
            .with_clean_labels(vec![0, 0, 0, 0])
            .unwrap();
        let scores = vec![0.9, 0.99, 0.8, 0.7];
        let kept = remove_top_posterior(&ds, 0.5, &scores).unwrap();
        assert_eq!(kept.len(), 2);
        // Instances with scores 0.99 and 0.9 (indices 1 and 0) are gone.
        assert_eq!(kept.clean_labels.as_ref().unwrap().len(), 2);
        let survivors: Vec<f64> = (0..kept.len())
            .map(|i| kept.instance(i)[0])
            .collect();
        assert_eq!(survivors, vec![0.0, 0.0]);
    }

    #[test]
    fn removal_ties_drop_lower_index_first() {
        let mut features = Matrix::zeros(3, 1);
        for i in 0..3 {
            features.set(i, 0, i as f64);
        }
        let ds = Dataset::new(features, 2)
            .unwrap()
            .with_clean_labels(vec![0, 0, 0])
            .unwrap();
        // One drop, scores tied between indices 0 and 1: index 0 goes.
        let kept = remove_top_posterior(&ds, 0.3, &[0.9, 0.9, 0.1]).unwrap();
        let survivors: Vec<f64> = (0..kept.len()).map(|i| kept.instance(i)[0]).collect();
        assert_eq!(survivors, vec![1.0, 2.0]);
    }

    #[test]
    fn removal_lowers_max_oracle_posterior() {
        // Moderate separation: posteriors stay strictly below 1 in f64, so
        // dropping the top fraction strictly lowers the per-class maximum.
        let spec = two_blob_spec(2.0, 1.0);
        let ds = generate_gaussian_mixture(&spec, 400, 9).unwrap();
        let post = ds.oracle_posteriors().unwrap();
        let scores: Vec<f64> = (0..ds.len())
            .map(|i| post.row(i).iter().copied().fold(f64::MIN, f64::max))
            .collect();
        let before = scores.iter().copied().fold(f64::MIN, f64::max);
        let kept = remove_top_posterior(&ds, 0.2, &scores).unwrap();
        let post_after = kept.oracle_posteriors().unwrap();
        let after = (0..kept.len())
            .map(|i| post_after.row(i).iter().copied().fold(f64::MIN, f64::max))
            .fold(f64::MIN, f64::max);
        assert!(after < before);
    }

    #[test]
    fn removal_requires_clean_labels() {
        let ds = Dataset::new(Matrix::zeros(3, 1), 2).unwrap();
        assert!(matches!(
            remove_top_posterior(&ds, 0.5, &[0.1, 0.2, 0.3]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = two_blob_spec(2.0, 1.0);
        let ds = generate_gaussian_mixture(&spec, 10, 1).unwrap();
        let (train, val) = split_train_val(&ds, 0.1, 77).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(val.len(), 1);
        let (train2, val2) = split_train_val(&ds, 0.1, 77).unwrap();
        assert_eq!(train.features.as_slice(), train2.features.as_slice());
        assert_eq!(val.features.as_slice(), val2.features.as_slice());
    }

    #[test]
    fn split_union_is_original_multiset() {
        let spec = two_blob_spec(2.0, 1.0);
        let ds = generate_gaussian_mixture(&spec, 23, 2).unwrap();
        let (train, val) = split_train_val(&ds, 0.25, 5).unwrap();
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for part in [&train, &val] {
            for i in 0..part.len() {
                seen.push(part.instance(i).iter().map(|v| v.to_bits()).collect());
            }
        }
        let mut orig: Vec<Vec<u64>> = (0..ds.len())
            .map(|i| ds.instance(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        seen.sort();
        orig.sort();
        assert_eq!(seen, orig);
    }

    #[test]
    fn split_rejects_tiny_sets() {
        let ds = Dataset::new(Matrix::zeros(1, 1), 2).unwrap();
        assert!(split_train_val(&ds, 0.5, 0).is_err());
    }
}
