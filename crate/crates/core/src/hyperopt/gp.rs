use super::HyperoptError;
use crate::linalg::{Cholesky, SquareMatrix};

/// Relative nugget added to the kernel diagonal before factorization.
pub const BASE_JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

/// Length-scale candidates (unit-cube coordinates) for the marginal
/// likelihood search. The lower end keeps the surrogate smooth over the
/// box when only a handful of trials exist.
pub fn lengthscale_grid() -> Vec<f64> {
    let (lo, hi, count) = (0.3f64, 10.0f64, 24);
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// Matérn-5/2 correlation at scaled distance `r`.
pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_distance(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn correlation_matrix(x: &[Vec<f64>], ls: &[f64], jitter: f64) -> SquareMatrix {
    let n = x.len();
    let mut k = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(scaled_distance(&x[i], &x[j], ls));
            k.set(i, j, v);
            k.set(j, i, v);
        }
        k.add(i, i, jitter);
    }
    k
}

/// Factorizes the correlation matrix, escalating the jitter tenfold until
/// Cholesky succeeds.
fn factorize(x: &[Vec<f64>], ls: &[f64]) -> Result<(Cholesky, f64), HyperoptError> {
    let mut jitter = BASE_JITTER;
    while jitter <= MAX_JITTER {
        if let Some(ch) = Cholesky::new(&correlation_matrix(x, ls, jitter)) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(HyperoptError::SingularKernel)
}

/// Profiled log marginal likelihood of standardized `y` and the maximizing
/// signal variance.
fn profiled_log_likelihood(ch: &Cholesky, y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let alpha = ch.solve(y);
    let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let sigma2 = (quad / n).max(1e-12);
    let ll = -0.5 * n * sigma2.ln()
        - 0.5 * ch.log_det()
        - 0.5 * n * (1.0 + (2.0 * std::f64::consts::PI).ln());
    (ll, sigma2)
}

/// Zero-mean GP on standardized observations over the unit cube.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    lengthscales: Vec<f64>,
    sigma2: f64,
    jitter: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    /// Latent standard deviation, jitter floor removed.
    pub std: f64,
}

impl GaussianProcess {
    /// Fits one length-scale shared by all dimensions by grid search on the
    /// profiled marginal likelihood.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self, HyperoptError> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(HyperoptError::TooFewTrials(x.len().min(y.len())));
        }
        let d = x[0].len();
        let grid = lengthscale_grid();
        let mut ls = vec![0.5; d];
        let (_, _, ys) = standardize(y);
        let score = |ls: &[f64]| -> Result<f64, HyperoptError> {
            let (ch, _) = factorize(x, ls)?;
            Ok(profiled_log_likelihood(&ch, &ys).0)
        };
        let mut best = f64::NEG_INFINITY;
        for &cand in &grid {
            let trial = vec![cand; d];
            let s = score(&trial)?;
            if s > best {
                best = s;
                ls = trial;
            }
        }
        Self::with_lengthscales(x, y, &ls).map(|gp| {
            debug_assert!((gp.log_likelihood - best).abs() < 1e-9 * best.abs().max(1.0));
            gp
        })
    }

    /// Conditions on `(x, y)` with fixed length-scales.
    pub fn with_lengthscales(x: &[Vec<f64>], y: &[f64], ls: &[f64]) -> Result<Self, HyperoptError> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(HyperoptError::TooFewTrials(x.len().min(y.len())));
        }
        let (y_mean, y_scale, ys) = standardize(y);
        let (chol, jitter) = factorize(x, ls)?;
        let (log_likelihood, sigma2) = profiled_log_likelihood(&chol, &ys);
        let alpha = chol.solve(&ys);
        Ok(Self {
            x: x.to_vec(),
            y_mean,
            y_scale,
            lengthscales: ls.to_vec(),
            sigma2,
            jitter,
            chol,
            alpha,
            log_likelihood,
        })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Signal variance in standardized units.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `(mean, scale)` used to standardize the observations.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    pub fn posterior(&self, q: &[f64]) -> Posterior {
        let c: Vec<f64> = self
            .x
            .iter()
            .map(|xi| matern52(scaled_distance(xi, q, &self.lengthscales)))
            .collect();
        let mean_std: f64 = c.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let mut v = c.clone();
        self.chol.forward_substitute(&mut v);
        let explained: f64 = v.iter().map(|t| t * t).sum();
        // The nugget caps the variance reduction at observed points; its
        // share is subtracted so observed points carry no latent variance.
        let var = (1.0 - explained - self.jitter).max(0.0) * self.sigma2;
        Posterior {
            mean: self.y_mean + self.y_scale * mean_std,
            std: self.y_scale * var.sqrt(),
        }
    }

    /// Smallest posterior mean over the observed inputs.
    pub fn incumbent(&self) -> f64 {
        self.x
            .iter()
            .map(|xi| self.posterior(xi).mean)
            .fold(f64::INFINITY, f64::min)
    }
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
        var.sqrt()
    } else {
        1.0
    };
    (mean, scale, y.iter().map(|v| (v - mean) / scale).collect())
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for minimization.
pub fn expected_improvement(post: Posterior, best: f64) -> f64 {
    let gain = best - post.mean;
    if post.std <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / post.std;
    (gain * normal_cdf(z) + post.std * normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_values() {
        assert_eq!(matern52(0.0), 1.0);
        let s = 5f64.sqrt();
        assert!((matern52(1.0) - (1.0 + s + 5.0 / 3.0) * (-s).exp()).abs() < 1e-15);
        assert!(matern52(3.0) < matern52(1.0));
    }

    #[test]
    fn cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!(normal_cdf(-40.0) >= 0.0);
    }

    #[test]
    fn ei_limits() {
        let p = Posterior {
            mean: 1.0,
            std: 0.0,
        };
        assert_eq!(expected_improvement(p, 2.0), 1.0);
        assert_eq!(expected_improvement(p, 0.5), 0.0);
        let q = Posterior {
            mean: 1.0,
            std: 0.5,
        };
        assert!((expected_improvement(q, 1.0) - 0.5 * normal_pdf(0.0)).abs() < 1e-15);
    }

    #[test]
    fn duplicate_inputs_factorize() {
        let x = vec![vec![0.3, 0.3], vec![0.3, 0.3], vec![0.9, 0.1]];
        let gp = GaussianProcess::fit(&x, &[1.0, 1.0, 2.0]).unwrap();
        assert!(gp.posterior(&[0.5, 0.5]).mean.is_finite());
    }
}
