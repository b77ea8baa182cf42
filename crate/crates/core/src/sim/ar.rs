// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector, Schur};
use rand_distr::{Distribution, StandardNormal};

use super::rng::{stream_rng, SimRng};
use crate::error::{Error, Result};

const SYM_TOL: f64 = 1e-12;

/// System matrix of the reference AR experiments.
///
/// `Q · diag(0.95, 0.7, 0.45, 0.2) · Qᵀ` for an orthogonal `Q` drawn once from
/// a seeded Gaussian QR factorization. Symmetric, spectral radius 0.95.
pub const REFERENCE_SYSTEM_MATRIX: [[f64; 4]; 4] = [
    [
        0.62142606078409,
        0.10306340561991326,
        -0.22978382795117858,
        0.03433009096556003,
    ],
    [
        0.10306340561991326,
        0.648911923477969,
        -0.1334476904978065,
        0.19780989516550618,
    ],
    [
        -0.22978382795117863,
        -0.13344769049780653,
        0.3500558788683197,
        0.011463177418249444,
    ],
    [
        0.03433009096556,
        0.19780989516550615,
        0.011463177418249473,
        0.679606136869621,
    ],
];

pub fn reference_system_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| REFERENCE_SYSTEM_MATRIX[i][j])
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.amax() == 0.0 {
        return 0.0;
    }
    match Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(a),
    }
}

/// `‖A^(2^k)‖^(1/2^k)` by repeated squaring, rescaling to avoid overflow.
fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..40 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = &m * &m;
        power *= 2.0;
    }
    (log_scale + m.norm().ln() / power).exp()
}

/// Multivariate Gaussian `N(mean, cov)` with a cached square-root factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNoise {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// `F` with `F Fᵀ = cov`, from the symmetric eigendecomposition (so
    /// singular covariances are allowed).
    factor: DMatrix<f64>,
}

impl GaussianNoise {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("noise dimension must be >= 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance must be {d}x{d}; got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise parameters must be finite"));
        }
        if (&cov - cov.transpose()).amax() > SYM_TOL {
            return Err(Error::invalid("covariance must be symmetric"));
        }
        let eig = cov.clone().symmetric_eigen();
        let scale = cov.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -SYM_TOL * scale) {
            return Err(Error::invalid("covariance must be positive semidefinite"));
        }
        let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l);
        Ok(Self { mean, cov, factor })
    }

    /// `N(mean·1, scale·I)` in dimension `d`.
    pub fn isotropic(d: usize, mean: f64, scale: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(d, mean),
            DMatrix::identity(d, d) * scale,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Draws one vector. Standard normals come from `rand_distr`'s
    /// ziggurat sampler.
    pub fn sample(&self, rng: &mut SimRng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.factor * z
    }
}

/// `X_{t+1} = A X_t + ω_t`, with ω switching law at index `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArScenario {
    pub a: DMatrix<f64>,
    pub pre_noise: GaussianNoise,
    pub post_noise: GaussianNoise,
    /// First output index produced by a post-change transition; `None` = never.
    pub tau: Option<usize>,
    pub seed: u64,
    pub length: usize,
    pub burn_in: usize,
}

pub const DEFAULT_BURN_IN: usize = 500;

impl ArScenario {
    /// Reference setup: `d = 4`, reference matrix, pre-change noise `N(0, 0.1 I)`,
    /// post-change covariance `0.2 I`, change at 1000 of 2000.
    pub fn reference_variance_change(seed: u64) -> Self {
        Self::reference(seed, GaussianNoise::isotropic(4, 0.0, 0.2).expect("valid"))
    }

    /// As [`Self::reference_variance_change`] but the post-change noise mean is `0.05·1`.
    pub fn reference_mean_change(seed: u64) -> Self {
        Self::reference(seed, GaussianNoise::isotropic(4, 0.05, 0.1).expect("valid"))
    }

    fn reference(seed: u64, post_noise: GaussianNoise) -> Self {
        Self {
            a: reference_system_matrix(),
            pre_noise: GaussianNoise::isotropic(4, 0.0, 0.1).expect("valid"),
            post_noise,
            tau: Some(1000),
            seed,
            length: 2000,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.nrows();
        if d == 0 || self.a.ncols() != d {
            return Err(Error::invalid("system matrix must be square and nonempty"));
        }
        if self.pre_noise.dim() != d || self.post_noise.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if self.pre_noise.dim() != d {
                    self.pre_noise.dim()
                } else {
                    self.post_noise.dim()
                },
            });
        }
        if self.length == 0 {
            return Err(Error::invalid("trajectory length must be >= 1"));
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("system matrix must be finite"));
        }
        let rho = spectral_radius(&self.a);
        if rho >= 1.0 {
            return Err(Error::invalid(format!(
                "system matrix is not stable: spectral radius {rho} >= 1"
            )));
        }
        Ok(())
    }

    /// Runs the scenario on an explicit generator.
    ///
    /// The state starts at zero and `burn_in` pre-change transitions are
    /// discarded. Output index 0 is the first kept state; output `t ≥ 1` is
    /// produced from output `t − 1` with post-change noise iff `t ≥ tau`.
    pub fn simulate_with(&self, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut x = DVector::zeros(self.dim());
        for _ in 0..self.burn_in {
            x = &self.a * &x + self.pre_noise.sample(rng);
        }
        let mut out = Vec::with_capacity(self.length);
        out.push(x.as_slice().to_vec());
        for t in 1..self.length {
            let noise = match self.tau {
                Some(tau) if t >= tau => &self.post_noise,
                _ => &self.pre_noise,
            };
            x = &self.a * &x + noise.sample(rng);
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }
}

/// Deterministic run of `s` on stream 0 of its seed.
pub fn simulate_ar(s: &ArScenario) -> Result<Vec<Vec<f64>>> {
    s.simulate_with(&mut stream_rng(s.seed, 0))
}
