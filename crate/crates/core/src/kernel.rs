// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bounded characteristic kernels on lifted state pairs.
//!
//! A kernel here is a finite convex mixture of Gaussian kernels
//!
//! ```text
//! k(z, z') = Σ_j w_j · exp(−‖z − z'‖² / (2σ_j²)),    Σ_j w_j = 1
//! ```
//!
//! evaluated on the concatenated vector `z = (x_t, x_{t+1}) ∈ ℝ^{2d}` with the
//! Euclidean norm. Every such mixture is characteristic and satisfies
//! `k(z, z) = 1`, `0 < k ≤ 1`.

use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A state pair `(x_t, x_{t+1})` stored as one concatenated vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPoint {
    z: Box<[f64]>,
}

impl PairPoint {
    pub fn new(first: &[f64], second: &[f64]) -> Result<Self> {
        if first.is_empty() {
            return Err(Error::invalid("pair halves must have dimension >= 1"));
        }
        if first.len() != second.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: second.len(),
            });
        }
        let mut z = Vec::with_capacity(2 * first.len());
        z.extend_from_slice(first);
        z.extend_from_slice(second);
        Ok(Self { z: z.into() })
    }

    /// Builds a pair from an already concatenated `2d` vector.
    pub fn from_concat(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() || !z.len().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "concatenated pair must have positive even length; got {}",
                z.len()
            )));
        }
        Ok(Self { z: z.into() })
    }

    /// Dimension `d` of each half.
    pub fn dim(&self) -> usize {
        self.z.len() / 2
    }

    pub fn first(&self) -> &[f64] {
        &self.z[..self.dim()]
    }

    pub fn second(&self) -> &[f64] {
        &self.z[self.dim()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Component {
    weight: f64,
    bandwidth: f64,
    /// `1 / (2σ²)`
    inv_two_var: f64,
}

/// Finite mixture of Gaussian kernels with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    components: Vec<Component>,
}

impl KernelSpec {
    /// Single Gaussian kernel with bandwidth `sigma`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::mixture(&[(1.0, sigma)])
    }

    /// Equal-weight mixture over the given bandwidths.
    pub fn uniform_mixture(bandwidths: &[f64]) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::invalid("kernel needs at least one component"));
        }
        let w = 1.0 / bandwidths.len() as f64;
        let comps: Vec<(f64, f64)> = bandwidths.iter().map(|&s| (w, s)).collect();
        Self::mixture(&comps)
    }

    /// Mixture from `(weight, bandwidth)` pairs.
    pub fn mixture(components: &[(f64, f64)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("kernel needs at least one component"));
        }
        let mut total = 0.0;
        let mut out = Vec::with_capacity(components.len());
        for (i, &(weight, bandwidth)) in components.iter().enumerate() {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::invalid(format!(
                    "kernel component {i}: weight must be finite and > 0; got {weight}"
                )));
            }
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(Error::invalid(format!(
                    "kernel component {i}: bandwidth must be finite and > 0; got {bandwidth}"
                )));
            }
            total += weight;
            out.push(Component {
                weight,
                bandwidth,
                inv_two_var: 1.0 / (2.0 * bandwidth * bandwidth),
            });
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "kernel weights must sum to 1; got {total}"
            )));
        }
        Ok(Self { components: out })
    }

    /// The three-scale mixture used for the AR experiments: σ ∈ {0.1, 1, 10}.
    pub fn multiscale_default() -> Self {
        Self::uniform_mixture(&[0.1, 1.0, 10.0]).expect("constant kernel spec is valid")
    }

    /// `(weight, bandwidth)` per component.
    pub fn components(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.components.iter().map(|c| (c.weight, c.bandwidth))
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, d2: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (-d2 * c.inv_two_var).exp())
            .sum()
    }

    /// Kernel value on raw concatenated vectors. Lengths must match.
    #[inline]
    pub fn eval_slices(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.eval_sq_dist(d2)
    }

    pub fn eval(&self, a: &PairPoint, b: &PairPoint) -> Result<f64> {
        check_dims(a, b)?;
        Ok(self.eval_slices(a.as_slice(), b.as_slice()))
    }
}

fn check_dims(a: &PairPoint, b: &PairPoint) -> Result<()> {
    if a.z.len() != b.z.len() {
        return Err(Error::DimensionMismatch {
            expected: a.z.len(),
            got: b.z.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_set(set: &[PairPoint], name: &str) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid(format!("{name} must be nonempty")))?;
    let len = first.z.len();
    for p in &set[1..] {
        if p.z.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: p.z.len(),
            });
        }
    }
    Ok(len)
}

/// Compensated sum of one kernel row: `Σ_j k(z, b_j)`.
#[inline]
pub(crate) fn row_sum(k: &KernelSpec, z: &[f64], b: &[PairPoint]) -> f64 {
    let mut acc = NeumaierSum::new();
    for q in b {
        acc.add(k.eval_slices(z, q.as_slice()));
    }
    acc.value()
}

/// `Σ_{i,j} k(a_i, b_j)`, accumulated row-major with compensated summation.
pub fn gram_sum(k: &KernelSpec, a: &[PairPoint], b: &[PairPoint]) -> Result<f64> {
    let la = check_set(a, "first sample set")?;
    let lb = check_set(b, "second sample set")?;
    if la != lb {
        return Err(Error::DimensionMismatch {
            expected: la,
            got: lb,
        });
    }
    let mut acc = NeumaierSum::new();
    for p in a {
        for q in b {
            acc.add(k.eval_slices(p.as_slice(), q.as_slice()));
        }
    }
    Ok(acc.value())
}

/// Symmetric self-Gram sum `Σ_{i,j} k(a_i, a_j)` using `k(a_i, a_j) = k(a_j, a_i)`.
pub(crate) fn self_gram_sum(k: &KernelSpec, a: &[PairPoint]) -> f64 {
    let mut off = NeumaierSum::new();
    let mut diag = NeumaierSum::new();
    for (i, p) in a.iter().enumerate() {
        diag.add(k.eval_slices(p.as_slice(), p.as_slice()));
        for q in &a[i + 1..] {
            off.add(k.eval_slices(p.as_slice(), q.as_slice()));
        }
    }
    diag.value() + 2.0 * off.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(a: &[f64], b: &[f64]) -> PairPoint {
        PairPoint::new(a, b).unwrap()
    }

    #[test]
    fn identity_is_one() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let z = pt(&[0.3, -1.0], &[2.0, 0.5]);
        assert_eq!(k.eval(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn unit_bandwidth_at_squared_distance_two() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = pt(&[0.0], &[0.0]);
        let b = pt(&[1.0], &[1.0]);
        let v = k.eval(&a, &b).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn three_scale_mixture_value() {
        let k = KernelSpec::multiscale_default();
        let a = pt(&[0.0], &[0.0]);
        let b = pt(&[1.0], &[1.0]);
        let expected = ((-100.0f64).exp() + (-1.0f64).exp() + (-0.01f64).exp()) / 3.0;
        assert!((k.eval(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::mixture(&[(0.5, 1.0), (0.4, 2.0)]).is_err());
        assert!(KernelSpec::mixture(&[(1.5, 1.0), (-0.5, 2.0)]).is_err());
        assert!(KernelSpec::mixture(&[]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = pt(&[0.0], &[0.0]);
        let b = pt(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(
            k.eval(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(PairPoint::new(&[0.0], &[0.0, 1.0]).is_err());
        assert!(PairPoint::new(&[], &[]).is_err());
        assert!(gram_sum(&k, std::slice::from_ref(&a), &[b]).is_err());
        assert!(gram_sum(&k, &[], &[a]).is_err());
    }

    #[test]
    fn gram_sum_small_cases() {
        let k = KernelSpec::gaussian(0.7).unwrap();
        let z1 = pt(&[0.1, 0.2], &[0.3, -0.4]);
        let z2 = pt(&[1.1, -0.2], &[0.0, 0.9]);
        assert_eq!(
            gram_sum(&k, std::slice::from_ref(&z1), std::slice::from_ref(&z1)).unwrap(),
            1.0
        );
        let got = gram_sum(&k, &[z1.clone(), z2.clone()], std::slice::from_ref(&z1)).unwrap();
        let want = k.eval(&z1, &z1).unwrap() + k.eval(&z2, &z1).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn gram_sum_matches_naive_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let k = KernelSpec::multiscale_default();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            PairPoint::from_concat(v).unwrap()
        };
        let a: Vec<_> = (0..5).map(|_| mk(&mut rng)).collect();
        let b: Vec<_> = (0..7).map(|_| mk(&mut rng)).collect();
        let mut naive = 0.0;
        for p in &a {
            for q in &b {
                let d2: f64 = p
                    .as_slice()
                    .iter()
                    .zip(q.as_slice())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                naive +=
                    (1.0 / 3.0) * ((-d2 / 0.02).exp() + (-d2 / 2.0).exp() + (-d2 / 200.0).exp());
            }
        }
        assert!((gram_sum(&k, &a, &b).unwrap() - naive).abs() < 1e-12);
        assert!((self_gram_sum(&k, &a) - gram_sum(&k, &a, &a).unwrap()).abs() < 1e-12);
    }

    fn pair_set(d: usize, max: usize) -> impl Strategy<Value = Vec<PairPoint>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2 * d), 1..=max).prop_map(|vs| {
            vs.into_iter()
                .map(|v| PairPoint::from_concat(v).unwrap())
                .collect()
        })
    }

    fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
        prop::collection::vec(0.2f64..5.0, 1..4)
            .prop_map(|s| KernelSpec::uniform_mixture(&s).unwrap())
    }

    proptest! {
        #[test]
        fn gram_sum_is_symmetric(k in kernel_strategy(), a in pair_set(2, 8), b in pair_set(2, 8)) {
            let ab = gram_sum(&k, &a, &b).unwrap();
            let ba = gram_sum(&k, &b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn eval_is_bounded_and_symmetric(k in kernel_strategy(), a in pair_set(3, 2), b in pair_set(3, 2)) {
            let x = k.eval(&a[0], &b[0]).unwrap();
            let y = k.eval(&b[0], &a[0]).unwrap();
            prop_assert_eq!(x, y);
            prop_assert!(x > 0.0 && x <= 1.0);
            prop_assert!((k.eval(&a[0], &a[0]).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn quadratic_form_is_nonnegative(
            k in kernel_strategy(),
            pts in pair_set(2, 8),
            coeffs in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let mut q = 0.0;
            for (i, p) in pts.iter().enumerate() {
                for (j, r) in pts.iter().enumerate() {
                    q += coeffs[i] * coeffs[j] * k.eval(p, r).unwrap();
                }
            }
            prop_assert!(q >= -1e-10);
        }
    }
}
