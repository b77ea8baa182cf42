// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::rng::SimRng;
use crate::bounds::DoeblinParams;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-12;

/// Finite-state Markov chain with states embedded in `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    states: Vec<Vec<f64>>,
    p: DMatrix<f64>,
}

impl FiniteChain {
    /// Validates shape, stochasticity and primitivity (irreducible and aperiodic).
    pub fn new(states: Vec<Vec<f64>>, p: DMatrix<f64>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::invalid("chain needs at least one state"));
        }
        let d = states[0].len();
        if d == 0 {
            return Err(Error::invalid("state embedding dimension must be >= 1"));
        }
        if let Some(s) = states.iter().find(|s| s.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::invalid(format!(
                "transition matrix must be {n}x{n}; got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..n {
            let row = p.row(i);
            if row.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::invalid(format!(
                    "row {i}: entries must be finite and >= 0"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        if primitivity_exponent(&p).is_none() {
            return Err(Error::invalid(
                "chain is not irreducible and aperiodic (no power of P is strictly positive)",
            ));
        }
        Ok(Self { states, p })
    }

    /// Chain on the scalar states `0, 1, …, n−1`.
    pub fn on_integers(p: DMatrix<f64>) -> Result<Self> {
        let states = (0..p.nrows()).map(|i| vec![i as f64]).collect();
        Self::new(states, p)
    }

    pub fn from_rows(states: Vec<Vec<f64>>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(
                "transition matrix rows must all have length n",
            ));
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(states, p)
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Stationary law of the lifted chain: `F(i, j) = π(i) P(i, j)`, row-major.
    pub fn pair_law(&self) -> Result<Vec<f64>> {
        let pi = stationary_distribution(self)?;
        let n = self.len();
        let mut f = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                f.push(pi[i] * self.p[(i, j)]);
            }
        }
        Ok(f)
    }

    /// Embedding of pair state `(i, j)` as the concatenation of both states.
    pub fn pair_embedding(&self, i: usize, j: usize) -> Vec<f64> {
        let mut z = self.states[i].clone();
        z.extend_from_slice(&self.states[j]);
        z
    }

    /// The second-order chain on pairs `(i, j)` with `P(i, j) > 0`, moving
    /// `(i, j) → (j, k)` with probability `P(j, k)`.
    pub fn lifted(&self) -> Result<FiniteChain> {
        let n = self.len();
        let support: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.p[(i, j)] > 0.0)
            .collect();
        let index = |i: usize, j: usize| support.iter().position(|&s| s == (i, j));
        let m = support.len();
        let mut lp = DMatrix::zeros(m, m);
        for (a, &(_, j)) in support.iter().enumerate() {
            for k in 0..n {
                if self.p[(j, k)] > 0.0 {
                    let b = index(j, k).expect("target pair is in the support");
                    lp[(a, b)] = self.p[(j, k)];
                }
            }
        }
        let states = support
            .iter()
            .map(|&(i, j)| self.pair_embedding(i, j))
            .collect();
        FiniteChain::new(states, lp)
    }

    /// Exact RKHS autocovariance at lag `t` under stationarity:
    /// `|E k(X_t, X_0) − ‖μ_π‖²|`, with `k` on the state embeddings.
    pub fn rkhs_autocovariance(&self, k: &KernelSpec, t: u32) -> Result<f64> {
        let pi = stationary_distribution(self)?;
        let n = self.len();
        let gram = DMatrix::from_fn(n, n, |i, j| k.eval_slices(&self.states[i], &self.states[j]));
        let pt = self.p.pow(t);
        let mut lagged = 0.0;
        let mut mean_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                lagged += pi[i] * pt[(i, j)] * gram[(i, j)];
                mean_sq += pi[i] * pi[j] * gram[(i, j)];
            }
        }
        Ok((lagged - mean_sq).abs())
    }

    /// Draws a state index from `π`.
    pub fn sample_stationary(&self, rng: &mut SimRng) -> Result<usize> {
        let pi = stationary_distribution(self)?;
        Ok(sample_index(pi.iter().copied(), rng))
    }

    /// Next state index from `i`.
    pub fn step(&self, i: usize, rng: &mut SimRng) -> usize {
        sample_index(self.p.row(i).iter().copied(), rng)
    }

    /// Stationary index path of length `len`.
    pub fn simulate_indices(&self, len: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return Ok(out);
        }
        let mut s = self.sample_stationary(rng)?;
        out.push(s);
        for _ in 1..len {
            s = self.step(s, rng);
            out.push(s);
        }
        Ok(out)
    }

    /// Stationary trajectory of state embeddings.
    pub fn simulate(&self, len: usize, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .simulate_indices(len, rng)?
            .into_iter()
            .map(|i| self.states[i].clone())
            .collect())
    }

    /// Starts stationary under `self` and switches to `post` for every
    /// transition producing output index `t ≥ tau`.
    pub fn simulate_switching(
        &self,
        post: &FiniteChain,
        tau: Option<usize>,
        len: usize,
        rng: &mut SimRng,
    ) -> Result<Vec<Vec<f64>>> {
        if post.states != self.states {
            return Err(Error::invalid(
                "pre- and post-change chains must share the same state embedding",
            ));
        }
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return Ok(out);
        }
        let mut s = self.sample_stationary(rng)?;
        out.push(self.states[s].clone());
        for t in 1..len {
            let chain = match tau {
                Some(tau) if t >= tau => post,
                _ => self,
            };
            s = chain.step(s, rng);
            out.push(self.states[s].clone());
        }
        Ok(out)
    }
}

fn sample_index<I: Iterator<Item = f64>>(weights: I, rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Smallest `K ≤ n²` with `P^K` strictly positive, checked on the zero pattern.
fn primitivity_exponent(p: &DMatrix<f64>) -> Option<usize> {
    let n = p.nrows();
    let base = p.map(|v| v > 0.0);
    let mut cur = base.clone();
    for k in 1..=n * n {
        if cur.iter().all(|&b| b) {
            return Some(k);
        }
        let next = DMatrix::from_fn(n, n, |i, j| (0..n).any(|m| cur[(i, m)] && base[(m, j)]));
        cur = next;
    }
    None
}

/// Invariant law `πP = π`, `Σπ = 1`, by a direct linear solve.
pub fn stationary_distribution(c: &FiniteChain) -> Result<DVector<f64>> {
    let n = c.len();
    // (Pᵀ − I) π = 0 with the last equation replaced by Σπ = 1.
    let mut a = c.p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("stationary system is singular (reducible chain)"))?;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi /= total;
    let resid = (c.p.transpose() * &pi - &pi).amax();
    if resid > STATIONARY_RESIDUAL_TOL {
        return Err(Error::invalid(format!(
            "stationary solve residual {resid:e} exceeds tolerance"
        )));
    }
    Ok(pi)
}

/// MMD between the lifted stationary laws `π_P ⊗ P` and `π_Q ⊗ Q`, by
/// enumeration over all state pairs.
pub fn exact_mmd_finite(k: &KernelSpec, cp: &FiniteChain, cq: &FiniteChain) -> Result<f64> {
    if cp.states != cq.states {
        return Err(Error::invalid(
            "chains must share the same embedded state list",
        ));
    }
    let n = cp.len();
    let fp = cp.pair_law()?;
    let fq = cq.pair_law()?;
    let diff: Vec<f64> = fp.iter().zip(&fq).map(|(a, b)| a - b).collect();
    let pairs: Vec<Vec<f64>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cp.pair_embedding(i, j))
        .collect();
    let mut acc = 0.0;
    for (a, za) in pairs.iter().enumerate() {
        if diff[a] == 0.0 {
            continue;
        }
        for (b, zb) in pairs.iter().enumerate() {
            acc += diff[a] * diff[b] * k.eval_slices(za, zb);
        }
    }
    Ok(acc.max(0.0).sqrt())
}

/// Doeblin coefficients from column minima of successive powers: the smallest
/// `l ≤ n²` with `δ_l = Σ_j min_i P^l(i, j) > 0`, and `λ = δ_l`.
///
/// The minorizing measure is the normalized column-minimum vector; it is not
/// returned. Chains with identical rows give `δ_1 = 1`, which lies outside
/// the admissible range of `λ` and is rejected.
pub fn doeblin_of_finite(c: &FiniteChain) -> Result<DoeblinParams> {
    let n = c.len();
    let mut pl = c.p.clone();
    for l in 1..=(n * n) as u32 {
        let delta: f64 = (0..n)
            .map(|j| (0..n).map(|i| pl[(i, j)]).fold(f64::INFINITY, f64::min))
            .sum();
        if delta > 0.0 {
            if delta >= 1.0 {
                return Err(Error::invalid(
                    "rows of P^l are identical (i.i.d. chain): Doeblin lambda would be 1",
                ));
            }
            return DoeblinParams::new(delta, l);
        }
        pl = &pl * &c.p;
    }
    Err(Error::invalid(
        "no l <= n^2 satisfies the Doeblin condition",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::stream_rng;

    fn two_state(a: f64, b: f64) -> FiniteChain {
        FiniteChain::on_integers(DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b])).unwrap()
    }

    fn delta_kernel() -> KernelSpec {
        KernelSpec::gaussian(0.05).unwrap()
    }

    #[test]
    fn stationary_two_state() {
        let pi = stationary_distribution(&two_state(0.1, 0.2)).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.3, 0.2, 0.5, 0.5, 0.3, 0.2]);
        let pi = stationary_distribution(&FiniteChain::on_integers(p).unwrap()).unwrap();
        for v in pi.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_chains() {
        assert!(FiniteChain::on_integers(DMatrix::identity(2, 2)).is_err());
        // periodic flip
        assert!(
            FiniteChain::on_integers(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).is_err()
        );
        assert!(
            FiniteChain::on_integers(DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5])).is_err()
        );
        assert!(
            FiniteChain::on_integers(DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 0.5, 0.5]))
                .is_err()
        );
        assert!(FiniteChain::new(
            vec![vec![0.0], vec![1.0, 2.0]],
            DMatrix::from_element(2, 2, 0.5)
        )
        .is_err());
    }

    #[test]
    fn exact_mmd_zero_for_same_chain() {
        let p = two_state(0.1, 0.2);
        assert_eq!(exact_mmd_finite(&delta_kernel(), &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn exact_mmd_two_state_near_delta() {
        let p = two_state(0.1, 0.2);
        let q = two_state(0.2, 0.2);
        // F_P = (0.6, 1/15, 1/15, 4/15), F_Q = (0.4, 0.1, 0.1, 0.4)
        let oracle: f64 =
            (0.2f64).powi(2) + 2.0 * (1.0 / 15.0 - 0.1f64).powi(2) + (4.0 / 15.0 - 0.4f64).powi(2);
        let got = exact_mmd_finite(&delta_kernel(), &p, &q).unwrap();
        assert!((got * got - oracle).abs() < 1e-12);
        assert!((got * got - 0.06).abs() < 1e-4);
    }

    #[test]
    fn exact_mmd_rejects_different_embeddings() {
        let p = two_state(0.1, 0.2);
        let q = FiniteChain::new(vec![vec![0.0], vec![2.0]], p.transition().clone()).unwrap();
        assert!(exact_mmd_finite(&delta_kernel(), &p, &q).is_err());
    }

    #[test]
    fn reverse_cycle_has_same_marginal_but_positive_mmd() {
        let fwd = DMatrix::from_row_slice(3, 3, &[0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1]);
        let p = FiniteChain::on_integers(fwd.clone()).unwrap();
        let q = FiniteChain::on_integers(fwd.transpose()).unwrap();
        let pp = stationary_distribution(&p).unwrap();
        let pq = stationary_distribution(&q).unwrap();
        assert!((pp - pq).amax() < 1e-14);
        let g = exact_mmd_finite(&delta_kernel(), &p, &q).unwrap();
        // six cells differ by 0.7/3
        let oracle = (6.0 * (0.7f64 / 3.0).powi(2)).sqrt();
        assert!((g - oracle).abs() < 1e-9);
    }

    #[test]
    fn triangle_inequality_over_chains() {
        let k = KernelSpec::gaussian(0.7).unwrap();
        let chains = [
            two_state(0.1, 0.2),
            two_state(0.2, 0.2),
            two_state(0.5, 0.4),
            two_state(0.05, 0.6),
        ];
        for a in &chains {
            for b in &chains {
                let ab = exact_mmd_finite(&k, a, b).unwrap();
                assert!((ab - exact_mmd_finite(&k, b, a).unwrap()).abs() < 1e-12);
                for c in &chains {
                    let ac = exact_mmd_finite(&k, a, c).unwrap();
                    let bc = exact_mmd_finite(&k, b, c).unwrap();
                    assert!(ac <= ab + bc + 1e-9);
                }
            }
        }
    }

    #[test]
    fn doeblin_examples() {
        let d = doeblin_of_finite(&two_state(0.1, 0.2)).unwrap();
        assert_eq!(d.l(), 1);
        assert!((d.lambda() - 0.3).abs() < 1e-15);

        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8]);
        let d = doeblin_of_finite(&FiniteChain::on_integers(p).unwrap()).unwrap();
        assert_eq!(d.l(), 1);
        assert!((d.lambda() - (0.1 + 0.1 + 0.2)).abs() < 1e-15);

        // 0 → 1 → {1, 2}, 2 → {0, 2}: every column of P has a zero; P² does not.
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5]);
        let c = FiniteChain::on_integers(p.clone()).unwrap();
        let d = doeblin_of_finite(&c).unwrap();
        let p2 = &p * &p;
        let oracle: f64 = (0..3)
            .map(|j| (0..3).map(|i| p2[(i, j)]).fold(1.0, f64::min))
            .sum();
        assert_eq!(d.l(), 2);
        assert!((d.lambda() - oracle).abs() < 1e-15);
    }

    #[test]
    fn lifted_chain_doeblin() {
        // P̃²((i,j),(a,b)) = P(j,a)P(a,b): λ = Σ_a min_j P(j,a) = 0.3, l = 2.
        let lp = two_state(0.1, 0.2).lifted().unwrap();
        assert_eq!(lp.len(), 4);
        let d = doeblin_of_finite(&lp).unwrap();
        assert_eq!(d.l(), 2);
        assert!((d.lambda() - 0.3).abs() < 1e-14);
        let dq = doeblin_of_finite(&two_state(0.2, 0.2).lifted().unwrap()).unwrap();
        assert_eq!(dq.l(), 2);
        assert!((dq.lambda() - 0.4).abs() < 1e-14);
    }

    #[test]
    fn lifted_stationary_is_pair_law() {
        let p = two_state(0.1, 0.2);
        let lp = p.lifted().unwrap();
        let pi = stationary_distribution(&lp).unwrap();
        let f = p.pair_law().unwrap();
        for (a, v) in pi.iter().enumerate() {
            assert!((v - f[a]).abs() < 1e-14);
        }
    }

    #[test]
    fn empirical_pair_frequencies_converge() {
        let p = two_state(0.1, 0.2);
        let mut rng = stream_rng(2024, 0);
        let path = p.simulate_indices(1_000_001, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for w in path.windows(2) {
            counts[2 * w[0] + w[1]] += 1;
        }
        let f = p.pair_law().unwrap();
        let tv: f64 = counts
            .iter()
            .zip(&f)
            .map(|(&c, &q)| (c as f64 / 1e6 - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "tv = {tv}");
    }

    #[test]
    fn sigma_dominates_autocovariance_sums() {
        use crate::bounds::sigma_from_doeblin;
        let k = KernelSpec::gaussian(0.5).unwrap();
        let chains = [
            two_state(0.1, 0.2),
            two_state(0.3, 0.05),
            FiniteChain::on_integers(DMatrix::from_row_slice(
                3,
                3,
                &[0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1],
            ))
            .unwrap(),
            FiniteChain::on_integers(DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.7, 0.1, 0.1, 0.1, 0.1, 0.7, 0.1, 0.1, 0.2, 0.2, 0.5, 0.1, 0.05, 0.05, 0.1,
                    0.8,
                ],
            ))
            .unwrap(),
        ];
        for (ci, c) in chains.iter().enumerate() {
            let sigma = sigma_from_doeblin(doeblin_of_finite(c).unwrap());
            let exact: f64 = (1..=200)
                .map(|t| c.rkhs_autocovariance(&k, t).unwrap())
                .sum();
            assert!(exact <= sigma, "chain {ci}: exact {exact} > {sigma}");

            // Empirical autocovariances from one long path.
            let mut rng = stream_rng(77, ci as u64);
            let xs = c.simulate(200_000, &mut rng).unwrap();
            let n = xs.len();
            let stride = 50;
            let anchors: Vec<usize> = (0..n).step_by(stride).collect();
            let mean_sq = {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for &i in &anchors {
                    for &j in anchors.iter().step_by(7) {
                        acc += k.eval_slices(&xs[i], &xs[j]);
                        cnt += 1.0;
                    }
                }
                acc / cnt
            };
            let mut empirical = 0.0;
            for t in 1..=60 {
                let m: f64 = (0..n - t)
                    .map(|i| k.eval_slices(&xs[i], &xs[i + t]))
                    .sum::<f64>()
                    / (n - t) as f64;
                empirical += (m - mean_sq).abs();
            }
            assert!(
                empirical <= sigma,
                "chain {ci}: empirical {empirical} > {sigma}"
            );
        }
    }

    #[test]
    fn switching_simulation() {
        let p = two_state(0.1, 0.2);
        let q = two_state(0.2, 0.2);
        let mut r1 = stream_rng(5, 1);
        let mut r2 = stream_rng(5, 1);
        let a = p.simulate_switching(&q, None, 500, &mut r1).unwrap();
        let b = p.simulate(500, &mut r2).unwrap();
        assert_eq!(a, b);
        let other = FiniteChain::new(vec![vec![5.0], vec![6.0]], q.transition().clone()).unwrap();
        assert!(p.simulate_switching(&other, Some(3), 10, &mut r1).is_err());
    }
}
