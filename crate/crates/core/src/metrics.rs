//! Transport distances and relative-entropy estimates between particle clouds.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{ensure_dim, ensure_finite};
use crate::knn::KnnIndex;
use crate::linalg::{self, pairwise_sum, serde_matrix};
use crate::particles::EmpiricalMeasure;
use crate::{Error, Result};

/// Default neighbour count of [`entropy_knn`].
pub const DEFAULT_KNN_K: usize = 5;

/// Largest cloud size accepted by [`w2_brute`].
pub const BRUTE_MAX: usize = 8;

/// Ground cost for transport between points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CostSpec {
    Euclidean,
    /// `ψ_B = √(|Δx|² + |BΔy|²)` on `R^{d1} × R^{d2}` with `B` of size d1 × d2.
    PsiB {
        #[serde(with = "serde_matrix")]
        b: DMatrix<f64>,
    },
    /// `ψ̄_B = √(a²|Δx|² + |BΔy|² + 2ra⟨Δx, BΔy⟩)`.
    PsiBar {
        #[serde(with = "serde_matrix")]
        b: DMatrix<f64>,
        a: f64,
        r: f64,
    },
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostSpec::Euclidean => Ok(()),
            CostSpec::PsiB { b } => ensure_finite("B", b.as_slice()),
            CostSpec::PsiBar { b, a, r } => {
                ensure_finite("B", b.as_slice())?;
                check_twist(*a, *r)
            }
        }
    }

    /// Dimension of the points this cost applies to, if fixed.
    pub fn point_dim(&self) -> Option<usize> {
        match self {
            CostSpec::Euclidean => None,
            CostSpec::PsiB { b } | CostSpec::PsiBar { b, .. } => Some(b.nrows() + b.ncols()),
        }
    }

    /// Squared cost between two points given as concatenated states.
    pub fn sq(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            CostSpec::Euclidean => p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(),
            CostSpec::PsiB { b } => {
                let (dx2, bdy, _) = split_terms(b, p, q, false);
                dx2 + bdy
            }
            CostSpec::PsiBar { b, a, r } => {
                let (dx2, bdy, cross) = split_terms(b, p, q, true);
                a * a * dx2 + bdy + 2.0 * r * a * cross
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self.point_dim() {
            Some(d) => ensure_dim("point dimension for cost", d, dim),
            None => Ok(()),
        }
    }
}

fn check_twist(a: f64, r: f64) -> Result<()> {
    ensure_finite("twist constants", &[a, r])?;
    if !(a > 0.0) {
        return Err(Error::invalid("a", "must be > 0"));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid("r", "must lie in (0, 1)"));
    }
    Ok(())
}

/// Returns `(|Δx|², |BΔy|², ⟨Δx, BΔy⟩)`.
fn split_terms(b: &DMatrix<f64>, p: &[f64], q: &[f64], cross: bool) -> (f64, f64, f64) {
    let (d1, d2) = (b.nrows(), b.ncols());
    let mut dx2 = 0.0;
    let mut bdy2 = 0.0;
    let mut c = 0.0;
    for i in 0..d1 {
        let dx = p[i] - q[i];
        let bdy: f64 = (0..d2).map(|j| b[(i, j)] * (p[d1 + j] - q[d1 + j])).sum();
        dx2 += dx * dx;
        bdy2 += bdy * bdy;
        if cross {
            c += dx * bdy;
        }
    }
    (dx2, bdy2, c)
}

/// `ψ_B((x, y), (x̄, ȳ))`.
pub fn psi_b(p1: (&[f64], &[f64]), p2: (&[f64], &[f64]), b: &DMatrix<f64>) -> Result<f64> {
    let (s1, s2) = join_states(p1, p2, b)?;
    Ok(CostSpec::PsiB { b: b.clone() }.sq(&s1, &s2).sqrt())
}

/// `ψ̄_B((x, y), (x̄, ȳ))` for `a > 0` and `0 < r < 1`.
pub fn psi_bar(p1: (&[f64], &[f64]), p2: (&[f64], &[f64]), b: &DMatrix<f64>, a: f64, r: f64) -> Result<f64> {
    check_twist(a, r)?;
    let (s1, s2) = join_states(p1, p2, b)?;
    let cost = CostSpec::PsiBar { b: b.clone(), a, r };
    Ok(cost.sq(&s1, &s2).max(0.0).sqrt())
}

fn join_states(p1: (&[f64], &[f64]), p2: (&[f64], &[f64]), b: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    for (x, y) in [p1, p2] {
        ensure_dim("position", b.nrows(), x.len())?;
        ensure_dim("velocity", b.ncols(), y.len())?;
        ensure_finite("point", x)?;
        ensure_finite("point", y)?;
    }
    Ok(([p1.0, p1.1].concat(), [p2.0, p2.1].concat()))
}

/// Extreme square roots `(√λ_min, √λ_max)` of the quadratic form of `ψ̄_B`,
/// so that `√λ_min |z| ≤ ψ̄_B ≤ √λ_max |z|` for `z = (Δx, Δy)`.
pub fn psi_bar_equivalence(b: &DMatrix<f64>, a: f64, r: f64) -> Result<(f64, f64)> {
    check_twist(a, r)?;
    let (d1, d2) = (b.nrows(), b.ncols());
    let mut m = DMatrix::zeros(d1 + d2, d1 + d2);
    m.view_mut((0, 0), (d1, d1))
        .copy_from(&(DMatrix::<f64>::identity(d1, d1) * (a * a)));
    m.view_mut((0, d1), (d1, d2)).copy_from(&(b * (r * a)));
    m.view_mut((d1, 0), (d2, d1))
        .copy_from(&(b.transpose() * (r * a)));
    m.view_mut((d1, d1), (d2, d2)).copy_from(&(b.transpose() * b));
    let ev = linalg::sym_eigenvalues(&m);
    Ok((ev[0].max(0.0).sqrt(), ev[ev.len() - 1].sqrt()))
}

fn check_pair(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cost: &CostSpec) -> Result<()> {
    if p.n() != q.n() {
        return Err(Error::UnequalSizes {
            left: p.n(),
            right: q.n(),
        });
    }
    ensure_dim("cloud dimension", p.dim(), q.dim())?;
    cost.validate()?;
    cost.check_dim(p.dim())
}

fn cost_matrix(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cost: &CostSpec) -> Vec<f64> {
    let n = p.n();
    let mut m = vec![0.0; n * n];
    m.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let pi = p.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = cost.sq(pi, q.point(j));
        }
    });
    m
}

/// Mean cost of matching `p_i` to `q_{perm[i]}`, summed in index order of `p`.
fn matched_mean(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    assignment::assignment_cost(cost, n, perm) / n as f64
}

/// Exact `W₂` between equal-size clouds under `cost`.
///
/// One-dimensional Euclidean clouds use the monotone (sorted) matching; all
/// other cases solve the full assignment problem.
pub fn w2_empirical(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cost: &CostSpec) -> Result<f64> {
    check_pair(p, q, cost)?;
    let n = p.n();
    if p.dim() == 1 && matches!(cost, CostSpec::Euclidean) {
        let sorted = |m: &EmpiricalMeasure| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| m.point(i)[0].total_cmp(&m.point(j)[0]).then(i.cmp(&j)));
            idx
        };
        let (sp, sq) = (sorted(p), sorted(q));
        let mut perm = vec![0; n];
        for (a, b) in sp.iter().zip(&sq) {
            perm[*a] = *b;
        }
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.sq(p.point(i), q.point(j)))
            .sum();
        return Ok((total / n as f64).max(0.0).sqrt());
    }
    let m = cost_matrix(p, q, cost);
    let perm = assignment::solve(&m, n);
    Ok(matched_mean(&m, n, &perm).max(0.0).sqrt())
}

/// `W₂` by enumerating all `N!` matchings (Heap's algorithm); `N ≤ 8`.
pub fn w2_brute(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cost: &CostSpec) -> Result<f64> {
    check_pair(p, q, cost)?;
    let n = p.n();
    if n > BRUTE_MAX {
        return Err(Error::TooLarge { n, max: BRUTE_MAX });
    }
    let m = cost_matrix(p, q, cost);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = matched_mean(&m, n, &perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(matched_mean(&m, n, &perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best.max(0.0).sqrt())
}

/// Mean squared cost over index-paired points, `(1/N) Σ cost(p_i, q_i)²`.
pub fn paired_cost_sq_mean(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cost: &CostSpec) -> Result<f64> {
    check_pair(p, q, cost)?;
    let v: Vec<f64> = (0..p.n()).map(|i| cost.sq(p.point(i), q.point(i))).collect();
    Ok(pairwise_sum(&v) / p.n() as f64)
}

/// k-nearest-neighbour estimate of `Ent(p|q)` (Wang–Kulkarni–Verdú):
/// `(d/N) Σ ln(ν_k(i)/ρ_k(i)) + ln(M/(N−1))`, where `ρ_k(i)` is the distance
/// from `p_i` to its k-th neighbour in `p ∖ {p_i}` and `ν_k(i)` the distance
/// to its k-th neighbour in `q`. Consistent as `N, M → ∞`; no bias correction.
pub fn entropy_knn(p: &EmpiricalMeasure, q: &EmpiricalMeasure, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    ensure_dim("cloud dimension", p.dim(), q.dim())?;
    if p.n() < k + 1 || q.n() < k + 1 {
        return Err(Error::invalid(
            "k",
            format!("both clouds need at least k + 1 = {} points", k + 1),
        ));
    }
    let (n, m, d) = (p.n(), q.n(), p.dim() as f64);
    let self_index = KnnIndex::new(p);
    let other_index = KnnIndex::new(q);
    let terms: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = p.point(i);
            let rho = self_index.kth_distance(x, k, Some(i));
            let nu = other_index.kth_distance(x, k, None);
            if rho == 0.0 || nu == 0.0 {
                return Err(Error::ZeroRadius { index: i });
            }
            Ok((nu / rho).ln())
        })
        .collect();
    let terms: Vec<f64> = terms.into_iter().collect::<Result<_>>()?;
    Ok(d / n as f64 * pairwise_sum(&terms) + (m as f64 / (n as f64 - 1.0)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_oracle::GaussianMeasure;
    use crate::rates::twist_constants;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(xs).unwrap()
    }

    #[test]
    fn w2_examples() {
        let e = CostSpec::Euclidean;
        assert_eq!(w2_empirical(&line(&[0.5, 1.0]), &line(&[1.0, 0.5]), &e).unwrap(), 0.0);
        assert_eq!(w2_empirical(&line(&[0.0, 2.0]), &line(&[1.0, 3.0]), &e).unwrap(), 1.0);
        assert_eq!(w2_brute(&line(&[0.0, 2.0]), &line(&[1.0, 3.0]), &e).unwrap(), 1.0);
        assert_eq!(w2_brute(&line(&[0.0, 1.0]), &line(&[0.0, 1.0]), &e).unwrap(), 0.0);
        assert_eq!(w2_brute(&line(&[2.0]), &line(&[-1.0]), &e).unwrap(), 3.0);
    }

    #[test]
    fn unequal_sizes_rejected() {
        assert!(matches!(
            w2_empirical(&line(&[0.0]), &line(&[0.0, 1.0]), &CostSpec::Euclidean),
            Err(Error::UnequalSizes { .. })
        ));
        let big: Vec<f64> = (0..9).map(f64::from).collect();
        assert!(matches!(
            w2_brute(&line(&big), &line(&big), &CostSpec::Euclidean),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn psi_examples() {
        let b = DMatrix::identity(1, 1);
        assert_eq!(psi_bar((&[1.0], &[2.0]), (&[1.0], &[2.0]), &b, 1.3, 0.4).unwrap(), 0.0);
        assert_eq!(psi_b((&[0.0], &[0.0]), (&[3.0], &[4.0]), &b).unwrap(), 5.0);
        let (a, r, _) = twist_constants(1.0).unwrap();
        assert_relative_eq!(
            psi_bar((&[1.0], &[0.0]), (&[0.0], &[0.0]), &b, a, r).unwrap(),
            1.224_745,
            epsilon = 1e-6
        );
        assert!(psi_bar((&[1.0], &[0.0]), (&[0.0], &[0.0]), &b, 1.0, 1.0).is_err());
    }

    #[test]
    fn psi_bar_with_r_near_zero_is_euclidean() {
        let b = DMatrix::identity(1, 1);
        let v = psi_bar((&[0.0], &[0.0]), (&[3.0], &[4.0]), &b, 1.0, 1e-300).unwrap();
        assert_relative_eq!(v, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_radius_is_reported() {
        let p = line(&[0.0, 0.0, 1.0, 2.0]);
        let q = line(&[0.5, 1.5, 2.5, 3.5]);
        assert!(matches!(entropy_knn(&p, &q, 1), Err(Error::ZeroRadius { index: 0 })));
    }

    #[test]
    fn knn_entropy_gaussian_shift() {
        let p = GaussianMeasure::isotropic(&[1.0], 1.0).unwrap().sample(10_000, 1).unwrap();
        let q = GaussianMeasure::isotropic(&[0.0], 1.0).unwrap().sample(10_000, 2).unwrap();
        let est = entropy_knn(&p, &q, DEFAULT_KNN_K).unwrap();
        assert!((est - 0.5).abs() < 0.1, "estimate {est}");
    }

    #[test]
    fn w2_sample_converges_to_shift() {
        let n0 = GaussianMeasure::isotropic(&[0.0], 1.0).unwrap();
        let n2 = GaussianMeasure::isotropic(&[2.0], 1.0).unwrap();
        let mut errs = Vec::new();
        for n in [100, 1000, 10_000] {
            let mut reps: Vec<f64> = (0..5u64)
                .map(|s| {
                    let p = n0.sample(n, 2 * s).unwrap();
                    let q = n2.sample(n, 2 * s + 1).unwrap();
                    (w2_empirical(&p, &q, &CostSpec::Euclidean).unwrap() - 2.0).abs()
                })
                .collect();
            reps.sort_by(f64::total_cmp);
            errs.push(reps[2]);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    fn cloud(n: usize, d: usize) -> impl Strategy<Value = EmpiricalMeasure> {
        proptest::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| EmpiricalMeasure::new(v, d).unwrap())
    }

    fn pair(d: usize) -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure)> {
        (1usize..=7).prop_flat_map(move |n| (cloud(n, d), cloud(n, d)))
    }

    proptest! {
        #[test]
        fn assignment_equals_enumeration((p, q) in pair(2)) {
            let e = CostSpec::Euclidean;
            prop_assert_eq!(w2_empirical(&p, &q, &e).unwrap(), w2_brute(&p, &q, &e).unwrap());
        }

        #[test]
        fn sorted_path_equals_enumeration((p, q) in pair(1)) {
            let e = CostSpec::Euclidean;
            prop_assert_eq!(w2_empirical(&p, &q, &e).unwrap(), w2_brute(&p, &q, &e).unwrap());
        }

        #[test]
        fn w2_triangle_inequality(
            (p, q, r) in (2usize..=6).prop_flat_map(|n| (cloud(n, 2), cloud(n, 2), cloud(n, 2)))
        ) {
            let e = CostSpec::Euclidean;
            let pq = w2_empirical(&p, &q, &e).unwrap();
            let pr = w2_empirical(&p, &r, &e).unwrap();
            let rq = w2_empirical(&r, &q, &e).unwrap();
            prop_assert!(pq <= pr + rq + 1e-9);
            prop_assert!((pq - w2_empirical(&q, &p, &e).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn psi_bar_norm_equivalence(
            beta in 0.1f64..5.0,
            z in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let b = DMatrix::identity(1, 1);
            let (a, r, ac3) = twist_constants(beta).unwrap();
            let (lo, hi) = psi_bar_equivalence(&b, a, r).unwrap();
            let v = psi_bar((&z[0..1], &z[1..2]), (&z[2..3], &z[3..4]), &b, a, r).unwrap();
            let e = ((z[0] - z[2]).powi(2) + (z[1] - z[3]).powi(2)).sqrt();
            prop_assert!(lo * e <= v * (1.0 + 1e-12) + 1e-12);
            prop_assert!(v <= hi * e * (1.0 + 1e-12) + 1e-12);
            let pb = psi_b((&z[0..1], &z[1..2]), (&z[2..3], &z[3..4]), &b).unwrap();
            prop_assert!(v * v <= ac3 * pb * pb * (1.0 + 1e-12) + 1e-12);
        }
    }
}
