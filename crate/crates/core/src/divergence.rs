//! Total-variation and chi-square divergences, the maximal coupling of two
//! discrete distributions, and the population minimizer of the rebalanced
//! cross-entropy risk.

use std::collections::BTreeMap;

use rand::Rng;

use crate::distributions::MixtureSpec;
use crate::error::{Error, Result};
use crate::rng;

const MASS_TOL: f64 = 1e-12;

/// Bit-exact key for an atom; `-0.0` and `0.0` are the same point.
fn atom_key(p: &[f64]) -> Vec<u64> {
    p.iter()
        .map(|&v| {
            if v == 0.0 {
                0.0f64.to_bits()
            } else {
                v.to_bits()
            }
        })
        .collect()
}

/// Finitely supported distribution on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(Vec<f64>, f64)>,
    lookup: BTreeMap<Vec<u64>, usize>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::config("distribution needs at least one atom"));
        }
        let dim = atoms[0].0.len();
        let mut lookup = BTreeMap::new();
        let mut total = 0.0;
        for (i, (p, m)) in atoms.iter().enumerate() {
            if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("atom {i} has bad coordinates")));
            }
            if !(*m >= 0.0 && m.is_finite()) {
                return Err(Error::config(format!("atom {i} has mass {m}")));
            }
            if lookup.insert(atom_key(p), i).is_some() {
                return Err(Error::config(format!("atom {i} repeats an earlier point")));
            }
            total += m;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::config(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteDist { atoms, lookup })
    }

    /// Masses on the scalar points `0, 1, ..., k-1`.
    pub fn on_integers(masses: &[f64]) -> Result<Self> {
        DiscreteDist::new(
            masses
                .iter()
                .enumerate()
                .map(|(i, &m)| (vec![i as f64], m))
                .collect(),
        )
    }

    /// Empirical measure of a point cloud; repeated points pool their mass.
    pub fn empirical(points: &[Vec<f64>]) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let mut order: Vec<Vec<f64>> = Vec::new();
        let mut counts: BTreeMap<Vec<u64>, (usize, usize)> = BTreeMap::new();
        for p in points {
            let e = counts.entry(atom_key(p)).or_insert_with(|| {
                order.push(p.clone());
                (order.len() - 1, 0)
            });
            e.1 += 1;
        }
        let mut atoms: Vec<(Vec<f64>, f64)> = order.into_iter().map(|p| (p, 0.0)).collect();
        for (i, c) in counts.into_values() {
            atoms[i].1 = c as f64 * w;
        }
        DiscreteDist::new(atoms)
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    pub fn mass(&self, point: &[f64]) -> f64 {
        self.lookup
            .get(&atom_key(point))
            .map_or(0.0, |&i| self.atoms[i].1)
    }
}

/// Union of the supports, in first-seen order.
fn union_support<'a>(dists: &[&'a DiscreteDist]) -> Vec<&'a [f64]> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for d in dists {
        for (p, _) in &d.atoms {
            if seen.insert(atom_key(p), ()).is_none() {
                out.push(p.as_slice());
            }
        }
    }
    out
}

/// `(1/2) sum_a |p(a) - q(a)|`.
pub fn tv_discrete(p: &DiscreteDist, q: &DiscreteDist) -> f64 {
    0.5 * union_support(&[p, q])
        .into_iter()
        .map(|a| (p.mass(a) - q.mass(a)).abs())
        .sum::<f64>()
}

/// Chi-square divergence of `p_tilde` from `p1`, written with densities
/// relative to the dominating `q`:
/// `sum_a q(a) (p_tilde/q - p1/q)^2 / (p1/q)`.
///
/// Returns `+inf` when `p_tilde` puts mass where `p1` has none.
pub fn chi2_discrete(p_tilde: &DiscreteDist, p1: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    let mut total = 0.0;
    for a in union_support(&[p_tilde, p1, q]) {
        let (pt, pp, qq) = (p_tilde.mass(a), p1.mass(a), q.mass(a));
        if pt > 0.0 && qq == 0.0 {
            return Err(Error::AbsoluteContinuity(format!(
                "synthetic distribution has mass {pt} at {a:?} where q has none"
            )));
        }
        let term = if qq > 0.0 {
            let (rt, r1) = (pt / qq, pp / qq);
            if r1 == 0.0 {
                if rt == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                qq * (rt - r1).powi(2) / r1
            }
        } else if pp > 0.0 {
            // q-null atom: the q factors cancel, leaving (0 - p1)^2 / p1
            pp
        } else {
            0.0
        };
        total += term;
    }
    Ok(total)
}

/// Draws from a maximal coupling, one record per pair. Indices refer to
/// [`CouplingTrace::atoms`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTrace {
    pub atoms: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize, bool)>,
}

impl CouplingTrace {
    pub fn mismatch_fraction(&self) -> f64 {
        self.pairs.iter().filter(|p| !p.2).count() as f64 / self.pairs.len() as f64
    }

    /// Empirical frequencies of the second coordinate over `atoms`.
    pub fn second_marginal(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.atoms.len()];
        for &(_, u2, _) in &self.pairs {
            c[u2] += 1.0;
        }
        let n = self.pairs.len() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.atoms.len()];
        for &(u1, _, _) in &self.pairs {
            c[u1] += 1.0;
        }
        let n = self.pairs.len() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

fn draw_index(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Couple `U1 ~ p1` with `U2 ~ p2` so that `P(U1 != U2) = TV(p1, p2)`.
///
/// With `mu = min(p1, p2)`: keep `U2 = U1` with probability
/// `mu(U1)/p1(U1)`, otherwise draw `U2` from the normalized residual
/// `p2 - mu`.
pub fn maximal_coupling_sample(
    p1: &DiscreteDist,
    p2: &DiscreteDist,
    n: usize,
    seed: u64,
) -> Result<CouplingTrace> {
    if n == 0 {
        return Err(Error::config("coupling needs n >= 1"));
    }
    if p1.atoms[0].0.len() != p2.atoms[0].0.len() {
        return Err(Error::config("distributions live in different dimensions"));
    }
    let support = union_support(&[p1, p2]);
    let m1: Vec<f64> = support.iter().map(|a| p1.mass(a)).collect();
    let m2: Vec<f64> = support.iter().map(|a| p2.mass(a)).collect();
    let overlap: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a.min(*b)).collect();
    let residual: Vec<f64> = m2.iter().zip(&overlap).map(|(b, m)| b - m).collect();
    let total1: f64 = m1.iter().sum();
    let residual_total: f64 = residual.iter().sum();

    let mut r = rng::stream(seed);
    let pairs = (0..n)
        .map(|_| {
            let u1 = draw_index(&m1, total1, r.random());
            let keep = overlap[u1] / m1[u1];
            let v: f64 = r.random();
            if v <= keep || residual_total <= 0.0 {
                (u1, u1, true)
            } else {
                let u2 = draw_index(&residual, residual_total, r.random());
                (u1, u2, u1 == u2)
            }
        })
        .collect();
    Ok(CouplingTrace {
        atoms: support.into_iter().map(<[f64]>::to_vec).collect(),
        pairs,
    })
}

/// Population minimizer of the rebalanced cross-entropy risk at `x`, with
/// the ideal synthetic count `J = (2 pi0 - 1) N`:
///
/// `[p1/2 + c (pt - p1)] / [p0/2 + p1/2 + c (pt - p1)]`, `c = 1 - 1/(2 pi0)`,
///
/// where `p0`, `p1` are the class-conditional densities of `spec` and `pt`
/// the synthetic density.
pub fn population_minimizer(
    spec: &MixtureSpec,
    syn_density: impl Fn(&[f64]) -> f64,
    x: &[f64],
) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::config("point dimension differs from the mixture"));
    }
    let p0 = spec.class_density(0, x);
    let p1 = spec.class_density(1, x);
    let pt = syn_density(x);
    let c = 1.0 - 1.0 / (2.0 * spec.pi0());
    let correction = c * (pt - p1);
    let num = 0.5 * p1 + correction;
    let den = 0.5 * p0 + 0.5 * p1 + correction;
    if den.is_nan() || den <= 0.0 {
        return Err(Error::domain(format!(
            "population minimizer denominator {den:e} is not positive at {x:?}"
        )));
    }
    Ok(num / den)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let f: &dyn Fn(f64) -> f64 = &f;
    // split the range first so narrow features are not missed
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = lo + h;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = simpson(lo, hi, fa, fm, fb);
            adaptive(f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 50)
        })
        .sum()
}

/// 1-D normal distribution `N(mean, sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1d {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian1d {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::config(format!(
                "bad normal parameters ({mean}, {sd})"
            )));
        }
        Ok(Gaussian1d { mean, sd })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        crate::stats::normal_pdf((x - self.mean) / self.sd) / self.sd
    }
}

fn gaussian_range(ds: &[Gaussian1d]) -> (f64, f64) {
    let sd = ds.iter().map(|d| d.sd).fold(0.0, f64::max);
    let lo = ds.iter().map(|d| d.mean).fold(f64::INFINITY, f64::min);
    let hi = ds.iter().map(|d| d.mean).fold(f64::NEG_INFINITY, f64::max);
    (lo - 10.0 * sd, hi + 10.0 * sd)
}

const QUAD_TOL: f64 = 1e-8;

/// Total variation between two 1-D normals by quadrature.
pub fn tv_gaussian_1d(p: &Gaussian1d, q: &Gaussian1d) -> f64 {
    let (a, b) = gaussian_range(&[*p, *q]);
    0.5 * integrate(|x| (p.pdf(x) - q.pdf(x)).abs(), a, b, QUAD_TOL)
}

/// `integral (p_tilde - p1)^2 / p1` over the quadrature window.
pub fn chi2_gaussian_1d(p_tilde: &Gaussian1d, p1: &Gaussian1d) -> f64 {
    let (a, b) = gaussian_range(&[*p_tilde, *p1]);
    integrate(
        |x| {
            let d1 = p1.pdf(x);
            let dt = p_tilde.pdf(x);
            if d1 > 0.0 {
                (dt - d1).powi(2) / d1
            } else if dt > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        },
        a,
        b,
        QUAD_TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::fstar_gaussian;
    use crate::stats::normal_cdf;
    use proptest::prelude::*;
    use rand::Rng;

    fn ints(m: &[f64]) -> DiscreteDist {
        DiscreteDist::on_integers(m).unwrap()
    }

    fn random_dist(r: &mut rng::Stream, k: usize) -> DiscreteDist {
        let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let mut m: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let head: f64 = m[..k - 1].iter().sum();
        m[k - 1] = 1.0 - head;
        ints(&m)
    }

    #[test]
    fn validation() {
        assert!(DiscreteDist::on_integers(&[0.5, 0.4]).is_err());
        assert!(DiscreteDist::on_integers(&[1.5, -0.5]).is_err());
        assert!(DiscreteDist::new(vec![(vec![0.0], 0.5), (vec![-0.0], 0.5)]).is_err());
        let e = DiscreteDist::empirical(&[vec![1.0], vec![2.0], vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(e.mass(&[1.0]), 0.75);
        assert_eq!(e.mass(&[2.0]), 0.25);
        assert_eq!(e.mass(&[3.0]), 0.0);
    }

    #[test]
    fn tv_examples() {
        let p = ints(&[0.7, 0.3]);
        assert_eq!(tv_discrete(&p, &p), 0.0);
        let a = DiscreteDist::new(vec![(vec![0.0, 1.0], 1.0)]).unwrap();
        let b = DiscreteDist::new(vec![(vec![1.0, 0.0], 1.0)]).unwrap();
        assert_eq!(tv_discrete(&a, &b), 1.0);
        let q = ints(&[0.4, 0.6]);
        assert!((tv_discrete(&p, &q) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn chi2_examples() {
        let p1 = ints(&[0.5, 0.5]);
        assert_eq!(chi2_discrete(&p1, &p1, &p1).unwrap(), 0.0);
        let pt = ints(&[0.6, 0.4]);
        assert!((chi2_discrete(&pt, &p1, &p1).unwrap() - 0.04).abs() < 1e-15);
        // p_tilde charges an atom p1 misses: bound is vacuous
        let p1_narrow = ints(&[1.0, 0.0]);
        assert_eq!(chi2_discrete(&pt, &p1_narrow, &p1).unwrap(), f64::INFINITY);
        // p_tilde outside q's support
        let q = ints(&[1.0]);
        assert!(matches!(
            chi2_discrete(&pt, &p1, &q),
            Err(Error::AbsoluteContinuity(_))
        ));
    }

    #[test]
    fn coupling_edge_cases() {
        let p = ints(&[0.2, 0.3, 0.5]);
        let t = maximal_coupling_sample(&p, &p, 5000, 1).unwrap();
        assert!(t.pairs.iter().all(|&(a, b, m)| m && a == b));
        let a = DiscreteDist::new(vec![(vec![0.0], 0.5), (vec![1.0], 0.5)]).unwrap();
        let b = DiscreteDist::new(vec![(vec![2.0], 0.5), (vec![3.0], 0.5)]).unwrap();
        let t = maximal_coupling_sample(&a, &b, 5000, 2).unwrap();
        assert!(t.pairs.iter().all(|&(u1, u2, m)| !m && u1 != u2));
        assert_eq!(t.mismatch_fraction(), 1.0);
    }

    #[test]
    fn coupling_two_atom_rates() {
        let p1 = ints(&[0.7, 0.3]);
        let p2 = ints(&[0.4, 0.6]);
        let n = 100_000;
        let t = maximal_coupling_sample(&p1, &p2, n, 5).unwrap();
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((t.mismatch_fraction() - 0.3).abs() <= 4.0 * sigma);
        let m2 = t.second_marginal();
        for (got, want) in m2.iter().zip([0.4, 0.6]) {
            assert!((got - want).abs() <= 4.0 * (want * (1.0 - want) / n as f64).sqrt());
        }
        for &(u1, u2, m) in &t.pairs {
            assert_eq!(m, u1 == u2);
        }
    }

    #[test]
    fn minimizer_with_exact_synthetic_density_is_fstar() {
        let spec = MixtureSpec::new(0.9, vec![0.0, 0.5], vec![1.0, -0.5], 1.2).unwrap();
        let f = fstar_gaussian(&spec);
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let x = [-4.0 + 8.0 * t, 3.0 - 6.0 * (13.0 * t).fract()];
            let got = population_minimizer(&spec, |z| spec.class_density(1, z), &x).unwrap();
            let want = crate::stats::sigmoid(f.margin(&x));
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn minimizer_even_prior_ignores_synthetic() {
        let spec = MixtureSpec::new(0.5, vec![0.0], vec![1.0], 1.0).unwrap();
        let f = fstar_gaussian(&spec);
        for i in 0..100 {
            let x = [-5.0 + 0.1 * i as f64];
            let got = population_minimizer(&spec, |_| 123.0, &x).unwrap();
            assert!((got - crate::stats::sigmoid(f.margin(&x))).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizer_denominator_error() {
        let spec = MixtureSpec::new(0.9, vec![0.0], vec![1.0], 1.0).unwrap();
        // a valid density keeps the denominator positive; a negative one does not
        assert!(population_minimizer(&spec, |_| 0.0, &[6.0]).is_ok());
        let r = population_minimizer(&spec, |_| -10.0, &[6.0]);
        assert!(matches!(r, Err(Error::Domain(_))), "{r:?}");
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        // equal variances: TV = 2 Phi(delta / 2) - 1, chi2 = exp(delta^2) - 1
        for delta in [0.1, 0.5, 1.0, 2.0] {
            let p = Gaussian1d::new(0.0, 1.0).unwrap();
            let q = Gaussian1d::new(delta, 1.0).unwrap();
            let tv = tv_gaussian_1d(&p, &q);
            assert!(
                (tv - (2.0 * normal_cdf(delta / 2.0) - 1.0)).abs() < 1e-7,
                "{delta} {tv}"
            );
            let c2 = chi2_gaussian_1d(&q, &p);
            assert!(
                (c2 - (f64::exp(delta * delta) - 1.0)).abs() < 1e-6,
                "{delta} {c2}"
            );
            assert!(tv <= 0.5 * c2.sqrt() + 1e-9);
        }
        let same = Gaussian1d::new(1.0, 2.0).unwrap();
        assert!(tv_gaussian_1d(&same, &same).abs() < 1e-12);
        assert!(integrate(|x| x * x, 0.0, 3.0, 1e-10) - 9.0 < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tv_metric_properties(seed in any::<u64>(), k in 1usize..=10) {
            let mut r = rng::stream(seed);
            let (p, q, s) = (random_dist(&mut r, k), random_dist(&mut r, k), random_dist(&mut r, k));
            let pq = tv_discrete(&p, &q);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            prop_assert!((pq - tv_discrete(&q, &p)).abs() <= 1e-12);
            prop_assert!(pq <= tv_discrete(&p, &s) + tv_discrete(&s, &q) + 1e-12);
        }

        #[test]
        fn tv_bounded_by_chi2(seed in any::<u64>(), k in 1usize..=10) {
            let mut r = rng::stream(seed);
            let pt = random_dist(&mut r, k);
            let p1 = random_dist(&mut r, k);
            let q = random_dist(&mut r, k);
            let c2 = chi2_discrete(&pt, &p1, &q).unwrap();
            prop_assert!(tv_discrete(&pt, &p1) <= 0.5 * c2.sqrt() + 1e-12);
        }
    }
}
