use std::sync::Arc;

use covtransport::curves::{sample_covariance, CognitiveLoad, Curve, CurveMeta, FunctionalSample, Grid, Tone};
use covtransport::otinfer::{anova_statistic, frechet_mean, permutation_test, FrechetOptions};
use covtransport::spd::{bw_distance_sq, hs_inner, hs_norm_sq, transport_map, SpdOperator};
use covtransport::tpca::{exp_map, log_map, tangent_pca, TangentPcaOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Strictly PD with condition number bounded by roughly `1 + q / ridge`.
fn random_pd(q: usize, ridge: f64, rng: &mut impl Rng) -> SpdOperator {
    let g = gaussian_matrix(q, q, rng);
    SpdOperator::new(&g * g.transpose() / q as f64 + DMatrix::identity(q, q) * ridge).unwrap()
}

fn random_orthogonal(q: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    gaussian_matrix(q, q, rng).qr().q()
}

fn rel_hs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (hs_norm_sq(&(a - b)) / hs_norm_sq(b).max(f64::MIN_POSITIVE)).sqrt()
}

fn sample_from_rows(rows: Vec<Vec<f64>>) -> FunctionalSample {
    let q = rows[0].len();
    let grid = Arc::new(Grid::uniform(q).unwrap());
    let curves = rows
        .into_iter()
        .enumerate()
        .map(|(j, values)| Curve {
            values,
            meta: CurveMeta::new(format!("S{j}"), Tone::T1, Tone::T1, 1, CognitiveLoad::Cl0).unwrap(),
        })
        .collect();
    FunctionalSample::new(grid, curves).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn distance_is_a_metric(seed in any::<u64>(), q in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pd(q, 0.1, &mut rng);
        let b = random_pd(q, 0.1, &mut rng);
        let c = random_pd(q, 0.1, &mut rng);
        let d = |x: &SpdOperator, y: &SpdOperator| bw_distance_sq(x, y).unwrap().sqrt();

        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-8);
        prop_assert!(d(&a, &a) <= 1e-6);
        prop_assert!(d(&a, &b) > 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-8);
    }

    #[test]
    fn commuting_pairs_match_closed_form(seed in any::<u64>(), q in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_orthogonal(q, &mut rng);
        let lam: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..5.0)).collect();
        let mu: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..5.0)).collect();
        let build = |v: &[f64]| {
            SpdOperator::project(&u * DMatrix::from_diagonal(&DVector::from_column_slice(v)) * u.transpose()).unwrap()
        };
        let expected: f64 = lam.iter().zip(&mu).map(|(l, m)| (l.sqrt() - m.sqrt()).powi(2)).sum();
        let got = bw_distance_sq(&build(&lam), &build(&mu)).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn transport_map_pushes_forward(seed in any::<u64>(), q in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pd(q, 0.1, &mut rng);
        let b = random_pd(q, 0.1, &mut rng);
        let t = transport_map(&a, &b, 0.0).unwrap();
        prop_assert!(rel_hs(&t.push_forward(&a), b.matrix()) <= 1e-8);
    }

    #[test]
    fn transport_maps_are_mutually_inverse(seed in any::<u64>(), q in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pd(q, 0.5, &mut rng);
        let b = random_pd(q, 0.5, &mut rng);
        let ab = transport_map(&a, &b, 0.0).unwrap();
        let ba = transport_map(&b, &a, 0.0).unwrap();
        let dev = hs_norm_sq(&(ab.matrix() * ba.matrix() - DMatrix::identity(q, q))).sqrt();
        prop_assert!(dev <= 1e-6, "deviation {dev}");
    }

    #[test]
    fn covariance_ignores_offsets_and_scales_quadratically(
        seed in any::<u64>(),
        q in 2usize..=12,
        n in 2usize..=20,
        c in -5.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..q).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let offset: Vec<f64> = (0..q).map(|_| rng.random_range(-100.0..100.0)).collect();
        let base = sample_covariance(&sample_from_rows(rows.clone())).unwrap();
        let shifted = rows.iter().map(|r| r.iter().zip(&offset).map(|(v, o)| v + o).collect()).collect();
        let scaled = rows.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();

        let shifted = sample_covariance(&sample_from_rows(shifted)).unwrap();
        prop_assert!((shifted.matrix() - base.matrix()).amax() <= 1e-12 * 100.0 * base.matrix().amax().max(1.0));
        let scaled = sample_covariance(&sample_from_rows(scaled)).unwrap();
        prop_assert!((scaled.matrix() - base.matrix() * (c * c)).amax() <= 1e-12 * (c * c * base.matrix().amax()).max(1e-300));
        prop_assert!(base.eigenvalues().iter().all(|&v| v >= 0.0));
        prop_assert!((base.matrix() - base.matrix().transpose()).amax() == 0.0);
    }

    #[test]
    fn log_then_exp_is_identity(seed in any::<u64>(), q in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_pd(q, 0.2, &mut rng);
        let target = random_pd(q, 0.2, &mut rng);
        let v = log_map(&base, &target).unwrap();
        prop_assert!(rel_hs(exp_map(&base, &v).unwrap().matrix(), target.matrix()) <= 1e-8);
        let d2 = bw_distance_sq(&base, &target).unwrap();
        prop_assert!((v.norm_sq() - d2).abs() <= 1e-8 * d2.max(1.0));
    }

    #[test]
    fn frechet_mean_satisfies_first_order_condition(seed in any::<u64>(), q in 1usize..=6, k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops: Vec<SpdOperator> = (0..k).map(|_| random_pd(q, 0.2, &mut rng)).collect();
        let opts = FrechetOptions::default();
        let res = frechet_mean(&ops, None, &opts).unwrap();
        prop_assert!(res.converged);
        prop_assert!(res.final_step_norm <= opts.tol);
        let avg = ops.iter().fold(DMatrix::zeros(q, q), |acc, op| {
            acc + transport_map(&res.mean, op, 0.0).unwrap().into_matrix() / k as f64
        });
        prop_assert!(hs_norm_sq(&(avg - DMatrix::identity(q, q))).sqrt() <= 10.0 * opts.tol);

        if k == 1 {
            prop_assert!(rel_hs(res.mean.matrix(), ops[0].matrix()) <= 1e-8);
        }
    }

    #[test]
    fn duplicating_an_operator_doubles_its_weight(seed in any::<u64>(), q in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pd(q, 0.2, &mut rng);
        let b = random_pd(q, 0.2, &mut rng);
        let opts = FrechetOptions::default();
        let dup = frechet_mean(&[a.clone(), a.clone(), b.clone()], None, &opts).unwrap();
        let weighted = frechet_mean(&[a, b], Some(&[2.0, 1.0]), &opts).unwrap();
        prop_assert!(rel_hs(dup.mean.matrix(), weighted.mean.matrix()) <= 1e-7);
    }

    #[test]
    fn tangent_pca_identities(seed in any::<u64>(), q in 1usize..=6, k in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops: Vec<SpdOperator> = (0..k).map(|_| random_pd(q, 0.2, &mut rng)).collect();
        let opts = TangentPcaOptions { components: usize::MAX, ..Default::default() };
        let res = tangent_pca(&ops, None, &opts).unwrap();

        let dispersion: f64 = ops.iter().map(|op| bw_distance_sq(&res.base, op).unwrap()).sum::<f64>() / k as f64;
        let total: f64 = res.eigenvalues.iter().sum();
        prop_assert!((total - dispersion).abs() <= 1e-8 * dispersion.max(1.0));

        let lmax = res.eigenvalues[0];
        prop_assert!(res.eigenvalues.iter().filter(|&&l| l > 1e-10 * lmax).count() <= k);
        prop_assert!(res.eigenvalues.windows(2).all(|w| w[0] >= w[1]));

        for (i, ci) in res.components.iter().enumerate() {
            for (j, cj) in res.components.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((hs_inner(ci, cj) - expect).abs() <= 1e-8);
            }
        }
        for (j, v) in res.tangent_vectors.iter().enumerate() {
            let s: f64 = res.scores.row(j).iter().map(|x| x * x).sum();
            prop_assert!((s - v.norm_sq()).abs() <= 1e-8 * v.norm_sq().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn frechet_mean_minimizes_dispersion(seed in any::<u64>(), q in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops: Vec<SpdOperator> = (0..3).map(|_| random_pd(q, 0.2, &mut rng)).collect();
        let mean = frechet_mean(&ops, None, &FrechetOptions::default()).unwrap().mean;
        let dispersion = |r: &SpdOperator| ops.iter().map(|op| bw_distance_sq(r, op).unwrap()).sum::<f64>();
        let at_mean = dispersion(&mean);
        for _ in 0..20 {
            let e = gaussian_matrix(q, q, &mut rng) * 0.05;
            let other = SpdOperator::project(mean.matrix() + &e * e.transpose()).unwrap();
            prop_assert!(at_mean <= dispersion(&other) + 1e-8);
        }
    }

    #[test]
    fn p_value_lies_on_the_permutation_lattice(seed in any::<u64>(), b in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut group = || sample_from_rows((0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect());
        let (g1, g2) = (group(), group());
        let res = permutation_test(&[g1, g2], b, seed).unwrap();
        let k = res.p_value * (b + 1) as f64 - 1.0;
        prop_assert!((k - k.round()).abs() <= 1e-9 && (0.0..=b as f64).contains(&k.round()));
        prop_assert_eq!(res.permutations(), b);
    }
}

#[test]
fn map_statistic_is_not_minimized_by_the_mean() {
    // {1}, {4}: the mean 2.25 gives 2/9, while 1/0.36 gives 0.2.
    let ops = [
        SpdOperator::from_diagonal(&[1.0]).unwrap(),
        SpdOperator::from_diagonal(&[4.0]).unwrap(),
    ];
    let mean = frechet_mean(&ops, None, &FrechetOptions::default()).unwrap().mean;
    assert!((anova_statistic(&ops, &mean).unwrap() - 2.0 / 9.0).abs() < 1e-12);
    let other = SpdOperator::from_diagonal(&[1.0 / 0.36]).unwrap();
    assert!((anova_statistic(&ops, &other).unwrap() - 0.2).abs() < 1e-12);
}

#[test]
fn rank_deficient_groups_give_finite_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = 16;
    let mut group = || {
        sample_from_rows(
            (0..6)
                .map(|_| (0..q).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        )
    };
    let groups = [group(), group()];
    let ops: Vec<SpdOperator> = groups.iter().map(|g| sample_covariance(g).unwrap()).collect();
    let res = frechet_mean(&ops, None, &FrechetOptions::default()).unwrap();
    assert!(res.mean.matrix().iter().all(|v| v.is_finite()));
    assert!(res.final_step_norm < 1e-3, "step {}", res.final_step_norm);
    let t = anova_statistic(&ops, &res.mean).unwrap();
    assert!(t.is_finite() && t >= 0.0);
    let test = permutation_test(&groups, 19, 1).unwrap();
    assert!(test.permutation_stats.iter().all(|v| v.is_finite()));
}
