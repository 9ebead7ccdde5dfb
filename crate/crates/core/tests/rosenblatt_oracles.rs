mod common;

use common::{tl_enumeration, ustat_concomitant};
use mlmoments::rosenblatt::{
    lmoment_rosenblatt_direct, lmoment_rosenblatt_unbiased, serfling_xiao_matrix,
    tl_moment_univariate, univariate_lmoment_unbiased,
};
use mlmoments::SampleMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampleMatrix {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    SampleMatrix::from_row_major(n, d, data).unwrap()
}

#[test]
fn unbiased_matches_ustatistic_enumeration_up_to_n12() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=12 {
        for d in 1..=3 {
            let s = random_matrix(&mut rng, n, d);
            for r in 1..=n.min(6) {
                let got = lmoment_rosenblatt_unbiased(&s, r as u32).unwrap();
                let want = ustat_concomitant(&s, r);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-10, "n={n} d={d} r={r}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn tl_matches_subsample_enumeration_up_to_n12() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=12 {
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in 1..=4 {
            for t1 in 0..=2 {
                for t2 in 0..=2 {
                    if r + t1 + t2 > n {
                        assert!(tl_moment_univariate(&xs, r as u32, t1 as u32, t2 as u32).is_err());
                        continue;
                    }
                    let got = tl_moment_univariate(&xs, r as u32, t1 as u32, t2 as u32).unwrap();
                    let want = tl_enumeration(&xs, r, t1, t2);
                    assert!((got - want).abs() < 1e-10, "n={n} r={r} t=({t1},{t2})");
                }
            }
        }
    }
}

#[test]
fn direct_and_unbiased_agree_for_large_gaussian_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_matrix(&mut rng, 2000, 1);
    let a = lmoment_rosenblatt_direct(&s, 2).unwrap()[0];
    let b = lmoment_rosenblatt_unbiased(&s, 2).unwrap()[0];
    assert!((a - b).abs() < 5e-3);
}

#[test]
fn independent_uniform_off_diagonals_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f64> = (0..2 * 20_000).map(|_| rng.random::<f64>()).collect();
    let s = SampleMatrix::from_row_major(20_000, 2, data).unwrap();
    let m = serfling_xiao_matrix(&s, 2).unwrap();
    assert!((m[(0, 0)] - 1.0 / 6.0).abs() < 0.01);
    assert!((m[(1, 1)] - 1.0 / 6.0).abs() < 0.01);
    assert!(m[(0, 1)].abs() < 0.01 && m[(1, 0)].abs() < 0.01);
}

#[test]
fn comonotone_ratio_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
    let rows: Vec<[f64; 2]> = xs.iter().map(|&x| [x, x]).collect();
    let s = SampleMatrix::from_rows(&rows).unwrap();
    let l = lmoment_rosenblatt_unbiased(&s, 2).unwrap();
    let tau = l[1] / univariate_lmoment_unbiased(&xs, 2).unwrap();
    assert!((tau - 1.0).abs() < 1e-12);
}

fn matrix_strategy() -> impl Strategy<Value = SampleMatrix> {
    (1usize..30, 1usize..4).prop_flat_map(|(n, d)| {
        prop::collection::vec(-50.0f64..50.0, n * d)
            .prop_map(move |v| SampleMatrix::from_row_major(n, d, v).unwrap())
    })
}

proptest! {
    #[test]
    fn direct_is_affine_equivariant(s in matrix_strategy(), r in 1u32..5, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let shifts = vec![shift; s.dim()];
        let t = s.affine(scale, &shifts).unwrap();
        let a = lmoment_rosenblatt_direct(&s, r).unwrap();
        let b = lmoment_rosenblatt_direct(&t, r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let want = scale * x + if r == 1 { shift } else { 0.0 };
            prop_assert!((y - want).abs() < 1e-9 * (1.0 + want.abs() + scale * 50.0));
        }
    }

    #[test]
    fn estimators_ignore_row_order(s in matrix_strategy(), r in 1u32..4, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..s.n()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| s.row(i).to_vec()).collect();
        let p = SampleMatrix::from_rows(&rows).unwrap();
        let a = lmoment_rosenblatt_direct(&s, r).unwrap();
        let b = lmoment_rosenblatt_direct(&p, r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        if (r as usize) <= s.n() {
            let a = lmoment_rosenblatt_unbiased(&s, r).unwrap();
            let b = lmoment_rosenblatt_unbiased(&p, r).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
