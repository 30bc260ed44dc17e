use eqsae::probing::{
    f1_score, gbt_fit, knn_neighbors, logreg_fit, orbit_split, select_top_latents, GbtParams, LogregParams,
};
use eqsae_numerics::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn both_classes(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n).prop_filter("two classes", |v| v.iter().any(|&b| b) && v.iter().any(|&b| !b))
}

/// Rows `x` mapped by a product of plane rotations, then shifted.
fn rigid_motion(x: &Tensor<f64>, angles: &[f64], shift: &[f64]) -> Tensor<f64> {
    let f = x.dims()[1];
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(f) {
        for (i, &a) in angles.iter().enumerate() {
            let (p, q) = (i % f, (i + 1) % f);
            let (c, s) = (a.cos(), a.sin());
            let (u, v) = (row[p], row[q]);
            row[p] = c * u - s * v;
            row[q] = s * u + c * v;
        }
        for (v, t) in row.iter_mut().zip(shift) {
            *v += t;
        }
    }
    out
}

/// Sorted squared distances from one test row to every training row.
fn oracle_distances(train: &Tensor<f64>, row: &[f64]) -> Vec<(f64, usize)> {
    let f = row.len();
    let mut d: Vec<(f64, usize)> = train
        .data()
        .chunks(f)
        .enumerate()
        .map(|(j, t)| (t.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f1_is_symmetric_and_order_free(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40), rot in 0usize..40) {
        let (p, l): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let f = f1_score(&p, &l);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, f1_score(&l, &p));
        let r = rot % pairs.len();
        let (mut p2, mut l2) = (p.clone(), l.clone());
        p2.rotate_left(r);
        l2.rotate_left(r);
        prop_assert_eq!(f, f1_score(&p2, &l2));
        prop_assert_eq!(f1_score(&l, &l), if l.iter().any(|&b| b) { 1.0 } else { 0.0 });
    }

    #[test]
    fn knn_matches_brute_force_and_rigid_motions(
        train in matrix(40, 5),
        test in matrix(6, 5),
        angles in prop::collection::vec(-3.0f64..3.0, 7),
        shift in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let k = 16;
        let got = knn_neighbors(&train, &test, k).unwrap();
        let moved = knn_neighbors(&rigid_motion(&train, &angles, &shift), &rigid_motion(&test, &angles, &shift), k).unwrap();
        for (i, row) in test.data().chunks(5).enumerate() {
            let d = oracle_distances(&train, row);
            // Only rows whose ranking is numerically unambiguous are compared.
            let clear = d.windows(2).take(k).all(|w| w[1].0 - w[0].0 > 1e-8);
            if clear {
                let want: Vec<usize> = d[..k].iter().map(|x| x.1).collect();
                prop_assert_eq!(&got[i], &want);
                prop_assert_eq!(&moved[i], &want);
            }
        }
    }

    #[test]
    fn selection_ignores_row_order_and_power_of_two_scale(
        z in prop::collection::vec(0u8..6, 24 * 10),
        labels in both_classes(24),
        l in 1usize..10,
        rot in 1usize..24,
    ) {
        let t = Tensor::new(vec![24, 10], z.iter().map(|&v| v as f64).collect()).unwrap();
        let base = select_top_latents(&t, &labels, l).unwrap().selected_indices;
        prop_assert_eq!(base.len(), l);
        let order: Vec<usize> = (0..24).map(|i| (i + rot) % 24).collect();
        let permuted_labels: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(&select_top_latents(&t.select_rows(&order), &permuted_labels, l).unwrap().selected_indices, &base);
        prop_assert_eq!(&select_top_latents(&t.map(|v| v * 4.0), &labels, l).unwrap().selected_indices, &base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gbt_training_margins_survive_monotone_feature_maps(x in matrix(48, 3), labels in both_classes(48)) {
        let params = GbtParams { rounds: 8, max_depth: 3, ..GbtParams::default() };
        let warped = x.map(|v| v * v * v + v + 10.0);
        let a = gbt_fit(&x, &labels, &params);
        let b = gbt_fit(&warped, &labels, &params);
        for (r, w) in x.data().chunks(3).zip(warped.data().chunks(3)) {
            prop_assert_eq!(a.margin(r), b.margin(w));
        }
    }

    #[test]
    fn logreg_is_seed_deterministic(x in matrix(30, 4), labels in both_classes(30), seed in any::<u64>()) {
        let params = LogregParams { epochs: 5, batch_size: 8, ..LogregParams::default() };
        prop_assert_eq!(logreg_fit(&x, &labels, &params, seed), logreg_fit(&x, &labels, &params, seed));
    }

    #[test]
    fn orbit_split_partitions_whole_orbits(n in 4usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = orbit_split(n, frac, seed);
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..4 * n).collect::<Vec<_>>());
        let orbit_of_test: std::collections::HashSet<usize> = test.iter().map(|i| i / 4).collect();
        prop_assert!(train.iter().all(|i| !orbit_of_test.contains(&(i / 4))));
    }
}
