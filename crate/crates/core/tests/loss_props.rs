use desdis_core::gradcheck::grad_check;
use desdis_core::loss::{
    batch_objective, distance_matrix, mine_hardest_negatives, triplet_loss, ts_regularizer_neg, ts_regularizer_pos,
    DistanceMatrix, ObjectiveWeights,
};
use desdis_core::metrics::eval_fpr95;
use desdis_core::{Graph, Tensor};
use proptest::prelude::*;

mod common;
use common::exhaustive_negative;

fn rows(n: usize, d: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, n * d).prop_map(move |v| Tensor::new(&[n, d], v).unwrap())
}

/// Distances on a coarse grid so ties are common, with ids drawn from a few points.
fn mining_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<usize>)> {
    (2usize..=64).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0u32..8).prop_map(|k| k as f64 * 0.25), n * n),
            prop::collection::vec(0usize..(n / 2).max(2), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_matrix_transposes(a in rows(5, 6), b in rows(4, 6)) {
        let ab = distance_matrix(&a, &b).unwrap();
        let ba = distance_matrix(&b, &a).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                prop_assert!(ab.get(i, j) >= 0.0);
                prop_assert!((ab.get(i, j) - ba.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mining_matches_exhaustive_search((n, d, ids) in mining_case()) {
        prop_assume!(ids.iter().any(|&x| x != ids[0]));
        let dist = DistanceMatrix { values: Tensor::new(&[n, n], d.clone()).unwrap() };
        let mined = mine_hardest_negatives(&dist, &ids).unwrap();
        for i in 0..n {
            let j = mined.negatives[i];
            prop_assert_ne!(ids[j], ids[i]);
            prop_assert_eq!(j, exhaustive_negative(n, &d, &ids, i));
        }
    }

    #[test]
    fn triplet_loss_is_nonnegative(
        pairs in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..40),
        margin in 0.1f64..2.0,
    ) {
        let (p, n): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let l = triplet_loss(&p, &n, margin).unwrap();
        prop_assert!(l >= 0.0);
        let all_satisfied = p.iter().zip(&n).all(|(a, b)| b - a >= margin);
        prop_assert_eq!(l == 0.0, all_satisfied);
    }

    #[test]
    fn regularizers_are_nonnegative(
        pairs in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..40),
        equal in any::<bool>(),
    ) {
        let (t, mut s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if equal {
            s = t.clone();
        }
        for r in [ts_regularizer_pos(&t, &s).unwrap(), ts_regularizer_neg(&t, &s).unwrap()] {
            prop_assert!(r >= 0.0);
            prop_assert_eq!(r == 0.0, t == s);
        }
    }

    #[test]
    fn fpr95_ignores_monotone_rescaling(
        pos in prop::collection::vec(0.0f64..2.0, 1..50),
        neg in prop::collection::vec(0.0f64..2.0, 1..50),
        a in 0.1f64..5.0,
        b in -1.0f64..1.0,
    ) {
        let base = eval_fpr95(&pos, &neg).unwrap();
        let affine = |v: &[f64]| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let cubic = |v: &[f64]| v.iter().map(|x| x.powi(3) + x).collect::<Vec<_>>();
        prop_assert_eq!(base, eval_fpr95(&affine(&pos), &affine(&neg)).unwrap());
        prop_assert_eq!(base, eval_fpr95(&cubic(&pos), &cubic(&neg)).unwrap());
    }

    #[test]
    fn total_loss_gradients(student in rows(8, 5), teacher in rows(8, 5)) {
        // four triplets: rows 0..4 are anchors, 4..8 their positives
        let ids = [0usize, 1, 2, 3];
        let t_dist = distance_matrix(&teacher.slice_rows(0, 4).unwrap(), &teacher.slice_rows(4, 8).unwrap()).unwrap();
        let s_dist = distance_matrix(&student.slice_rows(0, 4).unwrap(), &student.slice_rows(4, 8).unwrap()).unwrap();
        // keep clear of hinge kinks and mining ties
        let mined = mine_hardest_negatives(&s_dist, &ids).unwrap();
        for i in 0..4 {
            prop_assume!((1.0 + s_dist.get(i, i) - s_dist.get(i, mined.negatives[i])).abs() > 1e-3);
            let mut row: Vec<f64> = (0..4).filter(|&j| j != i).map(|j| s_dist.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            prop_assume!(row[1] - row[0] > 1e-3);
        }
        let weights = ObjectiveWeights { margin: 1.0, alpha_p: 1.0, alpha_n: 15.0 };
        let r = grad_check(|g, v| {
            let a = g.slice_rows(v, 0, 4)?;
            let p = g.slice_rows(v, 4, 8)?;
            Ok(batch_objective(g, a, p, &ids, Some(&t_dist), weights)?.loss)
        }, &student, 1e-5).unwrap();
        prop_assert!(r.passes(1e-4), "{:?}", r);

        let mut g = Graph::new();
        let s = g.param(student.clone()).unwrap();
        let t = g.param(teacher.clone()).unwrap();
        let a = g.slice_rows(s, 0, 4).unwrap();
        let p = g.slice_rows(s, 4, 8).unwrap();
        let obj = batch_objective(&mut g, a, p, &ids, Some(&t_dist), weights).unwrap();
        let mut grads = g.backward(obj.loss).unwrap();
        prop_assert!(grads.take(t).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
