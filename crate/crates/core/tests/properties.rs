use fairprobe::dataset::encode;
use fairprobe::distill::{ccp_sequence, extract_rules, fit_tree_with};
use fairprobe::objective::{
    expected_dscore, membership, penalty_topk, value_and_gradient, ObjectiveConfig,
};
use fairprobe::oracle::enum_search_with;
use fairprobe::{AttributeSpec, Dataset, Exec, Value, Weights};
use proptest::prelude::*;

/// Mixed table: one categorical attribute with three values, one continuous.
fn mixed_dataset() -> impl Strategy<Value = Dataset> {
    (8usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0usize..3, n),
            prop::collection::vec(0u8..40, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(cats, nums, fav)| {
                let schema = vec![
                    AttributeSpec::categorical("color", &["blue", "green", "red"]),
                    AttributeSpec::continuous("size"),
                ];
                let rows = cats
                    .into_iter()
                    .zip(nums)
                    .map(|(c, x)| vec![Value::Cat(c), Value::Num(x as f64 * 0.5)])
                    .collect();
                Dataset::new(schema, rows, fav).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rules_partition_the_rows(data in mixed_dataset(), mask in prop::collection::vec(any::<bool>(), 60)) {
        let fm = encode(&data, false);
        let members = &mask[..data.n()];
        let tree = fit_tree_with(&fm, members, data.fav(), 1, Exec::Sequential).unwrap();
        let rules = extract_rules(&tree, fm.colmap());
        for i in 0..data.n() {
            let hits = rules.iter().filter(|r| r.matches(&data, i)).count();
            prop_assert_eq!(hits, 1, "row {} matched {} rules", i, hits);
        }
        prop_assert_eq!(rules.iter().map(|r| r.support).sum::<usize>(), data.n());
    }

    #[test]
    fn pruning_sequence_nests_and_partitions(data in mixed_dataset(), mask in prop::collection::vec(any::<bool>(), 60)) {
        let fm = encode(&data, false);
        let tree = fit_tree_with(&fm, &mask[..data.n()], data.fav(), 1, Exec::Sequential).unwrap();
        let seq = ccp_sequence(&tree);
        prop_assert!(seq.last().unwrap().1.is_leaf(0));
        for pair in seq.windows(2) {
            prop_assert!(pair[0].0 < pair[1].0);
            prop_assert!(pair[1].1.leaves().len() < pair[0].1.leaves().len());
        }
        for (_, t) in &seq {
            let total: usize = t.leaves().iter().map(|&l| t.node(l).stats.count).sum();
            prop_assert_eq!(total, data.n());
            // every row lands in exactly one leaf of every pruned tree
            let mut seen = vec![0usize; t.nodes().len()];
            for i in 0..data.n() {
                seen[t.leaf_of(fm.row(i))] += 1;
            }
            for &l in &t.leaves() {
                prop_assert_eq!(seen[l], t.node(l).stats.count);
            }
        }
    }

    #[test]
    fn penalty_ignores_order_and_sign(
        theta in prop::collection::vec(-5.0f64..5.0, 2..12),
        k in 1usize..12,
        flips in prop::collection::vec(any::<bool>(), 12),
        rotate in 0usize..12,
    ) {
        let m = theta.len();
        let k = k.min(m);
        let mask = vec![true; m];
        let base = penalty_topk(&Weights::new(theta.clone()).unwrap(), k, &mask).unwrap();
        let mut other: Vec<f64> = theta
            .iter()
            .zip(&flips)
            .map(|(t, &f)| if f { -t } else { *t })
            .collect();
        other.rotate_left(rotate % m);
        let moved = penalty_topk(&Weights::new(other).unwrap(), k, &mask).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn expected_score_is_bounded(data in mixed_dataset(), theta in prop::collection::vec(-20.0f64..20.0, 5)) {
        let fm = encode(&data, true);
        let w = Weights::new(theta[..fm.d()].to_vec()).unwrap();
        let sg = membership(&fm, &w).unwrap();
        let s = expected_dscore(data.fav(), &sg, 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
    }

    #[test]
    fn parallel_and_sequential_gradients_are_identical(data in mixed_dataset(), theta in prop::collection::vec(-2.0f64..2.0, 5)) {
        let fm = encode(&data, true);
        let w = Weights::new(theta[..fm.d()].to_vec()).unwrap();
        let cfg = |exec| ObjectiveConfig { k: 2, mu: 3.0, exec, ..Default::default() };
        let (ps, gs) = value_and_gradient(data.fav(), &fm, &w, &cfg(Exec::Sequential)).unwrap();
        let (pp, gp) = value_and_gradient(data.fav(), &fm, &w, &cfg(Exec::Parallel)).unwrap();
        prop_assert_eq!(ps.value.to_bits(), pp.value.to_bits());
        prop_assert_eq!(
            gs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            gp.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parallel_and_sequential_search_agree(data in mixed_dataset()) {
        let s = enum_search_with(&data, 2, 0.2, 0.8, 0.0, Exec::Sequential).unwrap();
        let p = enum_search_with(&data, 2, 0.2, 0.8, 0.0, Exec::Parallel).unwrap();
        prop_assert_eq!(s, p);
    }
}

#[test]
fn parallel_and_sequential_trees_are_identical() {
    let n = 3000;
    let schema = vec![
        AttributeSpec::continuous("x"),
        AttributeSpec::continuous("y"),
        AttributeSpec::categorical("g", &["a", "b", "c", "d"]),
    ];
    let rows: Vec<Vec<Value>> = (0..n)
        .map(|i| {
            vec![
                Value::Num(((i * 7919) % 997) as f64),
                Value::Num(((i * 104729) % 613) as f64 / 7.0),
                Value::Cat(i % 4),
            ]
        })
        .collect();
    let fav: Vec<bool> = (0..n).map(|i| (i * 31) % 5 < 2).collect();
    let members: Vec<bool> = rows
        .iter()
        .map(|r| matches!((r[0], r[2]), (Value::Num(x), Value::Cat(g)) if x < 400.0 || g == 2))
        .collect();
    let data = Dataset::new(schema, rows, fav).unwrap();
    let fm = encode(&data, false);
    let s = fit_tree_with(&fm, &members, data.fav(), 5, Exec::Sequential).unwrap();
    let p = fit_tree_with(&fm, &members, data.fav(), 5, Exec::Parallel).unwrap();
    assert_eq!(s, p);
}
