use esgcn::data::{make_windows, split_windows, WindowSpec};
use esgcn::model::es::{self, Squeeze};
use esgcn::model::loss::huber;
use esgcn::model::{AttentionOp, Esgcn, ModelConfig, Representative};
use esgcn::tensor::{Graph, Tensor};
use esgcn::train::metrics;
use proptest::prelude::*;

fn small(attention_op: AttentionOp) -> ModelConfig {
    ModelConfig {
        channels: [8; 4],
        head_hidden: 8,
        attention_op,
        ..Default::default()
    }
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, len).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

fn attention() -> impl Strategy<Value = AttentionOp> {
    prop_oneof![Just(AttentionOp::Max), Just(AttentionOp::Avg), Just(AttentionOp::MaxLearned)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjacency_pair_is_disjoint_and_bounded(
        seed in 0u64..1000,
        op in attention(),
        x in (2usize..7).prop_flat_map(|n| tensor(vec![1, 1, n, 12])),
    ) {
        let model = Esgcn::<f64>::new(small(op), seed).unwrap();
        let (a, ar) = model.adjacency(&x).unwrap();
        for (&p, &q) in a.data().iter().zip(ar.data()) {
            prop_assert_eq!(p * q, 0.0);
            prop_assert!((0.0..1.0).contains(&p));
            prop_assert!((0.0..1.0).contains(&q));
        }
    }

    #[test]
    fn squeeze_pair_partitions_tanh(r in tensor(vec![2, 3, 4, 4]), op in prop_oneof![Just(0), Just(1)]) {
        let mut g = Graph::<f64>::new();
        let rv = g.constant(r);
        let op = if op == 0 { Squeeze::Max } else { Squeeze::Avg };
        let a = es::squeeze_attention(&mut g, rv, op, false).unwrap();
        let ar = es::squeeze_attention(&mut g, rv, op, true).unwrap();
        let reduced = match op {
            Squeeze::Avg => g.mean_over_channel(rv).unwrap(),
            _ => g.max_over_channel(rv).unwrap(),
        };
        for ((&p, &q), &m) in g.value(a).data().iter().zip(g.value(ar).data()).zip(g.value(reduced).data()) {
            prop_assert!((p - q - m.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn correlation_is_bounded_with_unit_diagonal(
        fc in (1usize..5, 2usize..6, 1usize..4).prop_flat_map(|(c, n, l)| tensor(vec![2, c, n, l])),
        rep in prop_oneof![Just(Representative::Last), Just(Representative::Middle), Just(Representative::First)],
    ) {
        let mut g = Graph::<f64>::new();
        let (n, l) = (fc.shape()[2], fc.shape()[3]);
        let fcv = g.constant(fc);
        let fl = es::representative(&mut g, fcv, rep).unwrap();
        let s = es::correlate(&mut g, fl, fcv, 1e-8).unwrap();
        let sv = g.value(s);
        prop_assert!(sv.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let norm_nonzero = |b: usize, k: usize| {
            (0..g.value(fcv).shape()[1]).any(|c| g.value(fcv).get(&[b, c, k, rep.index(l)]) != 0.0)
        };
        for b in 0..2 {
            for k in 0..n {
                if norm_nonzero(b, k) {
                    prop_assert!((sv.get(&[b, k, k, rep.index(l)]) - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_features_correlate_to_zero(n in 2usize..5) {
        let mut g = Graph::<f64>::new();
        let fc = g.constant(Tensor::zeros(&[1, 3, n, 2]));
        let fl = es::representative(&mut g, fc, Representative::Last).unwrap();
        let s = es::correlate(&mut g, fl, fc, 1e-8).unwrap();
        prop_assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_is_node_permutation_equivariant(
        seed in 0u64..100,
        op in attention(),
        (x, perm) in (2usize..7).prop_flat_map(|n| {
            (tensor(vec![2, 1, n, 12]), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }),
    ) {
        let model = Esgcn::<f64>::new(small(op), seed).unwrap();
        let n = perm.len();
        let xp = Tensor::from_fn(x.shape(), |i| {
            let (b, k, t) = (i / (n * 12), (i / 12) % n, i % 12);
            x.get(&[b, 0, perm[k], t])
        });
        let (y, yp) = (model.predict(&x).unwrap(), model.predict(&xp).unwrap());
        for b in 0..2 {
            for h in 0..12 {
                for (k, &pk) in perm.iter().enumerate() {
                    prop_assert!((yp.get(&[b, h, k]) - y.get(&[b, h, pk])).abs() < 1e-9);
                }
            }
        }
        let (a, _) = model.adjacency(&x).unwrap();
        let (ap, _) = model.adjacency(&xp).unwrap();
        for k in 0..n {
            for j in 0..n {
                prop_assert!((ap.get(&[0, k, j]) - a.get(&[0, perm[k], perm[j]])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((0.0f64..500.0, -100.0f64..100.0), 1..64)) {
        let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let m = metrics(&pred, &truth).unwrap();
        prop_assert!(m.rmse + 1e-9 >= m.mae);
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
    }

    #[test]
    fn huber_is_continuous_and_bounded_by_square(r in -10.0f64..10.0, delta in 0.01f64..5.0) {
        prop_assert!(huber(r, delta) <= 0.5 * r * r + 1e-12);
        prop_assert!(huber(r, delta) >= 0.0);
        let at = huber(delta, delta);
        prop_assert!((huber(delta * (1.0 - 1e-12), delta) - at).abs() < 1e-9);
        prop_assert!((huber(-delta * (1.0 + 1e-12), delta) - at).abs() < 1e-9);
    }

    #[test]
    fn windows_and_splits_partition(steps in 24usize..400) {
        let spec = WindowSpec::default();
        let w = make_windows(steps, spec).unwrap();
        prop_assert_eq!(w.len(), steps - 23);
        if let Ok(s) = split_windows(&w) {
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, w.clone());
            prop_assert_eq!(s.train.len(), w.len() * 6 / 10);
            prop_assert_eq!(s.val.len(), w.len() * 2 / 10);
            prop_assert!(s.train.iter().max() < s.val.iter().min());
            prop_assert!(s.val.iter().max() < s.test.iter().min());
        }
    }
}
