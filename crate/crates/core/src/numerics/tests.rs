use proptest::prelude::*;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[0.0, 0.0]));
    let p = g.softmax(x);
    assert_eq!(g.value(p).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[1000.0, 0.0]));
    let p = g.softmax(x);
    let v = g.value(p).data();
    assert!((v[0] - 1.0).abs() < 1e-12);
    assert!(v[1].abs() < 1e-12);
    assert!(v.iter().all(|x| x.is_finite()));
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1], &[0.0]));
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).data(), &[0.5]);
}

#[test]
fn sigmoid_stays_inside_open_interval() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![4], vec![40.0f32, -200.0, 17.0, -17.0]).unwrap());
    let s = g.sigmoid(x);
    for &v in g.value(s).data() {
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
    assert_eq!(g.value(s).data()[0], 1.0 - f32::EPSILON / 2.0);
}

#[test]
fn matmul_by_identity() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.matmul(a, i).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
    assert!(g.mul(a, c).is_err());
    assert!(g.concat(&[a, c], 1).is_err());
}

#[test]
fn backward_of_linear_sum() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", t(&[3], &[0.1, -2.0, 5.0]), true);
    let mut g = Graph::new();
    let node = g.param(&ps, w);
    let loss = g.sum(node);
    g.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.get(w).gradient.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_quadratic_and_accumulation() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", t(&[2], &[1.0, 2.0]), true);
    let run = |ps: &mut ParamSet<f64>| {
        let mut g = Graph::new();
        let node = g.param(ps, w);
        let sq = g.mul(node, node).unwrap();
        let loss = g.sum(sq);
        g.backward(loss, ps).unwrap();
    };
    run(&mut ps);
    assert_eq!(ps.get(w).gradient.data(), &[2.0, 4.0]);
    run(&mut ps);
    assert_eq!(ps.get(w).gradient.data(), &[4.0, 8.0]);
    ps.zero_grad();
    assert_eq!(ps.get(w).gradient.data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", t(&[2], &[1.0, 2.0]), true);
    let mut g = Graph::new();
    let node = g.param(&ps, w);
    assert!(g.backward(node, &mut ps).is_err());
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", t(&[2], &[1.0, 2.0]), false);
    let mut g = Graph::new();
    let node = g.param(&ps, w);
    let loss = g.sum(node);
    g.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.get(w).gradient.data(), &[0.0, 0.0]);
}

#[test]
fn every_primitive_passes_gradient_check() {
    for (name, report) in checks::primitive_grad_checks(11).unwrap() {
        assert!(report.max_relative_error < 1e-6, "{name}: {report:?}");
        assert!(report.entries_checked > 0, "{name}");
    }
}

#[test]
fn constant_function_has_zero_error() {
    let mut ps = ParamSet::new();
    ps.add("w", t(&[3], &[1.0, 2.0, 3.0]), true);
    let report = grad_check(|g, _| Ok(g.constant(Tensor::scalar(7.0))), &mut ps, 1e-6).unwrap();
    assert_eq!(report.max_relative_error, 0.0);
}

#[test]
fn grad_check_rejects_bad_epsilon_and_non_finite() {
    let mut ps = ParamSet::new();
    let w = ps.add("w", t(&[1], &[0.0]), true);
    assert!(grad_check(|g, p| Ok(g.param(p, w)), &mut ps, 1e-2).is_err());
    let err = grad_check(
        |g, p| {
            let x = g.param(p, w);
            g.mul_const(x, vec![f64::NAN])
        },
        &mut ps,
        1e-6,
    );
    assert!(err.is_err());
}

#[test]
fn injected_fault_is_detected() {
    inject_adjoint_fault(Some("tanh"));
    let result = checks::primitive_grad_checks(3);
    inject_adjoint_fault(None);
    let tanh = result.unwrap().into_iter().find(|(n, _)| *n == "tanh").unwrap().1;
    assert!(tanh.max_relative_error > 0.1);
}

#[test]
fn concat_backward_splits_upstream_exactly() {
    let mut ps = ParamSet::new();
    let a = ps.add("a", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
    let b = ps.add("b", t(&[2, 1], &[5.0, 6.0]), true);
    let mut g = Graph::new();
    let (na, nb) = (g.param(&ps, a), g.param(&ps, b));
    let c = g.concat(&[na, nb], 1).unwrap();
    let upstream = vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.5];
    let weighted = g.mul_const(c, upstream.clone()).unwrap();
    let loss = g.sum(weighted);
    g.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.get(a).gradient.data(), &[1.0, -2.0, 0.5, 4.0]);
    assert_eq!(ps.get(b).gradient.data(), &[3.0, -1.5]);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let pieces = norm(ps.get(a).gradient.data()) + norm(ps.get(b).gradient.data());
    assert!((pieces - norm(&upstream)).abs() < 1e-12);
}

#[test]
fn masked_reductions_ignore_padding() {
    let mut g = Graph::<f64>::new();
    // [B=1, T=3, H=2], only the first two steps are valid.
    let x = g.constant(t(&[1, 3, 2], &[1.0, -2.0, 3.0, 0.0, 100.0, 100.0]));
    let mx = g.max_over_axis(x, 1, Some(&[2])).unwrap();
    let mean = g.mean_over_axis(x, 1, Some(&[2])).unwrap();
    assert_eq!(g.value(mx).data(), &[3.0, 0.0]);
    assert_eq!(g.value(mean).data(), &[2.0, -1.0]);
    let empty = g.max_over_axis(x, 1, Some(&[0])).unwrap();
    assert_eq!(g.value(empty).data(), &[0.0, 0.0]);
}

#[test]
fn cross_entropy_closed_forms() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(t(&[1, 4], &[0.25; 4]));
    let cce = g.categorical_cross_entropy(p, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    assert!((g.value(cce).data()[0] - 4f64.ln()).abs() < 1e-12);
    let q = g.constant(t(&[2, 3], &[0.5; 6]));
    let bce = g.binary_cross_entropy(q, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!((g.value(bce).data()[0] - 2f64.ln()).abs() < 1e-12);
    let perfect = g.constant(t(&[1, 2], &[1.0, 0.0]));
    let zero = g.categorical_cross_entropy(perfect, vec![1.0, 0.0]).unwrap();
    assert!(g.value(zero).data()[0] <= 1.1e-7);
    assert!(g.categorical_cross_entropy(perfect, vec![1.0, 1.0]).is_err());
}

#[test]
fn identical_inputs_give_bit_identical_gradients() {
    let run = || {
        let mut ps = ParamSet::new();
        let w = ps.add("w", t(&[2, 3], &[0.3, -0.2, 0.9, 1.1, -0.7, 0.05]), true);
        let mut g = Graph::new();
        let x = g.constant(t(&[4, 2], &[1.0, 2.0, -1.0, 0.5, 0.2, 0.1, 3.0, -3.0]));
        let wn = g.param(&ps, w);
        let h = g.matmul(x, wn).unwrap();
        let p = g.softmax(h);
        let loss = g
            .categorical_cross_entropy(p, vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0.])
            .unwrap();
        g.backward(loss, &mut ps).unwrap();
        (g.value(loss).data().to_vec(), ps.get(w).gradient.data().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 5), 1..6)) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let p = g.softmax(x);
        for row in g.value(p).rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_f32(row in prop::collection::vec(-80.0f32..80.0, 1..20)) {
        let mut g = Graph::<f32>::new();
        let n = row.len();
        let x = g.constant(Tensor::new(vec![n], row).unwrap());
        let p = g.softmax(x);
        prop_assert!((g.value(p).data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_symmetric(z in -700.0f64..700.0) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2], vec![z, -z]).unwrap());
        let s = g.sigmoid(x);
        let v = g.value(s).data();
        prop_assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn gather_skips_padding_row_gradient() {
    let mut ps = ParamSet::new();
    let table = ps.add("emb", Tensor::from_fn(&[3, 2], |i| i as f64), true);
    let mut g = Graph::new();
    let e = g.embedding_gather(&ps, table, &[0, 2, 2, 0], &[2, 2], Some(0)).unwrap();
    assert_eq!(g.shape(e), &[2, 2, 2]);
    assert_eq!(&g.value(e).data()[2..4], &[4.0, 5.0]);
    let loss = g.sum(e);
    g.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.get(table).gradient.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
    assert!(g.embedding_gather(&ps, table, &[3], &[1], None).is_err());
}
