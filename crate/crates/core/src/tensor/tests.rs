use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::rng::RngState;

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let data = (0..numel(shape)).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(data, shape).unwrap()
}

/// Project a tensor onto a fixed random direction so every output
/// coordinate contributes to the checked scalar.
fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = RngState::new(seed ^ 0x5eed);
    let w = randn(y.shape(), &mut rng);
    Ok(y.mul(&w)?.sum_all())
}

fn check(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) -> GradCheckReport {
    grad_check(|xs| project(&f(xs)?, 1), inputs, &GradCheckConfig::default()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_identity_and_hand_cases() {
    let i2 = Tensor::<f64>::eye(2);
    let m = Tensor::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
    assert_eq!(i2.matmul(&m).unwrap().to_vec(), vec![1., 2., 3., 4.]);
    let a = Tensor::<f64>::from_f64(&[1., 2.], &[1, 2]).unwrap();
    let b = Tensor::from_f64(&[3., 4.], &[2, 1]).unwrap();
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[1, 1]);
    assert_eq!(c.to_vec(), vec![11.]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[4, 5]);
    let msg = a.matmul(&b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_grad_matches_finite_differences() {
    let mut rng = RngState::new(3);
    let a = randn(&[5, 7], &mut rng);
    let b = randn(&[7, 3], &mut rng);
    let r = check(&[a, b], |x| x[0].matmul(&x[1]));
    assert!(r.passed(), "{r:?}");
}

#[test]
fn softmax_cases() {
    let x = Tensor::<f64>::from_f64(&[0., 0.], &[2]).unwrap();
    assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);
    let big = Tensor::<f64>::from_f64(&[1000., 0.], &[2]).unwrap();
    let y = big.softmax(0).unwrap().to_vec();
    assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12 && y.iter().all(|v| v.is_finite()));

    let mut rng = RngState::new(4);
    let v = randn(&[4], &mut rng);
    let r = check(&[v], |x| x[0].softmax(0));
    assert!(r.passed(), "{r:?}");
}

#[test]
fn softmax_along_inner_axis_sums_to_one() {
    let mut rng = RngState::new(5);
    let x = randn(&[2, 3, 4], &mut rng);
    let y = x.softmax(1).unwrap();
    let s = y.sum_axis(1).unwrap();
    assert_close(&s.to_vec(), &[1.0; 8], 1e-12);
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let x = Tensor::<f64>::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
    let keep = Arc::new(vec![true, false, true, true]);
    let y = x.softmax_masked(keep).unwrap().to_vec();
    assert_eq!(y[0], 1.0);
    assert_eq!(y[1], 0.0);
    assert!((y[2] + y[3] - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_cases() {
    let one = Tensor::<f64>::full(&[4], 1.0);
    let zero = Tensor::<f64>::zeros(&[4]);
    let c = Tensor::full(&[1, 4], 3.0);
    assert_eq!(c.layer_norm(&one, &zero, 1e-5).unwrap().to_vec(), vec![0.0; 4]);

    let one2 = Tensor::<f64>::full(&[2], 1.0);
    let zero2 = Tensor::<f64>::zeros(&[2]);
    let r = Tensor::from_f64(&[1., -1.], &[1, 2]).unwrap();
    let y = r.layer_norm(&one2, &zero2, 1e-12).unwrap().to_vec();
    assert_close(&y, &[1.0, -1.0], 1e-9);

    let empty = Tensor::<f64>::zeros(&[3, 0]);
    let g0 = Tensor::<f64>::zeros(&[0]);
    assert!(matches!(empty.layer_norm(&g0, &g0, 1e-5), Err(crate::Error::Dimension(_))));

    let mut rng = RngState::new(6);
    let x = randn(&[3, 8], &mut rng);
    let g = randn(&[8], &mut rng);
    let b = randn(&[8], &mut rng);
    let rep = check(&[x, g, b], |t| t[0].layer_norm(&t[1], &t[2], 1e-5));
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn grad_check_sum_is_exact() {
    let mut rng = RngState::new(7);
    let x = randn(&[3, 4], &mut rng);
    let r = grad_check(|xs| Ok(xs[0].sum_all()), std::slice::from_ref(&x), &GradCheckConfig::default()).unwrap();
    assert!(r.max_abs_error < 1e-9, "{r:?}");
    let tracked = x.requiring_grad();
    let g = tracked.sum_all().backward().unwrap();
    assert_eq!(g.get(&tracked).unwrap(), &[1.0; 12][..]);
}

#[test]
fn grad_check_rejects_non_scalar() {
    let x = Tensor::<f64>::zeros(&[2]);
    let err = grad_check(|xs| Ok(xs[0].clone()), &[x], &GradCheckConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn grad_check_detects_corrupted_backward_rule() {
    // x² with a backward rule that forgets the factor 2.
    fn bad_square(x: &Tensor<f64>) -> Tensor<f64> {
        let data = x.data().iter().map(|v| v * v).collect();
        let xc = x.clone();
        Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], move |g, _| {
            vec![Some(g.iter().zip(xc.data()).map(|(gi, xi)| gi * xi).collect())]
        })
    }
    let mut rng = RngState::new(8);
    let x = randn(&[6], &mut rng);
    let r = grad_check(|xs| Ok(bad_square(&xs[0]).sum_all()), &[x], &GradCheckConfig::default()).unwrap();
    assert!(r.max_rel_error > 0.1, "{r:?}");
    assert!(!r.passed());
}

#[test]
fn l2_normalize_unit_rows() {
    let mut rng = RngState::new(9);
    let x = randn(&[5, 6], &mut rng).scale(1e3);
    let y = x.l2_normalize().unwrap();
    for row in y.data().chunks(6) {
        let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn backward_accumulates_shared_uses() {
    let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
    let g = y.backward().unwrap();
    assert_eq!(g.get(&x).unwrap(), &[7.0]);
}

#[test]
fn backward_on_constant_graph_is_empty() {
    let x = Tensor::<f64>::zeros(&[2]);
    assert!(x.sum_all().backward().unwrap().is_empty());
}

#[test]
fn embedding_out_of_range() {
    let t = Tensor::<f32>::zeros(&[3, 2]);
    assert!(matches!(t.embedding(&[0, 3]), Err(crate::Error::Input(_))));
}

#[test]
fn concat_and_narrow_invert() {
    let mut rng = RngState::new(10);
    let a = randn(&[2, 3, 2], &mut rng);
    let b = randn(&[2, 1, 2], &mut rng);
    let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
    assert_eq!(c.shape(), &[2, 4, 2]);
    assert_eq!(c.narrow(1, 0, 3).unwrap().to_vec(), a.to_vec());
    assert_eq!(c.narrow(1, 3, 1).unwrap().to_vec(), b.to_vec());
}

#[test]
fn f32_runs_are_bit_identical() {
    let run = || {
        let mut rng = RngState::new(11);
        let a: Tensor<f32> = randn(&[70, 33], &mut rng).cast();
        let b: Tensor<f32> = randn(&[33, 20], &mut rng).cast();
        a.matmul(&b).unwrap().gelu().softmax(1).unwrap().to_vec()
    };
    let (x, y) = (run(), run());
    assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
}

// ---- randomized grad checks: every differentiable op, many shapes ----

fn dims(max_rank: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1usize..5, 1..=max_rank)
}

macro_rules! op_property {
    ($name:ident, $strategy:expr, |$shape:ident, $rng:ident| $build:expr) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn $name($shape in $strategy, seed in 0u64..1000) {
                let mut $rng = RngState::new(seed);
                let (inputs, f): (Vec<Tensor<f64>>, Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>) = $build;
                let r = check(&inputs, f);
                prop_assert!(r.passed(), "{:?}", r);
            }
        }
    };
}

op_property!(prop_add_broadcast, dims(3), |s, rng| {
    let tail = s[s.len() - 1..].to_vec();
    (vec![randn(&s, &mut rng), randn(&tail, &mut rng)], Box::new(|x| x[0].add(&x[1])))
});

op_property!(prop_sub, dims(3), |s, rng| {
    (vec![randn(&s, &mut rng), randn(&s, &mut rng)], Box::new(|x| x[0].sub(&x[1])))
});

op_property!(prop_mul_broadcast, dims(3), |s, rng| {
    let mut b = s.clone();
    b[0] = 1;
    (vec![randn(&s, &mut rng), randn(&b, &mut rng)], Box::new(|x| x[0].mul(&x[1])))
});

op_property!(prop_matmul, (1usize..6, 1usize..6, 1usize..6), |s, rng| {
    let (m, k, n) = s;
    (vec![randn(&[m, k], &mut rng), randn(&[k, n], &mut rng)], Box::new(|x| x[0].matmul(&x[1])))
});

op_property!(prop_bmm, (1usize..3, 1usize..5, 1usize..5, 1usize..5), |s, rng| {
    let (b, m, k, n) = s;
    (vec![randn(&[b, m, k], &mut rng), randn(&[b, k, n], &mut rng)], Box::new(|x| x[0].bmm(&x[1])))
});

op_property!(prop_bmm_transposed, (1usize..3, 1usize..5, 1usize..5, 1usize..5), |s, rng| {
    let (b, m, k, n) = s;
    (
        vec![randn(&[b, m, k], &mut rng), randn(&[b, n, k], &mut rng)],
        Box::new(|x| x[0].bmm_transposed(&x[1])),
    )
});

op_property!(prop_transpose, dims(3).prop_filter("rank>=2", |s| s.len() >= 2), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| x[0].transpose(0, x[0].rank() - 1)))
});

op_property!(prop_permute, proptest::collection::vec(1usize..4, 3..=3), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| x[0].permute(&[2, 0, 1])))
});

op_property!(prop_reshape, dims(3), |s, rng| {
    let n = numel(&s);
    (vec![randn(&s, &mut rng)], Box::new(move |x| x[0].reshape(&[n])))
});

op_property!(prop_concat, dims(3), |s, rng| {
    let mut b = s.clone();
    b[0] += 1;
    (vec![randn(&s, &mut rng), randn(&b, &mut rng)], Box::new(|x| Tensor::concat(&[x[0].clone(), x[1].clone()], 0)))
});

op_property!(prop_narrow, dims(3).prop_filter("extent>=2", |s| s[0] >= 2), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| x[0].narrow(0, 1, x[0].shape()[0] - 1)))
});

op_property!(prop_sum_axis, dims(3), |s, rng| {
    let axis = s.len() - 1;
    (vec![randn(&s, &mut rng)], Box::new(move |x| x[0].sum_axis(axis)))
});

op_property!(prop_mean_axis, dims(3), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| x[0].mean_axis(0)))
});

op_property!(prop_mean_all, dims(3), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| Ok(x[0].mean_all())))
});

op_property!(prop_softmax, dims(3), |s, rng| {
    let axis = s.len() / 2;
    (vec![randn(&s, &mut rng)], Box::new(move |x| x[0].softmax(axis)))
});

op_property!(prop_log_softmax, dims(2), |s, rng| {
    let axis = s.len() - 1;
    (vec![randn(&s, &mut rng)], Box::new(move |x| x[0].log_softmax(axis)))
});

op_property!(prop_masked_softmax, dims(3), |s, rng| {
    let n = numel(&s);
    let last = s[s.len() - 1];
    // keep the first entry of every row so no row is empty
    let keep: Vec<bool> = (0..n).map(|i| i % last == 0 || rng.gen_bool(0.6)).collect();
    let keep = Arc::new(keep);
    (vec![randn(&s, &mut rng)], Box::new(move |x| x[0].softmax_masked(Arc::clone(&keep))))
});

op_property!(prop_layer_norm, dims(3).prop_filter("d>=2", |s| s[s.len() - 1] >= 2), |s, rng| {
    let d = s[s.len() - 1];
    (
        vec![randn(&s, &mut rng), randn(&[d], &mut rng), randn(&[d], &mut rng)],
        Box::new(|x| x[0].layer_norm(&x[1], &x[2], 1e-5)),
    )
});

op_property!(prop_gelu, dims(3), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| Ok(x[0].gelu())))
});

op_property!(prop_exp, dims(2), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| Ok(x[0].exp())))
});

op_property!(prop_ln, dims(2), |s, rng| {
    let x = randn(&s, &mut rng);
    let pos = Tensor::new(x.data().iter().map(|v| v.abs() + 0.5).collect(), &s).unwrap();
    (vec![pos], Box::new(|x| Ok(x[0].ln())))
});

op_property!(prop_scale, dims(3), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| Ok(x[0].scale(-1.7))))
});

op_property!(prop_embedding, (1usize..6, 1usize..5, 1usize..8), |s, rng| {
    let (v, d, n) = s;
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
    (vec![randn(&[v, d], &mut rng)], Box::new(move |x| x[0].embedding(&ids)))
});

op_property!(prop_l2_normalize, dims(2), |s, rng| {
    (vec![randn(&s, &mut rng)], Box::new(|x| x[0].l2_normalize()))
});

proptest! {
    #[test]
    fn l2_normalize_norm_is_one(data in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
        prop_assume!(data.iter().any(|v| v.abs() > 1e-6));
        let n = data.len();
        let y = Tensor::new(data, &[n]).unwrap().l2_normalize().unwrap();
        let norm: f64 = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-6);
    }
}
