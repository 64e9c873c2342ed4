use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::rng::RngState;

fn unit_rows(k: usize, d: usize, rng: &mut RngState) -> Tensor<f64> {
    let data: Vec<f64> = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(data, &[k, d]).unwrap().l2_normalize().unwrap()
}

fn identity_rows(k: usize, d: usize) -> Tensor<f64> {
    let mut data = vec![0.0; k * d];
    for i in 0..k {
        data[i * d + i] = 1.0;
    }
    Tensor::new(data, &[k, d]).unwrap()
}

fn nce(q: &Tensor<f64>, k: &Tensor<f64>, tau: f64) -> f64 {
    info_nce(q, k, tau).unwrap().item().unwrap()
}

fn batch(v: &Tensor<f64>, t: &Tensor<f64>, v_l: &Tensor<f64>, t_l: &Tensor<f64>) -> StreamBatch<f64> {
    StreamBatch {
        v: v.clone(),
        t: t.clone(),
        v_l: Some(v_l.clone()),
        t_l: Some(t_l.clone()),
    }
}

#[test]
fn uniform_similarity_gives_log_k() {
    for k in [2usize, 4, 8, 64] {
        let row: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0).sqrt()).collect();
        let data: Vec<f64> = (0..k).flat_map(|_| row.clone()).collect();
        let q = Tensor::new(data, &[k, 8]).unwrap().l2_normalize().unwrap();
        let loss = nce(&q, &q, 0.05);
        assert!((loss - (k as f64).ln()).abs() < 1e-6, "K={k}: {loss}");
    }
}

#[test]
fn identity_similarity_closed_form() {
    let q = identity_rows(4, 8);
    let loss = nce(&q, &q, 0.05);
    let expected = -(20f64.exp() / (20f64.exp() + 3.0)).ln();
    assert!((loss - expected).abs() < 1e-12);
    assert!(loss < 1e-7);
}

#[test]
fn two_pair_hand_value() {
    let q = identity_rows(2, 2);
    let loss = nce(&q, &q, 1.0);
    assert!((loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    assert!((loss - 0.313262).abs() < 1e-6);
}

#[test]
fn contract_errors() {
    let q = identity_rows(1, 4);
    assert!(matches!(info_nce(&q, &q, 0.05), Err(Error::Input(_))));
    let bad = Tensor::new(vec![2.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    assert!(matches!(info_nce(&bad, &identity_rows(2, 2), 0.05), Err(Error::Input(_))));
    assert!(matches!(
        info_nce(&identity_rows(2, 2), &identity_rows(3, 3), 0.05),
        Err(Error::Dimension(_))
    ));
    let half = StreamBatch {
        v: identity_rows(2, 2),
        t: identity_rows(2, 2),
        v_l: None,
        t_l: None,
    };
    assert!(matches!(tag_loss(&half, &LossConfig::default()), Err(Error::Contract(_))));
    let off = LossConfig {
        use_tag_loss: false,
        use_mask_loss: false,
        ..LossConfig::default()
    };
    assert!(total_loss(&half, &off).is_ok());
}

#[test]
fn matching_loss_cases() {
    let cfg = LossConfig::default();
    let e = identity_rows(4, 6);
    let b = batch(&e, &e, &e, &e);
    assert!(matching_loss(&b, &cfg).unwrap().item().unwrap() < 1e-7);
    let mut rng = RngState::new(2);
    let (v, t) = (unit_rows(6, 5, &mut rng), unit_rows(6, 5, &mut rng));
    let ab = matching_loss(&batch(&v, &t, &v, &t), &cfg).unwrap().item().unwrap();
    let ba = matching_loss(&batch(&t, &v, &t, &v), &cfg).unwrap().item().unwrap();
    assert_eq!(ab.to_bits(), ba.to_bits());
}

#[test]
fn independent_rows_concentrate_near_log_k() {
    // Logit variance is 1/(τ²d); the mean sits near ln K when that is small.
    let (k, d, trials) = (64usize, 128usize, 1000usize);
    let mut rng = RngState::new(99);
    let mut sum = 0.0;
    for _ in 0..trials {
        let (v, t) = (unit_rows(k, d, &mut rng), unit_rows(k, d, &mut rng));
        sum += nce(&v, &t, 1.0);
    }
    let mean = sum / trials as f64;
    let ln_k = (k as f64).ln();
    assert!((mean - ln_k).abs() < 0.05 * ln_k, "mean {mean}, ln K {ln_k}");
}

#[test]
fn component_losses_use_the_right_streams() {
    let cfg = LossConfig::default();
    let mut rng = RngState::new(7);
    let (v, t, v_l, t_l) = (
        unit_rows(5, 4, &mut rng),
        unit_rows(5, 4, &mut rng),
        unit_rows(5, 4, &mut rng),
        unit_rows(5, 4, &mut rng),
    );
    let b = batch(&v, &t, &v_l, &t_l);
    assert_eq!(tag_loss(&b, &cfg).unwrap().item().unwrap(), nce(&t_l, &v, 0.05));
    assert_eq!(mask_loss(&b, &cfg).unwrap().item().unwrap(), nce(&v_l, &t, 0.05));
    let terms = total_loss(&b, &cfg).unwrap();
    let expected = nce(&v, &t, 0.05) + nce(&t, &v, 0.05) + 0.5 * (nce(&t_l, &v, 0.05) + nce(&v_l, &t, 0.05));
    assert!((terms.total.item().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn lambda_zero_is_the_matching_loss() {
    let mut rng = RngState::new(8);
    let (v, t, v_l, t_l) = (
        unit_rows(4, 3, &mut rng),
        unit_rows(4, 3, &mut rng),
        unit_rows(4, 3, &mut rng),
        unit_rows(4, 3, &mut rng),
    );
    let cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    let b = batch(&v, &t, &v_l, &t_l);
    let terms = total_loss(&b, &cfg).unwrap();
    assert_eq!(
        terms.total.item().unwrap().to_bits(),
        matching_loss(&b, &cfg).unwrap().item().unwrap().to_bits()
    );
}

#[test]
fn perfect_alignment_total_is_near_zero() {
    let e = identity_rows(4, 4);
    let terms = total_loss(&batch(&e, &e, &e, &e), &LossConfig::default()).unwrap();
    assert!(terms.total.item().unwrap() < 1e-6);
}

#[test]
fn ablation_toggles_select_terms() {
    let e = identity_rows(3, 3);
    let b = batch(&e, &e, &e, &e);
    for (tag, mask) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = LossConfig {
            use_tag_loss: tag,
            use_mask_loss: mask,
            ..LossConfig::default()
        };
        let terms = total_loss(&b, &cfg).unwrap();
        assert_eq!(terms.tag.is_some(), tag);
        assert_eq!(terms.mask.is_some(), mask);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    use crate::tensor::{grad_check, GradCheckConfig};
    let mut rng = RngState::new(4);
    let raw: Vec<Tensor<f64>> = (0..4)
        .map(|_| {
            let data: Vec<f64> = (0..3 * 5).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(data, &[3, 5]).unwrap()
        })
        .collect();
    let report = grad_check(
        |x| {
            let n: Vec<Tensor<f64>> = x.iter().map(|t| t.l2_normalize()).collect::<Result<_>>()?;
            total_loss(&batch(&n[0], &n[1], &n[2], &n[3]), &LossConfig::default()).map(|l| l.total)
        },
        &raw,
        &GradCheckConfig {
            tolerance: 1e-6,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn raw_rows(k: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![-2.0f64..-0.1, 0.1f64..2.0],
        k * d,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_loss_is_non_negative(a in raw_rows(4, 3), b in raw_rows(4, 3), c in raw_rows(4, 3), d in raw_rows(4, 3), tau in 0.01f64..2.0) {
        let n = |x: Vec<f64>| Tensor::new(x, &[4, 3]).unwrap().l2_normalize().unwrap();
        let cfg = LossConfig { temperature: tau, ..LossConfig::default() };
        let l = total_loss(&batch(&n(a), &n(b), &n(c), &n(d)), &cfg).unwrap().total.item().unwrap();
        prop_assert!(l >= -1e-9);
    }

    #[test]
    fn info_nce_is_permutation_equivariant(a in raw_rows(5, 3), b in raw_rows(5, 3), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut RngState::new(seed));
        let permute = |x: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&i| x[i * 3..i * 3 + 3].to_vec()).collect() };
        let n = |x: Vec<f64>| Tensor::new(x, &[5, 3]).unwrap().l2_normalize().unwrap();
        let base = nce(&n(a.clone()), &n(b.clone()), 0.1);
        let moved = nce(&n(permute(&a)), &n(permute(&b)), 0.1);
        prop_assert!((base - moved).abs() < 1e-9);
    }

    #[test]
    fn row_scaling_is_invisible_after_normalization(a in raw_rows(4, 3), b in raw_rows(4, 3), s in 0.1f64..10.0, row in 0usize..4) {
        let n = |x: Vec<f64>| Tensor::new(x, &[4, 3]).unwrap().l2_normalize().unwrap();
        let mut scaled = a.clone();
        for x in &mut scaled[row * 3..row * 3 + 3] {
            *x *= s;
        }
        let base = nce(&n(a), &n(b.clone()), 0.05);
        let after = nce(&n(scaled), &n(b), 0.05);
        prop_assert!((base - after).abs() < 1e-9);
    }
}

#[test]
fn shifting_queries_changes_the_loss() {
    let mut rng = RngState::new(12);
    let a: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
    let n = |x: Vec<f64>| Tensor::new(x, &[4, 3]).unwrap().l2_normalize().unwrap();
    let shifted: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + [0.7, -0.3, 0.5][i % 3]).collect();
    assert!((nce(&n(a), &n(b.clone()), 0.05) - nce(&n(shifted), &n(b), 0.05)).abs() > 1e-6);
}
