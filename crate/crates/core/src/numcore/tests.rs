use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::exec::ExecMode;

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Neumaier-compensated sum, used by the brute-force oracles below.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[test]
fn matmul_identity_and_selector() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let m = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).values(), &[1.0, 2.0, 3.0, 4.0]);

    let sel = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
    let col = tape.constant(Tensor::from_rows(&[&[5.0], &[7.0]]));
    let out = tape.matmul(sel, col).unwrap();
    assert_eq!(tape.value(out).values(), &[5.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let w = rand_tensor(&mut rng, &[3, 2]);
    let report = grad_check(
        |t, v| {
            let c = t.matmul(v[0], v[1])?;
            let w = t.constant(w.clone());
            let cw = t.mul(c, w)?;
            Ok(t.sum(cw))
        },
        &[a, b],
        H,
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

fn cos_value(u: &[f64], v: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(u.to_vec()));
    let b = tape.constant(Tensor::vector(v.to_vec()));
    let out = cosine_sq(&mut tape, a, b, 1e-12).unwrap();
    tape.value(out).item()
}

#[test]
fn cosine_sq_reference_cases() {
    assert_eq!(cos_value(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    assert!((cos_value(&[2.0, 2.0], &[1.0, 1.0]) - 1.0).abs() < 1e-11);
    assert!((cos_value(&[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-11);
    // zero vector is guarded by eps
    assert_eq!(cos_value(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
}

#[test]
fn softmax_uniform_and_stable() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[0.0, 0.0, 0.0], &[1000.0, 0.0, -1000.0]]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).values();
    for p in &v[..3] {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((v[3] - 1.0).abs() < 1e-12);
    assert!(v[4].abs() < 1e-12 && v[5] >= 0.0);
}

#[test]
fn softmax_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let row: Vec<f64> = (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(row.clone()).reshape(vec![1, 7]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        // oracle: no max subtraction, compensated denominator
        let denom = compensated_sum(row.iter().map(|v| v.exp()));
        for (got, v) in tape.value(y).values().iter().zip(&row) {
            let want = v.exp() / denom;
            assert!(((got - want) / want).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_reference_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[4.0, 4.0, 4.0], &[1.0, 3.0, 2.0]]));
    let g = tape.constant(Tensor::vector(vec![1.0; 3]));
    let b = tape.constant(Tensor::vector(vec![0.0; 3]));
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let v = tape.value(y);
    assert!(v.row(0).iter().all(|x| *x == 0.0));
    let mean: f64 = v.row(1).iter().sum::<f64>() / 3.0;
    let var: f64 = v.row(1).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[1.0, 3.0]]));
    let g = tape.constant(Tensor::vector(vec![1.0; 2]));
    let b = tape.constant(Tensor::vector(vec![0.0; 2]));
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let v = tape.value(y).values();
    assert!((v[0] + 1.0).abs() < 1e-10 && (v[1] - 1.0).abs() < 1e-10);
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![
        rand_tensor(&mut rng, &[3, 5]),
        rand_tensor(&mut rng, &[5]),
        rand_tensor(&mut rng, &[5]),
    ];
    let w = rand_tensor(&mut rng, &[3, 5]);
    let report = grad_check(
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-12)?;
            let w = t.constant(w.clone());
            let yw = t.mul(y, w)?;
            Ok(t.sum(yw))
        },
        &inputs,
        H,
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn cross_entropy_reference_cases() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::from_rows(&[&[50.0, 0.0, 0.0], &[0.0, 0.0, 50.0]]));
    let loss = tape
        .cross_entropy(logits, &[Some(0), Some(2)], Reduction::Mean)
        .unwrap();
    assert!(tape.value(loss).item() < 1e-20);

    let logits = tape.constant(Tensor::zeros(&[2, 3]));
    let loss = tape
        .cross_entropy(logits, &[Some(1), None], Reduction::Mean)
        .unwrap();
    assert!((tape.value(loss).item() - 3f64.ln()).abs() < 1e-15);

    assert!(matches!(
        tape.cross_entropy(logits, &[None, None], Reduction::Mean),
        Err(Error::EmptyLoss)
    ));
}

#[test]
fn cross_entropy_matches_oracle_and_ignores_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = Tensor::uniform(&[4, 5], 3.0, &mut rng);
    let labels = [Some(2), None, Some(0), Some(4)];
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone(), true);
    let loss = tape.cross_entropy(l, &labels, Reduction::Mean).unwrap();

    let mut terms = Vec::new();
    for (r, lab) in labels.iter().enumerate() {
        if let Some(y) = lab {
            let row = logits.row(r);
            let denom = compensated_sum(row.iter().map(|v| v.exp()));
            terms.push(-(row[*y].exp() / denom).ln());
        }
    }
    let want = compensated_sum(terms.iter().copied()) / terms.len() as f64;
    let got = tape.value(loss).item();
    assert!(((got - want) / want).abs() < 1e-10);

    let grads = tape.backward(loss).unwrap();
    let g = grads.get(l).unwrap();
    assert!(g[5..10].iter().all(|x| *x == 0.0), "ignored row has gradient");

    let report = grad_check(
        |t, v| t.cross_entropy(v[0], &labels, Reduction::Sum),
        &[logits],
        H,
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6);
}

#[test]
fn grad_check_reference_functions() {
    let sq = grad_check(
        |t, v| {
            let x2 = t.mul(v[0], v[0])?;
            Ok(t.sum(x2))
        },
        &[Tensor::vector(vec![1.0, 2.0])],
        H,
        ExecMode::Sequential,
    )
    .unwrap();
    assert!(sq.max_rel_error < 1e-9);

    let constant = grad_check(
        |t, _| Ok(t.constant(Tensor::scalar(4.0))),
        &[Tensor::vector(vec![1.0, 2.0])],
        H,
        ExecMode::Sequential,
    )
    .unwrap();
    assert_eq!(constant.max_rel_error, 0.0);

    assert!(grad_check(
        |t, v| Ok(t.sum(v[0])),
        &[Tensor::vector(vec![1.0])],
        1e-2,
        ExecMode::Sequential
    )
    .is_err());
}

#[test]
fn grad_check_reports_non_finite_coordinate() {
    // log-like blow-up: 1/x evaluated near 0 from a finite base point
    let err = grad_check(
        |t, v| {
            let big = t.scale(v[0], 1e308);
            let sq = t.mul(big, big)?;
            Ok(t.sum(sq))
        },
        &[Tensor::vector(vec![0.0, 0.0])],
        1e-5,
        ExecMode::Sequential,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite(msg) if msg.contains("coordinate")));
}

#[test]
fn elementwise_and_structural_ops_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![
        rand_tensor(&mut rng, &[4, 6]),
        rand_tensor(&mut rng, &[4, 6]),
        rand_tensor(&mut rng, &[6]),
    ];
    let w = rand_tensor(&mut rng, &[6, 4]);
    let report = grad_check(
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let a = t.add_row(a, v[2])?;
            let m = t.mul(a, v[1])?;
            let s = t.sub(m, v[0])?;
            let g = t.gelu(s);
            let th = t.tanh(g);
            let r = t.relu(v[1]);
            let left = t.slice_cols(th, 0, 2)?;
            let right = t.slice_cols(r, 2, 4)?;
            let cat = t.concat_cols(&[right, left])?;
            let top = t.slice_rows(cat, 0, 2)?;
            let bottom = t.slice_rows(cat, 2, 2)?;
            let stacked = t.concat_rows(&[bottom, top])?;
            let gathered = t.gather_rows(stacked, &[3, 0, 0, 1])?;
            let tr = t.transpose(gathered)?;
            let w = t.constant(w.clone());
            let p = t.mul(tr, w)?;
            let sm = t.softmax_rows(p)?;
            let rs = t.reshape(sm, vec![24])?;
            let sc = t.scale(rs, 1.7);
            let cs = t.cosine_sq_rows(v[0], v[1], 1e-12)?;
            let a = t.mean(sc);
            let b = t.sum(cs);
            let out = t.add(a, b)?;
            Ok(out)
        },
        &inputs,
        H,
        ExecMode::Parallel,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![3.0]), true);
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap(); // 2x^2
    let s = tape.sum(z);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[12.0]);
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![3.0]), true);
    let d = tape.detach(x);
    let z = tape.mul(d, x).unwrap();
    let s = tape.sum(z);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[3.0]);
    assert!(g.get(d).is_none());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let n = row.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, n], row).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value(y).values();
        prop_assert!(v.iter().all(|p| *p >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_sq_is_bounded(
        pair in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..10),
        eps in 1e-12f64..1.0,
    ) {
        let (u, v): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(u));
        let b = tape.constant(Tensor::vector(v));
        let c = cosine_sq(&mut tape, a, b, eps).unwrap();
        let val = tape.value(c).item();
        prop_assert!((0.0..=1.0).contains(&val), "{}", val);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        g in prop::collection::vec(-10f64..10.0, 1..16),
        max_norm in 0.01f64..5.0,
    ) {
        let mut ps = ParamSet::new();
        let n = g.len();
        ps.insert("w", Tensor::zeros(&[n]));
        ps.get_mut("w").unwrap().grad = Some(Tensor::vector(g.clone()));
        let names = vec!["w".to_string()];
        let pre = clip_grad_norm(&mut ps, &names, max_norm).unwrap();
        let post = grad_norm(&ps, &names).unwrap();
        prop_assert!(post <= max_norm + 1e-12);
        let clipped = ps.get("w").unwrap().grad.clone().unwrap();
        if pre > 0.0 {
            let ratio = post / pre;
            for (a, b) in clipped.values().iter().zip(&g) {
                prop_assert!((a - b * ratio).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_never_touches_frozen(
        vals in prop::collection::vec(-5f64..5.0, 1..8),
        lr in 1e-4f64..1.0,
    ) {
        let n = vals.len();
        let mut ps = ParamSet::new();
        ps.insert("frozen", Tensor::vector(vals.clone()));
        ps.insert("live", Tensor::vector(vals));
        for (_, p) in ps.iter_mut() {
            p.grad = Some(Tensor::full(&[n], 0.5));
        }
        ps.get_mut("frozen").unwrap().requires_grad = false;
        let before = ps.bytes_of(["frozen"]);
        let names = vec!["frozen".to_string(), "live".to_string()];
        let mut opt = AdamState::new(AdamConfig::with_lr(lr), &ps, &names).unwrap();
        opt.step(&mut ps).unwrap();
        prop_assert_eq!(before, ps.bytes_of(["frozen"]));
    }
}
