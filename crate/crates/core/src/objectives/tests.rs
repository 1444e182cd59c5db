use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapters::AdapterConfig;
use crate::encoder::{EncodeOptions, EncoderConfig, LayerRecord, Model, SlotActivation, TokenBatch};
use crate::numcore::{AdamConfig, AdamState, Binder, Tensor};
use crate::synthlang::{CLS, PAD};

fn tiny() -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ffn: 12,
        vocab_size: 11,
        max_len: 8,
        ..EncoderConfig::default()
    }
}

/// Activations for one language slot per layer built from explicit tensors.
fn acts_from(tape: &mut Tape, layers: &[(Tensor, Tensor)], mask: Vec<bool>) -> LayerActivations {
    LayerActivations {
        layers: layers
            .iter()
            .map(|(x_h, x_a)| {
                let input = tape.leaf(x_h.clone(), true);
                let output = tape.leaf(x_a.clone(), true);
                let delta = tape.sub(output, input).unwrap();
                LayerRecord {
                    hidden: input,
                    lang: Some(SlotActivation { input, delta, output }),
                    task: None,
                }
            })
            .collect(),
        mask,
    }
}

fn total(layers: &[(Tensor, Tensor)], mask: Vec<bool>, opts: OrthoOptions) -> OrthoLossReport {
    let mut tape = Tape::new();
    let acts = acts_from(&mut tape, layers, mask);
    ortho_loss(&mut tape, &acts, AdapterKind::Language, opts).unwrap().1
}

fn random_layers(seed: u64, n: usize, t: usize, h: usize) -> Vec<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (
                Tensor::uniform(&[t, h], 1.0, &mut rng),
                Tensor::uniform(&[t, h], 1.0, &mut rng),
            )
        })
        .collect()
}

#[test]
fn exhaustive_masking() {
    let policy = MaskingPolicy::new(1.0, [1.0, 0.0, 0.0], 11).unwrap();
    let seqs = vec![vec![CLS, 5, 6, 7, PAD], vec![CLS, 8]];
    let out = apply_masking(&seqs, &policy, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(out.inputs, vec![vec![CLS, MASK, MASK, MASK, PAD], vec![CLS, MASK]]);
    assert_eq!(
        out.labels,
        vec![vec![None, Some(5), Some(6), Some(7), None], vec![None, Some(8)]]
    );
    assert_eq!(out.skipped, 0);
}

#[test]
fn invalid_policies_are_rejected() {
    assert!(MaskingPolicy::new(0.0, [0.8, 0.1, 0.1], 11).is_err());
    assert!(MaskingPolicy::new(1.5, [0.8, 0.1, 0.1], 11).is_err());
    assert!(MaskingPolicy::new(0.15, [0.8, 0.1, 0.2], 11).is_err());
    assert!(MaskingPolicy::new(0.15, [0.8, 0.1, 0.1], 5).is_err());
}

#[test]
fn special_only_sequences_are_skipped() {
    let policy = MaskingPolicy::standard(11).unwrap();
    let out = apply_masking(&[vec![CLS, PAD], vec![CLS, 6]], &policy, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(out.skipped, 1);
    assert_eq!(out.labels[0], vec![None, None]);
    assert_eq!(out.labels[1], vec![None, Some(6)]);
}

#[test]
fn masking_statistics_match_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs: Vec<Vec<u32>> = (0..100)
        .map(|_| (0..100).map(|_| rng.gen_range(5..200)).collect())
        .collect();
    let policy = MaskingPolicy::standard(200).unwrap();
    let out = apply_masking(&seqs, &policy, &mut rng);
    let (mut masked, mut as_mask, mut random_or_keep_same, mut changed) = (0usize, 0usize, 0usize, 0usize);
    for (s, (inp, lab)) in seqs.iter().zip(out.inputs.iter().zip(&out.labels)) {
        for i in 0..s.len() {
            if lab[i].is_some() {
                masked += 1;
                if inp[i] == MASK {
                    as_mask += 1;
                } else if inp[i] == s[i] {
                    random_or_keep_same += 1;
                } else {
                    changed += 1;
                }
            } else {
                assert_eq!(inp[i], s[i]);
            }
        }
    }
    assert!((masked as f64 - 1500.0).abs() <= 30.0, "{masked}");
    let frac = |c: usize| c as f64 / masked as f64;
    assert!((frac(as_mask) - 0.8).abs() < 0.03, "{}", frac(as_mask));
    // A random replacement can coincide with the original (1/195 chance).
    assert!((frac(changed) - 0.1).abs() < 0.03, "{}", frac(changed));
    assert!((frac(random_or_keep_same) - 0.1).abs() < 0.03);
}

#[test]
fn brute_force_oracle() {
    let layers = random_layers(3, 2, 3, 5);
    let report = total(&layers, vec![true; 3], OrthoOptions::default());
    let mut expected = 0.0;
    for (u, v) in &layers {
        let mut layer = 0.0;
        for t in 0..3 {
            let (a, b) = (u.row(t), v.row(t));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            layer += dot * dot / (na * nb);
        }
        expected += layer / 3.0;
    }
    assert!((report.total - expected).abs() < 1e-12);
    assert!((report.per_layer.iter().sum::<f64>() - report.total).abs() < 1e-15);
    assert_eq!(report.tokens, vec![3, 3]);
}

#[test]
fn orthogonal_construction_gives_zero() {
    // x_h = (1, 0); W_d = (1, 0)ᵀ; W_u = (-1, 1): δ = (-1, 1), x_a = (0, 1).
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), false);
    let wd = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(), true);
    let wu = tape.leaf(Tensor::matrix(1, 2, vec![-1.0, 1.0]).unwrap(), true);
    let (delta, output) = crate::adapters::adapter_forward(&mut tape, x, x, wd, wu, true).unwrap();
    let acts = LayerActivations {
        layers: vec![LayerRecord {
            hidden: x,
            lang: Some(SlotActivation { input: x, delta, output }),
            task: None,
        }],
        mask: vec![true],
    };
    let (_, r) = ortho_loss(&mut tape, &acts, AdapterKind::Language, OrthoOptions::default()).unwrap();
    assert_eq!(r.total, 0.0);
}

#[test]
fn scale_invariance() {
    let layers = random_layers(4, 2, 3, 4);
    let scaled: Vec<_> = layers
        .iter()
        .map(|(u, v)| {
            (
                u.clone(),
                Tensor::new(v.shape().to_vec(), v.values().iter().map(|x| x * 7.5).collect()).unwrap(),
            )
        })
        .collect();
    let a = total(&layers, vec![true; 3], OrthoOptions::default());
    let b = total(&scaled, vec![true; 3], OrthoOptions::default());
    for (x, y) in a.per_layer.iter().zip(&b.per_layer) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn padding_is_excluded_unless_requested() {
    let layers = random_layers(5, 2, 4, 4);
    let mask = vec![true, true, false, true];
    let mut perturbed = layers.clone();
    for (u, v) in &mut perturbed {
        for col in 0..4 {
            u.values_mut()[2 * 4 + col] += 3.0;
            v.values_mut()[2 * 4 + col] -= 1.0;
        }
    }
    let a = total(&layers, mask.clone(), OrthoOptions::default());
    let b = total(&perturbed, mask.clone(), OrthoOptions::default());
    assert!((a.total - b.total).abs() < 1e-12);
    assert_eq!(a.tokens, vec![3, 3]);

    let with_pad = OrthoOptions {
        include_padding: true,
        ..OrthoOptions::default()
    };
    let c = total(&layers, mask.clone(), with_pad);
    let d = total(&perturbed, mask, with_pad);
    assert_ne!(c.total, d.total);
    assert_eq!(c.tokens, vec![4, 4]);
}

proptest! {
    #[test]
    fn ortho_loss_lies_in_zero_to_layer_count(
        seed in any::<u64>(),
        layers in 1usize..4,
        mask in prop::collection::vec(any::<bool>(), 1..7),
        exclude_residual in any::<bool>(),
        include_padding in any::<bool>(),
    ) {
        prop_assume!(include_padding || mask.iter().any(|&m| m));
        let t = mask.len();
        let opts = OrthoOptions { include_padding, exclude_residual };
        let r = total(&random_layers(seed, layers, t, 6), mask.clone(), opts);
        prop_assert!((0.0..=layers as f64).contains(&r.total));
        prop_assert!(r.per_layer.iter().all(|m| (0.0..=1.0).contains(m)));
        let counted = if include_padding { t } else { mask.iter().filter(|&&m| m).count() };
        prop_assert!(r.tokens.iter().all(|&n| n == counted));
    }

    #[test]
    fn masking_touches_only_selected_word_tokens(
        seqs in prop::collection::vec(prop::collection::vec(0u32..40, 0..30), 1..8),
        fraction in 0.01f64..0.9,
        seed in any::<u64>(),
    ) {
        let policy = MaskingPolicy::new(fraction, [0.8, 0.1, 0.1], 40).unwrap();
        let out = apply_masking(&seqs, &policy, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut skipped = 0;
        for (s, (inp, lab)) in seqs.iter().zip(out.inputs.iter().zip(&out.labels)) {
            prop_assert_eq!(inp.len(), s.len());
            let words = s.iter().filter(|&&id| !is_reserved(id)).count();
            let selected = lab.iter().flatten().count();
            if words == 0 {
                skipped += 1;
                prop_assert_eq!(selected, 0);
            } else {
                let floor = (fraction * words as f64).floor() as usize;
                let (lo, hi) = (floor.clamp(1, words), (floor + 1).clamp(1, words));
                prop_assert!((lo..=hi).contains(&selected), "{} not in {}..={}", selected, lo, hi);
            }
            for i in 0..s.len() {
                match lab[i] {
                    Some(l) => prop_assert!(l == s[i] as usize && !is_reserved(s[i])),
                    None => prop_assert_eq!(inp[i], s[i]),
                }
            }
        }
        prop_assert_eq!(out.skipped, skipped);
    }
}

#[test]
fn empty_slot_is_a_structural_error() {
    let mut tape = Tape::new();
    let acts = acts_from(&mut tape, &random_layers(6, 1, 2, 3), vec![true; 2]);
    assert!(matches!(
        ortho_loss(&mut tape, &acts, AdapterKind::Task, OrthoOptions::default()),
        Err(Error::Structural(_))
    ));
}

#[test]
fn identity_adapter_gives_n() {
    let mut model = Model::new(tiny(), 1).unwrap();
    model
        .add_fresh_adapter(AdapterConfig::language().with_bottleneck(3), 2)
        .unwrap();
    let batch = TokenBatch::from_sequences(&[vec![2, 5, 6, 7], vec![2, 8]]);
    let mut tape = Tape::new();
    let (_, acts) = model
        .encode(&mut tape, &mut Binder::new(), &batch, EncodeOptions::default())
        .unwrap();
    let (_, r) = ortho_loss(&mut tape, &acts, AdapterKind::Language, OrthoOptions::default()).unwrap();
    assert!((r.total - 2.0).abs() < 1e-12, "{}", r.total);
    assert_eq!(r.tokens, vec![6, 6]);
}

#[test]
fn tagging_loss_ignores_padding_and_reductions_relate() {
    let mut tape = Tape::new();
    let logits = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.3]).unwrap();
    let mut padded = logits.values().to_vec();
    padded.extend([9.0, -9.0, 4.0, 4.0]);
    let a = tape.constant(logits);
    let b = tape.constant(Tensor::matrix(5, 2, padded).unwrap());
    let labels = [Some(0), None, Some(1)];
    let la = tagging_loss(&mut tape, a, &labels, false).unwrap();
    let lb = tagging_loss(&mut tape, b, &[Some(0), None, Some(1), None, None], false).unwrap();
    assert!((tape.value(la).item() - tape.value(lb).item()).abs() < 1e-15);
    let ls = tagging_loss(&mut tape, a, &labels, true).unwrap();
    assert!((tape.value(ls).item() - 2.0 * tape.value(la).item()).abs() < 1e-12);
}

fn minimise_ortho(exclude_residual: bool) -> (f64, f64) {
    let mut model = Model::new(tiny(), 3).unwrap();
    model
        .add_fresh_adapter(AdapterConfig::language().with_bottleneck(3), 4)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in model.adapter_param_names(AdapterKind::Language) {
        if name.ends_with("w_up") {
            let shape = model.params.value(&name).unwrap().shape().to_vec();
            model.params.get_mut(&name).unwrap().value = Tensor::uniform(&shape, 0.3, &mut rng);
        }
    }
    model.set_trainable(crate::adapters::Phase::LangAdapterTraining).unwrap();
    let names = model.adapter_param_names(AdapterKind::Language);
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), &model.params, &names).unwrap();
    let batch = TokenBatch::from_sequences(&[vec![2, 5, 6, 7, 8], vec![2, 9, 10, 5]]);
    let opts = OrthoOptions {
        exclude_residual,
        ..OrthoOptions::default()
    };
    let encode = EncodeOptions {
        detach_slot_input: Some(AdapterKind::Language),
        ..EncodeOptions::default()
    };
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..=200 {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let (_, acts) = model.encode(&mut tape, &mut binder, &batch, encode).unwrap();
        let (loss, r) = ortho_loss(&mut tape, &acts, AdapterKind::Language, opts).unwrap();
        last = r.total / 2.0;
        first.get_or_insert(last);
        let mut grads = tape.backward(loss).unwrap();
        binder.accumulate(&mut grads, &mut model.params).unwrap();
        adam.step(&mut model.params).unwrap();
    }
    (first.unwrap(), last)
}

#[test]
fn minimising_without_residual_reaches_near_orthogonality() {
    let (first, last) = minimise_ortho(true);
    assert!(last < 0.05, "{first} -> {last}");
    assert!(last < first);
}

#[test]
fn minimising_with_residual_decreases_but_plateaus_above_zero() {
    let (first, last) = minimise_ortho(false);
    assert!(last < first, "{first} -> {last}");
    assert!(last > 1e-3, "{first} -> {last}");
}
