use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{central_difference, relative_error};
use crate::tensor::dot;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_cbp_spec() -> NetworkSpec {
    NetworkSpec {
        input: [8, 8, 3],
        layers: vec![
            LayerSpec::Conv2d { in_ch: 3, out_ch: 4, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Conv2d { in_ch: 4, out_ch: 6, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Cbp { d: 16, seed: 5 },
            LayerSpec::FullyConnected { inputs: 16, outputs: 5 },
            LayerSpec::SoftmaxXent,
        ],
    }
}

/// Plain nested-loop reference forward for one sample.
fn reference_forward(spec: &NetworkSpec, state: &NetworkState, input: &[f64]) -> Vec<f64> {
    let mut shape = spec.input.to_vec();
    let mut x = input.to_vec();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                let p = state.params[i].as_ref().unwrap();
                let (h, w) = (shape[0], shape[1]);
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                let mut y = vec![0.0; oh * ow * out_ch];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..out_ch {
                            let mut acc = p.bias.data()[o];
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    for c in 0..in_ch {
                                        acc += p.weight.get(&[o, ky, kx, c]).unwrap()
                                            * x[(iy as usize * w + ix as usize) * in_ch + c];
                                    }
                                }
                            }
                            y[(oy * ow + ox) * out_ch + o] = acc;
                        }
                    }
                }
                shape = vec![oh, ow, out_ch];
                x = y;
            }
            LayerSpec::Relu => x = x.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::MaxPool { window, stride } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let oh = (h - window) / stride + 1;
                let ow = (w - window) / stride + 1;
                let mut y = vec![f64::NEG_INFINITY; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            for ky in 0..window {
                                for kx in 0..window {
                                    let v = x[((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                                    let slot = &mut y[(oy * ow + ox) * c + ch];
                                    *slot = slot.max(v);
                                }
                            }
                        }
                    }
                }
                shape = vec![oh, ow, c];
                x = y;
            }
            LayerSpec::Cbp { d, .. } => {
                // Location-by-location direct-sum tensor sketches.
                let sk = state.sketch.as_ref().unwrap();
                let c = shape[2];
                let mut pooled = vec![0.0; d];
                for loc in 0..shape[0] * shape[1] {
                    let ts = crate::sketch::tensor_sketch_direct(&x[loc * c..(loc + 1) * c], sk).unwrap();
                    for (p, t) in pooled.iter_mut().zip(ts) {
                        *p += t;
                    }
                }
                let rooted: Vec<f64> = pooled.iter().map(|v| v.signum() * v.abs().sqrt()).collect();
                let norm = rooted.iter().map(|v| v * v).sum::<f64>().sqrt();
                x = rooted.iter().map(|v| v / norm).collect();
                shape = vec![d];
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                let p = state.params[i].as_ref().unwrap();
                x = (0..outputs)
                    .map(|o| p.bias.data()[o] + (0..inputs).map(|j| p.weight.get(&[o, j]).unwrap() * x[j]).sum::<f64>())
                    .collect();
                shape = vec![outputs];
            }
            LayerSpec::SoftmaxXent => {}
        }
    }
    x
}

#[test]
fn forward_matches_reference_implementation() {
    let spec = tiny_cbp_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..4 {
        let mut state = NetworkState::init(&spec, seed).unwrap();
        for p in state.params.iter_mut().flatten() {
            for b in p.bias.data_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let batch = random_tensor(&mut rng, vec![3, 8, 8, 3]);
        let pass = forward(&spec, &state, &batch).unwrap();
        for n in 0..3 {
            let want = reference_forward(&spec, &state, &batch.data()[n * 192..(n + 1) * 192]);
            for (a, b) in pass.sample_output(n).iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_classifier_gives_uniform_softmax() {
    let spec = NetworkSpec::desk_extractor(8, [2, 2, 3], 16, 1).with_classifier(4).unwrap();
    let mut state = NetworkState::init(&spec, 0).unwrap();
    let last = spec.last_param_layer().unwrap();
    let p = state.params[last].as_mut().unwrap();
    p.weight.data_mut().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pass = forward(&spec, &state, &random_tensor(&mut rng, vec![2, 8, 8, 3])).unwrap();
    for n in 0..2 {
        let probs = softmax(pass.sample_output(n));
        assert!(probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }
}

#[test]
fn identity_one_by_one_conv_passes_channels_through() {
    let spec = NetworkSpec {
        input: [3, 2, 2],
        layers: vec![LayerSpec::Conv2d { in_ch: 2, out_ch: 2, kernel: 1, stride: 1, pad: 0 }],
    };
    let mut state = NetworkState::init(&spec, 0).unwrap();
    state.params[0].as_mut().unwrap().weight = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&mut rng, vec![1, 3, 2, 2]);
    assert_eq!(forward(&spec, &state, &x).unwrap().output().data(), x.data());
}

#[test]
fn non_finite_activation_names_the_layer() {
    let spec = NetworkSpec { input: [1, 1, 2], layers: vec![LayerSpec::FullyConnected { inputs: 2, outputs: 1 }] };
    let mut state = NetworkState::init(&spec, 0).unwrap();
    state.params[0].as_mut().unwrap().weight.data_mut()[0] = f64::INFINITY;
    let x = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
    match forward(&spec, &state, &x) {
        Err(Error::Numeric { layer, .. }) => assert!(layer.contains("fully_connected")),
        other => panic!("expected numeric error, got {other:?}"),
    }
    let wrong = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    assert!(matches!(forward(&spec, &NetworkState::init(&spec, 0).unwrap(), &wrong), Err(Error::Dimension(_))));
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let spec = tiny_cbp_spec();
    let state = NetworkState::init(&spec, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pass = forward(&spec, &state, &random_tensor(&mut rng, vec![2, 8, 8, 3])).unwrap();
    let grads = backward(&spec, &state, &pass, &Tensor::zeros(vec![2, 5]).unwrap(), TrainableScope::AllLayers).unwrap();
    for (i, g) in grads.layers.iter().enumerate() {
        assert_eq!(g.is_some(), spec.layers[i].has_params());
        if let Some(g) = g {
            assert!(g.weight.data().iter().chain(g.bias.data()).all(|&v| v == 0.0));
        }
    }
}

#[test]
fn fc_only_gradient_is_outer_product() {
    let spec = NetworkSpec { input: [1, 1, 3], layers: vec![LayerSpec::FullyConnected { inputs: 3, outputs: 2 }] };
    let state = NetworkState::init(&spec, 4).unwrap();
    let x = Tensor::new(vec![2, 1, 1, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
    let delta = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 1.0]).unwrap();
    let pass = forward(&spec, &state, &x).unwrap();
    let g = backward(&spec, &state, &pass, &delta, TrainableScope::AllLayers).unwrap();
    let gw = g.layers[0].as_ref().unwrap();
    // Σ_n δ[n]ᵀ x[n]
    let want = [0.5 * 1.0 + -2.0, 0.5 * 2.0 + 2.0 * 0.5, 0.5 * 3.0, -1.0 + -1.0, -2.0 + 1.0 * 0.5, -3.0];
    assert_eq!(gw.weight.data(), &want);
    assert_eq!(gw.bias.data(), &[2.5, 0.0]);
}

fn flat_params(state: &NetworkState, layer: usize) -> Vec<f64> {
    let p = state.params[layer].as_ref().unwrap();
    p.weight.data().iter().chain(p.bias.data()).copied().collect()
}

fn set_flat_params(state: &mut NetworkState, layer: usize, values: &[f64]) {
    let p = state.params[layer].as_mut().unwrap();
    let nw = p.weight.len();
    p.weight.data_mut().copy_from_slice(&values[..nw]);
    p.bias.data_mut().copy_from_slice(&values[nw..]);
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let spec = tiny_cbp_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut checked = 0;
    for seed in 0..3 {
        let state = NetworkState::init(&spec, seed).unwrap();
        let batch = random_tensor(&mut rng, vec![2, 8, 8, 3]);
        let upstream = random_tensor(&mut rng, vec![2, 5]);
        let loss = |s: &NetworkState| {
            let out = forward(&spec, s, &batch).unwrap().output();
            dot(out.data(), upstream.data()).unwrap()
        };
        let pass = forward(&spec, &state, &batch).unwrap();
        let grads = backward(&spec, &state, &pass, &upstream, TrainableScope::AllLayers).unwrap();
        for layer in TrainableScope::AllLayers.layers(&spec) {
            let base = flat_params(&state, layer);
            let mut probe = state.clone();
            let numeric = central_difference(
                |v| {
                    set_flat_params(&mut probe, layer, v);
                    loss(&probe)
                },
                &base,
                1e-6,
            );
            let g = grads.layers[layer].as_ref().unwrap();
            let analytic: Vec<f64> = g.weight.data().iter().chain(g.bias.data()).copied().collect();
            let err = relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed} layer {layer}: rel err {err}");
            checked += 1;
        }
    }
    assert_eq!(checked, 9);
}

#[test]
fn input_gradient_matches_finite_differences() {
    let spec = tiny_cbp_spec();
    let state = NetworkState::init(&spec, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let batch = random_tensor(&mut rng, vec![1, 8, 8, 3]);
    let upstream = random_tensor(&mut rng, vec![1, 5]);
    let pass = forward(&spec, &state, &batch).unwrap();
    let (_, din) = backward_with_input_grad(&spec, &state, &pass, &upstream, TrainableScope::AllLayers, true).unwrap();
    let numeric = central_difference(
        |v| {
            let x = Tensor::new(vec![1, 8, 8, 3], v.to_vec()).unwrap();
            dot(forward(&spec, &state, &x).unwrap().output().data(), upstream.data()).unwrap()
        },
        batch.data(),
        1e-6,
    );
    assert!(relative_error(&din.unwrap()[0], &numeric) <= 1e-4);
}

#[test]
fn stale_activations_are_rejected() {
    let spec = tiny_cbp_spec();
    let mut state = NetworkState::init(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pass = forward(&spec, &state, &random_tensor(&mut rng, vec![1, 8, 8, 3])).unwrap();
    let g = Tensor::zeros(vec![1, 5]).unwrap();
    let grads = backward(&spec, &state, &pass, &g, TrainableScope::AllLayers).unwrap();
    sgd_momentum_step(&spec, &mut state, &grads, &OptimizerConfig::phase2()).unwrap();
    assert!(matches!(backward(&spec, &state, &pass, &g, TrainableScope::AllLayers), Err(Error::Consistency(_))));
}

fn scalar_spec() -> (NetworkSpec, NetworkState) {
    let spec = NetworkSpec { input: [1, 1, 1], layers: vec![LayerSpec::FullyConnected { inputs: 1, outputs: 1 }] };
    let mut state = NetworkState::init(&spec, 0).unwrap();
    state.params[0].as_mut().unwrap().weight.data_mut()[0] = 2.0;
    state.params[0].as_mut().unwrap().bias.data_mut()[0] = -1.0;
    (spec, state)
}

fn scalar_grads(gw: f64, gb: f64) -> Gradients {
    Gradients {
        layers: vec![Some(LayerParams {
            weight: Tensor::new(vec![1, 1], vec![gw]).unwrap(),
            bias: Tensor::new(vec![1], vec![gb]).unwrap(),
        })],
    }
}

#[test]
fn sgd_without_momentum_or_decay_is_plain_sgd() {
    let (spec, mut state) = scalar_spec();
    let cfg =
        OptimizerConfig { learning_rate: 0.5, weight_decay: 0.0, momentum: 0.0, scope: TrainableScope::AllLayers };
    sgd_momentum_step(&spec, &mut state, &scalar_grads(3.0, 1.0), &cfg).unwrap();
    assert_eq!(state.params[0].as_ref().unwrap().weight.data()[0], 2.0 - 0.5 * 3.0);
    assert_eq!(state.params[0].as_ref().unwrap().bias.data()[0], -1.5);
}

#[test]
fn zero_gradient_without_decay_leaves_weights() {
    let (spec, mut state) = scalar_spec();
    let before = state.params.clone();
    let cfg =
        OptimizerConfig { learning_rate: 0.1, weight_decay: 0.0, momentum: 0.9, scope: TrainableScope::AllLayers };
    sgd_momentum_step(&spec, &mut state, &scalar_grads(0.0, 0.0), &cfg).unwrap();
    assert_eq!(state.params, before);
}

#[test]
fn two_momentum_steps_follow_the_recurrence() {
    let (spec, mut state) = scalar_spec();
    let cfg =
        OptimizerConfig { learning_rate: 0.1, weight_decay: 0.01, momentum: 0.9, scope: TrainableScope::AllLayers };
    sgd_momentum_step(&spec, &mut state, &scalar_grads(1.0, 0.0), &cfg).unwrap();
    sgd_momentum_step(&spec, &mut state, &scalar_grads(-2.0, 0.0), &cfg).unwrap();
    // v1 = 1 + 0.01·2 = 1.02, w1 = 2 − 0.102 = 1.898
    // v2 = 0.9·1.02 + (−2 + 0.01·1.898) = −1.06102, w2 = 1.898 + 0.106102
    let w1 = 2.0 - 0.1 * (1.0 + 0.01 * 2.0);
    let v1 = 1.0 + 0.01 * 2.0;
    let v2 = 0.9 * v1 + (-2.0 + 0.01 * w1);
    let w2 = w1 - 0.1 * v2;
    assert_eq!(state.params[0].as_ref().unwrap().weight.data()[0], w2);
    assert!((w2 - 2.004302).abs() < 1e-12);
    assert_eq!(state.step, 2);
}

#[test]
fn non_finite_gradient_is_numeric_error() {
    let (spec, mut state) = scalar_spec();
    let r = sgd_momentum_step(&spec, &mut state, &scalar_grads(f64::NAN, 0.0), &OptimizerConfig::phase2());
    assert!(matches!(r, Err(Error::Numeric { .. })));
}

#[test]
fn phase_defaults() {
    let p1 = OptimizerConfig::phase1();
    assert_eq!(
        (p1.learning_rate, p1.weight_decay, p1.momentum, p1.scope),
        (1.0, 5e-6, 0.9, TrainableScope::LastLayerOnly)
    );
    let p2 = OptimizerConfig::phase2();
    assert_eq!(
        (p2.learning_rate, p2.weight_decay, p2.momentum, p2.scope),
        (0.001, 5e-4, 0.9, TrainableScope::AllLayers)
    );
    let s = Schedule::default();
    assert_eq!((s.phase1_epochs, s.phase2_epochs, s.batch_size), (5, 20, 16));
}

#[test]
fn softmax_xent_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let logits = random_tensor(&mut rng, vec![4, 6]).scale(10.0);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let (loss, grad) = softmax_xent(&logits, &labels).unwrap();
        assert!(loss >= 0.0);
        for row in grad.data().chunks(6) {
            assert!(row.iter().sum::<f64>().abs() <= 1e-12);
        }
        let numeric = central_difference(
            |v| softmax_xent(&Tensor::new(vec![4, 6], v.to_vec()).unwrap(), &labels).unwrap().0,
            logits.data(),
            1e-6,
        );
        assert!(relative_error(grad.data(), &numeric) <= 1e-4);
    }
    assert!(softmax_xent(&Tensor::zeros(vec![1, 3]).unwrap(), &[3]).is_err());
}

#[test]
fn topk_ordering_and_ties() {
    assert_eq!(topk_indices(&[0.0; 5], 3), vec![0, 1, 2]);
    assert_eq!(topk_indices(&[0.0, 0.0, 1.0, 0.0], 2), vec![2, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        // Multiples of 1/8 keep shifted scores exact.
        let scores: Vec<f64> = (0..10).map(|_| rng.gen_range(0..6) as f64 / 8.0).collect();
        let mut oracle: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = oracle.iter().take(4).map(|p| p.1).collect();
        assert_eq!(topk_indices(&scores, 4), want);
        let shifted: Vec<f64> = scores.iter().map(|s| s + 3.0).collect();
        assert_eq!(topk_indices(&shifted, 4), want);
    }
}

#[test]
fn predict_topk_checks_k() {
    let spec = NetworkSpec::desk_extractor(8, [2, 2, 2], 16, 0).with_classifier(3).unwrap();
    let state = NetworkState::init(&spec, 0).unwrap();
    let img = Tensor::zeros(vec![8, 8, 3]).unwrap();
    assert!(matches!(predict_topk(&spec, &state, &img, 4), Err(Error::Config(_))));
    assert!(matches!(predict_topk(&spec, &state, &img, 0), Err(Error::Config(_))));
    // An all-zero image gives equal scores; ties resolve to ascending classes.
    assert_eq!(predict_topk(&spec, &state, &img, 3).unwrap(), vec![0, 1, 2]);
}

#[test]
fn weights_file_round_trip_and_mismatch() {
    let spec = tiny_cbp_spec();
    let state = NetworkState::init(&spec, 9).unwrap();
    let mut buf = Vec::new();
    write_weights(&mut buf, &spec, &state).unwrap();
    assert_eq!(&buf[..4], b"CBPW");
    let (spec2, state2) = read_weights(&mut buf.as_slice()).unwrap();
    assert_eq!(spec2, spec);
    assert_eq!(state2.params, state.params);
    assert_eq!(state2.sketch, state.sketch);
    // Re-declare the first conv with a different output width: tensors no longer fit.
    let json = serde_json::to_string(&spec).unwrap();
    let mut other = spec.clone();
    other.layers[0] = LayerSpec::Conv2d { in_ch: 3, out_ch: 5, kernel: 3, stride: 1, pad: 1 };
    other.layers[3] = LayerSpec::Conv2d { in_ch: 5, out_ch: 6, kernel: 3, stride: 1, pad: 1 };
    let other_json = serde_json::to_string(&other).unwrap();
    let mut tampered = Vec::new();
    tampered.extend_from_slice(&buf[..8]);
    tampered.extend_from_slice(&(other_json.len() as u32).to_le_bytes());
    tampered.extend_from_slice(other_json.as_bytes());
    tampered.extend_from_slice(&buf[12 + json.len()..]);
    assert!(read_weights(&mut tampered.as_slice()).is_err());
}

#[test]
fn phase_one_leaves_feature_layers_bit_identical() {
    let spec = NetworkSpec::desk_extractor(8, [3, 3, 4], 16, 2).with_classifier(3).unwrap();
    let mut state = NetworkState::init(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = LabeledImages {
        images: (0..12).map(|_| random_tensor(&mut rng, vec![8, 8, 3])).collect(),
        labels: (0..12).map(|i| i % 3).collect(),
    };
    let before: Vec<Vec<u8>> = state.params[..spec.last_param_layer().unwrap()]
        .iter()
        .flatten()
        .map(|p| [p.weight.to_bytes(), p.bias.to_bytes()].concat())
        .collect();
    let head_before = state.params[spec.last_param_layer().unwrap()].clone();
    let schedule = Schedule { phase1_epochs: 3, phase2_epochs: 0, batch_size: 4, seed: 1 };
    let log = train_classifier_two_phase(
        &spec,
        &mut state,
        &data,
        None,
        &OptimizerConfig::phase1(),
        &OptimizerConfig::phase2(),
        &schedule,
    )
    .unwrap();
    assert_eq!(log.len(), 3);
    let after: Vec<Vec<u8>> = state.params[..spec.last_param_layer().unwrap()]
        .iter()
        .flatten()
        .map(|p| [p.weight.to_bytes(), p.bias.to_bytes()].concat())
        .collect();
    assert_eq!(before, after);
    assert_ne!(state.params[spec.last_param_layer().unwrap()], head_before);
}

#[test]
fn training_is_deterministic_and_rejects_bad_data() {
    let spec = NetworkSpec::desk_extractor(8, [3, 3, 4], 16, 2).with_classifier(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = LabeledImages {
        images: (0..6).map(|_| random_tensor(&mut rng, vec![8, 8, 3])).collect(),
        labels: vec![0, 1, 2, 0, 1, 2],
    };
    let schedule = Schedule { phase1_epochs: 1, phase2_epochs: 2, batch_size: 4, seed: 1 };
    let run = || {
        let mut state = NetworkState::init(&spec, 3).unwrap();
        let log = train_classifier_two_phase(
            &spec,
            &mut state,
            &data,
            Some(&data),
            &OptimizerConfig::phase1(),
            &OptimizerConfig::phase2(),
            &schedule,
        )
        .unwrap();
        (state.params, log)
    };
    assert_eq!(run(), run());
    let mut state = NetworkState::init(&spec, 3).unwrap();
    let empty = LabeledImages::default();
    assert!(matches!(
        train_classifier_two_phase(
            &spec,
            &mut state,
            &empty,
            None,
            &OptimizerConfig::phase1(),
            &OptimizerConfig::phase2(),
            &schedule
        ),
        Err(Error::Config(_))
    ));
    let bad = LabeledImages { images: data.images.clone(), labels: vec![0, 1, 2, 3, 0, 0] };
    assert!(matches!(
        train_classifier_two_phase(
            &spec,
            &mut state,
            &bad,
            None,
            &OptimizerConfig::phase1(),
            &OptimizerConfig::phase2(),
            &schedule
        ),
        Err(Error::Data(_))
    ));
}
