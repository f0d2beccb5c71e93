mod common;

use common::perturb;
use pitchflow::align::{durations_from_path, expand_indices, AlignmentPath};
use pitchflow::config::{Config, ModelConfig, Temperatures, Variant};
use pitchflow::features::{tokenize, PitchContour, TokenSequence};
use pitchflow::flows::{squeeze_array, unsqueeze_array, Cond, FlowLayer};
use pitchflow::model::{expand_by_duration, prior_sample, Checkpoint, DurationModel, Example, Model};
use pitchflow::ndmath::layers::normal_array;
use pitchflow::ndmath::{check_gradient_coords, Adam, Array, Graph, ParamId, ParamStore, Real};
use pitchflow::synthcorpus::{generate_utterance, SpeakerSpec};
use pitchflow::train::example_from_samples;
use pitchflow::{rng_from_seed, Rng};
use proptest::prelude::*;
use rand::Rng as _;

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        hidden: 8,
        encoder_layers: 1,
        encoder_kernel: 3,
        decoder_blocks: 2,
        decoder_hidden: 8,
        decoder_kernel: 3,
        decoder_layers: 1,
        predictor_filter: 8,
        predictor_depth: 1,
        predictor_flows: 2,
        regressor_filter: 8,
        coupling_init_std: 0.05,
        ..ModelConfig::default()
    }
}

fn speaker(id: &str, hz: f64) -> SpeakerSpec {
    SpeakerSpec::new(id, hz, 0.1, 3.0, 7)
}

fn toy_example(spec: &SpeakerSpec, text: &str, seed: u64) -> Example {
    let u = generate_utterance(spec, text, &mut rng_from_seed(seed)).unwrap();
    example_from_samples(text, &u.samples, spec.vector()).unwrap()
}

fn build<F: Real>(config: &ModelConfig, seed: u64) -> (Model, ParamStore<F>) {
    let mut store = ParamStore::new();
    let model = Model::new(config, &mut store, &mut rng_from_seed(seed)).unwrap();
    model.mark_initialized(&mut store);
    (model, store)
}

fn param_id<F: Real>(store: &ParamStore<F>, prefix: &str) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, p)| p.trainable && p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

#[test]
fn encode_is_deterministic_and_speaker_sensitive() {
    let (model, store) = build::<f32>(&tiny(Variant::Stdp), 1);
    let tokens = tokenize("hello there").unwrap();
    let a = speaker("a", 120.0).vector();
    let b = speaker("b", 220.0).vector();
    let mut g = Graph::new(&store);
    let e1 = model.encode(&mut g, &tokens, &a).unwrap();
    let e2 = model.encode(&mut g, &tokens, &a).unwrap();
    let e3 = model.encode(&mut g, &tokens, &b).unwrap();
    assert_eq!(g.value(e1.mu), g.value(e2.mu));
    assert_eq!(g.value(e1.mu).shape(), &[80, tokens.len()]);
    assert_eq!(g.cols(e1.hidden), tokens.len());
    assert!(g.value(e1.mu).all_finite());
    assert!(g.value(e1.mu).max_abs_diff(g.value(e3.mu)) > 1e-6);
}

#[test]
fn encode_rejects_unknown_tokens() {
    let (model, store) = build::<f32>(&tiny(Variant::Std), 1);
    let mut g = Graph::new(&store);
    let bad = TokenSequence { ids: vec![0, 99, 0] };
    assert!(model.encode(&mut g, &bad, &speaker("a", 120.0).vector()).is_err());
    let empty = TokenSequence { ids: vec![] };
    assert!(model.encode(&mut g, &empty, &speaker("a", 120.0).vector()).is_err());
}

#[test]
fn prior_sample_statistics() {
    let mut rng = rng_from_seed(3);
    let mu = normal_array::<f64>(&mut rng, &[80, 1250], 1.0);
    assert_eq!(prior_sample(&mu, 0.0, &mut rng).unwrap(), mu);
    assert!(prior_sample(&mu, -0.1, &mut rng).is_err());
    let t = 0.667;
    let z = prior_sample(&mu, t, &mut rng).unwrap();
    let n = mu.len() as f64;
    let d: Vec<f64> = z.data().iter().zip(mu.data()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / (t * t) - 1.0).abs() < 0.02, "variance {var}");
}

fn decoder_fixture(variant: Variant) -> (Model, ParamStore<f32>, Example) {
    let config = ModelConfig {
        variant,
        coupling_init_std: 0.05,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let model = Model::new(&config, &mut store, &mut rng_from_seed(5)).unwrap();
    let ex = toy_example(&speaker("a", 150.0), "abc de", 11);
    model.init_actnorm(&mut store, &[&ex]).unwrap();
    (model, store, ex)
}

fn even_frames(ex: &Example) -> (Array<f32>, PitchContour) {
    let t = ex.frames() - ex.frames() % 2;
    let mut c = ex.contour.clone();
    c.truncate(t);
    (ex.mel.slice_cols(0, t), c)
}

#[test]
fn decoder_round_trip_and_log_det_composition() {
    let (model, store, ex) = decoder_fixture(Variant::Stdp);
    let (mel, contour) = even_frames(&ex);
    let mut g = Graph::new(&store);
    let spk = g.constant(ex.speaker.to_column());
    let pitch = model.decoder.pitch_condition(&mut g, &contour, mel.cols()).unwrap();
    let x = g.constant(mel.clone());
    let (z, logdet) = model.decoder.forward(&mut g, x, spk, Some(pitch)).unwrap();
    assert_eq!(g.shape(z), mel.shape());
    let back = model.decoder.inverse(&mut g, z, spk, Some(pitch)).unwrap();
    let err = g.value(back).max_abs_diff(&mel);
    assert!(err < 1e-3, "round trip {err}");

    let xs = g.constant(squeeze_array(&mel, 2).unwrap());
    let cond = Cond {
        speaker: Some(spk),
        pitch: Some(pitch),
    };
    let (_, parts) = model.decoder.flows.forward_traced(&mut g, xs, &cond).unwrap();
    let sum: f64 = parts.iter().map(|&p| g.value(p).data()[0] as f64).sum();
    let total = g.value(logdet).data()[0] as f64;
    assert!((sum - total).abs() <= 1e-4 * total.abs().max(1.0), "{sum} vs {total}");
}

#[test]
fn identity_decoder_returns_unsqueezed_latent() {
    let config = ModelConfig {
        variant: Variant::Std,
        ..ModelConfig::default()
    };
    let (model, mut store) = build::<f32>(&config, 2);
    for layer in &model.decoder.flows.layers {
        if let FlowLayer::Inv1x1(l) = layer {
            let c = l.channels;
            store.set_value(l.perm, Array::identity(c));
            store.set_value(l.sign, Array::ones(&[c, 1]));
            store.set_value(l.lower, Array::zeros(&[c, c]));
            store.set_value(l.upper, Array::zeros(&[c, c]));
            store.set_value(l.log_s, Array::zeros(&[c, 1]));
        }
    }
    let mut rng = rng_from_seed(4);
    let zv = normal_array::<f32>(&mut rng, &[80, 12], 1.0);
    let mut g = Graph::new(&store);
    let spk = g.constant(speaker("a", 100.0).vector().to_column());
    let z = g.constant(zv.clone());
    let out = model.decoder.inverse(&mut g, z, spk, None).unwrap();
    let expected = unsqueeze_array(&squeeze_array(&zv, 2).unwrap(), 2).unwrap();
    assert_eq!(g.value(out), &expected);
    assert_eq!(g.value(out), &zv);
}

#[test]
fn pitch_conditioning_changes_decoder_output_deterministically() {
    let (model, store, ex) = decoder_fixture(Variant::Stdp);
    let (mel, contour) = even_frames(&ex);
    let shifted = PitchContour::from_log_f0(
        &contour.log_f0.iter().map(|&v| if v > 0.0 { v + 0.3 } else { v }).collect::<Vec<_>>(),
    );
    let mut rng = rng_from_seed(8);
    let zv = normal_array::<f32>(&mut rng, mel.shape(), 1.0);
    let run = |c: &PitchContour| {
        let mut g = Graph::new(&store);
        let spk = g.constant(ex.speaker.to_column());
        let p = model.decoder.pitch_condition(&mut g, c, mel.cols()).unwrap();
        let z = g.constant(zv.clone());
        let out = model.decoder.inverse(&mut g, z, spk, Some(p)).unwrap();
        g.value(out).clone()
    };
    let a = run(&contour);
    assert_eq!(a, run(&contour));
    assert!(a.max_abs_diff(&run(&shifted)) > 1e-4);
}

#[test]
fn pitch_condition_shape_bias_and_locality() {
    let (model, mut store) = build::<f64>(&tiny(Variant::Stdp), 3);
    let proj = model.decoder.pitch_proj.clone().unwrap();
    let bias = normal_array::<f64>(&mut rng_from_seed(1), &[80, 1], 1.0);
    store.set_value(proj.bias, bias.clone());
    let t = 20;
    let mut g = Graph::new(&store);

    let silent = model.decoder.pitch_condition(&mut g, &PitchContour::unvoiced(t), t).unwrap();
    assert_eq!(g.shape(silent), &[160, t / 2]);
    let expected = squeeze_array(&Array::from_fn(80, t, |r, _| bias.get(r, 0)), 2).unwrap();
    assert_eq!(g.value(silent), &expected);

    let odd = model.decoder.pitch_condition(&mut g, &PitchContour::unvoiced(7), 7).unwrap();
    assert_eq!(g.cols(odd), 3);
    assert!(model.decoder.pitch_condition(&mut g, &PitchContour::unvoiced(7), 8).is_err());

    let base: Vec<f32> = (0..t).map(|i| (120.0 + 5.0 * i as f32).ln()).collect();
    let a = model.decoder.pitch_condition(&mut g, &PitchContour::from_log_f0(&base), t).unwrap();
    let reach = (model.config.pitch_kernel - 1) / 2;
    for k in [0, 7, 10, 19] {
        let mut changed = base.clone();
        changed[k] = 5.3;
        let b = model.decoder.pitch_condition(&mut g, &PitchContour::from_log_f0(&changed), t).unwrap();
        let (va, vb) = (g.value(a), g.value(b));
        for r in 0..160 {
            for j in 0..t / 2 {
                let frame = j * 2 + r % 2;
                let inside = frame + reach >= k && frame <= k + reach;
                if !inside {
                    assert_eq!(va.get(r, j), vb.get(r, j), "frame {frame} changed by {k}");
                }
            }
        }
        assert!(va.max_abs_diff(vb) > 0.0);
    }
}

#[test]
fn expand_by_duration_cases() {
    let x = Array::from_fn(2, 3, |r, c| (10 * r + c) as f64);
    assert_eq!(expand_by_duration(&x, &[1, 1, 1]).unwrap(), x);
    let y = Array::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
    let e = expand_by_duration(&y, &[2, 3]).unwrap();
    assert_eq!(e.data(), &[0.0, 0.0, 1.0, 1.0, 1.0]);
    assert!(expand_by_duration(&y, &[2, 0]).is_err());
    assert!(expand_by_duration(&y, &[2]).is_err());
}

proptest! {
    #[test]
    fn expansion_matches_alignment_durations(d in prop::collection::vec(1usize..6, 1..8)) {
        let path = AlignmentPath::from_durations(&d).unwrap();
        prop_assert_eq!(durations_from_path(&path), d.clone());
        let ids = Array::row(&(0..d.len()).map(|i| i as f64).collect::<Vec<_>>());
        let e = expand_by_duration(&ids, &d).unwrap();
        let idx: Vec<usize> = e.data().iter().map(|&v| v as usize).collect();
        prop_assert_eq!(idx, expand_indices(&d));
    }
}

#[test]
fn predictor_terms_do_not_reach_the_encoder() {
    let ex = toy_example(&speaker("a", 140.0), "ab c", 2);
    for variant in [Variant::Baseline, Variant::Std, Variant::Stdp] {
        let (model, mut store) = build::<f64>(&tiny(variant), 9);
        perturb(&mut store, &mut rng_from_seed(1), 0.1);
        let mut g = Graph::new(&store);
        let l = model.loss(&mut g, &ex, &mut rng_from_seed(3)).unwrap();
        let encoder = param_id(&store, "encoder.");
        assert!(!encoder.is_empty());
        let mut terms = vec![("duration", l.duration)];
        if let Some(p) = l.pitch {
            terms.push(("pitch", p));
        }
        assert_eq!(l.pitch.is_some(), variant == Variant::Stdp);
        for (name, term) in terms {
            let grads = g.backward(term).unwrap();
            for &id in &encoder {
                if let Some(gr) = grads.param(id) {
                    assert!(gr.data().iter().all(|&v| v == 0.0), "{variant} {name} reaches {}", store.get(id).name);
                }
            }
            let own = param_id(&store, if name == "duration" { "duration." } else { "pitch." });
            let reached = own.iter().any(|&id| grads.param(id).is_some_and(|a| a.max_abs() > 0.0));
            assert!(reached, "{variant} {name} has no gradient");
        }
        let grads = g.backward(l.total).unwrap();
        let reached = encoder.iter().any(|&id| grads.param(id).is_some_and(|a| a.max_abs() > 0.0));
        assert!(reached, "mel term should train the encoder");
    }
}

#[test]
fn losses_are_finite_and_seeded() {
    let ex = toy_example(&speaker("a", 180.0), "abc", 4);
    for variant in [Variant::Baseline, Variant::Std, Variant::Stdp] {
        let (model, store) = build::<f32>(&tiny(variant), 1);
        let eval = |seed| {
            let mut g = Graph::new(&store);
            let (_, r) = model.batch_loss(&mut g, &[&ex, &ex], &mut rng_from_seed(seed)).unwrap();
            r
        };
        let r = eval(5);
        assert!(r.is_finite(), "{variant}: {r:?}");
        assert_eq!(r, eval(5));
        assert_eq!(r.pitch == 0.0, variant != Variant::Stdp);
    }
}

fn toy_hidden(rng: &mut Rng, n: usize) -> (Array<f64>, Vec<usize>) {
    let h = normal_array(rng, &[8, n], 1.0);
    let d = (0..n).map(|i| 2 + (i % 3) * 2).collect();
    (h, d)
}

fn block_means(losses: &[f64], blocks: usize) -> Vec<f64> {
    let size = losses.len() / blocks;
    losses.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn duration_loss_decreases_on_fixed_batch() {
    let (model, mut store) = build::<f64>(&tiny(Variant::Std), 4);
    let DurationModel::Stochastic(sdp) = model.duration.clone() else { unreachable!() };
    let (hv, durations) = toy_hidden(&mut rng_from_seed(2), 12);
    let sv = speaker("a", 120.0).vector().to_column::<f64>();
    let mut adam = Adam::new(&store);
    let mut losses = Vec::new();
    for step in 0..500 {
        let grads = {
            let mut g = Graph::new(&store);
            let h = g.constant(hv.clone());
            let s = g.constant(sv.clone());
            let l = sdp.loss(&mut g, h, s, &durations, &mut rng_from_seed(step)).unwrap();
            losses.push(g.value(l).data()[0]);
            g.backward(l).unwrap()
        };
        store.zero_grad();
        store.accumulate(&grads);
        adam.step(&mut store, 5e-3).unwrap();
    }
    let means = block_means(&losses, 5);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "smoothed losses {means:?}");
    }

    let eval = |seed| {
        let mut g = Graph::new(&store);
        let h = g.constant(hv.clone());
        let s = g.constant(sv.clone());
        let l = sdp.loss(&mut g, h, s, &durations, &mut rng_from_seed(seed)).unwrap();
        g.value(l).data()[0]
    };
    assert_eq!(eval(1), eval(1));

    let mut g = Graph::new(&store);
    let h = g.constant(hv.clone());
    let s = g.constant(sv.clone());
    let d = sdp.sample(&mut g, h, s, 0.8, &mut rng_from_seed(6)).unwrap();
    assert_eq!(d.len(), durations.len());
    assert!(d.iter().all(|&x| x >= 1));
}

#[test]
fn pitch_nll_decreases_on_held_out_contours() {
    let (model, mut store) = build::<f64>(&tiny(Variant::Stdp), 6);
    let pp = model.pitch.clone().unwrap();
    let sv = speaker("a", 120.0).vector().to_column::<f64>();
    let make = |seed: u64| {
        let mut rng = rng_from_seed(seed);
        let t = 24;
        let h = normal_array::<f64>(&mut rng, &[8, t], 1.0);
        let lf: Vec<f32> = (0..t)
            .map(|i| if i % 6 == 0 { 0.0 } else { (120.0f64.ln() + 0.1 * rng.random::<f64>()) as f32 })
            .collect();
        (h, PitchContour::from_log_f0(&lf))
    };
    let train: Vec<_> = (0..4).map(make).collect();
    let held = make(100);
    let held_loss = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let h = g.constant(held.0.clone());
        let s = g.constant(sv.clone());
        let l = pp.loss(&mut g, h, s, &held.1, &mut rng_from_seed(77)).unwrap();
        g.value(l).data()[0]
    };
    let before = held_loss(&store);
    assert_eq!(before, held_loss(&store));
    let mut adam = Adam::new(&store);
    for step in 0..200u64 {
        let (hv, c) = &train[step as usize % train.len()];
        let grads = {
            let mut g = Graph::new(&store);
            let h = g.constant(hv.clone());
            let s = g.constant(sv.clone());
            let l = pp.loss(&mut g, h, s, c, &mut rng_from_seed(step)).unwrap();
            g.backward(l).unwrap()
        };
        store.zero_grad();
        store.accumulate(&grads);
        adam.step(&mut store, 5e-3).unwrap();
    }
    let after = held_loss(&store);
    assert!(after < before - 0.5, "held-out NLL {before} -> {after}");

    let mut g = Graph::new(&store);
    let h = g.constant(held.0.clone());
    let s = g.constant(sv.clone());
    let a = pp.sample(&mut g, h, s, 0.0, &mut rng_from_seed(1)).unwrap();
    let b = pp.sample(&mut g, h, s, 0.0, &mut rng_from_seed(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames(), 24);
    assert!(pp.loss(&mut g, h, s, &PitchContour::unvoiced(5), &mut rng_from_seed(1)).is_err());
}

#[test]
fn synthesis_determinism_and_diversity() {
    let (model, store) = build::<f32>(&tiny(Variant::Stdp), 12);
    let tokens = tokenize("abc de").unwrap();
    let spk = speaker("a", 120.0).vector();
    let zero = Temperatures::zero();
    let a = model.synthesize(&store, &tokens, &spk, zero, &mut rng_from_seed(1)).unwrap();
    let b = model.synthesize(&store, &tokens, &spk, zero, &mut rng_from_seed(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mel.frames() % 2, 0);
    assert_eq!(a.durations.iter().sum::<usize>(), a.mel.frames());
    assert_eq!(a.contour.frames(), a.mel.frames());

    let temps = Temperatures::default();
    let c = model.synthesize(&store, &tokens, &spk, temps, &mut rng_from_seed(1)).unwrap();
    let d = model.synthesize(&store, &tokens, &spk, temps, &mut rng_from_seed(2)).unwrap();
    assert_eq!(c, model.synthesize(&store, &tokens, &spk, temps, &mut rng_from_seed(1)).unwrap());
    assert_ne!(c.contour, d.contour);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut config = Config::default();
    config.model = tiny(Variant::Stdp);
    let (model, mut store) = build::<f32>(&config.model, 21);
    perturb(&mut store, &mut rng_from_seed(2), 0.02);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::capture(&config, &store, 17, 21, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.step, 17);
    assert_eq!(loaded.config, config);
    let (restored, rstore) = loaded.restore().unwrap();
    assert_eq!(rstore.len(), store.len());
    for ((_, p), (_, q)) in store.iter().zip(rstore.iter()) {
        assert_eq!(p.name, q.name);
        let bits = |a: &Array<f32>| a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.value), bits(&q.value), "{}", p.name);
    }
    let tokens = tokenize("ab").unwrap();
    let spk = speaker("b", 200.0).vector();
    let t = Temperatures::default();
    assert_eq!(
        model.synthesize(&store, &tokens, &spk, t, &mut rng_from_seed(4)).unwrap(),
        restored.synthesize(&rstore, &tokens, &spk, t, &mut rng_from_seed(4)).unwrap()
    );
}

/// Up to `n` coordinates covering every trainable tensor at least once.
pub fn sample_coords<F: Real>(store: &ParamStore<F>, n: usize, rng: &mut Rng) -> Vec<(ParamId, usize)> {
    let tensors: Vec<(ParamId, usize)> =
        store.iter().filter(|(_, p)| p.trainable).map(|(id, p)| (id, p.value.len())).collect();
    let mut coords: Vec<(ParamId, usize)> = tensors.iter().map(|&(id, len)| (id, rng.random_range(0..len))).collect();
    let total: usize = tensors.iter().map(|t| t.1).sum();
    while coords.len() < n.min(total) {
        let mut k = rng.random_range(0..total);
        for &(id, len) in &tensors {
            if k < len {
                if !coords.contains(&(id, k)) {
                    coords.push((id, k));
                }
                break;
            }
            k -= len;
        }
    }
    coords
}

/// Finite differences of the full loss see the predictors' dependence on
/// the encoder output, which stop-gradient removes by contract; encoder
/// coordinates are therefore checked against the Mel term alone.
#[test]
fn full_loss_gradient_matches_finite_differences() {
    let ex = toy_example(&speaker("a", 130.0), "ab", 5);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(&tiny(Variant::Stdp), &mut store, &mut rng_from_seed(31)).unwrap();
    perturb(&mut store, &mut rng_from_seed(3), 0.05);
    model.init_actnorm(&mut store, &[&ex]).unwrap();
    let coords = sample_coords(&store, 500, &mut rng_from_seed(4));
    assert_eq!(coords.len(), 500);
    let (encoder, rest): (Vec<_>, Vec<_>) =
        coords.into_iter().partition(|&(id, _)| store.get(id).name.starts_with("encoder."));
    let full = check_gradient_coords(&mut store, 1e-4, 1e-6, &rest, |g| {
        let (l, _) = model.batch_loss(g, &[&ex], &mut rng_from_seed(9))?;
        Ok(l)
    })
    .unwrap();
    let mel = check_gradient_coords(&mut store, 1e-4, 1e-6, &encoder, |g| {
        Ok(model.loss(g, &ex, &mut rng_from_seed(9))?.mel)
    })
    .unwrap();
    assert!(full.max_rel_err < 1e-3, "{full:?}");
    assert!(mel.max_rel_err < 1e-3, "{mel:?}");
}
