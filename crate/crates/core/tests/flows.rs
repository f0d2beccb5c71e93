mod common;

use common::{jacobian, log_abs_det, rel_err};
use pitchflow::flows::{ActNorm, Cond, Coupling, CouplingConfig, FlowLayer, FlowStack, Inv1x1};
use pitchflow::ndmath::layers::normal_array;
use pitchflow::ndmath::{Array, Graph, ParamStore, Real};
use pitchflow::{rng_from_seed, Rng};

fn coupling_config(channels: usize, end_init_std: f64) -> CouplingConfig {
    CouplingConfig {
        channels,
        hidden: 8,
        kernel: 5,
        layers: 3,
        speaker_dim: 3,
        pitch_dim: 2,
        end_init_std,
    }
}

fn random_actnorm<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, c: usize) -> ActNorm {
    let a = ActNorm::new(store, name, c);
    store.set_value(a.logs, normal_array(rng, &[c, 1], 0.5));
    store.set_value(a.bias, normal_array(rng, &[c, 1], 0.5));
    a.mark_initialized(store);
    a
}

fn block<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, c: usize, std: f64) -> Vec<FlowLayer> {
    vec![
        FlowLayer::ActNorm(random_actnorm(store, rng, &format!("{name}.an"), c)),
        // a generic matrix rather than a rotation, so log|det W| is not zero
        FlowLayer::Inv1x1(
            Inv1x1::from_matrix(store, &format!("{name}.inv"), &normal_array(rng, &[c, c], 1.0)).unwrap(),
        ),
        FlowLayer::Coupling(Coupling::new(store, rng, &format!("{name}.cp"), coupling_config(c, std)).unwrap()),
    ]
}

struct Fixture<F: Real> {
    store: ParamStore<F>,
    stack: FlowStack,
    x: Array<F>,
    speaker: Array<F>,
    pitch: Array<F>,
}

fn fixture<F: Real>(seed: u64, c: usize, t: usize, blocks: usize, std: f64) -> Fixture<F> {
    let mut rng = rng_from_seed(seed);
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    for b in 0..blocks {
        layers.extend(block(&mut store, &mut rng, &format!("b{b}"), c, std));
    }
    Fixture {
        store,
        stack: FlowStack { layers },
        x: normal_array(&mut rng, &[c, t], 1.0),
        speaker: normal_array(&mut rng, &[3, 1], 1.0),
        pitch: normal_array(&mut rng, &[2, t], 1.0),
    }
}

fn cond<F: Real>(g: &mut Graph<F>, f: &Fixture<F>) -> Cond {
    Cond {
        speaker: Some(g.constant(f.speaker.clone())),
        pitch: Some(g.constant(f.pitch.clone())),
    }
}

fn layer_round_trip(f: &Fixture<f32>, layer: &FlowLayer) -> f32 {
    let mut g = Graph::new(&f.store);
    let c = cond(&mut g, f);
    let x = g.constant(f.x.clone());
    let (y, _) = layer.forward(&mut g, x, &c).unwrap();
    let back = layer.inverse(&mut g, y, &c).unwrap();
    g.value(back).max_abs_diff(&f.x)
}

#[test]
fn every_layer_round_trips_in_f32() {
    for seed in 0..100 {
        let f = fixture::<f32>(seed, 6, 7, 1, 0.3);
        for layer in &f.stack.layers {
            let err = layer_round_trip(&f, layer);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}

#[test]
fn stack_round_trip_in_f64_is_tight() {
    for seed in 0..20 {
        let f = fixture::<f64>(seed, 4, 6, 2, 0.3);
        let mut g = Graph::new(&f.store);
        let c = cond(&mut g, &f);
        let x = g.constant(f.x.clone());
        let (z, _) = f.stack.forward(&mut g, x, &c).unwrap();
        let back = f.stack.inverse(&mut g, z, &c).unwrap();
        assert!(g.value(back).max_abs_diff(&f.x) < 1e-8);
    }
}

fn layer_log_det_error(f: &Fixture<f64>, layers: &[FlowLayer]) -> f64 {
    let stack = FlowStack { layers: layers.to_vec() };
    let (c, t) = (f.x.rows(), f.x.cols());
    let run = |xs: &[f64]| -> (Vec<f64>, f64) {
        let mut g = Graph::new(&f.store);
        let cd = cond(&mut g, f);
        let x = g.constant(Array::from_vec(&[c, t], xs.to_vec()).unwrap());
        let (y, ld) = stack.forward(&mut g, x, &cd).unwrap();
        (g.value(y).data().to_vec(), g.value(ld).data()[0])
    };
    let (_, reported) = run(f.x.data());
    let j = jacobian(|xs| run(xs).0, f.x.data(), 1e-5);
    rel_err(reported, log_abs_det(&j))
}

#[test]
fn every_layer_log_det_matches_jacobian() {
    for seed in 0..100 {
        let f = fixture::<f64>(seed, 4, 2, 1, 0.5);
        for layer in &f.stack.layers {
            let err = layer_log_det_error(&f, std::slice::from_ref(layer));
            assert!(err < 1e-3, "seed {seed} {layer:?}: {err}");
        }
    }
}

#[test]
fn stack_log_det_is_sum_and_matches_jacobian() {
    for seed in 0..30 {
        let f = fixture::<f64>(seed, 4, 4, 2, 0.5);
        assert!(layer_log_det_error(&f, &f.stack.layers) < 1e-3);
        let mut g = Graph::new(&f.store);
        let c = cond(&mut g, &f);
        let x = g.constant(f.x.clone());
        let (_, parts) = f.stack.forward_traced(&mut g, x, &c).unwrap();
        let sum: f64 = parts.iter().map(|&p| g.value(p).data()[0]).sum();
        let (_, total) = f.stack.forward(&mut g, x, &c).unwrap();
        assert!((g.value(total).data()[0] - sum).abs() < 1e-12);
    }
}

#[test]
fn inv1x1_log_det_matches_independent_lu() {
    for seed in 0..50 {
        let mut rng = rng_from_seed(seed);
        let c = 1 + (seed as usize % 8);
        let w: Array<f64> = normal_array(&mut rng, &[c, c], 1.0);
        let mut store = ParamStore::new();
        let layer = Inv1x1::from_matrix(&mut store, "w", &w).unwrap();
        let t = 3;
        let mut g = Graph::new(&store);
        let x = g.constant(Array::zeros(&[c, t]));
        let (_, ld) = layer.forward(&mut g, x).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(c, c, w.data());
        let oracle = t as f64 * m.determinant().abs().ln();
        assert!(rel_err(g.value(ld).data()[0], oracle) < 1e-6, "seed {seed}");
        assert!(layer.weight_value(&store).max_abs_diff(&w) < 1e-12);
    }
}

#[test]
fn actnorm_init_standardizes() {
    for seed in 0..100 {
        let mut rng = rng_from_seed(seed);
        let batch: Array<f64> = normal_array(&mut rng, &[3, 50], 2.5).map(|v| v + 1.5);
        let mut store = ParamStore::new();
        let a = ActNorm::new(&mut store, "an", 3);
        a.init(&mut store, &batch).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(batch.clone());
        let (y, _) = a.forward(&mut g, x).unwrap();
        let y = g.value(y);
        for ch in 0..3 {
            let row = y.row_slice(ch);
            let mean = row.iter().sum::<f64>() / 50.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-3 && (var - 1.0).abs() < 1e-2);
        }
        let back = a.inverse(&mut g, x);
        let _ = back;
    }
}

#[test]
fn zeroed_conditioner_is_identity() {
    let mut rng = rng_from_seed(1);
    let mut store = ParamStore::<f64>::new();
    let cp = Coupling::new(&mut store, &mut rng, "cp", coupling_config(4, 0.1)).unwrap();
    cp.zero_output(&mut store);
    let xv: Array<f64> = normal_array(&mut rng, &[4, 5], 1.0);
    let mut g = Graph::new(&store);
    let c = Cond {
        speaker: Some(g.constant(Array::ones(&[3, 1]))),
        pitch: Some(g.constant(Array::ones(&[2, 5]))),
    };
    let x = g.constant(xv.clone());
    let (y, ld) = cp.forward(&mut g, x, &c).unwrap();
    assert_eq!(g.value(y), &xv);
    assert_eq!(g.value(ld).data()[0], 0.0);
}

#[test]
fn coupling_rejects_bad_shapes() {
    let mut rng = rng_from_seed(2);
    let mut store = ParamStore::<f64>::new();
    assert!(Coupling::new(&mut store, &mut rng, "odd", coupling_config(3, 0.1)).is_err());
    let cp = Coupling::new(&mut store, &mut rng, "cp", coupling_config(4, 0.1)).unwrap();
    let mut g = Graph::new(&store);
    let c = Cond {
        speaker: Some(g.constant(Array::ones(&[3, 1]))),
        pitch: Some(g.constant(Array::ones(&[2, 4]))),
    };
    let x = g.constant(Array::zeros(&[4, 5]));
    let err = cp.forward(&mut g, x, &c).unwrap_err().to_string();
    assert!(err.contains("[2, 4]"), "{err}");
}

#[test]
fn pitch_conditioning_changes_coupling_output() {
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::<f32>::new();
        let cp = Coupling::new(&mut store, &mut rng, "cp", coupling_config(4, 0.01)).unwrap();
        let xv: Array<f32> = normal_array(&mut rng, &[4, 6], 1.0);
        let p1: Array<f32> = normal_array(&mut rng, &[2, 6], 1.0);
        let p2: Array<f32> = normal_array(&mut rng, &[2, 6], 1.0);
        let mut g = Graph::new(&store);
        let x = g.constant(xv);
        let spk = Some(g.constant(Array::ones(&[3, 1])));
        let c1 = Cond { speaker: spk, pitch: Some(g.constant(p1)) };
        let c2 = Cond { speaker: spk, pitch: Some(g.constant(p2)) };
        let (y1, _) = cp.forward(&mut g, x, &c1).unwrap();
        let (y2, _) = cp.forward(&mut g, x, &c2).unwrap();
        assert!(g.value(y1).max_abs_diff(g.value(y2)) > 1e-6);
    }
}
