//! Structural behaviour of the cores: identity at zeroed residual finals,
//! sequential versus parallel reads, layer stacking, shape preservation,
//! head level-equivariance and the residual statistic at initialization.

mod common;

use common::{pyramid_tensors, rng};
use proptest::prelude::*;
use rand::Rng;
use tpn_core::blocks::TopDownOp;
use tpn_core::cores::{build_core, CoreKind, CoreSpec, Mode};
use tpn_core::head::{Head, HeadSpec};
use tpn_core::pyramid::FeaturePyramid;
use tpn_core::{ParamStore, Pyramid, Registry, Shape, Tape, Tensor};

fn small(kind: CoreKind, layers: usize, bottlenecks: usize) -> CoreSpec {
    CoreSpec::new(kind, layers, bottlenecks).with_sizes(8, 4, 2)
}

fn input(channels: usize, seed: u64) -> FeaturePyramid<f64> {
    Pyramid::new(3, pyramid_tensors(channels, seed))
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn assert_bit_equal(label: &str, a: &FeaturePyramid<f64>, b: &FeaturePyramid<f64>) {
    assert_eq!(a.min_level(), b.min_level(), "{label}");
    assert_eq!(a.len(), b.len(), "{label}");
    for ((l, x), (_, y)) in a.iter().zip(b.iter()) {
        assert_eq!(x.shape(), y.shape(), "{label} P{l}");
        assert!(bits(x) == bits(y), "{label}: P{l} differs");
    }
}

fn identity_holds(spec: CoreSpec, seed: u64) {
    let mut reg = Registry::new();
    let core = build_core(&mut reg, "core", &spec).unwrap();
    let mut store = ParamStore::<f64>::init(&reg, seed);
    for id in core.residual_finals() {
        store.zero(id);
    }
    let x = input(spec.feature_size, seed + 1);
    let y = core.run_tensors(&store, &x).unwrap();
    assert_bit_equal(&spec.label(), &x, &y);
}

#[test]
fn zeroed_finals_make_every_core_the_identity() {
    let mut specs = Vec::new();
    for l in 1..=3 {
        for b in 1..=3 {
            specs.push(small(CoreKind::Tpn, l, b));
        }
        specs.push(small(CoreKind::Panet, l, 1));
    }
    specs.push(small(CoreKind::Fpn, 1, 1));
    for b in 1..=3 {
        specs.push(small(CoreKind::Bfpn, 1, b));
        specs.push(small(CoreKind::Hfpn, 1, b));
    }
    for (i, spec) in specs.into_iter().enumerate() {
        identity_holds(spec, 100 + i as u64);
    }
}

#[test]
fn initialized_cores_are_not_the_identity() {
    let spec = small(CoreKind::Tpn, 1, 1);
    let mut reg = Registry::new();
    let core = build_core(&mut reg, "core", &spec).unwrap();
    let store = ParamStore::<f64>::init(&reg, 3);
    let x = input(8, 4);
    let y = core.run_tensors(&store, &x).unwrap();
    assert!(x.max_abs_diff(&y) > 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identity_on_any_pyramid(l in 1usize..=3, b in 1usize..=3, seed in 0u64..1000, h in 4usize..12, w in 4usize..12) {
        let spec = small(CoreKind::Tpn, l, b);
        let mut reg = Registry::new();
        let core = build_core(&mut reg, "core", &spec).unwrap();
        let mut store = ParamStore::<f64>::init(&reg, seed);
        for id in core.residual_finals() {
            store.zero(id);
        }
        let mut r = rng(seed);
        let maps = tpn_core::pyramid::level_sizes(3, 7, (h, w))
            .into_iter()
            .map(|(h, w)| Tensor::from_fn(Shape::new(1, 8, h, w), |_| r.gen_range(-3.0..3.0)))
            .collect();
        let x = Pyramid::new(3, maps);
        let y = core.run_tensors(&store, &x).unwrap();
        for ((_, a), (_, b)) in x.iter().zip(y.iter()) {
            prop_assert!(bits(a) == bits(b));
        }
    }

    #[test]
    fn cores_preserve_pyramid_shapes(
        kind in prop::sample::select(vec![CoreKind::Tpn, CoreKind::Fpn, CoreKind::Panet, CoreKind::Bifpn, CoreKind::Bfpn, CoreKind::Hfpn]),
        h in 3usize..20,
        w in 3usize..20,
        seed in 0u64..1000,
    ) {
        let spec = small(kind, 1, 1);
        let mut reg = Registry::new();
        let core = build_core(&mut reg, "core", &spec).unwrap();
        let store = ParamStore::<f64>::init(&reg, seed);
        let mut r = rng(seed);
        let maps = tpn_core::pyramid::level_sizes(3, 7, (h, w))
            .into_iter()
            .map(|(h, w)| Tensor::from_fn(Shape::new(1, 8, h, w), |_| r.gen_range(-1.0..1.0)))
            .collect();
        let x = Pyramid::new(3, maps);
        let y = core.run_tensors(&store, &x).unwrap();
        prop_assert_eq!(x.shapes(), y.shapes());
    }
}

/// Output after the first (top-down) stage of TPN(1,1) for a P7-only probe,
/// minus the same stage applied to the all-zero pyramid.
fn probe_response(mode: Mode) -> Vec<f64> {
    let spec = small(CoreKind::Tpn, 1, 1);
    let mut reg = Registry::new();
    let mut core = build_core(&mut reg, "core", &spec).unwrap();
    core.set_mode(mode);
    let store = ParamStore::<f64>::init(&reg, 9);
    let zeros: Vec<Tensor<f64>> = input(8, 0)
        .into_maps()
        .into_iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let mut probe = zeros.clone();
    let mut r = rng(10);
    probe[4] = Tensor::from_fn(probe[4].shape(), |_| r.gen_range(-1.0..1.0));
    let run = |maps: Vec<Tensor<f64>>| {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let vars = Pyramid::new(3, maps).record(&mut tape);
        core.run_stages(&mut tape, &p, &vars, 1).unwrap().values(&tape)
    };
    let base = run(zeros);
    let perturbed = run(probe);
    (3..=6).map(|l| base.get(l).max_abs_diff(perturbed.get(l))).collect()
}

#[test]
fn sequential_top_down_reaches_the_finest_level() {
    let d = probe_response(Mode::Sequential);
    for (i, v) in d.iter().enumerate() {
        assert!(*v > 0.0, "P{} unchanged: {d:?}", i + 3);
    }
}

#[test]
fn parallel_top_down_reaches_only_the_next_level() {
    let d = probe_response(Mode::Parallel);
    assert_eq!(&d[..3], &[0.0, 0.0, 0.0], "{d:?}");
    assert!(d[3] > 0.0, "{d:?}");
}

/// Copies parameters named `core.layer{from}.*` in `src` into the
/// `core.layer0.*` slots of a fresh single-layer store.
fn single_layer(src: &ParamStore<f64>, reg: &Registry, from: usize) -> ParamStore<f64> {
    let mut out = ParamStore::<f64>::init(reg, 0);
    for id in reg.ids() {
        let name = reg
            .desc(id)
            .name
            .replacen("core.layer0.", &format!("core.layer{from}."), 1);
        let sid = src.id(&name).unwrap_or_else(|| panic!("{name} missing"));
        out.get_mut(id).tensor = src.tensor(sid).clone();
    }
    out
}

#[test]
fn two_layers_equal_one_layer_applied_twice() {
    for b in 1..=2 {
        let mut reg2 = Registry::new();
        let deep = build_core(&mut reg2, "core", &small(CoreKind::Tpn, 2, b)).unwrap();
        let mut reg1 = Registry::new();
        let shallow = build_core(&mut reg1, "core", &small(CoreKind::Tpn, 1, b)).unwrap();
        assert_eq!(reg2.total(), 2 * reg1.total());
        let store = ParamStore::<f64>::init(&reg2, 11);
        let first = single_layer(&store, &reg1, 0);
        let second = single_layer(&store, &reg1, 1);
        let x = input(8, 12);
        let once = shallow.run_tensors(&first, &x).unwrap();
        let twice = shallow.run_tensors(&second, &once).unwrap();
        let direct = deep.run_tensors(&store, &x).unwrap();
        assert_bit_equal(&format!("TPN(2,{b})"), &direct, &twice);
    }
}

#[test]
fn head_commutes_with_level_permutation() {
    let mut reg = Registry::new();
    let head = Head::register(&mut reg, "head", &HeadSpec::default().with_classes(3), 8).unwrap();
    let store = ParamStore::<f64>::init(&reg, 13);
    let maps = pyramid_tensors(8, 14);
    let mut reversed = maps.clone();
    reversed.reverse();
    let outputs = |maps: Vec<Tensor<f64>>| {
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let vars = Pyramid::new(3, maps).record(&mut tape);
        let out = head.forward(&mut tape, &p, &vars).unwrap();
        out.maps()
            .iter()
            .map(|o| (tape.value(o.cls).clone(), tape.value(o.boxes).clone()))
            .collect::<Vec<_>>()
    };
    let a = outputs(maps);
    let mut b = outputs(reversed);
    b.reverse();
    for ((ca, ba), (cb, bb)) in a.iter().zip(&b) {
        assert!(bits(ca) == bits(cb));
        assert!(bits(ba) == bits(bb));
    }
}

#[test]
fn top_down_residual_has_zero_mean_over_initializations() {
    const TRIALS: usize = 1000;
    let mut reg = Registry::new();
    let op = TopDownOp::register(&mut reg, "td", 8, 2).unwrap();
    let mut r = rng(15);
    let fine = Tensor::from_fn(Shape::new(1, 8, 8, 8), |_| r.gen_range(-1.0..1.0));
    let coarse = Tensor::from_fn(Shape::new(1, 8, 4, 4), |_| r.gen_range(-1.0..1.0));
    let means: Vec<f64> = (0..TRIALS as u64)
        .map(|seed| {
            let store = ParamStore::<f64>::init(&reg, seed);
            let mut tape = Tape::new();
            let p = store.bind_constants(&mut tape);
            let f = tape.constant(fine.clone());
            let c = tape.constant(coarse.clone());
            let res = op.residual(&mut tape, &p, f, c).unwrap();
            let v = tape.value(res).data();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let n = TRIALS as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(se > 0.0);
    assert!(mean.abs() <= 3.0 * se, "mean {mean:e} vs 3 SE {:e}", 3.0 * se);
}
