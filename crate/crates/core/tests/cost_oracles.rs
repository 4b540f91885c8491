//! Parameter and FLOP accounting against independent oracles: closed-form
//! module counts, enumeration of allocated tensors, and multiply-accumulate
//! loops over the convolutions an actual forward pass executes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpn_core::analysis::{count_flops, count_params, total_flops};
use tpn_core::backbone::{BackboneSpec, TinySpec};
use tpn_core::cores::{CoreKind, CoreSpec};
use tpn_core::head::HeadSpec;
use tpn_core::pyramid::level_sizes;
use tpn_core::tensor::kernels::ConvGeometry;
use tpn_core::train::toy_model;
use tpn_core::{Model, ModelSpec, Pyramid, Shape, Tape, Tensor};

const LEVELS: usize = 5;
const ANCHORS: usize = 9;

fn node(i: usize, o: usize, k: usize) -> u64 {
    (2 * i + o * i * k * k + o) as u64
}

fn conv(i: usize, o: usize, k: usize) -> u64 {
    (o * i * k * k + o) as u64
}

fn squeeze(f: usize, h: usize) -> u64 {
    node(f, h, 1) + node(h, h, 3) + node(h, f, 1)
}

fn core_oracle(c: &CoreSpec) -> u64 {
    let (f, h, n) = (c.feature_size, c.hidden_size, LEVELS as u64);
    let (l, b) = (c.layers as u64, c.bottlenecks as u64);
    let td = node(f, f, 1);
    let sq = squeeze(f, h);
    match c.kind {
        CoreKind::Tpn => l * ((n - 1) * td + 2 * n * b * sq + (n - 1) * sq),
        CoreKind::Fpn => (n - 1) * td,
        CoreKind::Panet => l * (n - 1) * (td + sq),
        CoreKind::Bifpn => l * (2 * (n - 1) * sq + 2 * (n - 1) + 3 * (n - 2) + 2),
        CoreKind::Bfpn | CoreKind::Hfpn => n * b * sq + (n - 1) * td,
    }
}

fn stem_oracle(widths: [usize; 3], f: usize) -> u64 {
    widths.iter().map(|&c| conv(c, f, 1)).sum::<u64>() + conv(widths[2], f, 3) + conv(f, f, 3)
}

fn head_oracle(h: &HeadSpec, f: usize) -> u64 {
    let hidden = h.hidden_layers as u64 * (conv(f, f, 3) + 2 * f as u64);
    let k = h.final_kernel;
    2 * hidden + conv(f, ANCHORS * h.num_classes, k) + conv(f, ANCHORS * 4, k)
}

fn random_spec(r: &mut ChaCha8Rng) -> ModelSpec {
    let kinds = [
        CoreKind::Tpn,
        CoreKind::Fpn,
        CoreKind::Panet,
        CoreKind::Bifpn,
        CoreKind::Bfpn,
        CoreKind::Hfpn,
    ];
    let groups = [2, 4][r.gen_range(0..2)];
    let f = groups * r.gen_range(2..6);
    let h = groups * r.gen_range(1..4);
    let kind = kinds[r.gen_range(0..kinds.len())];
    let l = if kind.uses_layers() { r.gen_range(1..4) } else { 1 };
    let b = if kind.uses_bottlenecks() { r.gen_range(1..4) } else { 1 };
    let core = CoreSpec::new(kind, l, b).with_sizes(f, h, groups);
    let w = |r: &mut ChaCha8Rng| 4 * r.gen_range(1..6);
    let tiny = TinySpec {
        widths: [w(r), w(r), w(r)],
        blocks: r.gen_range(1..3),
        stem_width: 4 * r.gen_range(1..4),
        norm_groups: 4,
        ..TinySpec::default()
    };
    let head = HeadSpec {
        norm_groups: groups,
        ..HeadSpec::default()
            .with_layers(r.gen_range(1..3))
            .with_classes(r.gen_range(1..5))
            .with_final_kernel([1, 3][r.gen_range(0..2)])
    };
    ModelSpec {
        backbone: BackboneSpec::tiny(tiny),
        core,
        head,
    }
}

fn row(t: &tpn_core::analysis::ParamTable, module: &str) -> u64 {
    t.rows.iter().find(|r| r.module == module).map(|r| r.count).unwrap_or(0)
}

#[test]
fn param_counts_match_enumeration_and_closed_forms() {
    let mut r = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let spec = random_spec(&mut r);
        let table = count_params(&spec).unwrap();
        let model = Model::build(&spec).unwrap();
        let store = model.init_params::<f32>(0);
        let enumerated: u64 = store.iter().map(|(_, p)| p.tensor.data().len() as u64).sum();
        let label = spec.label();
        assert_eq!(table.total, enumerated, "{label}");
        assert_eq!(table.rows.iter().map(|m| m.count).sum::<u64>(), table.total, "{label}");
        assert!(table.trainable <= table.total);
        assert_eq!(row(&table, "core"), core_oracle(&spec.core), "{label}");
        assert_eq!(
            row(&table, "stem"),
            stem_oracle(spec.backbone.out_channels(), spec.core.feature_size),
            "{label}"
        );
        assert_eq!(
            row(&table, "head"),
            head_oracle(&spec.head, spec.core.feature_size),
            "{label}"
        );
    }
}

fn loop_macs(g: &ConvGeometry) -> u64 {
    let mut macs = 0u64;
    for _ in 0..g.n {
        for _ in 0..g.o {
            for _ in 0..g.oh {
                for _ in 0..g.ow {
                    for _ in 0..g.c {
                        for _ in 0..g.k * g.k {
                            macs += 1;
                        }
                    }
                }
            }
        }
    }
    macs
}

fn executed_flops(spec: &ModelSpec, h: usize, w: usize) -> u64 {
    let model = Model::build(spec).unwrap();
    let store = model.init_params::<f32>(1);
    let mut tape = Tape::new();
    let p = store.bind_constants(&mut tape);
    let images = tape.constant(Tensor::full(Shape::new(1, 3, h, w), 0.5));
    model.forward(&mut tape, &p, images).unwrap();
    2 * tape.conv_geometries().iter().map(loop_macs).sum::<u64>()
}

#[test]
fn flop_counts_match_executed_convolutions() {
    let mut r = ChaCha8Rng::seed_from_u64(32);
    let mut specs: Vec<ModelSpec> = (0..6).map(|_| random_spec(&mut r)).collect();
    specs.push(toy_model(CoreSpec::tpn(2, 2)));
    for (i, spec) in specs.iter().enumerate() {
        for (h, w) in [(32, 32), (64, 32), (32, 96)] {
            let counted = count_flops(spec, h, w).unwrap();
            let label = format!("{} {h}x{w} #{i}", spec.label());
            assert_eq!(counted.total, executed_flops(spec, h, w), "{label}");
            assert_eq!(
                counted.rows.iter().map(|m| m.count).sum::<u64>(),
                counted.total,
                "{label}"
            );
        }
    }
}

/// Core and head alone on pyramids whose finest map is at most 16×16.
#[test]
fn core_and_head_flops_match_executed_convolutions_on_small_pyramids() {
    let mut r = ChaCha8Rng::seed_from_u64(33);
    for i in 0..12 {
        let spec = random_spec(&mut r);
        let model = Model::build(&spec).unwrap();
        let store = model.init_params::<f32>(2);
        let (h, w) = (r.gen_range(1..=16), r.gen_range(1..=16));
        let sizes = level_sizes(3, 7, (h, w));
        let mut traced = Vec::new();
        model.core.trace(&sizes, &mut traced).unwrap();
        model.head.trace(&sizes, &mut traced).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_constants(&mut tape);
        let f = spec.core.feature_size;
        let maps = sizes
            .iter()
            .map(|&(h, w)| tape.constant(Tensor::from_fn(Shape::new(1, f, h, w), |k| (k % 7) as f32 * 0.1)))
            .collect();
        let out = model.core.run(&mut tape, &p, &Pyramid::new(3, maps)).unwrap();
        model.head.forward(&mut tape, &p, &out).unwrap();
        let executed = 2 * tape.conv_geometries().iter().map(loop_macs).sum::<u64>();
        assert_eq!(total_flops(&traced), executed, "{} on {h}x{w} #{i}", spec.label());
    }
}

#[test]
fn core_flops_quadruple_when_the_image_doubles() {
    for core in [
        CoreSpec::tpn(2, 2),
        CoreSpec::new(CoreKind::Fpn, 1, 1),
        CoreSpec::new(CoreKind::Bifpn, 2, 1),
    ] {
        let spec = toy_model(core);
        let small = count_flops(&spec, 128, 128).unwrap();
        let large = count_flops(&spec, 256, 256).unwrap();
        for module in ["core", "stem", "head"] {
            let get = |t: &tpn_core::analysis::FlopTable| t.rows.iter().find(|r| r.module == module).unwrap().count;
            assert_eq!(get(&large), 4 * get(&small), "{} {module}", spec.label());
        }
    }
}

#[test]
fn tpn_params_grow_with_layers_and_bottlenecks() {
    let count = |l, b| count_params(&toy_model(CoreSpec::tpn(l, b))).unwrap().total;
    for l in 1..=3 {
        for b in 1..=3 {
            assert!(count(l + 1, b) > count(l, b));
            assert!(count(l, b + 1) > count(l, b));
        }
    }
}
