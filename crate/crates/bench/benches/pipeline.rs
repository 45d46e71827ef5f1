use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glstyle_bench::{timing_settings, Scene};
use glstyle_core::losses::{match_patches, PatchSet};
use glstyle_core::{scheme_catalog, BackboneWeights, LayerId, TransferObjective};

const H: usize = 128;
const W: usize = 96;

fn backbone(c: &mut Criterion) {
    let net = BackboneWeights::random_vgg19(0);
    let scene = Scene::new(H, W, 5);
    let layers = LayerId::ALL;
    let mut g = c.benchmark_group("backbone");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| net.forward_trace(&scene.content, &layers).unwrap()));
    let trace = net.forward_trace(&scene.content, &layers).unwrap();
    let upstream = trace.features(&layers).unwrap();
    g.bench_function("backward", |b| b.iter(|| trace.backward(&upstream).unwrap()));
    g.finish();
}

fn matching(c: &mut Criterion) {
    let net = BackboneWeights::random_vgg19(0);
    let scene = Scene::new(H, W, 5);
    let l3 = [LayerId::new(3).unwrap()];
    let fc = net.forward_trace(&scene.content, &l3).unwrap().features(&l3).unwrap();
    let fs = net.forward_trace(&scene.style, &l3).unwrap().features(&l3).unwrap();
    let q = PatchSet::extract(&fc[&l3[0]]).unwrap();
    let bank = PatchSet::extract(&fs[&l3[0]]).unwrap();
    let mut g = c.benchmark_group("matching");
    g.sample_size(10);
    g.bench_function("conv3_1", |b| b.iter(|| match_patches(&q, &bank).unwrap()));
    g.finish();
}

fn schemes(c: &mut Criterion) {
    let net = BackboneWeights::random_vgg19(0);
    let scene = Scene::new(H, W, 5);
    let mut g = c.benchmark_group("evaluation");
    g.sample_size(10);
    for (name, scheme) in scheme_catalog() {
        let settings = timing_settings(scheme);
        let targets = scene.targets(&net, &settings);
        let mut obj = TransferObjective::new(&net, &targets, &settings, scene.content.shape());
        g.bench_with_input(BenchmarkId::from_parameter(&name), &scene.content, |b, x| {
            b.iter(|| {
                obj.invalidate_matches();
                obj.evaluate_image(x).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, backbone, matching, schemes);
criterion_main!(benches);
