mod common;

use std::collections::BTreeMap;

use common::*;
use glstyle_core::pyramid::{bilinear_resize, BlockKind};
use glstyle_core::{aggregate, fused_pixel_count, scheme_catalog, AggregationScheme, FeatureMap, LayerId, SemanticAttach};

fn id(i: u8) -> LayerId {
    LayerId::new(i).unwrap()
}

/// Zero feature maps with VGG19 shapes for an `h × w` input.
fn vgg_shaped(h: usize, w: usize) -> BTreeMap<LayerId, FeatureMap> {
    LayerId::ALL
        .iter()
        .map(|&l| {
            let (lh, lw) = l.vgg_spatial(h, w);
            (l, FeatureMap::zeros(lh, lw, l.vgg_channels()))
        })
        .collect()
}

fn five_region_sem(h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(h, w, 5, |y, _, k| if y * 5 / h == k { 10.0 } else { 0.0 })
}

#[test]
fn aggregated_shapes_at_512x352() {
    let feats = vgg_shaped(512, 352);
    let sem = five_region_sem(512, 352);
    let cat = scheme_catalog();
    let expected: [(&str, &[(usize, usize, usize)]); 8] = [
        ("a", &[(256, 176, 202)]),
        ("b", &[(128, 88, 261)]),
        ("c", &[(64, 44, 517)]),
        ("d", &[(64, 44, 778)]),
        ("e", &[(128, 88, 463)]),
        ("f", &[(64, 44, 719)]),
        ("g", &[(64, 44, 980)]),
        ("h", &[(128, 88, 261), (64, 44, 517)]),
    ];
    for (name, shapes) in expected {
        let scheme = &cat[name];
        let got: Vec<_> = scheme
            .maps()
            .iter()
            .map(|s| aggregate(&feats, s, Some(&sem), SemanticAttach::PerLayer).unwrap().map.shape())
            .collect();
        assert_eq!(got, shapes, "scheme {name}");
        assert_eq!(scheme.fused_shapes(512, 352, 5, SemanticAttach::PerLayer), shapes);
    }
}

#[test]
fn pixel_counts() {
    let cat = scheme_catalog();
    assert_eq!(fused_pixel_count(&cat["g"], 512, 352, 5), 2_759_680);
    assert_eq!(fused_pixel_count(&cat["h"], 512, 352, 5), 4_395_776);
    assert_eq!(fused_pixel_count(&cat["c"], 512, 352, 0), 64 * 44 * 512);
}

#[test]
fn catalog_is_exact() {
    let cat = scheme_catalog();
    let layers = |n: &str| -> Vec<Vec<u8>> { cat[n].maps().iter().map(|m| m.iter().map(|l| l.get()).collect()).collect() };
    assert_eq!(cat.len(), 8);
    assert_eq!(layers("g"), vec![vec![1, 2, 3, 4]]);
    assert_eq!(layers("h"), vec![vec![3], vec![4]]);
    assert_eq!(layers("c"), vec![vec![4]]);
    assert_eq!(
        AggregationScheme::parse("3+4").unwrap().maps(),
        cat["h"].maps()
    );
}

#[test]
fn bilinear_matches_pointwise_formula() {
    let mut r = rng(1);
    for (h, w, th, tw) in [(8, 6, 4, 3), (7, 5, 3, 2), (16, 16, 5, 7), (4, 4, 4, 4)] {
        let m = random_map(h, w, 3, &mut r);
        let a = bilinear_resize(&m, th, tw).unwrap();
        let b = bf_bilinear(&m, th, tw);
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
    let m = FeatureMap::from_vec(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    assert_eq!(bilinear_resize(&m, 1, 1).unwrap().as_slice(), &[4.0]);
}

#[test]
fn aggregation_matches_recursive_definition() {
    // FF = ((F¹⊕S) ↓ ⊕ F²⊕S) ↓ ⊕ F³⊕S, built from the pointwise resize.
    let mut r = rng(2);
    let feats: BTreeMap<_, _> = [
        (id(1), random_map(16, 12, 3, &mut r)),
        (id(2), random_map(8, 6, 4, &mut r)),
        (id(3), random_map(4, 3, 2, &mut r)),
    ]
    .into();
    let sem = random_map(16, 12, 2, &mut r);
    let subset = [id(1), id(2), id(3)];
    let got = aggregate(&feats, &subset, Some(&sem), SemanticAttach::PerLayer).unwrap();

    // Nearest sample at the half-pixel centre: for an exact 2ᵏ reduction,
    // source index (2t + 1)·2ᵏ⁻¹.
    let nearest = |s: &FeatureMap, th: usize, tw: usize| {
        let (fy, fx) = (s.height() / th, s.width() / tw);
        FeatureMap::from_fn(th, tw, s.channels(), |y, x, k| s.get(y * fy + fy / 2, x * fx + fx / 2, k))
    };
    let mut ff: Option<FeatureMap> = None;
    for l in subset {
        let f = &feats[&l];
        let (h, w, _) = f.shape();
        let s = nearest(&sem, h, w);
        let mut parts = Vec::new();
        let resized = ff.as_ref().map(|p| bf_bilinear(p, h, w));
        if let Some(p) = &resized {
            parts.push(p);
        }
        parts.push(f);
        parts.push(&s);
        ff = Some(FeatureMap::concat_channels(&parts).unwrap());
    }
    let want = ff.unwrap();
    assert_eq!(got.map.shape(), (4, 3, 3 + 4 + 2 + 3 * 2));
    for (u, v) in got.map.as_slice().iter().zip(want.as_slice()) {
        assert!((u - v).abs() < 1e-12);
    }
    let kinds: Vec<_> = got.layout.blocks().iter().map(|b| (b.kind, b.start, b.len)).collect();
    assert_eq!(
        kinds,
        vec![
            (BlockKind::Feature(id(1)), 0, 3),
            (BlockKind::Semantic(id(1)), 3, 2),
            (BlockKind::Feature(id(2)), 5, 4),
            (BlockKind::Semantic(id(2)), 9, 2),
            (BlockKind::Feature(id(3)), 11, 2),
            (BlockKind::Semantic(id(3)), 13, 2),
        ]
    );
}

#[test]
fn constant_pyramid_gives_constant_blocks() {
    let feats: BTreeMap<_, _> = LayerId::ALL
        .iter()
        .map(|&l| {
            let d = 1 << l.index();
            (l, FeatureMap::filled(32 / d, 24 / d, 2, l.get() as f64))
        })
        .collect();
    let fused = aggregate(&feats, &LayerId::ALL, None, SemanticAttach::PerLayer).unwrap();
    for b in fused.layout.blocks() {
        let BlockKind::Feature(l) = b.kind else { unreachable!() };
        let block = fused.map.slice_channels(b.start, b.len);
        assert!(block.as_slice().iter().all(|&v| (v - l.get() as f64).abs() < 1e-12));
    }
}

#[test]
fn aggregation_adjoint_by_finite_differences() {
    let mut r = rng(3);
    let feats: BTreeMap<_, _> = [
        (id(1), random_map(16, 8, 2, &mut r)),
        (id(2), random_map(8, 4, 3, &mut r)),
        (id(4), random_map(2, 1, 2, &mut r)),
    ]
    .into();
    let sem = random_map(16, 8, 1, &mut r);
    let subset = [id(1), id(2), id(4)];
    let fused = aggregate(&feats, &subset, Some(&sem), SemanticAttach::PerLayer).unwrap();
    let cot = random_map(fused.map.height(), fused.map.width(), fused.map.channels(), &mut r);
    let grads = fused.layout.backward(&cot).unwrap();

    for _ in 0..20 {
        let dirs: BTreeMap<_, _> = feats.iter().map(|(&l, f)| (l, random_map(f.height(), f.width(), f.channels(), &mut r))).collect();
        let eval = |t: f64| {
            let moved: BTreeMap<_, _> = feats
                .iter()
                .map(|(&l, f)| {
                    let mut g = f.clone();
                    g.add_scaled(&dirs[&l], t);
                    (l, g)
                })
                .collect();
            aggregate(&moved, &subset, Some(&sem), SemanticAttach::PerLayer).unwrap().map.dot(&cot)
        };
        let num = (eval(1e-4) - eval(-1e-4)) / 2e-4;
        let ana: f64 = grads.iter().map(|(l, g)| g.dot(&dirs[l])).sum();
        assert!(rel_err(num, ana) <= 1e-4, "{num} vs {ana}");
    }
}

#[test]
fn once_mode_carries_one_semantic_block() {
    let feats = vgg_shaped(64, 48);
    let sem = five_region_sem(64, 48);
    let fused = aggregate(&feats, &LayerId::ALL, Some(&sem), SemanticAttach::Once).unwrap();
    assert_eq!(fused.map.channels(), 64 + 128 + 256 + 512 + 5);
    assert_eq!(
        scheme_catalog()["g"].fused_shapes(64, 48, 5, SemanticAttach::Once),
        vec![(8, 6, 965)]
    );
}
