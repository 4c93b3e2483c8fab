use tscnet::arch::{ArchitectureSpec, Layer, LayerGraph, LayerOp, Parameter, VariantKind};
use tscnet::erf::*;
use tscnet::tensor::{ConvSpec, Shape};
use tscnet::tsc::{Direction, TscBlockConfig};

fn layer(name: &str, op: LayerOp) -> Layer {
    Layer { name: name.into(), op }
}

fn param(name: &str, shape: Shape, value: f64) -> Parameter {
    Parameter { name: name.into(), shape, data: vec![value; shape.numel()] }
}

/// `convs` stacked 3x3 convolutions (1 channel, positive weights).
fn conv_stack(convs: usize, dilation: usize) -> LayerGraph {
    let mut layers = vec![layer("input", LayerOp::Input)];
    let mut params = Vec::new();
    for i in 0..convs {
        params.push(param("w", Shape::new(1, 1, 3, 3), 0.3));
        params.push(param("b", Shape::new(1, 1, 1, 1), 0.0));
        layers.push(layer(
            &format!("conv{i}"),
            LayerOp::Conv { src: i, weight: 2 * i, bias: 2 * i + 1, spec: ConvSpec::same3x3(dilation) },
        ));
    }
    LayerGraph::from_layers(1, layers, params).unwrap()
}

fn support_box(mask: &[bool], w: usize) -> (usize, usize, usize, usize, usize) {
    let on: Vec<(usize, usize)> = mask.iter().enumerate().filter(|p| *p.1).map(|(i, _)| (i / w, i % w)).collect();
    let top = on.iter().map(|p| p.0).min().unwrap();
    let bottom = on.iter().map(|p| p.0).max().unwrap();
    let left = on.iter().map(|p| p.1).min().unwrap();
    let right = on.iter().map(|p| p.1).max().unwrap();
    (on.len(), top, left, bottom, right)
}

#[test]
fn single_conv_support_is_the_kernel() {
    let g = conv_stack(1, 1);
    let m = empirical_erf(&g, &Probe::new(9, 9), UnitTarget::center(9, 9, 0)).unwrap();
    assert_eq!(support_box(&m.support(1e-6).unwrap(), 9), (9, 3, 3, 5, 5));
}

#[test]
fn two_convs_support_is_five_by_five() {
    let g = conv_stack(2, 1);
    let m = empirical_erf(&g, &Probe::new(11, 11), UnitTarget::center(11, 11, 0)).unwrap();
    assert_eq!(support_box(&m.support(1e-6).unwrap(), 11), (25, 3, 3, 7, 7));
}

#[test]
fn identity_network_support_is_the_target() {
    let g = LayerGraph::from_layers(2, vec![layer("input", LayerOp::Input)], vec![]).unwrap();
    let m = empirical_erf(&g, &Probe::new(6, 7), UnitTarget::new(4, 1, 1)).unwrap();
    let s = erf_support_stats(&m, 1e-6).unwrap();
    assert_eq!(s.count, 1);
    assert!(m.at(4, 1) > 0.0);
}

#[test]
fn target_outside_map_rejected() {
    let g = conv_stack(1, 1);
    assert!(empirical_erf(&g, &Probe::new(4, 4), UnitTarget::new(4, 0, 0)).is_err());
    assert!(empirical_erf(&g, &Probe::new(4, 4), UnitTarget::new(0, 0, 1)).is_err());
    assert!(empirical_erf(&g, &Probe::new(4, 4).with_samples(0), UnitTarget::new(0, 0, 0)).is_err());
    assert!(analytic_rf(&g, 4, 4, 0, 9).is_err());
}

#[test]
fn analytic_single_conv() {
    let r = analytic_rf(&conv_stack(1, 1), 12, 12, 6, 6).unwrap();
    assert_eq!(r.components().len(), 1);
    assert_eq!(r.components()[0].rect, Rect { top: 5, left: 5, bottom: 7, right: 7 });
}

#[test]
fn analytic_dilated_span() {
    let r = analytic_rf(&conv_stack(1, 3), 12, 12, 6, 6).unwrap();
    let rect = r.components()[0].rect;
    assert_eq!((rect.height(), rect.width()), (7, 7));
    assert_eq!(r.area(), 49);
}

#[test]
fn analytic_clips_at_border() {
    let r = analytic_rf(&conv_stack(2, 1), 12, 12, 0, 11).unwrap();
    assert_eq!(r.components()[0].rect, Rect { top: 0, left: 9, bottom: 2, right: 11 });
}

#[test]
fn one_tsc_level_gives_four_shifted_components() {
    let cfg = TscBlockConfig::new(1, 1, 1).unwrap();
    let g = LayerGraph::from_layers(
        1,
        vec![layer("input", LayerOp::Input), layer("tsc", LayerOp::Tsc { decoder: 0, skip: 0, config: cfg })],
        vec![],
    )
    .unwrap();
    let r = analytic_rf(&g, 8, 8, 2, 3).unwrap();
    let mut got: Vec<((usize, usize), (usize, usize))> =
        r.components().iter().map(|c| ((c.rect.top, c.rect.left), c.offset)).collect();
    got.sort();
    assert_eq!(got, vec![((2, 3), (0, 0)), ((2, 7), (0, 4)), ((6, 3), (4, 0)), ((6, 7), (4, 4))]);
    let routes = r.routes();
    assert!(routes.contains([(1, Direction::DiagUpLeft)].as_slice()));

    // Channel group 0 is the untranslated sum, groups 1..4 each read one
    // shifted pixel; together they cover the region exactly.
    let mut union = vec![false; 64];
    for ch in 0..4 {
        let m = empirical_erf(&g, &Probe::new(8, 8), UnitTarget::new(2, 3, ch)).unwrap();
        let s = m.support(1e-6).unwrap();
        assert_eq!(s.iter().filter(|&&b| b).count(), 1);
        union.iter_mut().zip(&s).for_each(|(u, &b)| *u |= b);
    }
    assert_eq!(union, r.mask());
}

#[test]
fn every_tsc_level_adds_three_translated_routes() {
    // Translations act on encoder features, which no decoder feeds, so an
    // input path crosses at most one of them.
    for depth in 1..=3 {
        let spec = ArchitectureSpec::new(VariantKind::TscNet, depth, 2, 2);
        let g = LayerGraph::build(&spec, 0).unwrap();
        let r = analytic_rf(&g, 64, 64, 32, 32).unwrap();
        let routes = r.routes();
        assert_eq!(routes.len(), 1 + 3 * depth, "depth {depth}");
        assert!(routes.iter().all(|route| route.len() <= 1));
    }
}

#[test]
fn unet_region_is_one_rectangle_grown_by_depth() {
    let spec = ArchitectureSpec::new(VariantKind::UNet, 2, 2, 2);
    let g = LayerGraph::build(&spec, 0).unwrap();
    let r = analytic_rf(&g, 128, 128, 64, 64).unwrap();
    assert_eq!(r.offsets().len(), 1);
    let rect = r.components().iter().map(|c| c.rect).max_by_key(|r| r.area()).unwrap();
    assert_eq!(r.area(), rect.area());
    assert!(rect.height() > 20 && rect.height() < 128);
}

#[test]
fn empirical_support_lies_inside_analytic_region() {
    for v in VariantKind::ALL {
        let spec = ArchitectureSpec::new(v, 2, 4, 2).with_ote(true);
        let g = LayerGraph::build(&spec, 3).unwrap();
        let target = UnitTarget::new(5, 27, 1);
        let m = empirical_erf(&g, &Probe::new(32, 32).with_samples(4), target).unwrap();
        let r = analytic_rf(&g, 32, 32, 5, 27).unwrap();
        assert!(r.contains_mask(&m.support(1e-6).unwrap()), "{v}");
    }
}

#[test]
fn heatmap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("erf.png");
    let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
    let m = ErfMap::new(3, 4, v.clone(), UnitTarget::new(0, 0, 0)).unwrap();
    save_heatmap(&m, &path).unwrap();
    let (h, w, px) = load_heatmap(&path).unwrap();
    assert_eq!((h, w), (3, 4));
    let want: Vec<u16> = v.iter().map(|x| (x / 2.75 * 65535.0).round() as u16).collect();
    assert_eq!(px, want);
    assert_eq!(*px.iter().max().unwrap(), 65535);

    let mut d = vec![0.0; 12];
    d[5] = 1e-3;
    save_heatmap(&ErfMap::new(3, 4, d, UnitTarget::new(1, 1, 0)).unwrap(), &path).unwrap();
    let (_, _, px) = load_heatmap(&path).unwrap();
    assert_eq!(px.iter().filter(|&&p| p > 0).count(), 1);
    assert_eq!(px[5], 65535);

    let zero = ErfMap::new(3, 4, vec![0.0; 12], UnitTarget::new(0, 0, 0)).unwrap();
    assert!(save_heatmap(&zero, &path).is_err());
}

#[test]
fn csv_rows() {
    let rec = ErfRecord::new(VariantKind::TscNet, 3, 0.01, SupportStats { count: 12, fraction: 0.25 });
    let mut out = Vec::new();
    write_erf_csv(&[rec], &mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "variant,depth,tau,support_count,support_fraction\ntscnet,3,0.01,12,0.25\n"
    );
}
