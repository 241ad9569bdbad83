use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tint_core::colorlab::{delta_e76, srgb_to_lab, RgbColor};
use tint_core::inference::*;
use tint_core::networks::{init_params, ArchSpec};
use tint_core::synthdata::{render_crop, sample_spec, SamplerConfig};
use tint_core::weakcolor::RegionKind;
use tint_core::{Error, ImageTensor, LabColor, ValueRange};

const CATALOG: &str = "# id\tname\tL\ta\tb
r01\tRuby\t42.0\t60.0\t32.0
p02\tPeony\t62.5\t35.0\t-2.0
n03\tNude\t68.0\t14.0\t18.0
b04\tBerry\t33.0\t38.0\t-8.0
";

#[test]
fn catalogs_parse_and_validate() {
    let cat = ShadeCatalog::parse(CATALOG).unwrap();
    assert_eq!(cat.entries.len(), 4);
    assert_eq!(cat.entries[1].name, "Peony");
    assert_eq!(ShadeCatalog::parse(&cat.to_text()).unwrap(), cat);
    let dup = "a\tx\t50\t0\t0\na\ty\t40\t0\t0\n";
    assert!(matches!(ShadeCatalog::parse(dup), Err(Error::Config(_))));
    let out_of_gamut = "a\tx\t50\t120\t-120\n";
    assert!(matches!(ShadeCatalog::parse(out_of_gamut), Err(Error::Config(_))));
    assert!(matches!(ShadeCatalog::parse("a\tx\t50\t0\n"), Err(Error::Config(_))));
}

#[test]
fn recommendations() {
    let cat = ShadeCatalog::parse(CATALOG).unwrap();
    let first = recommend_shade(LabColor::new(68.0, 14.0, 18.0), &cat, 2).unwrap();
    assert_eq!(first.len(), 2);
    assert_eq!(first[0].shade.id, "n03");
    assert_eq!(first[0].delta_e, 0.0);
    assert_eq!(recommend_shade(LabColor::new(50.0, 0.0, 0.0), &cat, 99).unwrap().len(), 4);
    let empty = ShadeCatalog::new(vec![]).unwrap();
    assert!(matches!(recommend_shade(LabColor::new(50.0, 0.0, 0.0), &empty, 1), Err(Error::Config(_))));
    // equal distances fall back to id order
    let twins = ShadeCatalog::parse("z\tZ\t50\t10\t0\na\tA\t50\t-10\t0\n").unwrap();
    let r = recommend_shade(LabColor::new(50.0, 0.0, 0.0), &twins, 2).unwrap();
    assert_eq!((r[0].shade.id.as_str(), r[1].shade.id.as_str()), ("a", "z"));
}

proptest! {
    #[test]
    fn ranking_matches_a_brute_force_sort(seed in 0u64..10_000, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<Shade> = (0..10)
            .map(|i| Shade {
                id: format!("s{i:02}"),
                name: format!("shade {i}"),
                color: srgb_to_lab(RgbColor::new(rng.random(), rng.random(), rng.random()).unwrap()),
            })
            .collect();
        let cat = ShadeCatalog::new(entries.clone()).unwrap();
        let q = LabColor::new(rng.random_range(0.0..100.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
        let got: Vec<String> = recommend_shade(q, &cat, k).unwrap().into_iter().map(|r| r.shade.id).collect();
        let mut brute: Vec<(f64, String)> = entries.iter().map(|e| (delta_e76(q, e.color), e.id.clone())).collect();
        brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<String> = brute.into_iter().take(k).map(|p| p.1).collect();
        prop_assert_eq!(got, want);
    }
}

fn small_model(input_size: usize) -> GanModel {
    let arch = ArchSpec {
        base_width: 4,
        stages: 1,
        res_blocks: 1,
        critic_depth: 2,
        ..ArchSpec::default()
    };
    let mut p = init_params::<f32>(&arch, 8).unwrap();
    p.input_size = Some(input_size);
    GanModel::new(p).unwrap()
}

fn crop() -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    render_crop(&sample_spec(&mut rng, &SamplerConfig::default())).unwrap().image
}

#[test]
fn outputs_keep_input_dimensions() {
    let model = small_model(32);
    let img = crop();
    let out = model.synthesize(&img, LabColor::new(50.0, 30.0, 10.0)).unwrap();
    assert_eq!(out.dims(), img.dims());
    assert_eq!(out.range(), ValueRange::Unit);

    let wide = ImageTensor::new(80, 70, ValueRange::Unit, vec![0.4; 80 * 70 * 3]).unwrap();
    let out = model.synthesize(&wide, LabColor::new(50.0, 30.0, 10.0)).unwrap();
    assert_eq!(out.dims(), (80, 70));
    // pixels outside the centered square are untouched
    assert_eq!(out.pixel(0, 0), [0.4; 3]);
    assert_eq!(out.pixel(79, 69), [0.4; 3]);
}

#[test]
fn estimates_are_repeatable_and_transfer_reuses_them() {
    let model = small_model(64);
    let img = crop();
    let a = model.estimate(&img).unwrap();
    assert_eq!(a, model.estimate(&img).unwrap());
    let reference = crop().quantized();
    let (out, est) = model.transfer(&img, &reference).unwrap();
    assert_eq!(est, model.estimate(&reference).unwrap());
    assert_eq!(out, model.synthesize(&img, est).unwrap());
}

#[test]
fn batched_and_single_synthesis_agree() {
    let model = small_model(64);
    let img = crop();
    let targets = [LabColor::new(40.0, 50.0, 20.0), LabColor::new(70.0, -10.0, 5.0)];
    let many = model.synthesize_many(&img, &targets).unwrap();
    for (t, m) in targets.iter().zip(&many) {
        let one = model.synthesize(&img, *t).unwrap();
        assert!(one.mean_abs_diff(m).unwrap() < 1e-6);
    }
}

#[test]
fn targets_outside_the_lab_box_are_input_errors() {
    let model = small_model(64);
    for bad in [LabColor::new(120.0, 0.0, 0.0), LabColor::new(50.0, 200.0, 0.0), LabColor::new(f64::NAN, 0.0, 0.0)] {
        assert!(matches!(model.synthesize(&crop(), bad), Err(Error::Input(_))));
    }
}

#[test]
fn sessions_route_by_region() {
    let session = InferenceSession::new()
        .with_model(RegionKind::Lips, Box::new(IdentityModel))
        .unwrap();
    assert_eq!(session.regions(), vec![RegionKind::Lips]);
    let img = crop();
    assert_eq!(session.synthesize(RegionKind::Lips, &img, LabColor::new(50.0, 0.0, 0.0)).unwrap(), img);
    assert!(matches!(session.estimate(RegionKind::Eyeshadow, &img), Err(Error::Input(_))));
}
