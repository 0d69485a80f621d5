use inspex_core::lungseg::{dilate, segment_lungs, QuantConfig};
use inspex_core::metrics::dice;
use inspex_core::phantom::{generate_case, PhantomCase, PhantomSpec};
use inspex_core::registration::{
    jacobian_determinant, register_affine, register_deformable_stages, register_rigid, warp_mask, AffineTransform,
    DisplacementField, RegistrationConfig,
};
use inspex_core::volume::{apply_mask, clip_hu, BinaryMask, MaskMode, Volume};

fn input(v: &Volume, lung: &BinaryMask) -> Volume {
    let masked = apply_mask(v, &dilate(lung, 3), MaskMode::Fill(-1024.0)).unwrap();
    clip_hu(&masked, -1024.0, 0.0).unwrap()
}

fn case(shape: [usize; 3], seed: u64, max_disp: f64) -> PhantomCase {
    let mut spec = PhantomSpec::desk(shape).with_max_displacement(max_disp);
    spec.seed = seed;
    generate_case(&spec).unwrap()
}

fn positive_fraction(field: &DisplacementField, mask: &BinaryMask) -> f64 {
    let jac = jacobian_determinant(field);
    let inside: Vec<f32> = mask.bits().iter().zip(jac.data()).filter(|(b, _)| **b).map(|(_, j)| *j).collect();
    inside.iter().filter(|j| **j > 0.0).count() as f64 / inside.len() as f64
}

#[test]
fn self_registration_stays_at_identity() {
    let c = case([48, 48, 32], 4, 3.0);
    let lung = segment_lungs(&c.inspiratory_soft, &QuantConfig::default()).unwrap().mask;
    let v = input(&c.inspiratory_soft, &lung);
    let cfg = RegistrationConfig::default();
    let r = register_rigid(&v, &v, &cfg).unwrap();
    let a = register_affine(&v, &v, &r.transform, &cfg).unwrap();
    let d = register_deformable_stages(&v, &v, &a.transform, &cfg, true, true).unwrap();
    for res in [d.half.unwrap(), d.full.unwrap()] {
        let mean = res.forward.mean_magnitude(Some(&lung));
        assert!(mean < 0.1, "{:?}: mean |u| {mean}", res.level);
        let warped = warp_mask(&lung, &res.forward);
        assert!(dice(&warped, &lung).unwrap().value >= 0.99);
    }
}

#[test]
fn phantom_pair_is_recovered_without_folding() {
    // the default CC window needs the lungs at full desk size
    let c = case([96, 96, 64], 5, 5.0);
    let (fixed, moving) = (input(&c.inspiratory, &c.lung_inspiratory), input(&c.expiratory, &c.lung_expiratory));
    let cfg = RegistrationConfig::default();
    let r = register_rigid(&fixed, &moving, &cfg).unwrap();
    let a = register_affine(&fixed, &moving, &r.transform, &cfg).unwrap();
    let d = register_deformable_stages(&fixed, &moving, &a.transform, &cfg, true, true).unwrap();
    let truth_lung = &c.lung_inspiratory;
    let start = DisplacementField::zeros(fixed.grid()).mean_endpoint_error(&c.truth_field, truth_lung).unwrap();
    let affine = a.transform.to_field(fixed.grid()).unwrap().mean_endpoint_error(&c.truth_field, truth_lung).unwrap();
    let full = d.full.unwrap();
    let epe = full.forward.mean_endpoint_error(&c.truth_field, truth_lung).unwrap();
    assert!(epe < 1.0 && epe < affine && affine < start, "identity {start} affine {affine} full {epe}");
    assert!(positive_fraction(&full.forward, truth_lung) >= 0.999);
    assert!(positive_fraction(&d.half.unwrap().forward, truth_lung) >= 0.999);
}

#[test]
fn constant_fixed_image_leaves_the_field_at_the_initial_transform() {
    let c = case([48, 48, 32], 6, 3.0);
    let moving = input(&c.expiratory, &c.lung_expiratory);
    let fixed = Volume::filled(moving.grid().clone(), -1024.0).unwrap();
    let d = register_deformable_stages(&fixed, &moving, &AffineTransform::identity(), &RegistrationConfig::default(), true, true)
        .unwrap();
    assert_eq!(d.full.unwrap().forward.max_magnitude(), 0.0);
}
