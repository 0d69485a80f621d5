use inspex_core::phantom::{generate_case, PhantomSpec};
use inspex_core::registration::{
    register_affine, register_rigid, rotation_angles, transform_volume, AffineTransform, RegistrationConfig,
    TransformKind,
};
use inspex_core::volume::{apply_mask, clip_hu, Interp, MaskMode, Volume, IDENTITY3};

fn fixture() -> Volume {
    let mut spec = PhantomSpec::desk([48, 48, 32]);
    spec.seed = 4;
    let case = generate_case(&spec).unwrap();
    let m = inspex_core::lungseg::dilate(&case.lung_inspiratory, 3);
    clip_hu(&apply_mask(&case.pristine_inspiratory, &m, MaskMode::default()).unwrap(), -1024.0, 0.0).unwrap()
}

fn center(v: &Volume) -> [f64; 3] {
    v.shape().map(|n| (n - 1) as f64 / 2.0)
}

#[test]
fn self_registration_is_identity() {
    let v = fixture();
    let cfg = RegistrationConfig::default();
    let r = register_rigid(&v, &v, &cfg).unwrap();
    let s = r.transform.shift_about(center(&v));
    let g = rotation_angles(&r.transform.matrix);
    assert!(s.iter().all(|x| x.abs() < 0.5), "{s:?}");
    assert!(g.iter().all(|x| x.to_degrees().abs() < 0.5), "{g:?}");
    let a = register_affine(&v, &v, &r.transform, &cfg).unwrap();
    assert!(a.transform.shift_about(center(&v)).iter().all(|x| x.abs() < 0.5));
}

#[test]
fn recovers_a_translation() {
    let v = fixture();
    let truth = AffineTransform::rigid([0.0; 3], [-3.0, 2.0, -1.0], center(&v));
    // moving(y) = fixed(y - d): sampling fixed at y + (-d)
    let moving = transform_volume(&v, &truth, v.grid(), Interp::Linear).unwrap();
    let r = register_rigid(&v, &moving, &RegistrationConfig::default()).unwrap();
    let s = r.transform.shift_about(center(&v));
    let want = [3.0, -2.0, 1.0];
    for a in 0..3 {
        assert!((s[a] - want[a]).abs() < 0.5, "{s:?} warn {:?}", r.warning);
    }
    assert!(r.transform.is_proper_rotation(1e-6));
}

#[test]
fn recovers_a_rotation_about_z() {
    let v = fixture();
    let theta = 5f64.to_radians();
    let truth = AffineTransform::rigid([0.0, 0.0, -theta], [0.0; 3], center(&v));
    let moving = transform_volume(&v, &truth, v.grid(), Interp::Linear).unwrap();
    let r = register_rigid(&v, &moving, &RegistrationConfig::default()).unwrap();
    let g = rotation_angles(&r.transform.matrix);
    assert!((g[2].to_degrees() - 5.0).abs() < 0.5, "{:?}", g.map(f64::to_degrees));
}

#[test]
fn recovers_an_anisotropic_scale() {
    let v = fixture();
    let c = center(&v);
    let inv = [[1.0 / 1.1, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let truth = AffineTransform::about_center(inv, [0.0; 3], c, TransformKind::Affine);
    let moving = transform_volume(&v, &truth, v.grid(), Interp::Linear).unwrap();
    let cfg = RegistrationConfig::default();
    let r = register_rigid(&v, &moving, &cfg).unwrap();
    let a = register_affine(&v, &moving, &r.transform, &cfg).unwrap();
    assert!((a.transform.matrix[0][0] - 1.1).abs() < 0.02, "{:?}", a.transform.matrix);
}

#[test]
fn constant_moving_warns_and_keeps_the_initial_transform() {
    let v = fixture();
    let flat = Volume::filled(v.grid().clone(), -900.0).unwrap();
    let init = AffineTransform::identity();
    let a = register_affine(&v, &flat, &init, &RegistrationConfig::default()).unwrap();
    assert!(a.warning.is_some());
    assert_eq!(a.transform.matrix, IDENTITY3);
    assert_eq!(a.transform.translation, [0.0; 3]);
}

#[test]
fn constant_fixed_keeps_the_initial_transform() {
    let v = fixture();
    let flat = Volume::filled(v.grid().clone(), -1024.0).unwrap();
    let r = register_rigid(&flat, &v, &RegistrationConfig::default()).unwrap();
    assert!(r.warning.is_some());
    assert_eq!(r.transform.translation, [0.0; 3]);
}
