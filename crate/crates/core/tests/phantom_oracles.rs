use inspex_core::lungseg::{emphysema_percent, QuantConfig};
use inspex_core::metrics::dice;
use inspex_core::phantom::{generate_case, KernelSim, PhantomSpec};
use inspex_core::registration::{jacobian_determinant, warp_mask};

#[test]
fn blob_voxel_count_matches_the_sphere_volume() {
    for seed in 0..6u64 {
        let mut spec = PhantomSpec::desk([96, 96, 64]);
        spec.seed = seed;
        spec.emphysema.count = 1;
        spec.emphysema.radius_min = 4.0 + 0.5 * seed as f64;
        spec.emphysema.radius_max = spec.emphysema.radius_min;
        let case = generate_case(&spec).unwrap();
        let r = case.blobs[0].1;
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let got = case.emphysema_inspiratory.count() as f64;
        assert!((got - analytic).abs() <= 0.05 * analytic, "r {r}: {got} vs {analytic}");
    }
}

#[test]
fn hard_kernel_overestimates_on_borderline_parenchyma() {
    let cfg = QuantConfig::default();
    for seed in 0..20u64 {
        let mut spec = PhantomSpec::desk([48, 48, 32]);
        spec.seed = 100 + seed;
        spec.parenchyma_hu = -900.0 - 2.4 * seed as f32;
        spec.emphysema.count = 0;
        spec.hard.noise_hu = 20.0 + seed as f64;
        let case = generate_case(&spec).unwrap();
        let hard = emphysema_percent(&case.inspiratory, &case.lung_inspiratory, &cfg).unwrap();
        let soft = emphysema_percent(&case.inspiratory_soft, &case.lung_inspiratory, &cfg).unwrap();
        assert!(hard > soft, "seed {seed}: hard {hard} soft {soft}");
    }
}

#[test]
fn hard_kernel_overestimates_on_default_parenchyma() {
    let cfg = QuantConfig::default();
    for seed in 0..5u64 {
        let mut spec = PhantomSpec::desk([64, 64, 48]);
        spec.seed = seed;
        let case = generate_case(&spec).unwrap();
        let hard = emphysema_percent(&case.inspiratory, &case.lung_inspiratory, &cfg).unwrap();
        let soft = emphysema_percent(&case.inspiratory_soft, &case.lung_inspiratory, &cfg).unwrap();
        assert!(hard > soft, "seed {seed}: hard {hard} soft {soft}");
    }
}

#[test]
fn truth_field_maps_the_expiratory_lung_onto_the_inspiratory_lung() {
    for (seed, max_disp) in [(1u64, None), (2, Some(5.0)), (3, Some(5.0))] {
        let mut spec = PhantomSpec::desk([96, 96, 64]);
        if let Some(d) = max_disp {
            spec = spec.with_max_displacement(d);
        }
        spec.seed = seed;
        let case = generate_case(&spec).unwrap();
        let warped = warp_mask(&case.lung_expiratory, &case.truth_field);
        let d = dice(&warped, &case.lung_inspiratory).unwrap().value;
        assert!(d >= 0.95, "seed {seed}: {d}");
        let jac = jacobian_determinant(&case.truth_field);
        let lung = case.lung_inspiratory.bits();
        assert!(jac.data().iter().zip(lung).all(|(j, l)| !*l || *j > 0.0));
    }
}

#[test]
fn max_displacement_is_honoured() {
    let spec = PhantomSpec::desk([96, 96, 64]).with_max_displacement(5.0);
    let case = generate_case(&spec).unwrap();
    let m = case.truth_field.max_magnitude();
    assert!(m <= 5.0 + 1e-6 && m > 4.5, "{m}");
}

#[test]
fn kernel_parameters_are_validated() {
    assert!(KernelSim::soft(0.0).validate().is_err());
    assert!(KernelSim::hard(1.0, -0.1, 30.0, 0.8).validate().is_err());
    assert!(KernelSim::hard(1.0, 0.3, 30.0, 0.8).validate().is_ok());
}
