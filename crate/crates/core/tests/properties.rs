use itrans::experiments::fit_exponent;
use itrans::geometry::{exit_time, random_boundary_ray, tau_plus, BoundaryRay, Domain, PhasePoint, Side};
use itrans::inversion::{chi1, chi2, Sinogram};
use itrans::measures::{blur, misalign, w1kappa, Atom, BoundaryMeasure, KappaMetric, KernelShape};
use itrans::{rng, Vec3};
use proptest::prelude::*;

fn domain(space: bool) -> Domain {
    if space {
        Domain::space()
    } else {
        Domain::plane()
    }
}

fn measure(seed: u64, space: bool, atoms: usize) -> BoundaryMeasure {
    use rand::Rng;
    let d = domain(space);
    let mut r = rng::stream(seed, 0, 0);
    let atoms = (0..atoms)
        .map(|_| Atom { ray: random_boundary_ray(&mut r, d, Side::Outgoing), mass: r.random_range(0.05..1.0) })
        .collect();
    BoundaryMeasure::from_atoms(d, Side::Outgoing, atoms).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1kappa_is_a_bounded_metric(seed in 0u64..10_000, space: bool, na in 1usize..5, nb in 1usize..5, nc in 1usize..5, kappa in 1.0f64..10.0) {
        let metric = KappaMetric::new(kappa).unwrap();
        let a = measure(seed, space, na);
        let b = measure(seed + 20_000, space, nb);
        let c = measure(seed + 40_000, space, nc);
        let ab = w1kappa(&a, &b, &metric).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - w1kappa(&b, &a, &metric).unwrap()).abs() <= 1e-9);
        prop_assert!(ab <= a.total_mass().max(b.total_mass()) * 2.0 + 1e-9);
        let ac = w1kappa(&a, &c, &metric).unwrap();
        let bc = w1kappa(&b, &c, &metric).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn cutoffs_stay_in_range(t in -10.0f64..10.0) {
        prop_assert!((0.0..=1.0).contains(&chi1(t)));
        prop_assert!((-1.0..=1.0).contains(&chi2(t)));
        if t <= 1.0 { prop_assert_eq!(chi1(t), 1.0); }
        if t >= 2.0 { prop_assert_eq!(chi1(t), 0.0); }
    }

    #[test]
    fn perturbations_preserve_mass(seed in 0u64..10_000, space: bool, n in 1usize..6, eta in 0.001f64..0.3, shift in 0.0f64..0.3) {
        let mu = measure(seed, space, n);
        let d = domain(space);
        let blurred = blur(&mu, eta, KernelShape::default_for(d)).unwrap();
        prop_assert!((blurred.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass());
        let moved = misalign(&mu, shift).unwrap();
        prop_assert!((moved.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass());
    }

    #[test]
    fn blur_of_one_atom_is_monotone(seed in 0u64..10_000, space: bool, eta in 0.005f64..0.15, kappa in 1.0f64..6.0) {
        let mu = measure(seed, space, 1);
        let metric = KappaMetric::new(kappa).unwrap();
        let shape = KernelShape::default_for(domain(space));
        let small = w1kappa(&mu, &blur(&mu, eta, shape).unwrap(), &metric).unwrap();
        let large = w1kappa(&mu, &blur(&mu, 2.0 * eta, shape).unwrap(), &metric).unwrap();
        prop_assert!(small <= large + 1e-12);
        prop_assert!(small <= kappa * eta * mu.total_mass() + 1e-12);
    }

    #[test]
    fn exit_time_matches_closed_forms(seed in 0u64..100_000, space: bool, radius in 0.0f64..0.999) {
        let d = domain(space);
        let mut r = rng::stream(seed, 0, 1);
        let b = random_boundary_ray(&mut r, d, Side::Incoming);
        prop_assert!((exit_time(b.x, b.v) + 2.0 * b.v.dot(b.x)).abs() <= 1e-12);
        let dir = random_boundary_ray(&mut r, d, Side::Outgoing);
        let x = dir.x * radius;
        let v = b.v;
        let t = tau_plus(&PhasePoint::new(x, v).unwrap()).unwrap();
        prop_assert!(t >= 0.0 && t <= 2.0 + 1e-12);
        prop_assert!(((x + v * t).norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fit_recovers_power_laws(a in 0.1f64..3.0, c in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| { let x = 1e-3 * 2f64.powi(i); (x, c * x.powf(a)) }).collect();
        let fit = fit_exponent(&pts, false).unwrap();
        prop_assert!((fit.slope - a).abs() <= 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-8);
    }

    #[test]
    fn jsonl_round_trip(seed in 0u64..10_000, space: bool, n in 1usize..8) {
        let mu = measure(seed, space, n);
        let mut buf = Vec::new();
        mu.write_jsonl(&mut buf).unwrap();
        let back = BoundaryMeasure::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back.atoms().len(), mu.atoms().len());
        for (p, q) in back.atoms().iter().zip(mu.atoms()) {
            prop_assert_eq!(p.mass, q.mass);
            prop_assert_eq!(p.ray.x, q.ray.x);
            prop_assert_eq!(p.ray.v, q.ray.v);
        }
    }

    #[test]
    fn sinogram_round_trip(views in 1usize..6, offsets in 1usize..6, scale in -5.0f64..5.0) {
        let values: Vec<f64> = (0..views * offsets).map(|i| scale * (i as f64).sin() / 3.0).collect();
        let s = Sinogram { views, offsets, values };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Sinogram::read_csv(buf.as_slice()).unwrap(), s);
    }
}

#[test]
fn tangential_rays_are_rejected() {
    assert!(BoundaryRay::new(Vec3::E1, Vec3::E2).is_err());
    let ray = BoundaryRay::new(Vec3::E1, Vec3::E1).unwrap();
    let a = BoundaryMeasure::point(Domain::plane(), ray, 0.7).unwrap();
    assert_eq!(w1kappa(&a, &a, &KappaMetric::new(3.0).unwrap()).unwrap(), 0.0);
}
