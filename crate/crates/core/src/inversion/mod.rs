//! Test functions on Γ₊ and the extraction of line integrals of σ and of
//! single-scattering functionals from albedo data.

mod fbp;

pub use fbp::{fbp_invert, FbpImage, ImageHeader, Sinogram};

use crate::error::{Error, Result};
use crate::forward::attenuation_broken;
use crate::geometry::{exit_time, perturbed_ray, random_boundary_ray, sphere_quadrature, BoundaryRay, Domain, Side};
use crate::measures::{ground_distance, BoundaryMeasure};
use crate::optics::{Absorption, OpticalMedium};
use crate::quadrature::GaussLegendre;
use crate::rng;
use crate::vec3::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// 1 on [0, 1], 2 − t on [1, 2], 0 beyond.
pub fn chi1(t: f64) -> f64 {
    (2.0 - t).clamp(0.0, 1.0)
}

/// t clamped to [−1, 1].
pub fn chi2(t: f64) -> f64 {
    t.clamp(-1.0, 1.0)
}

/// Cone bump centred on the ballistic exit ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpSupport {
    pub exit: BoundaryRay,
    pub eta: f64,
}

/// Soft sign of the single-scattering discrepancy of two known media.
#[derive(Debug, Clone)]
pub struct SignSupport {
    pub media: Box<(OpticalMedium, OpticalMedium)>,
    pub entry: BoundaryRay,
    pub eta: f64,
    /// Sampled Lipschitz constant of G, safety factor included.
    pub lip_g: f64,
    /// Largest |G| seen near the entry line.
    pub g_max: f64,
}

/// Rays close to the entry line, away from its direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSupport {
    pub entry: BoundaryRay,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub enum TestShape {
    Bump(BumpSupport),
    Sign(SignSupport),
    Tube(TubeSupport),
}

/// A detector function on Γ₊ bounded by 1 with Lipschitz constant ≤ κ.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub shape: TestShape,
    pub kappa: f64,
    /// Sup of the function (attained for bumps, an upper bound for signs).
    pub amplitude: f64,
}

/// Outcome of sampling a test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestCertificate {
    pub sup: f64,
    pub lipschitz: f64,
    pub pairs: usize,
}

impl TestFunction {
    pub fn eval(&self, ray: &BoundaryRay) -> f64 {
        match &self.shape {
            TestShape::Bump(b) => {
                let d = ray.x.angle_to(b.exit.x).max(ray.v.angle_to(b.exit.v));
                self.amplitude * (1.0 - 2.0 * d / b.eta).max(0.0)
            }
            TestShape::Sign(s) => {
                let e = s.eta;
                let cone = 1.0 - chi1((ray.v - s.entry.v).norm() / e);
                if cone == 0.0 {
                    return 0.0;
                }
                let near = chi1(line_distance_boxed(ray, &s.entry) / (2.0 * e));
                if near == 0.0 {
                    return 0.0;
                }
                let g = discrepancy_g(&s.media.0, &s.media.1, &s.entry, ray);
                self.amplitude * chi2(g / (e * (s.lip_g + 1.0))) * near * cone
            }
            TestShape::Tube(t) => {
                let cone = 1.0 - chi1((ray.v - t.entry.v).norm() / t.eta);
                if cone == 0.0 {
                    return 0.0;
                }
                self.amplitude * chi1(line_distance_boxed(ray, &t.entry) / (2.0 * t.eta)) * cone
            }
        }
    }

    /// Samples |φ| and the Lipschitz quotient over random pairs; half of
    /// them are drawn near the support at log-uniform separations.
    pub fn certify(&self, pairs: usize, seed: u64) -> Result<TestCertificate> {
        let mut r = rng::stream(seed, 0, 1);
        let domain = match &self.shape {
            TestShape::Bump(b) => domain_of(&b.exit),
            TestShape::Sign(s) => domain_of(&s.entry),
            TestShape::Tube(t) => domain_of(&t.entry),
        };
        let mut sup: f64 = 0.0;
        let mut lip: f64 = 0.0;
        for i in 0..pairs {
            let p = if i % 2 == 0 { random_boundary_ray(&mut r, domain, Side::Outgoing) } else { self.support_sample(&mut r) };
            let scale = 10f64.powf(-5.0 * r.random::<f64>());
            let q = perturbed_ray(&mut r, &p, scale);
            let (fp, fq) = (self.eval(&p), self.eval(&q));
            sup = sup.max(fp.abs()).max(fq.abs());
            let d = ground_distance(&p, &q);
            if d > 1e-14 {
                lip = lip.max((fp - fq).abs() / d);
            }
        }
        if sup > 1.0 + 1e-12 || lip > self.kappa * (1.0 + 1e-6) {
            return Err(Error::Inadmissible(format!("test function has sup {sup:.6} and Lipschitz quotient {lip:.6} (κ = {})", self.kappa)));
        }
        Ok(TestCertificate { sup, lipschitz: lip, pairs })
    }

    fn support_sample(&self, r: &mut impl Rng) -> BoundaryRay {
        match &self.shape {
            TestShape::Bump(b) => perturbed_ray(r, &b.exit, b.eta),
            TestShape::Sign(s) => line_sample(r, &s.entry, s.eta),
            TestShape::Tube(t) => line_sample(r, &t.entry, t.eta),
        }
    }
}

/// A ray scattered off the entry line, then moved by up to 8η.
fn line_sample(r: &mut impl Rng, entry: &BoundaryRay, eta: f64) -> BoundaryRay {
    let n = domain_of(entry).dimension();
    let z = entry.x + entry.v * (exit_time(entry.x, entry.v) * r.random::<f64>());
    let v = crate::geometry::random_unit(r, n);
    let exit = crate::forward::exit_ray(z, v);
    let scale = 8.0 * eta * r.random::<f64>();
    perturbed_ray(r, &exit, scale)
}

impl TestFunction {
    /// Estimated sup of |φ|; below `amplitude` when a sign test never leaves
    /// the linear part of χ₂.
    pub fn sup_norm(&self) -> f64 {
        match &self.shape {
            TestShape::Sign(s) => self.amplitude * (s.g_max / (s.eta * (s.lip_g + 1.0))).min(1.0),
            _ => self.amplitude,
        }
    }

    /// Entry ray the function was built for.
    pub fn entry(&self) -> BoundaryRay {
        match &self.shape {
            TestShape::Bump(b) => b.exit.transported(),
            TestShape::Sign(s) => s.entry,
            TestShape::Tube(t) => t.entry,
        }
    }
}

fn domain_of(ray: &BoundaryRay) -> Domain {
    if ray.x.z == 0.0 && ray.v.z == 0.0 {
        Domain::plane()
    } else {
        Domain::space()
    }
}

/// φ(x, v) = min(1, κη/2) · max(0, 1 − (2/η) max(d(x, y₀), ∠(v, v₀))).
pub fn ballistic_bump(entry: &BoundaryRay, eta: f64, kappa: f64) -> Result<TestFunction> {
    if !(eta > 0.0 && eta < 2.0) || !(kappa >= 1.0) {
        return Err(Error::InvalidInput(format!("bump needs 0 < η < 2 and κ ≥ 1, got η = {eta}, κ = {kappa}")));
    }
    if entry.side != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    Ok(TestFunction {
        shape: TestShape::Bump(BumpSupport { exit: entry.transported(), eta }),
        kappa,
        amplitude: (0.5 * kappa * eta).min(1.0),
    })
}

/// φ = A χ₁(d̃ / 2η)(1 − χ₁)(|v − v₀| / η), A = min(1, κη/2).
pub fn line_tube(entry: &BoundaryRay, eta: f64, kappa: f64) -> Result<TestFunction> {
    if !(eta > 0.0 && eta < 2.0) || !(kappa >= 1.0) {
        return Err(Error::InvalidInput(format!("tube needs 0 < η < 2 and κ ≥ 1, got η = {eta}, κ = {kappa}")));
    }
    if entry.side != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    Ok(TestFunction {
        shape: TestShape::Tube(TubeSupport { entry: *entry, eta }),
        kappa,
        amplitude: (0.5 * kappa * eta).min(1.0),
    })
}

/// min over (t, s) ∈ [−2, 2]² of |x − x₀ − t v + s v₀|.
fn line_distance_boxed(ray: &BoundaryRay, entry: &BoundaryRay) -> f64 {
    let d = ray.x - entry.x;
    let (v, v0) = (ray.v, entry.v);
    let c = v.dot(v0);
    let f = |t: f64, s: f64| (d - v * t + v0 * s).norm();
    let clamp = |x: f64| x.clamp(-2.0, 2.0);
    let mut best = f64::INFINITY;
    let denom = 1.0 - c * c;
    if denom > 1e-14 {
        // stationary point of |d − t v + s v₀|²
        let t = (d.dot(v) - c * d.dot(v0)) / denom;
        let s = (c * d.dot(v) - d.dot(v0)) / denom;
        if t.abs() <= 2.0 && s.abs() <= 2.0 {
            return f(t, s);
        }
    }
    // on each edge the other variable is a clamped 1-D minimiser
    for t in [-2.0, 2.0] {
        best = best.min(f(t, clamp(-(d - v * t).dot(v0))));
    }
    for s in [-2.0, 2.0] {
        best = best.min(f(clamp((d + v0 * s).dot(v)), s));
    }
    best
}

/// G(x, v) = (1 − (v₀·v)²)(Ẽ₁k₁ − Ẽ₂k₂)(z, v₀, v), z the point of the entry
/// line seen backwards from (x, v); zero near v = ±v₀.
pub fn discrepancy_g(m1: &OpticalMedium, m2: &OpticalMedium, entry: &BoundaryRay, ray: &BoundaryRay) -> f64 {
    let (v0, v) = (entry.v, ray.v);
    let c = v0.dot(v);
    let s = 1.0 - c * c;
    if s < 1e-8 {
        return 0.0;
    }
    let z = ray.x - v * ((ray.x - entry.x).dot(v - v0 * c) / s);
    if z.norm() >= 1.0 {
        return 0.0;
    }
    s * broken_discrepancy(m1, m2, z, v0, v)
}

/// (Ẽ₁k₁ − Ẽ₂k₂)(z, v₀, v).
pub fn broken_discrepancy(m1: &OpticalMedium, m2: &OpticalMedium, z: Vec3, v0: Vec3, v: Vec3) -> f64 {
    let a = m1.k(z, v0, v);
    let b = m2.k(z, v0, v);
    let ea = if a != 0.0 { attenuation_broken(m1, z, v0, v) * a } else { 0.0 };
    let eb = if b != 0.0 { attenuation_broken(m2, z, v0, v) * b } else { 0.0 };
    ea - eb
}

/// Soft sign test function built from two media (space only).
///
/// φ = A χ₂(G / (η(Lip G + 1))) χ₁(d̃ / 2η) (1 − χ₁)(|v − v₀| / η) with
/// A = κη/3: each factor is at most 1/η-Lipschitz for the additive
/// ground distance, so the product is κ-Lipschitz.
pub fn sign_test(m1: &OpticalMedium, m2: &OpticalMedium, entry: &BoundaryRay, eta: f64, kappa: f64, seed: u64) -> Result<TestFunction> {
    if m1.dimension() != 3 || m2.dimension() != 3 {
        return Err(Error::InvalidDimension(m1.dimension()));
    }
    if !(eta > 0.0 && eta < 2.0f64.min(1.0 / kappa)) || !(kappa >= 1.0) {
        return Err(Error::InvalidInput(format!("sign test needs 0 < η < min(2, 1/κ), got η = {eta}, κ = {kappa}")));
    }
    if entry.side != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    let (lip, g_max) = sample_g(m1, m2, entry, eta, 10_000, seed);
    let lip_g = 1.2 * lip;
    Ok(TestFunction {
        shape: TestShape::Sign(SignSupport { media: Box::new((m1.clone(), m2.clone())), entry: *entry, eta, lip_g, g_max }),
        kappa,
        amplitude: kappa * eta / 3.0,
    })
}

/// Lipschitz quotient and sup of |G| over pairs of rays near the entry line.
fn sample_g(m1: &OpticalMedium, m2: &OpticalMedium, entry: &BoundaryRay, eta: f64, pairs: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed, 0, 2);
    let tau = exit_time(entry.x, entry.v);
    let mut lip: f64 = 0.0;
    let mut g_max: f64 = 0.0;
    for _ in 0..pairs {
        let z = entry.x + entry.v * (tau * r.random::<f64>());
        let v = crate::geometry::random_unit(&mut r, 3);
        let scale = 8.0 * eta * r.random::<f64>();
        let p = perturbed_ray(&mut r, &crate::forward::exit_ray(z, v), scale);
        let scale = 10f64.powf(-4.0 * r.random::<f64>());
        let q = perturbed_ray(&mut r, &p, scale);
        let d = ground_distance(&p, &q);
        let gp = discrepancy_g(m1, m2, entry, &p);
        g_max = g_max.max(gp.abs());
        if d > 1e-14 {
            lip = lip.max((gp - discrepancy_g(m1, m2, entry, &q)).abs() / d);
        }
    }
    (lip, g_max)
}

/// A measured line integral of σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XRaySample {
    pub entry: BoundaryRay,
    pub value: f64,
}

/// −ln of ⟨φ, data⟩ / (‖φ‖ · source mass) with φ the ballistic bump.
pub fn extract_xray(data: &BoundaryMeasure, entry: &BoundaryRay, eta: f64, kappa: f64, source_mass: f64) -> Result<XRaySample> {
    let phi = ballistic_bump(entry, eta, kappa)?;
    let pairing = data.integrate(|r| phi.eval(r));
    let estimate = pairing / (phi.amplitude * source_mass);
    if !(estimate > 0.0) {
        return Err(Error::NonPositiveEstimate(estimate));
    }
    Ok(XRaySample { entry: *entry, value: -estimate.ln() })
}

/// ⟨φ, data₁ − data₂⟩ / A for a sign test φ of amplitude A.
pub fn extract_single_scatter(data1: &BoundaryMeasure, data2: &BoundaryMeasure, phi: &TestFunction) -> Result<f64> {
    let TestShape::Sign(_) = &phi.shape else {
        return Err(Error::InvalidInput("single-scattering extraction needs a sign test".into()));
    };
    if data1.domain().dimension() != 3 {
        return Err(Error::InvalidDimension(data1.domain().dimension()));
    }
    let diff = data1.integrate(|r| phi.eval(r)) - data2.integrate(|r| phi.eval(r));
    Ok(diff / phi.amplitude)
}

/// ∫_V ∫₀^{τ₊(x₀,v₀)} |Ẽ₁k₁ − Ẽ₂k₂|(x₀ + s v₀, v₀, v) ds dv by tensor
/// quadrature over the scattering support.
pub fn single_scatter_discrepancy(m1: &OpticalMedium, m2: &OpticalMedium, entry: &BoundaryRay, chord_nodes: usize, angular: usize) -> f64 {
    let gl = GaussLegendre::new(chord_nodes);
    let dirs = sphere_quadrature(m1.domain(), angular);
    let tau = exit_time(entry.x, entry.v);
    let mut breaks = crate::forward::scattering_panels(m1, entry.x, entry.v, tau);
    breaks.extend(crate::forward::scattering_panels(m2, entry.x, entry.v, tau));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        for (s, ws) in gl.on(w[0], w[1]) {
            let z = entry.x + entry.v * s;
            total += ws * dirs.integrate(|v| broken_discrepancy(m1, m2, z, entry.v, *v).abs());
        }
    }
    total
}

/// k(x, v', v) from a measured Ẽk value and an estimate of σ.
pub fn recover_k_pointwise(sigma: &dyn Absorption, ek: f64, x: Vec3, vin: Vec3, vout: Vec3) -> Result<f64> {
    let e = attenuation_broken(sigma, x, vin, vout);
    if e < 1e-12 {
        return Err(Error::AttenuationUnderflow(e));
    }
    Ok(ek / e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::apply_ballistic;
    use crate::geometry::{entry_time, planar_incoming};
    use crate::optics::{AbsorptionModel, MediumSpec, ScatteringModel};

    fn medium(n: usize, sigma: AbsorptionModel, c: f64) -> OpticalMedium {
        let s = if c > 0.0 { ScatteringModel::Isotropic { density: c } } else { ScatteringModel::None };
        MediumSpec::new(n, sigma, s).build().unwrap()
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi1(0.0), 1.0);
        assert_eq!(chi1(2.0), 0.0);
        assert_eq!(chi1(1.5), 0.5);
        assert_eq!(chi2(0.0), 0.0);
        assert_eq!(chi2(5.0), 1.0);
        assert_eq!(chi2(-5.0), -1.0);
        let mut r = rng::stream(3, 0, 0);
        for _ in 0..1000 {
            let (a, b): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            if a != b {
                assert!((chi1(a.abs()) - chi1(b.abs())).abs() <= (a.abs() - b.abs()).abs() + 1e-15);
                assert!((chi2(a) - chi2(b)).abs() <= (a - b).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn bump_examples() {
        let entry = planar_incoming(0.3, 0.2);
        let phi = ballistic_bump(&entry, 0.5, 1.0).unwrap();
        assert_eq!(phi.amplitude, 0.25);
        assert_eq!(phi.eval(&entry.transported()), 0.25);
        assert_eq!(ballistic_bump(&entry, 0.5, 8.0).unwrap().amplitude, 1.0);
        let off = BoundaryRay { x: entry.transported().x.rotated_planar(0.25), ..entry.transported() };
        assert_eq!(phi.eval(&off), 0.0);
        let cert = phi.certify(10_000, 5).unwrap();
        assert!(cert.lipschitz <= 1.0 + 1e-6 && cert.sup <= 0.25);
        ballistic_bump(&entry, 0.1, 4.0).unwrap().certify(10_000, 6).unwrap();
    }

    #[test]
    fn boxed_line_distance_matches_brute_force() {
        let mut r = rng::stream(9, 0, 0);
        let entry = BoundaryRay::new(Vec3::E3, -Vec3::E3).unwrap();
        for _ in 0..200 {
            let ray = random_boundary_ray(&mut r, Domain::space(), Side::Outgoing);
            let exact = line_distance_boxed(&ray, &entry);
            let mut brute = f64::INFINITY;
            for i in 0..=200 {
                for j in 0..=200 {
                    let (t, s) = (-2.0 + 0.02 * i as f64, -2.0 + 0.02 * j as f64);
                    brute = brute.min((ray.x - entry.x - ray.v * t + entry.v * s).norm());
                }
            }
            assert!(exact <= brute + 1e-12 && brute - exact < 0.03, "{exact} vs {brute}");
        }
    }

    #[test]
    fn sign_test_examples() {
        let m1 = medium(3, AbsorptionModel::Constant { value: 0.5 }, 0.02);
        let m2 = medium(3, AbsorptionModel::Constant { value: 0.5 }, 0.0);
        let entry = BoundaryRay::new(Vec3::E3, -Vec3::E3).unwrap();
        let same = sign_test(&m1, &m1, &entry, 0.1, 4.0, 1).unwrap();
        let mut r = rng::stream(4, 0, 0);
        for _ in 0..200 {
            assert_eq!(same.eval(&same.support_sample(&mut r)), 0.0);
        }
        let phi = sign_test(&m1, &m2, &entry, 0.1, 4.0, 1).unwrap();
        assert_eq!(phi.eval(&entry.transported()), 0.0);
        let cert = phi.certify(10_000, 7).unwrap();
        assert!(cert.sup <= phi.amplitude + 1e-15 && cert.lipschitz <= 4.0 * (1.0 + 1e-6));
        // exit ray of a single-scattering path: the sign is positive
        let z = Vec3::new(0.0, 0.0, 0.2);
        let v = Vec3::from_spherical(1.2, 0.4);
        let exit = crate::forward::exit_ray(z, v);
        assert!(phi.eval(&exit) > 0.0);
        // far from every line through the chord
        let far = crate::forward::exit_ray(Vec3::new(0.7, 0.0, 0.0), Vec3::E2);
        assert_eq!(phi.eval(&far), 0.0);
        assert!(matches!(sign_test(&medium(2, AbsorptionModel::Constant { value: 0.5 }, 0.02), &m2, &entry, 0.1, 4.0, 1), Err(Error::InvalidDimension(2))));
    }

    #[test]
    fn tube_examples() {
        for (entry, n) in [(BoundaryRay::new(Vec3::E3, -Vec3::E3).unwrap(), 3), (planar_incoming(0.4, 0.3), 2)] {
            let phi = line_tube(&entry, 0.1, 4.0).unwrap();
            assert!((phi.amplitude - 0.2).abs() < 1e-15);
            assert_eq!(phi.eval(&entry.transported()), 0.0);
            let z = entry.x + entry.v * 0.7;
            let v = if n == 3 { Vec3::from_spherical(1.2, 0.4) } else { entry.v.rotated_planar(1.0) };
            assert_eq!(phi.eval(&crate::forward::exit_ray(z, v)), phi.amplitude);
            let cert = phi.certify(10_000, 8).unwrap();
            assert!(cert.lipschitz <= 4.0 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn xray_examples() {
        let d = Domain::plane();
        let entry = BoundaryRay::new(Vec3::E1, -Vec3::E1).unwrap();
        let src = BoundaryMeasure::point(d, entry, 1.0).unwrap();
        for (model, expect) in [
            (AbsorptionModel::Constant { value: 0.0 }, 0.0),
            (AbsorptionModel::Constant { value: 1.0 }, 2.0),
            (AbsorptionModel::RadialPolynomial { coefficients: vec![1.0, 0.0, -1.0] }, 4.0 / 3.0),
        ] {
            let m = medium(2, model, 0.0);
            let data = apply_ballistic(&m, &src).unwrap();
            let x = extract_xray(&data, &entry, 0.3, 2.0, 1.0).unwrap();
            assert!((x.value - expect).abs() < 1e-6, "{} vs {expect}", x.value);
            let scaled = extract_xray(&data.scaled(3.5), &entry, 0.3, 2.0, 3.5).unwrap();
            assert_eq!(scaled.value, x.value);
        }
        let empty = BoundaryMeasure::new(d, Side::Outgoing);
        assert!(matches!(extract_xray(&empty, &entry, 0.3, 2.0, 1.0), Err(Error::NonPositiveEstimate(_))));
    }

    #[test]
    fn discrepancy_functional_closed_form() {
        let c = 0.02;
        let m1 = medium(3, AbsorptionModel::Constant { value: 0.0 }, c);
        let m2 = medium(3, AbsorptionModel::Constant { value: 0.0 }, 0.0);
        let entry = BoundaryRay::new(Vec3::E3, -Vec3::E3).unwrap();
        // c|V| times the cutoff-weighted chord: 2(0.8 + 0.1/2)
        let expect = c * 4.0 * std::f64::consts::PI * 1.7;
        let got = single_scatter_discrepancy(&m1, &m2, &entry, 8, 8);
        assert!((got / expect - 1.0).abs() < 1e-9, "{got} vs {expect}");
        assert_eq!(single_scatter_discrepancy(&m1, &m1, &entry, 8, 8), 0.0);
    }

    #[test]
    fn k_recovery() {
        let x = Vec3::planar(0.2, -0.1);
        let (vin, vout) = (Vec3::from_angle(0.3), Vec3::from_angle(2.0));
        let zero = medium(2, AbsorptionModel::Constant { value: 0.0 }, 0.0);
        assert_eq!(recover_k_pointwise(&zero, 0.37, x, vin, vout).unwrap(), 0.37);
        let one = medium(2, AbsorptionModel::Constant { value: 1.0 }, 0.0);
        let k = recover_k_pointwise(&one, 0.37, x, vin, vout).unwrap();
        let expect = 0.37 * (entry_time(x, vin) + exit_time(x, vout)).exp();
        assert!((k / expect - 1.0).abs() < 1e-12);
        let m = MediumSpec::new(
            2,
            AbsorptionModel::GaussianBump { background: 0.3, amplitude: 1.0, center: vec![0.1, 0.2], width: 0.3 },
            ScatteringModel::HenyeyGreenstein { total: 0.2, asymmetry: 0.5 },
        )
        .build()
        .unwrap();
        let truth = m.k(x, vin, vout);
        let ek = attenuation_broken(&m, x, vin, vout) * truth;
        let k = recover_k_pointwise(&m, ek, x, vin, vout).unwrap();
        assert!((k - truth).abs() < 1e-6 * truth);
        let thick = medium(2, AbsorptionModel::Constant { value: 40.0 }, 0.0);
        assert!(matches!(recover_k_pointwise(&thick, 1.0, x, vin, vout), Err(Error::AttenuationUnderflow(_))));
    }
}
