//! Attenuation factors, ballistic and single-scattering kernels, the
//! double-scattering kernel and the collision expansion of the albedo map.

mod expansion;
mod kernel_bound;

pub use expansion::{
    expand_albedo, expand_albedo_certified, CollisionExpansion, ExpansionSettings,
    MonteCarloBudget, SecondOrder,
};
pub use kernel_bound::{kernel_bound_e1, line_kernel_peak, LINE_KERNEL_CONSTANTS};

use crate::error::{Error, Result};
use crate::geometry::{entry_time, exit_time, BoundaryRay, PhasePoint, Side};
use crate::measures::BoundaryMeasure;
use crate::optics::{sphere_crossings, Absorption, OpticalMedium};
use crate::quadrature::{adaptive, adaptive_with_breaks};
use crate::vec3::Vec3;

const SEGMENT_TOL: f64 = 1e-12;

/// Optical depth along a segment with adaptive quadrature.
fn segment_depth(sigma: &dyn Absorption, from: Vec3, v: Vec3, len: f64) -> f64 {
    let closest = -from.dot(v);
    let mut breaks = vec![0.0];
    if closest > 0.0 && closest < len {
        breaks.push(closest);
    }
    breaks.push(len);
    adaptive_with_breaks(
        |s| sigma.sigma(from + v * s, v),
        &breaks,
        1e-13,
        1e-11,
        2000,
    )
    .value
}

/// E(x, y): attenuation of a particle travelling from `y` to `x`.
pub fn attenuation_e(sigma: &dyn Absorption, x: Vec3, y: Vec3) -> Result<f64> {
    let d = x - y;
    let len = d.norm();
    if len < SEGMENT_TOL {
        return Err(Error::DegenerateSegment);
    }
    let v = d / len;
    Ok((-segment_depth(sigma, y, v, len)).exp())
}

/// Ẽ(x, v, w): attenuation along the broken line that enters along `v`,
/// turns at `x` and leaves along `w`.
pub fn attenuation_broken(sigma: &dyn Absorption, x: Vec3, v: Vec3, w: Vec3) -> f64 {
    let back = entry_time(x, v);
    let fwd = exit_time(x, w);
    let d_in = if back > 0.0 {
        sigma.depth(x - v * back, v, back)
    } else {
        0.0
    };
    let d_out = if fwd > 0.0 {
        sigma.depth(x, w, fwd)
    } else {
        0.0
    };
    (-(d_in + d_out)).exp()
}

/// Transmission e^{−∫₀^len σ} with the medium's fast depth rule.
#[inline]
pub(crate) fn transmission(sigma: &dyn Absorption, from: Vec3, v: Vec3, len: f64) -> f64 {
    if len <= 0.0 {
        1.0
    } else {
        (-sigma.depth(from, v, len)).exp()
    }
}

/// Outgoing ray reached from `z` moving along `v`.
pub(crate) fn exit_ray(z: Vec3, v: Vec3) -> BoundaryRay {
    let x = (z + v * exit_time(z, v)).normalized();
    BoundaryRay {
        x,
        v,
        side: Side::Outgoing,
    }
}

/// Ballistic part of the albedo map: every atom moves to the far end of
/// its chord and is attenuated along it.
pub fn apply_ballistic(sigma: &dyn Absorption, g: &BoundaryMeasure) -> Result<BoundaryMeasure> {
    if g.side() != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    let mut out = BoundaryMeasure::new(g.domain(), Side::Outgoing);
    for a in g.atoms() {
        let exit = a.ray.transported();
        let e = attenuation_e(sigma, exit.x, a.ray.x)?;
        out.push_unchecked(exit, a.mass * e);
    }
    Ok(out)
}

/// Integrand of the single-scattering kernel for an incoming ray: the
/// particle enters along `entry`, scatters after distance `t` into `v` and
/// leaves the domain.
pub fn single_scatter_integrand(
    medium: &OpticalMedium,
    entry: &BoundaryRay,
    t: f64,
    v: Vec3,
) -> f64 {
    let z = entry.x + entry.v * t;
    let k = medium.k(z, entry.v, v);
    if k == 0.0 {
        return 0.0;
    }
    k * transmission(medium, entry.x, entry.v, t) * transmission(medium, z, v, exit_time(z, v))
}

/// The scattering point joining an entry ray to an exit ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleScatterPath {
    /// Distance travelled from the entry point.
    pub t: f64,
    /// Distance from the scattering point to the exit point.
    pub s: f64,
    pub point: Vec3,
    /// Value of the kernel integrand at the scattering point.
    pub density: f64,
}

/// Solves the delta constraint of the single-scattering kernel: the point
/// `z = x₀ + t v₀ = y − s w` where the two rays meet.
pub fn single_scatter_kernel(
    medium: &OpticalMedium,
    exit: &BoundaryRay,
    entry: &BoundaryRay,
) -> Result<SingleScatterPath> {
    if exit.side != Side::Outgoing || entry.side != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    let (x0, v0, y, w) = (entry.x, entry.v, exit.x, exit.v);
    let c = v0.dot(w);
    let denom = 1.0 - c * c;
    if denom < 1e-14 {
        return Err(Error::NoIntersection);
    }
    // closest points of the two lines
    let r = y - x0;
    let t = (r.dot(v0) - c * r.dot(w)) / denom;
    let s = (r.dot(w) - c * r.dot(v0)) / denom;
    let p = x0 + v0 * t;
    let q = y - w * s;
    if (p - q).norm() > 1e-9 {
        return Err(Error::NoIntersection);
    }
    let tau0 = exit_time(x0, v0);
    if t < -1e-12 || t > tau0 + 1e-12 || s < -1e-12 {
        return Err(Error::NoIntersection);
    }
    let t = t.clamp(0.0, tau0);
    let density = single_scatter_integrand(medium, entry, t, w);
    Ok(SingleScatterPath {
        t,
        s: s.max(0.0),
        point: p,
        density,
    })
}

/// Part `[a, b]` of the chord `x + t v`, `t ∈ [0, len]`, on which k can be
/// nonzero, with interior breaks at the cutoff transition.
pub(crate) fn scattering_panels(medium: &OpticalMedium, x: Vec3, v: Vec3, len: f64) -> Vec<f64> {
    let outer = medium.k_support_radius();
    let Some((a, b)) = sphere_crossings(x, v, outer) else {
        return Vec::new();
    };
    let (a, b) = (a.max(0.0), b.min(len));
    if b <= a {
        return Vec::new();
    }
    let mut breaks = vec![a];
    if let Some((c, d)) = sphere_crossings(x, v, outer - medium.k_support_margin()) {
        for s in [c, d] {
            if s > a && s < b {
                breaks.push(s);
            }
        }
    }
    let closest = -x.dot(v);
    if closest > a && closest < b {
        breaks.push(closest);
    }
    breaks.push(b);
    breaks.sort_by(f64::total_cmp);
    breaks
}

/// Double-scattering kernel β₂ between phase points `inp = (x', v')`
/// (first collision) and `out = (x, v)` (second collision, then free flight
/// along v):
///
/// ∫₀^{τ₋(x,v)} E(x, z, x') k(z, v₁, v) k(x', v', v₁) / |z − x'|^{n−1} dt,
/// with z = x − t v and v₁ the unit vector from x' to z.  The
/// weak singularity is resolved by a break at the closest approach.
pub fn beta2_kernel(medium: &OpticalMedium, out: &PhasePoint, inp: &PhasePoint) -> Result<f64> {
    let (x, v) = (out.x, out.v);
    let xp = inp.x;
    if (x - xp).norm() < SEGMENT_TOL {
        return Err(Error::DegenerateSegment);
    }
    let back = entry_time(x, v);
    Ok(beta2_along(medium, x, v, back, xp, inp.v, 1e-8))
}

/// β₂ with the free flight after the second collision attenuated up to
/// distance `t` back along the line, i.e. from z to x.
fn beta2_along(
    medium: &OpticalMedium,
    x: Vec3,
    v: Vec3,
    back: f64,
    xp: Vec3,
    vp: Vec3,
    rel_tol: f64,
) -> f64 {
    if back <= 0.0 || !medium.has_scattering() {
        return 0.0;
    }
    let panels = scattering_panels(medium, x, -v, back);
    if panels.is_empty() {
        return 0.0;
    }
    let mut breaks = panels;
    let closest = (x - xp).dot(v);
    if closest > breaks[0] && closest < *breaks.last().unwrap() {
        breaks.push(closest);
        breaks.sort_by(f64::total_cmp);
    }
    let power = medium.dimension() as i32 - 1;
    let f = |t: f64| {
        let z = x - v * t;
        let d = z - xp;
        let r = d.norm();
        if r == 0.0 {
            return 0.0;
        }
        let v1 = d / r;
        let k2 = medium.k(z, v1, v);
        if k2 == 0.0 {
            return 0.0;
        }
        let k1 = medium.k(xp, vp, v1);
        if k1 == 0.0 {
            return 0.0;
        }
        let att = transmission(medium, xp, v1, r) * transmission(medium, z, v, t);
        att * k1 * k2 / r.powi(power)
    };
    adaptive_with_breaks(f, &breaks, rel_tol, 1e-300, 400).value
}

/// Density with respect to dξ of the doubly scattered exit flux at `exit`
/// produced by a unit atom at `entry`:
///
/// ∫₀^{τ₀} E(x₀, z₁) β₂((y, w), (z₁, v₀)) dt₁,  z₁ = x₀ + t₁ v₀.
pub fn double_scatter_exit_density(
    medium: &OpticalMedium,
    entry: &BoundaryRay,
    exit: &BoundaryRay,
    rel_tol: f64,
) -> f64 {
    let (x0, v0) = (entry.x, entry.v);
    let tau0 = exit_time(x0, v0);
    let mut breaks = scattering_panels(medium, x0, v0, tau0);
    if breaks.is_empty() {
        return 0.0;
    }
    // where the exit line passes closest to the entry chord
    let (y, w) = (exit.x, exit.v);
    let c = v0.dot(w);
    let denom = 1.0 - c * c;
    if denom > 1e-14 {
        let r = y - x0;
        let t = (r.dot(v0) - c * r.dot(w)) / denom;
        if t > breaks[0] && t < *breaks.last().unwrap() {
            breaks.push(t);
            breaks.sort_by(f64::total_cmp);
        }
    }
    let back = entry_time(y, w);
    let f = |t1: f64| {
        let z1 = x0 + v0 * t1;
        transmission(medium, x0, v0, t1) * beta2_along(medium, y, w, back, z1, v0, rel_tol)
    };
    adaptive_with_breaks(f, &breaks, rel_tol, 1e-300, 200).value
}

/// Adaptive integral along a line; exposed for oracles in tests.
pub fn line_integral(f: impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    adaptive(f, a, b, 1e-12, 1e-14, 500).value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sphere_quadrature, Domain};
    use crate::optics::{AbsorptionModel, MediumSpec, ScatteringModel};
    use crate::quadrature::GaussLegendre;

    fn medium(n: usize, sigma: AbsorptionModel, density: f64) -> OpticalMedium {
        let s = if density > 0.0 {
            ScatteringModel::Isotropic { density }
        } else {
            ScatteringModel::None
        };
        MediumSpec::new(n, sigma, s).build().unwrap()
    }

    fn constant(v: f64) -> AbsorptionModel {
        AbsorptionModel::Constant { value: v }
    }

    fn parabolic() -> AbsorptionModel {
        AbsorptionModel::RadialPolynomial {
            coefficients: vec![1.0, 0.0, -1.0],
        }
    }

    #[test]
    fn attenuation_examples() {
        let m0 = medium(2, constant(0.0), 0.0);
        assert_eq!(attenuation_e(&m0, Vec3::ZERO, Vec3::E1).unwrap(), 1.0);
        let m1 = medium(2, constant(1.0), 0.0);
        let e = attenuation_e(&m1, Vec3::ZERO, Vec3::E1).unwrap();
        assert!((e - 0.3678794412).abs() < 1e-10);
        // 1-D oracle: antiderivative of 1 − t² over [−1, 1]
        let mp = medium(2, parabolic(), 0.0);
        let e = attenuation_e(&mp, -Vec3::E1, Vec3::E1).unwrap();
        let oracle = (-(2.0 - 2.0 / 3.0f64)).exp();
        assert!((e / oracle - 1.0).abs() < 1e-8);
        assert!(matches!(
            attenuation_e(&mp, Vec3::E1, Vec3::E1),
            Err(Error::DegenerateSegment)
        ));
    }

    #[test]
    fn attenuation_is_reversible_for_isotropic_sigma() {
        let m = MediumSpec::new(
            2,
            AbsorptionModel::GaussianBump {
                background: 0.2,
                amplitude: 1.5,
                center: vec![0.2, -0.1],
                width: 0.3,
            },
            ScatteringModel::None,
        )
        .build()
        .unwrap();
        let x = Vec3::planar(-0.7, 0.2);
        let y = Vec3::planar(0.5, -0.6);
        let a = attenuation_e(&m, x, y).unwrap();
        let b = attenuation_e(&m, y, x).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn broken_line_examples() {
        let m0 = medium(2, constant(0.0), 0.0);
        assert_eq!(attenuation_broken(&m0, Vec3::ZERO, Vec3::E1, Vec3::E2), 1.0);
        let m1 = medium(2, constant(1.0), 0.0);
        let e = attenuation_broken(&m1, Vec3::ZERO, Vec3::E1, Vec3::from_angle(2.0));
        assert!((e - (-2.0f64).exp()).abs() < 1e-12);
        let mp = medium(2, parabolic(), 0.0);
        let x = Vec3::planar(0.3, 0.1);
        let v = Vec3::from_angle(0.4);
        let a = attenuation_broken(&mp, x, v, v);
        let b = attenuation_e(&mp, x + v * exit_time(x, v), x - v * entry_time(x, v)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ballistic_examples() {
        let d = Domain::plane();
        let ray = BoundaryRay::new(Vec3::E1, -Vec3::E1).unwrap();
        let g = BoundaryMeasure::point(d, ray, 1.0).unwrap();
        let out = apply_ballistic(&medium(2, constant(0.0), 0.0), &g).unwrap();
        assert!(out.atoms()[0].ray.x.max_abs_diff(-Vec3::E1) < 1e-15);
        assert_eq!(out.atoms()[0].mass, 1.0);
        let out = apply_ballistic(&medium(2, constant(1.0), 0.0), &g).unwrap();
        assert!((out.atoms()[0].mass - (-2.0f64).exp()).abs() < 1e-12);
        let out = apply_ballistic(&medium(2, parabolic(), 0.0), &g).unwrap();
        assert!((out.atoms()[0].mass - (-4.0 / 3.0f64).exp()).abs() < 1e-10);
    }

    /// Dense tensor quadrature of c ∫₀² ∫_V χ e^{−t} e^{−τ₊(x₀+t v₀, v)} dv dt.
    fn single_scatter_oracle(m: &OpticalMedium, sigma: f64, c: f64) -> f64 {
        let gl = GaussLegendre::new(40);
        let rule = sphere_quadrature(m.domain(), 720);
        let x0 = Vec3::E1;
        let v0 = -Vec3::E1;
        let mut total = 0.0;
        for panel in [
            (0.0, 0.1),
            (0.1, 0.2),
            (0.2, 1.0),
            (1.0, 1.8),
            (1.8, 1.9),
            (1.9, 2.0),
        ] {
            for (t, wt) in gl.on(panel.0, panel.1) {
                let z = x0 + v0 * t;
                let chi = m.k(z, v0, v0) / c;
                let inner = rule.integrate(|v| (-sigma * exit_time(z, *v)).exp());
                total += wt * c * chi * (-sigma * t).exp() * inner;
            }
        }
        total
    }

    #[test]
    fn single_scatter_total_mass() {
        let c = 0.05;
        for sigma in [0.0, 1.0] {
            let m = medium(2, constant(sigma), c);
            let entry = BoundaryRay::new(Vec3::E1, -Vec3::E1).unwrap();
            let g = BoundaryMeasure::point(m.domain(), entry, 1.0).unwrap();
            let mut s = ExpansionSettings::for_dimension(2);
            s.truncation_order = 2;
            s.chord_nodes = 12;
            s.angular = 256;
            s.mc.samples = 100;
            let exp = expand_albedo(&m, &g, &s).unwrap();
            let oracle = single_scatter_oracle(&m, sigma, c);
            let mass = exp.orders[1].total_mass();
            assert!(
                (mass / oracle - 1.0).abs() < 1e-4,
                "σ={sigma}: {mass} vs {oracle}"
            );
        }
        // σ = 0: c|V| times the length of the chord inside the support (smooth cutoff included)
        let m = medium(2, constant(0.0), c);
        let cutoff_len = 2.0 * (0.8 + 0.1 * 0.5);
        let oracle = c * 2.0 * std::f64::consts::PI * cutoff_len;
        assert!((single_scatter_oracle(&m, 0.0, c) / oracle - 1.0).abs() < 1e-6);
    }

    #[test]
    fn connect_single_scatter() {
        let m = medium(2, constant(0.5), 0.1);
        let entry = BoundaryRay::new(Vec3::E1, -Vec3::E1).unwrap();
        let z = Vec3::planar(0.3, 0.0);
        let w = Vec3::from_angle(1.0);
        let exit = BoundaryRay::new(z + w * exit_time(z, w), w).unwrap();
        let p = single_scatter_kernel(&m, &exit, &entry).unwrap();
        assert!((p.t - 0.7).abs() < 1e-12);
        assert!((p.density - single_scatter_integrand(&m, &entry, 0.7, w)).abs() < 1e-15);
        let zero = medium(2, constant(0.5), 0.0);
        assert_eq!(
            single_scatter_kernel(&zero, &exit, &entry).unwrap().density,
            0.0
        );
        let parallel = BoundaryRay::new(Vec3::planar(-0.6, 0.8), -Vec3::E1).unwrap();
        assert!(matches!(
            single_scatter_kernel(&m, &parallel, &entry),
            Err(Error::NoIntersection)
        ));
    }

    #[test]
    fn beta2_is_bilinear_in_k() {
        let m = medium(2, constant(0.3), 0.05);
        let m2 = m.with_scaled_scattering(2.0).unwrap();
        let out = PhasePoint::new(Vec3::planar(0.2, 0.3), Vec3::from_angle(0.5)).unwrap();
        let inp = PhasePoint::new(Vec3::planar(-0.3, -0.1), Vec3::from_angle(2.0)).unwrap();
        let a = beta2_kernel(&m, &out, &inp).unwrap();
        let b = beta2_kernel(&m2, &out, &inp).unwrap();
        assert!(a > 0.0);
        assert!((b / a - 4.0).abs() < 1e-9);
        let none = medium(2, constant(0.3), 0.0);
        assert_eq!(beta2_kernel(&none, &out, &inp).unwrap(), 0.0);
    }
}
