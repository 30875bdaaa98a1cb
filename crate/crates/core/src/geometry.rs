//! The unit ball, its velocity sphere, escape times and quadrature rules
//! over the phase space and the boundary sets.

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::vec3::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Tolerance for "on the boundary".
pub const BOUNDARY_TOL: f64 = 1e-10;
const OUTSIDE_TOL: f64 = 1e-12;
const UNIT_TOL: f64 = 1e-12;

/// The unit ball in dimension two or three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Domain {
    dim: usize,
}

impl TryFrom<usize> for Domain {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Domain::new(n)
    }
}

impl From<Domain> for usize {
    fn from(d: Domain) -> usize {
        d.dim
    }
}

impl Domain {
    pub fn new(dim: usize) -> Result<Self> {
        match dim {
            2 | 3 => Ok(Domain { dim }),
            _ => Err(Error::InvalidDimension(dim)),
        }
    }

    pub fn plane() -> Self {
        Domain { dim: 2 }
    }

    pub fn space() -> Self {
        Domain { dim: 3 }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        1.0
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius()
    }

    /// Measure of the velocity sphere: 2π or 4π.
    pub fn sphere_measure(&self) -> f64 {
        if self.dim == 2 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }

    /// Total dξ-mass of Γ₊ (equal to that of Γ₋).
    pub fn boundary_flux_measure(&self) -> f64 {
        if self.dim == 2 {
            4.0 * PI
        } else {
            4.0 * PI * PI
        }
    }

    /// Rejects vectors with a nonzero third component in the plane.
    pub fn check_vector(&self, v: Vec3) -> Result<()> {
        if self.dim == 2 && v.z != 0.0 {
            return Err(Error::InvalidInput(format!(
                "planar problem received a vector with z = {}",
                v.z
            )));
        }
        Ok(())
    }
}

/// A point of the phase space X̄ × V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhasePoint {
    pub fn new(x: Vec3, v: Vec3) -> Result<Self> {
        check_position(x)?;
        check_direction(v)?;
        Ok(PhasePoint { x, v })
    }

    pub fn reversed(self) -> Self {
        PhasePoint {
            x: self.x,
            v: -self.v,
        }
    }
}

fn check_position(x: Vec3) -> Result<()> {
    let norm = x.norm();
    if norm > 1.0 + OUTSIDE_TOL || !norm.is_finite() {
        return Err(Error::OutsideDomain { norm });
    }
    Ok(())
}

fn check_direction(v: Vec3) -> Result<()> {
    let norm = v.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnitVelocity { norm });
    }
    Ok(())
}

/// Escape time along `+v` without input validation.
///
/// Points slightly outside the ball are treated as lying on its boundary.
#[inline]
pub fn exit_time(x: Vec3, v: Vec3) -> f64 {
    let xv = x.dot(v);
    let disc = (1.0 - x.norm_sq() + xv * xv).max(0.0);
    (-xv + disc.sqrt()).max(0.0)
}

/// Escape time along `-v` without input validation.
#[inline]
pub fn entry_time(x: Vec3, v: Vec3) -> f64 {
    exit_time(x, -v)
}

/// τ₊(x, v): time for a particle at `x` moving along `v` to leave the ball.
pub fn tau_plus(p: &PhasePoint) -> Result<f64> {
    check_position(p.x)?;
    check_direction(p.v)?;
    Ok(exit_time(p.x, p.v))
}

/// τ₋(x, v) = τ₊(x, −v).
pub fn tau_minus(p: &PhasePoint) -> Result<f64> {
    tau_plus(&p.reversed())
}

/// Full chord length τ₊ + τ₋ through `x` in direction `v`.
pub fn chord_length(x: Vec3, v: Vec3) -> f64 {
    exit_time(x, v) + entry_time(x, v)
}

/// Which boundary set a ray belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Incoming,
    Outgoing,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Incoming => -1.0,
            Side::Outgoing => 1.0,
        }
    }
}

/// A point of Γ₋ or Γ₊: boundary position and direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRay {
    pub x: Vec3,
    pub v: Vec3,
    pub side: Side,
}

impl BoundaryRay {
    /// Validates a ray; the side is inferred from the sign of `v·x`.
    pub fn new(x: Vec3, v: Vec3) -> Result<Self> {
        if (x.norm() - 1.0).abs() > BOUNDARY_TOL {
            return Err(Error::InvalidInput(format!(
                "boundary ray position has |x| = {}",
                x.norm()
            )));
        }
        check_direction(v)?;
        let c = v.dot(x);
        let side = if c < 0.0 {
            Side::Incoming
        } else if c > 0.0 {
            Side::Outgoing
        } else {
            return Err(Error::InvalidInput(
                "tangential ray belongs to neither side".into(),
            ));
        };
        Ok(BoundaryRay { x, v, side })
    }

    /// Like [`BoundaryRay::new`] but requires a given side.
    pub fn on_side(x: Vec3, v: Vec3, side: Side) -> Result<Self> {
        let r = BoundaryRay::new(x, v)?;
        if r.side != side {
            return Err(Error::SideViolation);
        }
        Ok(r)
    }

    /// Density factor |v·ν(x)| of dξ.
    pub fn xi_weight(&self) -> f64 {
        self.v.dot(self.x).abs()
    }

    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint {
            x: self.x,
            v: self.v,
        }
    }

    /// For an incoming ray: the outgoing ray at the far end of its chord.
    pub fn transported(&self) -> BoundaryRay {
        let t = exit_time(self.x, self.v);
        BoundaryRay {
            x: self.x + self.v * t,
            v: self.v,
            side: Side::Outgoing,
        }
    }
}

/// Geodesic distance between two points of the unit sphere or circle.
pub fn geodesic(x: Vec3, y: Vec3) -> f64 {
    x.angle_to(y)
}

/// Nodes and nonnegative weights approximating an integral.
#[derive(Debug, Clone)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<f64>,
}

impl<T> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(&T) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| w * f(n))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }
}

/// Product rule over Γ₋ or Γ₊ with weights including the |v·ν| factor.
///
/// In the plane: midpoint rule in the boundary angle (periodic) and
/// Gauss-Legendre in the angle between `v` and `±ν`.  In space: a
/// latitude-longitude product over the sphere and a Gauss rule in `|v·ν|`
/// times uniform azimuth over the hemisphere of directions.
pub fn boundary_quadrature(
    domain: Domain,
    side: Side,
    resolution: usize,
) -> Result<QuadratureRule<BoundaryRay>> {
    if resolution < 8 {
        return Err(Error::InvalidInput(
            "boundary quadrature needs resolution >= 8".into(),
        ));
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let s = side.sign();
    match domain.dimension() {
        2 => {
            let gl = GaussLegendre::new(resolution);
            let dtheta = 2.0 * PI / resolution as f64;
            for i in 0..resolution {
                let theta = (i as f64 + 0.5) * dtheta;
                let x = Vec3::from_angle(theta);
                for (psi, w) in gl.on(-PI / 2.0, PI / 2.0) {
                    let v = (x * s).rotated_planar(psi);
                    nodes.push(BoundaryRay { x, v, side });
                    weights.push(dtheta * w * psi.cos());
                }
            }
        }
        _ => {
            let gl = GaussLegendre::new(resolution);
            let n_az = 2 * resolution;
            let daz = 2.0 * PI / n_az as f64;
            for (mu, wmu) in gl.on(-1.0, 1.0) {
                let polar = mu.acos();
                for j in 0..n_az {
                    let az = (j as f64 + 0.5) * daz;
                    let x = Vec3::from_spherical(polar, az);
                    let normal = x * s;
                    let (e1, e2) = x.orthonormal_frame();
                    for (c, wc) in gl.on(0.0, 1.0) {
                        let sn = (1.0 - c * c).max(0.0).sqrt();
                        for l in 0..n_az {
                            let b = (l as f64 + 0.5) * daz;
                            let v = normal * c + (e1 * b.cos() + e2 * b.sin()) * sn;
                            nodes.push(BoundaryRay { x, v, side });
                            weights.push(wmu * daz * wc * c * daz);
                        }
                    }
                }
            }
        }
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Uniform-in-angle rule on the velocity circle, or Gauss-latitude by
/// uniform-longitude rule on the velocity sphere.
pub fn sphere_quadrature(domain: Domain, resolution: usize) -> QuadratureRule<Vec3> {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if domain.dimension() == 2 {
        let d = 2.0 * PI / resolution as f64;
        for i in 0..resolution {
            nodes.push(Vec3::from_angle((i as f64 + 0.5) * d));
            weights.push(d);
        }
    } else {
        let gl = GaussLegendre::new(resolution);
        let n_az = 2 * resolution;
        let daz = 2.0 * PI / n_az as f64;
        for (mu, w) in gl.on(-1.0, 1.0) {
            let polar = mu.acos();
            for j in 0..n_az {
                nodes.push(Vec3::from_spherical(polar, (j as f64 + 0.5) * daz));
                weights.push(w * daz);
            }
        }
    }
    QuadratureRule { nodes, weights }
}

/// Angular grading of a velocity rule around a preferred direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusSpec {
    /// Width of the innermost panel (radians).
    pub min_angle: f64,
    /// Ratio between consecutive panel widths.
    pub ratio: f64,
    /// Gauss nodes per panel.
    pub per_panel: usize,
    /// Azimuthal nodes around the axis (space only).
    pub azimuth: usize,
}

impl Default for FocusSpec {
    fn default() -> Self {
        FocusSpec {
            min_angle: 1e-3,
            ratio: 2.0,
            per_panel: 6,
            azimuth: 16,
        }
    }
}

/// Panel breakpoints in `[0, π]`, graded geometrically towards both ends.
pub fn graded_breaks(min_angle: f64, ratio: f64) -> Vec<f64> {
    let mut half = vec![0.0];
    let mut w = min_angle;
    let mut t = 0.0;
    while t + w < PI / 2.0 - 1e-12 {
        t += w;
        half.push(t);
        w *= ratio;
    }
    half.push(PI / 2.0);
    let mut breaks = half.clone();
    for &b in half.iter().rev().skip(1) {
        breaks.push(PI - b);
    }
    breaks
}

/// Velocity rule refined near `axis` and `-axis`.
///
/// Offsets from the axis use graded Gauss panels; in space the rule is
/// a product with a uniform azimuth around the axis.
pub fn focused_sphere_quadrature(
    domain: Domain,
    axis: Vec3,
    spec: FocusSpec,
) -> QuadratureRule<Vec3> {
    let breaks = graded_breaks(spec.min_angle, spec.ratio);
    let gl = GaussLegendre::new(spec.per_panel);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if domain.dimension() == 2 {
        for w in breaks.windows(2) {
            for (a, wa) in gl.on(w[0], w[1]) {
                nodes.push(axis.rotated_planar(a));
                weights.push(wa);
                nodes.push(axis.rotated_planar(-a));
                weights.push(wa);
            }
        }
    } else {
        let (e1, e2) = axis.orthonormal_frame();
        let daz = 2.0 * PI / spec.azimuth as f64;
        for w in breaks.windows(2) {
            for (a, wa) in gl.on(w[0], w[1]) {
                let (sa, ca) = a.sin_cos();
                for j in 0..spec.azimuth {
                    let b = (j as f64 + 0.5) * daz;
                    nodes.push(axis * ca + (e1 * b.cos() + e2 * b.sin()) * sa);
                    weights.push(wa * sa * daz);
                }
            }
        }
    }
    QuadratureRule { nodes, weights }
}

/// Polar product rule over the ball.
pub fn ball_quadrature(domain: Domain, radial: usize, angular: usize) -> QuadratureRule<Vec3> {
    let gl = GaussLegendre::new(radial);
    let dirs = sphere_quadrature(domain, angular);
    let power = domain.dimension() as i32 - 1;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (r, wr) in gl.on(0.0, 1.0) {
        for (d, wd) in dirs.iter() {
            nodes.push(*d * r);
            weights.push(wr * r.powi(power) * wd);
        }
    }
    QuadratureRule { nodes, weights }
}

/// Maps a point of `[0,1)^n` (n = 2 or 3) to the ball, uniformly in volume.
pub fn unit_cube_to_ball(domain: Domain, u: &[f64]) -> Vec3 {
    if domain.dimension() == 2 {
        u[0].sqrt() * Vec3::from_angle(2.0 * PI * u[1])
    } else {
        let polar = (1.0 - 2.0 * u[1]).clamp(-1.0, 1.0).acos();
        u[0].cbrt() * Vec3::from_spherical(polar, 2.0 * PI * u[2])
    }
}

/// Maps a point of `[0,1)^{n-1}` to the velocity sphere, uniformly.
pub fn unit_cube_to_sphere(domain: Domain, u: &[f64]) -> Vec3 {
    if domain.dimension() == 2 {
        Vec3::from_angle(2.0 * PI * u[0])
    } else {
        let polar = (1.0 - 2.0 * u[0]).clamp(-1.0, 1.0).acos();
        Vec3::from_spherical(polar, 2.0 * PI * u[1])
    }
}

/// Incoming ray entering at boundary angle `theta` (plane) with the
/// direction making angle `psi` with the inward normal.
pub fn planar_incoming(theta: f64, psi: f64) -> BoundaryRay {
    let x = Vec3::from_angle(theta);
    BoundaryRay {
        x,
        v: (-x).rotated_planar(psi),
        side: Side::Incoming,
    }
}

/// Uniform random unit vector in dimension n.
pub fn random_unit(r: &mut impl Rng, n: usize) -> Vec3 {
    if n == 2 {
        Vec3::from_angle(2.0 * PI * r.random::<f64>())
    } else {
        let polar = (1.0 - 2.0 * r.random::<f64>()).acos();
        Vec3::from_spherical(polar, 2.0 * PI * r.random::<f64>())
    }
}

/// Random ray on one side, uniform in position and direction.
pub fn random_boundary_ray(r: &mut impl Rng, domain: Domain, side: Side) -> BoundaryRay {
    let n = domain.dimension();
    let x = random_unit(r, n);
    loop {
        let v = random_unit(r, n);
        let c = v.dot(x) * side.sign();
        if c > 1e-6 {
            return BoundaryRay { x, v, side };
        }
    }
}

/// Random ray on the side of `p` whose position and direction are rotated
/// by at most `scale / 2` each.
pub fn perturbed_ray(r: &mut impl Rng, p: &BoundaryRay, scale: f64) -> BoundaryRay {
    let planar = p.x.z == 0.0 && p.v.z == 0.0;
    let turn = |u: Vec3, r: &mut dyn rand::RngCore| {
        let t = if planar {
            Vec3::planar(-u.y, u.x)
        } else {
            let (e1, e2) = u.orthonormal_frame();
            let a = 2.0 * PI * r.random::<f64>();
            e1 * a.cos() + e2 * a.sin()
        };
        u.rotated_about(u.cross(t).normalized(), scale * (r.random::<f64>() - 0.5))
    };
    loop {
        let x = turn(p.x, r);
        let v = turn(p.v, r);
        if v.dot(x) * p.side.sign() > 1e-9 {
            return BoundaryRay { x, v, side: p.side };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(x: Vec3, v: Vec3) -> PhasePoint {
        PhasePoint::new(x, v).unwrap()
    }

    #[test]
    fn escape_time_examples() {
        let t = tau_plus(&pp(Vec3::planar(1.0, 0.0), Vec3::planar(-1.0, 0.0))).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        let t = tau_plus(&pp(Vec3::ZERO, Vec3::from_angle(0.7))).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        let t = tau_plus(&pp(Vec3::planar(0.5, 0.0), Vec3::E1)).unwrap();
        assert!((t - 0.5).abs() < 1e-15);
        let t = tau_minus(&pp(Vec3::planar(1.0, 0.0), Vec3::E1)).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        let t = tau_minus(&pp(Vec3::planar(0.0, 0.5), Vec3::E2)).unwrap();
        assert!((t - 1.5).abs() < 1e-15);
    }

    #[test]
    fn entry_time_matches_bisection() {
        let x = Vec3::planar(0.0, 0.5);
        let v = Vec3::E2;
        let (mut lo, mut hi) = (0.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (x - v * mid).norm() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((entry_time(x, v) - lo).abs() < 1e-12);
    }

    #[test]
    fn rejects_outside_points() {
        let p = PhasePoint {
            x: Vec3::planar(1.1, 0.0),
            v: Vec3::E1,
        };
        assert!(matches!(tau_plus(&p), Err(Error::OutsideDomain { .. })));
        assert!(PhasePoint::new(Vec3::ZERO, Vec3::planar(2.0, 0.0)).is_err());
    }

    #[test]
    fn planar_boundary_rule_mass() {
        for side in [Side::Incoming, Side::Outgoing] {
            let q = boundary_quadrature(Domain::plane(), side, 16).unwrap();
            let total = q.total_weight();
            assert!(
                (total - 4.0 * PI).abs() / (4.0 * PI) < 5e-3,
                "total {total}"
            );
            for r in &q.nodes {
                assert_eq!(BoundaryRay::new(r.x, r.v).unwrap().side, side);
            }
            let half = q.integrate(|r| if r.x.y > 0.0 { 1.0 } else { 0.0 });
            assert!((half / total - 0.5).abs() < 0.01);
            assert_eq!(q.integrate(|_| 0.0), 0.0);
        }
    }

    #[test]
    fn spatial_boundary_rule_mass() {
        let q = boundary_quadrature(Domain::space(), Side::Outgoing, 8).unwrap();
        let total = q.total_weight();
        let exact = 4.0 * PI * PI;
        assert!((total - exact).abs() / exact < 5e-3, "total {total}");
        assert!(q.nodes.iter().all(|r| r.v.dot(r.x) > 0.0));
    }

    #[test]
    fn sphere_rules_have_full_measure() {
        for d in [Domain::plane(), Domain::space()] {
            let q = sphere_quadrature(d, 12);
            assert!((q.total_weight() - d.sphere_measure()).abs() < 1e-12);
            let axis = if d.dimension() == 2 {
                Vec3::E1
            } else {
                Vec3::new(0.0, 0.6, 0.8)
            };
            let f = focused_sphere_quadrature(d, axis, FocusSpec::default());
            assert!((f.total_weight() - d.sphere_measure()).abs() < 1e-10);
            let m = f.integrate(|v| v.dot(axis).powi(2));
            let exact = if d.dimension() == 2 {
                PI
            } else {
                4.0 * PI / 3.0
            };
            assert!((m - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn ball_rule_volume() {
        let q = ball_quadrature(Domain::plane(), 8, 16);
        assert!((q.total_weight() - PI).abs() < 1e-12);
        let q = ball_quadrature(Domain::space(), 8, 8);
        assert!((q.total_weight() - 4.0 * PI / 3.0).abs() < 1e-12);
    }
}
