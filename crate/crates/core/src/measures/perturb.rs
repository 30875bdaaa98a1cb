use super::{ground_distance, BoundaryMeasure};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryRay, Domain, Side};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Node layout of a blur kernel in tangent coordinates of Γ.
///
/// Position offsets are rotations of x along the boundary, direction
/// offsets rotations of v; a node's ground distance from its centre is the
/// ℓ¹ norm of its offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelShape {
    /// Planar only: lattice points with |i| + |j| ≤ rings, tent weights.
    Diamond { rings: usize },
    /// Centre plus half and full steps along each tangent axis.
    Cross,
}

impl KernelShape {
    pub fn default_for(domain: Domain) -> KernelShape {
        if domain.dimension() == 2 {
            KernelShape::Diamond { rings: 2 }
        } else {
            KernelShape::Cross
        }
    }

    /// Offsets (in units of η) along the 2(n−1) tangent axes, and weights
    /// summing to one.
    fn nodes(&self, domain: Domain) -> Result<Vec<(Vec<f64>, f64)>> {
        let dims = 2 * (domain.dimension() - 1);
        let mut out = Vec::new();
        match *self {
            KernelShape::Diamond { rings } => {
                if dims != 2 || rings == 0 {
                    return Err(Error::InvalidInput(
                        "diamond kernels need n = 2 and rings >= 1".into(),
                    ));
                }
                let m = rings as i64;
                for i in -m..=m {
                    for j in -m..=m {
                        let r = i.abs() + j.abs();
                        if r <= m {
                            let w = (m + 1 - r) as f64;
                            out.push((vec![i as f64 / m as f64, j as f64 / m as f64], w));
                        }
                    }
                }
            }
            KernelShape::Cross => {
                out.push((vec![0.0; dims], 3.0));
                for axis in 0..dims {
                    for (step, w) in [(0.5, 2.0), (1.0, 1.0)] {
                        for sign in [-1.0, 1.0] {
                            let mut o = vec![0.0; dims];
                            o[axis] = sign * step;
                            out.push((o, w));
                        }
                    }
                }
            }
        }
        let total: f64 = out.iter().map(|n| n.1).sum();
        for n in &mut out {
            n.1 /= total;
        }
        Ok(out)
    }
}

/// Moves a ray by tangent offsets: the first n−1 entries rotate x, the
/// rest rotate v.  Returns `None` when the result leaves the ray's side.
fn displaced(ray: &BoundaryRay, offset: &[f64], eta: f64) -> Option<BoundaryRay> {
    let (x, v) = if offset.len() == 2 {
        (
            ray.x.rotated_planar(offset[0] * eta),
            ray.v.rotated_planar(offset[1] * eta),
        )
    } else {
        let (t1, t2) = ray.x.orthonormal_frame();
        let (u1, u2) = ray.v.orthonormal_frame();
        let mut x = ray.x;
        for (t, o) in [(t1, offset[0]), (t2, offset[1])] {
            if o != 0.0 {
                x = x.rotated_about(x.cross(t).normalized(), o * eta);
            }
        }
        let mut v = ray.v;
        for (u, o) in [(u1, offset[2]), (u2, offset[3])] {
            if o != 0.0 {
                v = v.rotated_about(v.cross(u).normalized(), o * eta);
            }
        }
        (x, v)
    };
    let c = v.dot(x);
    if c * ray.side.sign() <= 1e-12 {
        return None;
    }
    Some(BoundaryRay {
        x: x.normalized(),
        v: v.normalized(),
        side: ray.side,
    })
}

/// Convolution with a compactly supported kernel of width η.
///
/// Every atom is split over the kernel nodes; nodes that would cross to
/// the other side of Γ are folded back onto the centre, so mass is
/// preserved exactly.
pub fn blur(measure: &BoundaryMeasure, eta: f64, shape: KernelShape) -> Result<BoundaryMeasure> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidInput(format!("blur width {eta} is negative")));
    }
    if eta == 0.0 {
        return Ok(measure.clone());
    }
    let nodes = shape.nodes(measure.domain())?;
    let mut out = BoundaryMeasure::new(measure.domain(), measure.side());
    for a in measure.atoms() {
        let mut centre = 0.0;
        let mut moved = Vec::with_capacity(nodes.len());
        for (offset, w) in &nodes {
            if offset.iter().all(|o| *o == 0.0) {
                centre += w;
                continue;
            }
            match displaced(&a.ray, offset, eta) {
                Some(r) => moved.push((r, *w)),
                None => centre += w,
            }
        }
        out.push_unchecked(a.ray, a.mass * centre);
        for (r, w) in moved {
            out.push_unchecked(r, a.mass * w);
        }
    }
    Ok(out)
}

/// Rotation of every atom along the boundary by `shift` in ground distance.
///
/// Position and direction are rotated together by `shift/2` about a common
/// axis, which preserves v·ν and hence the side.
pub fn misalign(measure: &BoundaryMeasure, shift: f64) -> Result<BoundaryMeasure> {
    if !shift.is_finite() || shift < 0.0 {
        return Err(Error::InvalidInput(format!(
            "shift {shift} must be finite and nonnegative"
        )));
    }
    let half = 0.5 * shift;
    let mut out = BoundaryMeasure::new(measure.domain(), measure.side());
    for a in measure.atoms() {
        let (x, v) = if measure.domain().dimension() == 2 {
            (a.ray.x.rotated_planar(half), a.ray.v.rotated_planar(half))
        } else {
            let n = a.ray.x.cross(a.ray.v);
            let axis = if n.norm() > 1e-12 {
                n.normalized()
            } else {
                a.ray.x.orthonormal_frame().0
            };
            (
                a.ray.x.rotated_about(axis, half),
                a.ray.v.rotated_about(axis, half),
            )
        };
        let ray = BoundaryRay::on_side(x.normalized(), v.normalized(), measure.side())
            .map_err(|_| Error::SideViolation)?;
        out.push_unchecked(ray, a.mass);
    }
    Ok(out)
}

/// A delta comb replacing a source, with its certified W₁,κ error.
#[derive(Debug, Clone)]
pub struct DiscretizedSource {
    pub comb: BoundaryMeasure,
    pub mesh: f64,
    /// Certified bound on W₁,κ(source, comb): κ·max(h, largest move)·mass.
    pub delta: f64,
    /// Largest ground distance an atom was moved.
    pub max_move: f64,
}

/// Aggregates a nonnegative source onto the nodes of a boundary grid of mesh `h`.
///
/// In the plane the grid is uniform in the boundary angle (step ≤ h/2) and
/// in the angle between v and the normal (step h); moving to the nearest
/// node costs at most h in ground distance.  In space positions use a
/// latitude-longitude grid and directions a polar grid about the normal.
pub fn grid_discretize(source: &BoundaryMeasure, h: f64, kappa: f64) -> Result<DiscretizedSource> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("mesh {h} must be positive")));
    }
    if !source.is_nonnegative() {
        return Err(Error::InvalidInput(
            "grid discretization needs a nonnegative source".into(),
        ));
    }
    let side = source.side();
    let mut nodes: Vec<(BoundaryRay, f64)> = Vec::new();
    let mut max_move: f64 = 0.0;
    for a in source.atoms() {
        let node = if source.domain().dimension() == 2 {
            snap_planar(&a.ray, h)
        } else {
            snap_spatial(&a.ray, h)
        };
        max_move = max_move.max(ground_distance(&a.ray, &node));
        match nodes
            .iter_mut()
            .find(|(r, _)| r.x == node.x && r.v == node.v)
        {
            Some(slot) => slot.1 += a.mass,
            None => nodes.push((node, a.mass)),
        }
    }
    let mut comb = BoundaryMeasure::new(source.domain(), side);
    for (r, m) in nodes {
        comb.push_unchecked(r, m);
    }
    let delta = (kappa * h.max(max_move)).min(2.0) * source.total_mass();
    Ok(DiscretizedSource {
        comb,
        mesh: h,
        delta,
        max_move,
    })
}

fn snap(value: f64, step: f64) -> f64 {
    (value / step).round() * step
}

fn snap_planar(ray: &BoundaryRay, h: f64) -> BoundaryRay {
    let s = ray.side.sign();
    let cells = (4.0 * PI / h).ceil();
    let dtheta = 2.0 * PI / cells;
    let theta = snap(ray.x.y.atan2(ray.x.x), dtheta);
    let normal = ray.x * s;
    let psi = normal.cross(ray.v).z.atan2(normal.dot(ray.v));
    let mut psi_node = snap(psi, h);
    while psi_node.abs() >= PI / 2.0 {
        psi_node -= h * psi_node.signum();
    }
    let x = Vec3::from_angle(theta);
    BoundaryRay {
        x,
        v: (x * s).rotated_planar(psi_node),
        side: ray.side,
    }
}

fn snap_spatial(ray: &BoundaryRay, h: f64) -> BoundaryRay {
    let s = ray.side.sign();
    let step = h / 4.0;
    let polar = snap(ray.x.z.clamp(-1.0, 1.0).acos(), step).clamp(0.0, PI);
    let ring = polar.sin();
    let az_cells = ((2.0 * PI * ring / step).ceil()).max(1.0);
    let az = snap(ray.x.y.atan2(ray.x.x), 2.0 * PI / az_cells);
    let x = Vec3::from_spherical(polar, az);
    // Direction in a frame attached to the snapped normal.
    let normal = x * s;
    let (e1, e2) = x.orthonormal_frame();
    let local = ray.v;
    let alpha = local.angle_to(normal);
    let mut alpha_node = snap(alpha, step);
    while alpha_node >= PI / 2.0 {
        alpha_node -= step;
    }
    let beta = local.dot(e2).atan2(local.dot(e1));
    let beta_cells = ((2.0 * PI * alpha_node.sin() / step).ceil()).max(1.0);
    let beta_node = snap(beta, 2.0 * PI / beta_cells);
    let (sa, ca) = alpha_node.sin_cos();
    let v = (normal * ca + (e1 * beta_node.cos() + e2 * beta_node.sin()) * sa).normalized();
    BoundaryRay {
        x,
        v,
        side: ray.side,
    }
}

/// Normalized approximate identity at an incoming ray, supported within ρ.
pub fn psi_source(domain: Domain, x0: Vec3, v0: Vec3, rho: f64) -> Result<BoundaryMeasure> {
    let ray = BoundaryRay::on_side(x0, v0, Side::Incoming)?;
    domain.check_vector(x0)?;
    let shape = if domain.dimension() == 2 {
        KernelShape::Diamond { rings: 4 }
    } else {
        KernelShape::Cross
    };
    blur(&BoundaryMeasure::point(domain, ray, 1.0)?, rho, shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::planar_incoming;

    fn point(theta: f64, psi: f64, m: f64) -> BoundaryMeasure {
        BoundaryMeasure::point(Domain::plane(), planar_incoming(theta, psi), m).unwrap()
    }

    #[test]
    fn blur_preserves_mass_and_support() {
        let m = point(1.0, 0.3, 0.7).plus(&point(4.0, -1.5, 0.3)).unwrap();
        for eta in [0.0, 0.05, 0.2] {
            let b = blur(&m, eta, KernelShape::Diamond { rings: 2 }).unwrap();
            assert!((b.total_mass() - 1.0).abs() < 1e-12);
            for a in b.atoms() {
                let d = m
                    .atoms()
                    .iter()
                    .map(|c| ground_distance(&a.ray, &c.ray))
                    .fold(f64::MAX, f64::min);
                assert!(d <= eta + 1e-12);
            }
        }
        assert_eq!(blur(&m, 0.0, KernelShape::Cross).unwrap(), m);
    }

    #[test]
    fn spatial_blur_and_misalignment() {
        let d = Domain::space();
        let x = Vec3::new(0.0, 0.6, 0.8);
        let m = BoundaryMeasure::point(
            d,
            BoundaryRay::new(x, (-x).rotated_about(Vec3::E1, 0.4)).unwrap(),
            1.0,
        )
        .unwrap();
        let b = blur(&m, 0.1, KernelShape::Cross).unwrap();
        assert_eq!(b.len(), 17);
        for a in b.atoms() {
            assert!(ground_distance(&a.ray, &m.atoms()[0].ray) <= 0.1 + 1e-12);
        }
        let s = misalign(&m, 0.3).unwrap();
        assert!((ground_distance(&s.atoms()[0].ray, &m.atoms()[0].ray) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn misalignment_moves_exactly() {
        let m = point(0.5, 1.2, 1.0);
        let s = misalign(&m, 0.3).unwrap();
        assert!((ground_distance(&s.atoms()[0].ray, &m.atoms()[0].ray) - 0.3).abs() < 1e-12);
        let same = misalign(&m, 0.0).unwrap();
        assert!(ground_distance(&same.atoms()[0].ray, &m.atoms()[0].ray) < 1e-15);
    }

    #[test]
    fn grid_moves_at_most_h() {
        for h in [0.4, 0.1, 0.02] {
            for (t, p) in [(0.1, 0.2), (2.0, -1.4), (5.9, 1.5)] {
                let d = grid_discretize(&point(t, p, 1.0), h, 1.0).unwrap();
                assert!(d.max_move <= h + 1e-12, "h={h} moved {}", d.max_move);
                assert!((d.delta - h).abs() < 1e-12 || h > 2.0);
            }
        }
        let on_grid = grid_discretize(&point(0.3, 0.1, 1.0), 0.1, 1.0)
            .unwrap()
            .comb;
        let again = grid_discretize(&on_grid, 0.1, 1.0).unwrap();
        assert_eq!(again.comb, on_grid);
        assert!((again.delta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn spatial_grid_moves_at_most_h() {
        let d = Domain::space();
        let x = Vec3::new(0.48, -0.6, 0.64);
        let r = BoundaryRay::new(x, (-x).rotated_about(Vec3::E3, 0.9)).unwrap();
        let g = BoundaryMeasure::point(d, r, 1.0).unwrap();
        for h in [0.3, 0.1, 0.03] {
            let dsc = grid_discretize(&g, h, 1.0).unwrap();
            assert!(dsc.max_move <= h, "{}", dsc.max_move);
        }
    }

    #[test]
    fn psi_source_is_normalized() {
        let x0 = Vec3::from_angle(0.7);
        for rho in [0.2, 0.1, 0.05] {
            let s = psi_source(Domain::plane(), x0, (-x0).rotated_planar(0.3), rho).unwrap();
            assert!((s.total_mass() - 1.0).abs() < 1e-12);
            assert!(s.is_nonnegative());
        }
    }
}
