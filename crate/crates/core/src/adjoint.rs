//! Backward transport: T*, P*, K̃ = T*P*, the lifting J̃ and the backward
//! albedo map, evaluated pointwise or on a phase-space grid.

use crate::error::{Error, Result};
use crate::forward::{exit_ray, scattering_panels};
use crate::geometry::{entry_time, exit_time, perturbed_ray, random_boundary_ray, sphere_quadrature, BoundaryRay, Domain, QuadratureRule, Side};
use crate::measures::ground_distance;
use crate::optics::{Absorption, OpticalMedium, SubcriticalityCertificate};
use crate::quadrature::{adaptive_with_breaks, GaussLegendre};
use crate::rng;
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A function on X × V.
pub trait PhaseField: Sync {
    fn eval(&self, x: Vec3, v: Vec3) -> f64;
}

impl<F: Fn(Vec3, Vec3) -> f64 + Sync> PhaseField for F {
    fn eval(&self, x: Vec3, v: Vec3) -> f64 {
        self(x, v)
    }
}

/// Fixed rules used by the pointwise operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorRule {
    /// Gauss nodes per chord panel.
    pub chord_nodes: usize,
    /// Resolution of the velocity rule.
    pub angular: usize,
}

impl OperatorRule {
    pub fn for_dimension(n: usize) -> Self {
        if n == 2 {
            OperatorRule { chord_nodes: 8, angular: 64 }
        } else {
            OperatorRule { chord_nodes: 6, angular: 8 }
        }
    }
}

/// T*φ(x, v) = ∫₀^{τ₊} e^{−∫₀^r σ(x+sv, v) ds} φ(x + r v, v) dr, adaptive.
pub fn t_star(medium: &OpticalMedium, phi: &dyn PhaseField, x: Vec3, v: Vec3) -> f64 {
    let len = exit_time(x, v);
    line_transform(medium, phi, x, v, len)
}

/// T f(x, v) = ∫₀^{τ₋} e^{−∫₀^t σ(x−sv, v) ds} f(x − t v, v) dt, adaptive.
pub fn t_forward(medium: &OpticalMedium, f: &dyn PhaseField, x: Vec3, v: Vec3) -> f64 {
    let len = entry_time(x, v);
    if len <= 0.0 {
        return 0.0;
    }
    // the attenuation runs against the travel direction
    let g = |t: f64| {
        let y = x - v * t;
        (-medium.depth(y, v, t)).exp() * f.eval(y, v)
    };
    let breaks = chord_breaks(medium, x, -v, len);
    adaptive_with_breaks(g, &breaks, 1e-9, 1e-14, 400).value
}

fn line_transform(medium: &OpticalMedium, phi: &dyn PhaseField, x: Vec3, v: Vec3, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let g = |r: f64| (-medium.depth(x, v, r)).exp() * phi.eval(x + v * r, v);
    let breaks = chord_breaks(medium, x, v, len);
    adaptive_with_breaks(g, &breaks, 1e-9, 1e-14, 400).value
}

fn chord_breaks(medium: &OpticalMedium, x: Vec3, v: Vec3, len: f64) -> Vec<f64> {
    let mut b = vec![0.0, len];
    b.extend(scattering_panels(medium, x, v, len));
    let closest = -x.dot(v);
    if closest > 0.0 && closest < len {
        b.push(closest);
    }
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

fn velocity_rule(domain: Domain, angular: usize) -> QuadratureRule<Vec3> {
    sphere_quadrature(domain, angular)
}

/// P*u(x, v) = ∫_V k(x, v, v') u(x, v') dv'.
pub fn p_star(medium: &OpticalMedium, u: &dyn PhaseField, x: Vec3, v: Vec3, angular: usize) -> f64 {
    velocity_rule(medium.domain(), angular).integrate(|w| {
        let k = medium.k(x, v, *w);
        if k == 0.0 {
            0.0
        } else {
            k * u.eval(x, *w)
        }
    })
}

/// P u(x, v) = ∫_V k(x, v', v) u(x, v') dv'.
pub fn p_forward(medium: &OpticalMedium, u: &dyn PhaseField, x: Vec3, v: Vec3, angular: usize) -> f64 {
    velocity_rule(medium.domain(), angular).integrate(|w| {
        let k = medium.k(x, *w, v);
        if k == 0.0 {
            0.0
        } else {
            k * u.eval(x, *w)
        }
    })
}

/// Gauss nodes along `x + r v` inside the scattering support, with the
/// attenuation from `x` to each node.
fn support_chord(medium: &OpticalMedium, gl: &GaussLegendre, x: Vec3, v: Vec3, len: f64) -> Vec<(f64, f64, f64)> {
    let breaks = scattering_panels(medium, x, v, len);
    let mut out = Vec::new();
    let mut depth = 0.0f64;
    let mut at = 0.0;
    for w in breaks.windows(2) {
        for (r, wr) in gl.on(w[0], w[1]) {
            depth += medium.depth(x + v * at, v, r - at);
            at = r;
            out.push((r, wr, (-depth).exp()));
        }
    }
    out
}

/// Gauss nodes along the whole chord `x + r v`, `r ∈ [0, len]`.
fn full_chord(medium: &OpticalMedium, gl: &GaussLegendre, x: Vec3, v: Vec3, len: f64) -> Vec<(f64, f64, f64)> {
    if len <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0.0f64;
    let mut at = 0.0;
    for w in chord_breaks(medium, x, v, len).windows(2) {
        for (r, wr) in gl.on(w[0], w[1]) {
            depth += medium.depth(x + v * at, v, r - at);
            at = r;
            out.push((r, wr, (-depth).exp()));
        }
    }
    out
}

/// K̃w = T*P*w at one phase point, with fixed rules.
pub fn k_tilde(medium: &OpticalMedium, w: &dyn PhaseField, x: Vec3, v: Vec3, rule: OperatorRule) -> f64 {
    let gl = GaussLegendre::new(rule.chord_nodes);
    let dirs = velocity_rule(medium.domain(), rule.angular);
    support_chord(medium, &gl, x, v, exit_time(x, v))
        .into_iter()
        .map(|(r, wr, e)| {
            let z = x + v * r;
            wr * e * dirs.integrate(|d| medium.k(z, v, *d) * w.eval(z, *d))
        })
        .sum()
}

/// The L²(X × V) adjoint of K̃: P T u at one phase point.
pub fn k_tilde_adjoint(medium: &OpticalMedium, u: &dyn PhaseField, x: Vec3, v: Vec3, rule: OperatorRule) -> f64 {
    let gl = GaussLegendre::new(rule.chord_nodes);
    let dirs = velocity_rule(medium.domain(), rule.angular);
    dirs.integrate(|d| {
        let k = medium.k(x, *d, v);
        if k == 0.0 {
            return 0.0;
        }
        let back: f64 = full_chord(medium, &gl, x, -*d, entry_time(x, *d))
            .into_iter()
            .map(|(t, wt, e)| wt * e * u.eval(x - *d * t, *d))
            .sum();
        k * back
    })
}

/// J̃φ(x, v) = e^{−∫₀^{τ₊} σ} φ(x + τ₊ v, v).
pub fn j_tilde(medium: &OpticalMedium, phi: &dyn Fn(&BoundaryRay) -> f64, x: Vec3, v: Vec3) -> f64 {
    let len = exit_time(x, v);
    let e = if len > 0.0 { (-medium.depth(x, v, len)).exp() } else { 1.0 };
    e * phi(&exit_ray(x, v))
}

/// Phase-space grid for backward fields: uniform radial shells times a
/// position rule on each shell times a fixed velocity rule.
///
/// In the plane the shell positions are uniform in angle; in space they
/// form a latitude-longitude lattice.  Fields are interpolated linearly in
/// position and carried exactly on the velocity nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardGrid {
    pub dimension: usize,
    pub radial: usize,
    /// Shell angle nodes (plane) or latitude nodes (space).
    pub polar: usize,
    /// Longitude nodes (space only).
    pub azimuth: usize,
    /// Velocity rule resolution.
    pub velocities: usize,
    pub chord_nodes: usize,
}

impl BackwardGrid {
    pub fn for_dimension(n: usize) -> Self {
        if n == 2 {
            BackwardGrid { dimension: 2, radial: 16, polar: 64, azimuth: 1, velocities: 64, chord_nodes: 6 }
        } else {
            BackwardGrid { dimension: 3, radial: 8, polar: 12, azimuth: 24, velocities: 8, chord_nodes: 4 }
        }
    }

    fn domain(&self) -> Result<Domain> {
        Domain::new(self.dimension)
    }

    fn shell_size(&self) -> usize {
        if self.dimension == 2 {
            self.polar
        } else {
            self.polar * self.azimuth
        }
    }

    fn position(&self, i: usize, j: usize) -> Vec3 {
        let r = i as f64 / self.radial as f64;
        if self.dimension == 2 {
            Vec3::from_angle(2.0 * PI * j as f64 / self.polar as f64) * r
        } else {
            let (a, b) = (j / self.azimuth, j % self.azimuth);
            let polar = PI * (a as f64 + 0.5) / self.polar as f64;
            Vec3::from_spherical(polar, 2.0 * PI * b as f64 / self.azimuth as f64) * r
        }
    }

    /// Linear interpolation stencil in position: (shell·shell_size + j, weight).
    fn stencil(&self, x: Vec3, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let r = x.norm().min(1.0);
        let s = r * self.radial as f64;
        let i0 = (s.floor() as usize).min(self.radial - 1);
        let fr = s - i0 as f64;
        let ns = self.shell_size();
        let angular: Vec<(usize, f64)> = if self.dimension == 2 {
            let t = x.y.atan2(x.x).rem_euclid(2.0 * PI) / (2.0 * PI) * self.polar as f64;
            let j0 = t.floor() as usize % self.polar;
            let f = t - t.floor();
            vec![(j0, 1.0 - f), ((j0 + 1) % self.polar, f)]
        } else {
            let polar = if r > 0.0 { (x.z / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
            let p = (polar / PI * self.polar as f64 - 0.5).clamp(0.0, (self.polar - 1) as f64);
            let a0 = (p.floor() as usize).min(self.polar - 1);
            let a1 = (a0 + 1).min(self.polar - 1);
            let fa = p - a0 as f64;
            let t = x.y.atan2(x.x).rem_euclid(2.0 * PI) / (2.0 * PI) * self.azimuth as f64;
            let b0 = t.floor() as usize % self.azimuth;
            let b1 = (b0 + 1) % self.azimuth;
            let fb = t - t.floor();
            let az = self.azimuth;
            vec![
                (a0 * az + b0, (1.0 - fa) * (1.0 - fb)),
                (a0 * az + b1, (1.0 - fa) * fb),
                (a1 * az + b0, fa * (1.0 - fb)),
                (a1 * az + b1, fa * fb),
            ]
        };
        for (j, w) in &angular {
            out.push((i0 * ns + j, (1.0 - fr) * w));
            out.push(((i0 + 1) * ns + j, fr * w));
        }
    }
}

/// Values of a field on the nodes of a [`BackwardGrid`].
#[derive(Debug, Clone)]
pub struct BackwardField {
    grid: BackwardGrid,
    velocities: QuadratureRule<Vec3>,
    /// Indexed by (spatial node, velocity node).
    values: Vec<f64>,
}

impl BackwardField {
    /// Samples a field on the grid.
    pub fn sample(grid: BackwardGrid, f: &dyn PhaseField) -> Result<Self> {
        let domain = grid.domain()?;
        let velocities = velocity_rule(domain, grid.velocities);
        let nv = velocities.len();
        let spatial = (grid.radial + 1) * grid.shell_size();
        let values: Vec<f64> = (0..spatial * nv)
            .into_par_iter()
            .map(|idx| {
                let (s, l) = (idx / nv, idx % nv);
                let x = grid.position(s / grid.shell_size(), s % grid.shell_size());
                f.eval(x, velocities.nodes[l])
            })
            .collect();
        Ok(BackwardField { grid, velocities, values })
    }

    pub fn grid(&self) -> &BackwardGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Interpolated value at `x` for velocity node `l`.
    fn at_node(&self, stencil: &[(usize, f64)], l: usize) -> f64 {
        let nv = self.velocities.len();
        stencil.iter().map(|(s, w)| w * self.values[s * nv + l]).sum()
    }

    /// P*w at `x` and incoming direction `v`, using the grid velocities.
    fn p_star_at(&self, medium: &OpticalMedium, x: Vec3, v: Vec3, stencil: &mut Vec<(usize, f64)>) -> f64 {
        self.grid.stencil(x, stencil);
        let mut acc = 0.0;
        for (l, (d, wd)) in self.velocities.iter().enumerate() {
            let k = medium.k(x, v, *d);
            if k != 0.0 {
                acc += wd * k * self.at_node(stencil, l);
            }
        }
        acc
    }

    /// K̃ applied to this field, evaluated at an arbitrary phase point.
    pub fn k_tilde_at(&self, medium: &OpticalMedium, x: Vec3, v: Vec3) -> f64 {
        let gl = GaussLegendre::new(self.grid.chord_nodes);
        let mut stencil = Vec::with_capacity(8);
        support_chord(medium, &gl, x, v, exit_time(x, v))
            .into_iter()
            .map(|(r, wr, e)| wr * e * self.p_star_at(medium, x + v * r, v, &mut stencil))
            .sum()
    }

    /// K̃ applied on the grid: P* at every node, then T* along each grid ray.
    pub fn apply_k_tilde(&self, medium: &OpticalMedium) -> BackwardField {
        let g = self.grid;
        let nv = self.velocities.len();
        let ns = g.shell_size();
        let spatial = (g.radial + 1) * ns;
        let p: Vec<f64> = (0..spatial)
            .into_par_iter()
            .flat_map_iter(|s| {
                let x = g.position(s / ns, s % ns);
                let row: Vec<f64> = self
                    .velocities
                    .nodes
                    .iter()
                    .map(|v| {
                        self.velocities
                            .iter()
                            .enumerate()
                            .map(|(l, (d, wd))| wd * medium.k(x, *v, *d) * self.values[s * nv + l])
                            .sum()
                    })
                    .collect();
                row
            })
            .collect();
        let p_field = BackwardField { grid: g, velocities: self.velocities.clone(), values: p };
        let gl = GaussLegendre::new(g.chord_nodes);
        let values: Vec<f64> = (0..spatial * nv)
            .into_par_iter()
            .map(|idx| {
                let (s, l) = (idx / nv, idx % nv);
                let x = g.position(s / ns, s % ns);
                let v = self.velocities.nodes[l];
                let mut stencil = Vec::with_capacity(8);
                support_chord(medium, &gl, x, v, exit_time(x, v))
                    .into_iter()
                    .map(|(r, wr, e)| {
                        g.stencil(x + v * r, &mut stencil);
                        wr * e * p_field.at_node(&stencil, l)
                    })
                    .sum()
            })
            .collect();
        BackwardField { grid: g, velocities: self.velocities.clone(), values }
    }
}

/// Truncated backward albedo Σ_{m≤M} K̃^m J̃φ restricted to Γ₋.
pub struct BackwardAlbedo<'a> {
    medium: &'a OpticalMedium,
    phi: &'a (dyn Fn(&BoundaryRay) -> f64 + Sync),
    /// K̃^m J̃φ on the grid for m < M.
    iterates: Vec<BackwardField>,
    pub truncation_order: usize,
    /// Bound q^{M+1}/(1−q) sup|φ| on the omitted terms.
    pub tail_bound: f64,
}

/// Builds the backward albedo of `phi` with `truncation` scattering orders.
pub fn backward_albedo<'a>(
    medium: &'a OpticalMedium,
    phi: &'a (dyn Fn(&BoundaryRay) -> f64 + Sync),
    truncation: usize,
    grid: BackwardGrid,
    cert: &SubcriticalityCertificate,
    phi_sup: f64,
) -> Result<BackwardAlbedo<'a>> {
    if cert.q >= 1.0 {
        return Err(Error::NotSubcritical(format!("contraction ratio {:.4}", cert.q)));
    }
    if grid.dimension != medium.dimension() {
        return Err(Error::InvalidDimension(grid.dimension));
    }
    let mut iterates = Vec::new();
    if truncation > 0 && medium.has_scattering() {
        let lifted = |x: Vec3, v: Vec3| j_tilde(medium, phi, x, v);
        iterates.push(BackwardField::sample(grid, &lifted)?);
        while iterates.len() < truncation {
            let next = iterates.last().unwrap().apply_k_tilde(medium);
            iterates.push(next);
        }
    }
    Ok(BackwardAlbedo { medium, phi, iterates, truncation_order: truncation, tail_bound: cert.geometric_tail(truncation) * phi_sup })
}

impl BackwardAlbedo<'_> {
    /// Value at an incoming boundary ray; the trace is taken directly since
    /// the iterates are Lipschitz.
    pub fn eval(&self, ray: &BoundaryRay) -> f64 {
        let mut total = j_tilde(self.medium, self.phi, ray.x, ray.v);
        for f in &self.iterates {
            total += f.k_tilde_at(self.medium, ray.x, ray.v);
        }
        total
    }

    /// Contribution of scattering order `m` alone.
    pub fn eval_order(&self, ray: &BoundaryRay, m: usize) -> f64 {
        if m == 0 {
            j_tilde(self.medium, self.phi, ray.x, ray.v)
        } else {
            self.iterates.get(m - 1).map_or(0.0, |f| f.k_tilde_at(self.medium, ray.x, ray.v))
        }
    }
}

/// Largest sampled quotient |f(p) − f(q)| / d(p, q) over random pairs of
/// rays on one side of the boundary.  Half of the pairs are close pairs at
/// log-uniform separations.
pub fn estimate_lipschitz(f: &dyn Fn(&BoundaryRay) -> f64, domain: Domain, side: Side, pairs: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0, 0);
    let mut best: f64 = 0.0;
    for i in 0..pairs {
        let p = random_boundary_ray(&mut r, domain, side);
        let q = if i % 2 == 0 {
            random_boundary_ray(&mut r, domain, side)
        } else {
            let scale = 10f64.powf(-4.0 * r.random::<f64>());
            perturbed_ray(&mut r, &p, scale)
        };
        let d = ground_distance(&p, &q);
        if d > 1e-12 {
            best = best.max((f(&p) - f(&q)).abs() / d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::boundary_quadrature;
    use crate::optics::{certify, AbsorptionModel, MediumSpec, ScatteringModel};

    fn medium(sigma: f64, c: f64) -> OpticalMedium {
        let s = if c > 0.0 { ScatteringModel::Isotropic { density: c } } else { ScatteringModel::None };
        MediumSpec::new(2, AbsorptionModel::Constant { value: sigma }, s).build().unwrap()
    }

    fn hg_medium() -> OpticalMedium {
        MediumSpec::new(
            2,
            AbsorptionModel::GaussianBump { background: 0.6, amplitude: 0.5, center: vec![0.2, 0.1], width: 0.4 },
            ScatteringModel::HenyeyGreenstein { total: 0.25, asymmetry: 0.4 },
        )
        .build()
        .unwrap()
    }

    #[test]
    fn t_star_examples() {
        let one = |_: Vec3, _: Vec3| 1.0;
        let zero = |_: Vec3, _: Vec3| 0.0;
        let m0 = medium(0.0, 0.0);
        assert_eq!(t_star(&m0, &zero, Vec3::ZERO, Vec3::E1), 0.0);
        assert!((t_star(&m0, &one, Vec3::ZERO, Vec3::E1) - 1.0).abs() < 1e-12);
        let m1 = medium(1.0, 0.0);
        let x = Vec3::planar(0.3, -0.2);
        let v = Vec3::from_angle(0.7);
        let tau = exit_time(x, v);
        assert!((t_star(&m1, &one, x, v) / (1.0 - (-tau).exp()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn p_star_examples() {
        let m = medium(1.0, 0.1);
        let one = |_: Vec3, _: Vec3| 1.0;
        let odd = |_: Vec3, w: Vec3| w.dot(Vec3::from_angle(0.3));
        let x = Vec3::planar(0.1, 0.2);
        assert_eq!(p_star(&medium(1.0, 0.0), &one, x, Vec3::E1, 64), 0.0);
        assert!((p_star(&m, &one, x, Vec3::E1, 64) - 0.1 * 2.0 * PI).abs() < 1e-12);
        assert!(p_star(&m, &odd, x, Vec3::E1, 64).abs() < 1e-14);
    }

    /// Polar rule on X × V with radial panels at the cutoff radii.
    fn phase_inner(domain: Domain, a: &dyn PhaseField, b: &dyn PhaseField) -> f64 {
        let gl = GaussLegendre::new(8);
        let shell = sphere_quadrature(domain, 64);
        let vel = sphere_quadrature(domain, 64);
        let mut pos = Vec::new();
        for w in [0.0, 0.8, 0.9, 1.0].windows(2) {
            for (r, wr) in gl.on(w[0], w[1]) {
                for (d, wd) in shell.iter() {
                    pos.push((*d * r, wr * wd * r));
                }
            }
        }
        pos.par_iter().map(|(x, wx)| wx * vel.integrate(|v| a.eval(*x, *v) * b.eval(*x, *v))).sum()
    }

    #[test]
    fn k_tilde_is_dual_to_pt() {
        let m = MediumSpec::new(2, AbsorptionModel::Constant { value: 0.6 }, ScatteringModel::HenyeyGreenstein { total: 0.25, asymmetry: 0.4 })
            .build()
            .unwrap();
        let rule = OperatorRule::for_dimension(2);
        let u = |x: Vec3, v: Vec3| 1.0 + 0.5 * x.x - 0.3 * v.y + 0.2 * x.dot(v);
        let w = |x: Vec3, v: Vec3| (0.8 * x.y + 0.4 * v.x).cos();
        let kw = |x: Vec3, v: Vec3| k_tilde(&m, &w, x, v, rule);
        let ku = |x: Vec3, v: Vec3| k_tilde_adjoint(&m, &u, x, v, rule);
        let lhs = phase_inner(m.domain(), &ku, &w);
        let rhs = phase_inner(m.domain(), &u, &kw);
        assert!((lhs / rhs - 1.0).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn k_tilde_properties() {
        let m = hg_medium();
        let cert = certify(&m, 2048).unwrap();
        let rule = OperatorRule::for_dimension(2);
        let w = |x: Vec3, v: Vec3| 0.5 + 0.5 * (3.0 * x.x + v.y).sin();
        let grid = BackwardGrid::for_dimension(2);
        let field = BackwardField::sample(grid, &w).unwrap();
        let applied = field.apply_k_tilde(&m);
        assert!(applied.values().iter().all(|&v| v >= 0.0));
        assert!(applied.sup_norm() <= cert.tau_sigma_p * field.sup_norm() * 1.001);
        // grid and pointwise K̃ agree
        for (x, v) in [(Vec3::planar(0.2, 0.3), Vec3::from_angle(1.0)), (Vec3::planar(-0.5, 0.1), Vec3::from_angle(4.0))] {
            let exact = k_tilde(&m, &w, x, v, rule);
            let via_grid = field.k_tilde_at(&m, x, v);
            assert!((via_grid / exact - 1.0).abs() < 1e-2, "{via_grid} vs {exact}");
        }
        // fields vanishing on the scattering support are annihilated
        let outer = |x: Vec3, v: Vec3| (1.0 - m.boundary_cutoff(x)) * (1.0 + v.x);
        assert_eq!(k_tilde(&m, &outer, Vec3::planar(0.1, 0.0), Vec3::E2, rule), 0.0);
    }

    #[test]
    fn backward_albedo_without_scattering_is_a_pullback() {
        let m = medium(0.7, 0.0);
        let cert = certify(&m, 256).unwrap();
        let phi = |r: &BoundaryRay| r.x.x + 2.0 * r.v.y;
        let back = backward_albedo(&m, &phi, 3, BackwardGrid::for_dimension(2), &cert, 3.0).unwrap();
        let ray = BoundaryRay::new(Vec3::from_angle(0.4), Vec3::from_angle(0.4 + 2.5)).unwrap();
        let exit = ray.transported();
        let tau = (exit.x - ray.x).norm();
        assert!((back.eval(&ray) - (-0.7 * tau).exp() * phi(&exit)).abs() < 1e-12);
        assert_eq!(back.tail_bound, 0.0);
    }

    #[test]
    fn green_duality_at_order_three() {
        use crate::forward::{expand_albedo_certified, ExpansionSettings, SecondOrder};
        use crate::measures::BoundaryMeasure;
        let m = hg_medium();
        let cert = certify(&m, 2048).unwrap();
        let f = |r: &BoundaryRay| 1.0 + 0.5 * r.x.x * r.v.y;
        let phi = |r: &BoundaryRay| 0.6 + 0.4 * (2.0 * r.x.y + r.v.x).sin();
        let rule = boundary_quadrature(m.domain(), Side::Incoming, 24).unwrap();
        let mut g = BoundaryMeasure::new(m.domain(), Side::Incoming);
        for (ray, w) in rule.iter() {
            g.push(*ray, f(ray) * w).unwrap();
        }
        let mut s = ExpansionSettings::for_dimension(2);
        s.truncation_order = 3;
        s.angular = 64;
        s.chord_nodes = 4;
        s.second_order = SecondOrder::MonteCarlo;
        s.mc.samples = 60_000;
        s.mc.strata = 4;
        let exp = expand_albedo_certified(&m, &g, &s, &cert).unwrap();
        let back = backward_albedo(&m, &phi, 3, BackwardGrid::for_dimension(2), &cert, 1.0).unwrap();
        for order in 0..=3 {
            let lhs = exp.orders[order].integrate(phi);
            let rhs: f64 = rule.nodes.par_iter().zip(&rule.weights).map(|(r, w)| w * f(r) * back.eval_order(r, order)).sum();
            let tol = 1e-3 * lhs.abs() + 3.0 * exp.std_errors[order];
            assert!((lhs - rhs).abs() < tol.max(1e-4 * lhs.abs()), "order {order}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn lipschitz_examples() {
        let d = Domain::plane();
        assert_eq!(estimate_lipschitz(&|_| 3.0, d, Side::Incoming, 1000, 1), 0.0);
        let e = Vec3::from_angle(0.3);
        let q = estimate_lipschitz(&|r: &BoundaryRay| r.x.dot(e), d, Side::Incoming, 10_000, 2);
        assert!(q <= 1.0 + 1e-6 && q > 0.5);
    }
}
