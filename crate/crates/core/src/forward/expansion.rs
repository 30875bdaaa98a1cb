use super::{
    apply_ballistic, double_scatter_exit_density, exit_ray, scattering_panels, transmission,
};
use crate::error::{Error, Result};
use crate::geometry::{
    boundary_quadrature, exit_time, focused_sphere_quadrature, sphere_quadrature,
    unit_cube_to_sphere, FocusSpec, QuadratureRule, Side,
};
use crate::measures::BoundaryMeasure;
use crate::optics::{certify, sphere_crossings, OpticalMedium, SubcriticalityCertificate};
use crate::quadrature::GaussLegendre;
use crate::rng;
use crate::vec3::Vec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sampling budget for the Monte Carlo orders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloBudget {
    /// Paths per order over the whole source.
    pub samples: usize,
    /// Strata of the first flight per source atom.
    pub strata: usize,
    /// Largest accepted relative standard error of an order's mass.
    pub max_rel_error: f64,
    pub seed: u64,
}

impl Default for MonteCarloBudget {
    fn default() -> Self {
        MonteCarloBudget {
            samples: 20_000,
            strata: 64,
            max_rel_error: 0.25,
            seed: 1,
        }
    }
}

/// How the doubly scattered order is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SecondOrder {
    MonteCarlo,
    /// Exit density evaluated on a boundary quadrature of Γ₊.
    Quadrature {
        resolution: usize,
        rel_tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSettings {
    pub truncation_order: usize,
    /// Gauss nodes per panel of the first-flight chord.
    pub chord_nodes: usize,
    /// Resolution of the velocity rule for the single-scattering order.
    pub angular: usize,
    /// Replaces the uniform velocity rule by one graded about v₀.
    pub focus: Option<FocusSpec>,
    pub second_order: SecondOrder,
    pub mc: MonteCarloBudget,
    pub certificate_samples: usize,
}

impl ExpansionSettings {
    pub fn for_dimension(n: usize) -> Self {
        ExpansionSettings {
            truncation_order: n + 1,
            chord_nodes: 8,
            angular: if n == 2 { 128 } else { 16 },
            focus: None,
            second_order: SecondOrder::MonteCarlo,
            mc: MonteCarloBudget::default(),
            certificate_samples: 4096,
        }
    }
}

/// Per-order exit measures of the albedo map with a truncation certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollisionExpansion {
    /// `orders[m]` holds the particles that scattered exactly m times.
    pub orders: Vec<BoundaryMeasure>,
    /// Standard error of each order's total mass (0 for quadrature orders).
    pub std_errors: Vec<f64>,
    pub truncation_order: usize,
    /// Bound on the mass of all orders above the truncation.
    pub tail_bound: f64,
    pub kernel_bound_e1: f64,
    pub ratio: f64,
    pub seed: u64,
}

impl CollisionExpansion {
    /// Sum of all computed orders.
    pub fn total(&self) -> Result<BoundaryMeasure> {
        let mut acc = self.orders[0].clone();
        for o in &self.orders[1..] {
            acc = acc.plus(o)?;
        }
        Ok(acc)
    }

    /// Orders `from..=to` summed.
    pub fn partial(&self, from: usize, to: usize) -> Result<BoundaryMeasure> {
        let mut acc = BoundaryMeasure::new(self.orders[0].domain(), Side::Outgoing);
        for o in &self.orders[from..=to.min(self.orders.len() - 1)] {
            acc = acc.plus(o)?;
        }
        Ok(acc)
    }

    pub fn total_mass(&self) -> f64 {
        self.orders.iter().map(|o| o.total_mass()).sum()
    }

    pub fn write_json(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }
}

/// Certifies the medium and expands the albedo map applied to `g`.
pub fn expand_albedo(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    settings: &ExpansionSettings,
) -> Result<CollisionExpansion> {
    let cert = certify(medium, settings.certificate_samples)?;
    expand_albedo_certified(medium, g, settings, &cert)
}

/// As [`expand_albedo`] with a certificate computed beforehand.
pub fn expand_albedo_certified(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    settings: &ExpansionSettings,
    cert: &SubcriticalityCertificate,
) -> Result<CollisionExpansion> {
    if g.side() != Side::Incoming {
        return Err(Error::SideMismatch);
    }
    if g.domain() != medium.domain() {
        return Err(Error::InvalidInput(
            "source and medium live in different dimensions".into(),
        ));
    }
    let m_max = settings.truncation_order;
    if m_max < 2 {
        return Err(Error::InvalidInput(
            "truncation order must be at least 2".into(),
        ));
    }
    if cert.q >= 1.0 {
        return Err(Error::NotSubcritical(format!(
            "contraction ratio {:.4}",
            cert.q
        )));
    }
    let domain = medium.domain();
    let mut orders = vec![apply_ballistic(medium, g)?];
    let mut std_errors = vec![0.0];
    if !medium.has_scattering() {
        for _ in 1..=m_max {
            orders.push(BoundaryMeasure::new(domain, Side::Outgoing));
            std_errors.push(0.0);
        }
    } else {
        orders.push(single_scatter_order(medium, g, settings));
        std_errors.push(0.0);
        let first_mc = match settings.second_order {
            SecondOrder::MonteCarlo => 2,
            SecondOrder::Quadrature {
                resolution,
                rel_tol,
            } => {
                orders.push(double_scatter_order(medium, g, resolution, rel_tol)?);
                std_errors.push(0.0);
                3
            }
        };
        if first_mc <= m_max {
            let (mc_orders, errs) = monte_carlo_orders(medium, g, first_mc, m_max, &settings.mc)?;
            orders.extend(mc_orders);
            std_errors.extend(errs);
        }
    }
    let input = g.variation();
    Ok(CollisionExpansion {
        orders,
        std_errors,
        truncation_order: m_max,
        tail_bound: cert.geometric_tail(m_max) * input,
        kernel_bound_e1: super::kernel_bound_e1(medium),
        ratio: cert.q,
        seed: settings.mc.seed,
    })
}

fn velocity_rule(
    medium: &OpticalMedium,
    v0: Vec3,
    settings: &ExpansionSettings,
) -> QuadratureRule<Vec3> {
    match settings.focus {
        Some(spec) => focused_sphere_quadrature(medium.domain(), v0, spec),
        None => sphere_quadrature(medium.domain(), settings.angular),
    }
}

/// Tensor quadrature of the once-scattered exit flux: Gauss panels along
/// the first-flight chord times a velocity rule.
fn single_scatter_order(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    settings: &ExpansionSettings,
) -> BoundaryMeasure {
    let gl = GaussLegendre::new(settings.chord_nodes);
    let per_atom: Vec<Vec<(crate::geometry::BoundaryRay, f64)>> = g
        .atoms()
        .par_iter()
        .map(|a| {
            let (x0, v0) = (a.ray.x, a.ray.v);
            let tau0 = exit_time(x0, v0);
            let breaks = scattering_panels(medium, x0, v0, tau0);
            let dirs = velocity_rule(medium, v0, settings);
            let mut out = Vec::new();
            for w in breaks.windows(2) {
                for (t, wt) in gl.on(w[0], w[1]) {
                    let z = x0 + v0 * t;
                    let e_in = transmission(medium, x0, v0, t);
                    for (v, wv) in dirs.iter() {
                        let k = medium.k(z, v0, *v);
                        if k == 0.0 {
                            continue;
                        }
                        let s = exit_time(z, *v);
                        let mass = a.mass * wt * wv * e_in * k * transmission(medium, z, *v, s);
                        if mass != 0.0 {
                            out.push((exit_ray(z, *v), mass));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut m = BoundaryMeasure::new(g.domain(), Side::Outgoing);
    for (ray, mass) in per_atom.into_iter().flatten() {
        m.push_unchecked(ray, mass);
    }
    m
}

/// Doubly scattered exit density times the dξ weights of a boundary rule.
fn double_scatter_order(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    resolution: usize,
    rel_tol: f64,
) -> Result<BoundaryMeasure> {
    let rule = boundary_quadrature(medium.domain(), Side::Outgoing, resolution)?;
    let masses: Vec<f64> = rule
        .nodes
        .par_iter()
        .zip(&rule.weights)
        .map(|(exit, w)| {
            let dens: f64 = g
                .atoms()
                .iter()
                .map(|a| a.mass * double_scatter_exit_density(medium, &a.ray, exit, rel_tol))
                .sum();
            dens * w
        })
        .collect();
    let mut m = BoundaryMeasure::new(g.domain(), Side::Outgoing);
    for (ray, mass) in rule.nodes.iter().zip(masses) {
        if mass != 0.0 {
            m.push_unchecked(*ray, mass);
        }
    }
    Ok(m)
}

struct StratumResult {
    /// Exit atoms per order.
    atoms: Vec<Vec<(crate::geometry::BoundaryRay, f64)>>,
    /// Per order: (sum, sum of squares) of the path weights, and sample count.
    sums: Vec<(f64, f64)>,
    samples: usize,
    scale: f64,
}

/// Collision orders `first..=last` by forward path sampling.
///
/// A path enters along a source atom, collides at a stratified point of
/// the first-flight chord, then alternates uniform directions with uniform
/// flight lengths inside the scattering support.  In these variables the
/// weak singularity of the collision kernel is absorbed by the Jacobian.
/// Order m exits after the m-th collision with a uniform direction.
fn monte_carlo_orders(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    first: usize,
    last: usize,
    budget: &MonteCarloBudget,
) -> Result<(Vec<BoundaryMeasure>, Vec<f64>)> {
    let domain = medium.domain();
    let sphere = domain.sphere_measure();
    let support = medium.k_support_radius();
    let strata = budget.strata.max(1);
    let n_atoms = g.len().max(1);
    let per_stratum = (budget.samples / (n_atoms * strata)).max(2);
    let n_orders = last + 1 - first;
    let cube_dims = domain.dimension() - 1;

    let jobs: Vec<(usize, usize)> = (0..g.len())
        .flat_map(|a| (0..strata).map(move |j| (a, j)))
        .collect();
    let results: Vec<StratumResult> = jobs
        .par_iter()
        .map(|&(ai, j)| {
            let atom = &g.atoms()[ai];
            let (x0, v0) = (atom.ray.x, atom.ray.v);
            let mut res = StratumResult {
                atoms: vec![Vec::new(); n_orders],
                sums: vec![(0.0, 0.0); n_orders],
                samples: per_stratum,
                scale: atom.mass / per_stratum as f64,
            };
            let Some((a, b)) = sphere_crossings(x0, v0, support) else {
                return res;
            };
            let a = a.max(0.0);
            let b = b.min(exit_time(x0, v0));
            if b <= a {
                return res;
            }
            let h = (b - a) / strata as f64;
            let mut r = rng::stream(budget.seed, first as u64, (ai * strata + j) as u64);
            let mut u = [0.0; 2];
            for _ in 0..per_stratum {
                let t1 = a + h * (j as f64 + r.random::<f64>());
                let mut z = x0 + v0 * t1;
                let mut vin = v0;
                let mut weight = h * transmission(medium, x0, v0, t1);
                for m in 1..=last {
                    for c in u.iter_mut().take(cube_dims) {
                        *c = r.random::<f64>();
                    }
                    let v = unit_cube_to_sphere(domain, &u[..cube_dims]);
                    let k = medium.k(z, vin, v);
                    if k == 0.0 {
                        break;
                    }
                    weight *= sphere * k;
                    if m >= first {
                        let s = exit_time(z, v);
                        let w = weight * transmission(medium, z, v, s);
                        let o = m - first;
                        res.sums[o].0 += w;
                        res.sums[o].1 += w * w;
                        if w != 0.0 {
                            res.atoms[o].push((exit_ray(z, v), w * res.scale));
                        }
                    }
                    if m == last {
                        break;
                    }
                    // next flight inside the scattering support
                    let Some((_, len)) = sphere_crossings(z, v, support) else {
                        break;
                    };
                    if len <= 0.0 {
                        break;
                    }
                    let s = len * r.random::<f64>();
                    weight *= len * transmission(medium, z, v, s);
                    z = z + v * s;
                    vin = v;
                }
            }
            res
        })
        .collect();

    let mut orders = vec![BoundaryMeasure::new(domain, Side::Outgoing); n_orders];
    let mut variance = vec![0.0; n_orders];
    for res in results {
        for o in 0..n_orders {
            for &(ray, mass) in &res.atoms[o] {
                orders[o].push_unchecked(ray, mass);
            }
            let nsamp = res.samples as f64;
            let (s1, s2) = res.sums[o];
            let mean = s1 / nsamp;
            let var = ((s2 / nsamp - mean * mean) * nsamp / (nsamp - 1.0)).max(0.0);
            variance[o] += res.scale * res.scale * nsamp * var;
        }
    }
    let errors: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
    for (o, (measure, se)) in orders.iter().zip(&errors).enumerate() {
        let mass = measure.total_mass();
        if mass > 0.0 && se / mass > budget.max_rel_error {
            return Err(Error::BudgetExceeded {
                order: first + o,
                achieved: se / mass,
                target: budget.max_rel_error,
            });
        }
    }
    Ok((orders, errors))
}
