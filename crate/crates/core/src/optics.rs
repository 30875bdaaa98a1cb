//! Absorption and scattering models, subcriticality certificates and the
//! gauge representative of a pair of absorptions.

use crate::error::{Error, Result};
use crate::geometry::{
    entry_time, exit_time, unit_cube_to_ball, unit_cube_to_sphere, Domain, PhasePoint,
};
use crate::quadrature::{adaptive, halton, GaussLegendre};
use crate::vec3::Vec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Anything that provides an absorption rate σ(x, v).
pub trait Absorption: Sync {
    fn sigma(&self, x: Vec3, v: Vec3) -> f64;

    /// Optical depth ∫₀^len σ(x + s v, v) ds by a composite Gauss rule.
    fn depth(&self, x: Vec3, v: Vec3, len: f64) -> f64 {
        composite_depth(self, x, v, len, &[])
    }
}

fn depth_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(10))
}

/// Panels of length ≤ 0.25 with extra breaks at the closest approach to
/// the origin and at `extra`.
pub(crate) fn composite_depth<A: Absorption + ?Sized>(
    a: &A,
    x: Vec3,
    v: Vec3,
    len: f64,
    extra: &[f64],
) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let mut breaks: Vec<f64> = Vec::with_capacity(8);
    breaks.push(0.0);
    breaks.push(len);
    let closest = -x.dot(v);
    if closest > 0.0 && closest < len {
        breaks.push(closest);
    }
    breaks.extend(extra.iter().copied().filter(|&s| s > 0.0 && s < len));
    breaks.sort_by(f64::total_cmp);
    let gl = depth_rule();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let pieces = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / pieces as f64;
        for p in 0..pieces {
            let a0 = w[0] + p as f64 * h;
            total += gl.integrate(a0, a0 + h, |s| a.sigma(x + v * s, v));
        }
    }
    total
}

/// Parameters where the line `x + s v` crosses the sphere of radius `r`.
pub(crate) fn sphere_crossings(x: Vec3, v: Vec3, r: f64) -> Option<(f64, f64)> {
    let b = x.dot(v);
    let disc = b * b - (x.norm_sq() - r * r);
    if disc <= 0.0 {
        return None;
    }
    let q = disc.sqrt();
    Some((-b - q, -b + q))
}

/// Absorption models. All shipped models depend on position only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbsorptionModel {
    Constant {
        value: f64,
    },
    /// σ(x) = Σ_j c_j |x|^j.
    RadialPolynomial {
        coefficients: Vec<f64>,
    },
    /// σ(x) = background + amplitude·exp(−|x − center|²/(2 width²)).
    GaussianBump {
        background: f64,
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl AbsorptionModel {
    pub fn eval(&self, x: Vec3) -> f64 {
        match self {
            AbsorptionModel::Constant { value } => *value,
            AbsorptionModel::RadialPolynomial { coefficients } => {
                let r = x.norm();
                coefficients.iter().rev().fold(0.0, |acc, c| acc * r + c)
            }
            AbsorptionModel::GaussianBump {
                background,
                amplitude,
                center,
                width,
            } => {
                let c = Vec3::from_slice(center).unwrap_or(Vec3::ZERO);
                background + amplitude * (-(x - c).norm_sq() / (2.0 * width * width)).exp()
            }
        }
    }

    /// Closed-form Lipschitz bound in x.
    pub fn lipschitz(&self) -> f64 {
        match self {
            AbsorptionModel::Constant { .. } => 0.0,
            AbsorptionModel::RadialPolynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(j, c)| j as f64 * c.abs())
                .sum(),
            AbsorptionModel::GaussianBump {
                amplitude, width, ..
            } => amplitude.abs() / width * (-0.5f64).exp(),
        }
    }

    fn validate(&self, domain: Domain) -> Result<()> {
        match self {
            AbsorptionModel::Constant { value } => {
                if *value < 0.0 || !value.is_finite() {
                    return Err(Error::Inadmissible(format!(
                        "absorption {value} is negative"
                    )));
                }
            }
            AbsorptionModel::RadialPolynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::Inadmissible("empty radial polynomial".into()));
                }
                let min = (0..=2000)
                    .map(|i| self.eval(Vec3::planar(i as f64 / 2000.0, 0.0)))
                    .fold(f64::INFINITY, f64::min);
                if min < 0.0 {
                    return Err(Error::Inadmissible(format!(
                        "radial absorption dips to {min}"
                    )));
                }
            }
            AbsorptionModel::GaussianBump {
                background,
                amplitude,
                center,
                width,
            } => {
                if Vec3::from_slice(center).is_none() || center.len() != domain.dimension() {
                    return Err(Error::Inadmissible(
                        "bump center has the wrong length".into(),
                    ));
                }
                if *width <= 0.0 || *background < 0.0 || background + amplitude.min(0.0) < 0.0 {
                    return Err(Error::Inadmissible(
                        "Gaussian bump can become negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Angular scattering models; each is multiplied by the radial cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScatteringModel {
    None,
    /// k = density.
    Isotropic {
        density: f64,
    },
    /// k = total · p(v'·v) with the normalized Henyey-Greenstein phase function.
    HenyeyGreenstein {
        total: f64,
        asymmetry: f64,
    },
    /// k = density·(1 + a·v' + b·v), nonnegative when |a| + |b| ≤ 1.
    LinearAnisotropic {
        density: f64,
        incoming: Vec<f64>,
        outgoing: Vec<f64>,
    },
}

impl ScatteringModel {
    fn angular(&self, domain: Domain, vin: Vec3, vout: Vec3) -> f64 {
        match self {
            ScatteringModel::None => 0.0,
            ScatteringModel::Isotropic { density } => *density,
            ScatteringModel::HenyeyGreenstein { total, asymmetry } => {
                total * hg_phase(domain, *asymmetry, vin.dot(vout))
            }
            ScatteringModel::LinearAnisotropic {
                density,
                incoming,
                outgoing,
            } => {
                let a = Vec3::from_slice(incoming).unwrap_or(Vec3::ZERO);
                let b = Vec3::from_slice(outgoing).unwrap_or(Vec3::ZERO);
                density * (1.0 + a.dot(vin) + b.dot(vout))
            }
        }
    }

    fn angular_total(&self, domain: Domain, vin: Vec3) -> f64 {
        match self {
            ScatteringModel::None => 0.0,
            ScatteringModel::Isotropic { density } => density * domain.sphere_measure(),
            ScatteringModel::HenyeyGreenstein { total, .. } => *total,
            ScatteringModel::LinearAnisotropic {
                density, incoming, ..
            } => {
                let a = Vec3::from_slice(incoming).unwrap_or(Vec3::ZERO);
                density * domain.sphere_measure() * (1.0 + a.dot(vin))
            }
        }
    }

    fn angular_sup(&self, domain: Domain) -> f64 {
        match self {
            ScatteringModel::None => 0.0,
            ScatteringModel::Isotropic { density } => density.abs(),
            ScatteringModel::HenyeyGreenstein { total, asymmetry } => {
                total * hg_phase(domain, asymmetry.abs(), 1.0)
            }
            ScatteringModel::LinearAnisotropic {
                density,
                incoming,
                outgoing,
            } => density * (1.0 + norm_of(incoming) + norm_of(outgoing)),
        }
    }

    /// Lipschitz bound in (v', v) with respect to the sum of angles.
    fn angular_lipschitz(&self, domain: Domain) -> f64 {
        match self {
            ScatteringModel::None | ScatteringModel::Isotropic { .. } => 0.0,
            ScatteringModel::HenyeyGreenstein { total, asymmetry } => {
                let g = asymmetry.abs();
                let d = if domain.dimension() == 2 {
                    2.0 * g * (1.0 - g * g) / (2.0 * PI * (1.0 - g).powi(4))
                } else {
                    3.0 * g * (1.0 - g * g) / (4.0 * PI * (1.0 - g).powi(5))
                };
                total * d
            }
            ScatteringModel::LinearAnisotropic {
                density,
                incoming,
                outgoing,
            } => density * (norm_of(incoming) + norm_of(outgoing)),
        }
    }

    fn scaled(&self, s: f64) -> ScatteringModel {
        match self {
            ScatteringModel::None => ScatteringModel::None,
            ScatteringModel::Isotropic { density } => ScatteringModel::Isotropic {
                density: density * s,
            },
            ScatteringModel::HenyeyGreenstein { total, asymmetry } => {
                ScatteringModel::HenyeyGreenstein {
                    total: total * s,
                    asymmetry: *asymmetry,
                }
            }
            ScatteringModel::LinearAnisotropic {
                density,
                incoming,
                outgoing,
            } => ScatteringModel::LinearAnisotropic {
                density: density * s,
                incoming: incoming.clone(),
                outgoing: outgoing.clone(),
            },
        }
    }

    fn validate(&self, domain: Domain) -> Result<()> {
        let bad = |m: String| Err(Error::Inadmissible(m));
        match self {
            ScatteringModel::None => Ok(()),
            ScatteringModel::Isotropic { density } => {
                if *density < 0.0 {
                    return bad(format!("negative scattering density {density}"));
                }
                Ok(())
            }
            ScatteringModel::HenyeyGreenstein { total, asymmetry } => {
                if *total < 0.0 || asymmetry.abs() >= 1.0 {
                    return bad("Henyey-Greenstein needs total >= 0 and |g| < 1".into());
                }
                Ok(())
            }
            ScatteringModel::LinearAnisotropic {
                density,
                incoming,
                outgoing,
            } => {
                let n = domain.dimension();
                if incoming.len() != n || outgoing.len() != n {
                    return bad("anisotropy vectors have the wrong length".into());
                }
                if *density < 0.0 || norm_of(incoming) + norm_of(outgoing) > 1.0 {
                    return bad("linear anisotropy can make k negative".into());
                }
                Ok(())
            }
        }
    }
}

fn norm_of(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Henyey-Greenstein phase function normalized to unit mass on the sphere.
pub fn hg_phase(domain: Domain, g: f64, cos: f64) -> f64 {
    let base = 1.0 + g * g - 2.0 * g * cos;
    if domain.dimension() == 2 {
        (1.0 - g * g) / (2.0 * PI * base)
    } else {
        (1.0 - g * g) / (4.0 * PI * base.powf(1.5))
    }
}

/// Smooth radial cutoff: 1 for |x| ≤ 1 − 2 r₀, 0 for |x| ≥ 1 − r₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCutoff {
    pub margin: f64,
}

impl RadialCutoff {
    pub fn eval(&self, r: f64) -> f64 {
        let outer = 1.0 - self.margin;
        if r >= outer {
            0.0
        } else if r <= outer - self.margin {
            1.0
        } else {
            let s = (outer - r) / self.margin;
            s * s * (3.0 - 2.0 * s)
        }
    }

    pub fn lipschitz(&self) -> f64 {
        1.5 / self.margin
    }
}

/// Declarative description of a medium, as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub dimension: usize,
    pub absorption: AbsorptionModel,
    #[serde(default = "no_scattering")]
    pub scattering: ScatteringModel,
    #[serde(default = "default_margin")]
    pub cutoff_margin: f64,
    /// When set, σ is the given absorption plus σ_p (no-loss scattering part).
    #[serde(default)]
    pub extinction_includes_scattering: bool,
}

fn no_scattering() -> ScatteringModel {
    ScatteringModel::None
}

fn default_margin() -> f64 {
    0.1
}

impl MediumSpec {
    pub fn new(dimension: usize, absorption: AbsorptionModel, scattering: ScatteringModel) -> Self {
        MediumSpec {
            dimension,
            absorption,
            scattering,
            cutoff_margin: default_margin(),
            extinction_includes_scattering: false,
        }
    }

    pub fn build(self) -> Result<OpticalMedium> {
        OpticalMedium::new(self)
    }
}

/// An admissible pair (σ, k) on the unit ball.
#[derive(Debug, Clone)]
pub struct OpticalMedium {
    spec: MediumSpec,
    domain: Domain,
    cutoff: RadialCutoff,
}

impl OpticalMedium {
    pub fn new(spec: MediumSpec) -> Result<Self> {
        let domain = Domain::new(spec.dimension)?;
        if !(spec.cutoff_margin > 0.0 && spec.cutoff_margin < 0.5) {
            return Err(Error::Inadmissible(format!(
                "cutoff margin {} must lie in (0, 0.5)",
                spec.cutoff_margin
            )));
        }
        spec.absorption.validate(domain)?;
        spec.scattering.validate(domain)?;
        let cutoff = RadialCutoff {
            margin: spec.cutoff_margin,
        };
        Ok(OpticalMedium {
            spec,
            domain,
            cutoff,
        })
    }

    pub fn spec(&self) -> &MediumSpec {
        &self.spec
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    /// Extinction rate σ(x, v).
    pub fn sigma(&self, x: Vec3, v: Vec3) -> f64 {
        let base = self.spec.absorption.eval(x);
        if self.spec.extinction_includes_scattering {
            base + self.sigma_p(x, v)
        } else {
            base
        }
    }

    /// Scattering density k(x, v', v) from direction v' into direction v.
    pub fn k(&self, x: Vec3, vin: Vec3, vout: Vec3) -> f64 {
        let c = self.cutoff.eval(x.norm());
        if c == 0.0 {
            return 0.0;
        }
        c * self.spec.scattering.angular(self.domain, vin, vout)
    }

    /// σ_p(x, v') = ∫_V k(x, v', v) dv.
    pub fn sigma_p(&self, x: Vec3, vin: Vec3) -> f64 {
        let c = self.cutoff.eval(x.norm());
        if c == 0.0 {
            return 0.0;
        }
        c * self.spec.scattering.angular_total(self.domain, vin)
    }

    pub fn has_scattering(&self) -> bool {
        self.k_sup() > 0.0
    }

    /// ‖k‖_∞.
    pub fn k_sup(&self) -> f64 {
        self.spec.scattering.angular_sup(self.domain)
    }

    /// Radius outside which k vanishes.
    pub fn k_support_radius(&self) -> f64 {
        1.0 - self.cutoff.margin
    }

    pub fn k_support_margin(&self) -> f64 {
        self.cutoff.margin
    }

    /// Boundary cutoff ρ: 1 on the support of k, 0 near ∂X.
    pub fn boundary_cutoff(&self, x: Vec3) -> f64 {
        let inner = 1.0 - self.cutoff.margin;
        let outer = 1.0 - 0.5 * self.cutoff.margin;
        let r = x.norm();
        if r <= inner {
            1.0
        } else if r >= outer {
            0.0
        } else {
            let s = (outer - r) / (outer - inner);
            s * s * (3.0 - 2.0 * s)
        }
    }

    pub fn sigma_lipschitz(&self) -> f64 {
        let mut l = self.spec.absorption.lipschitz();
        if self.spec.extinction_includes_scattering {
            l += self.sigma_p_sup() * self.cutoff.lipschitz();
        }
        l
    }

    pub fn k_lipschitz(&self) -> f64 {
        self.k_sup() * self.cutoff.lipschitz() + self.spec.scattering.angular_lipschitz(self.domain)
    }

    /// Declared Lipschitz bound L = max(Lip σ, Lip k).
    pub fn lipschitz_bound(&self) -> f64 {
        self.sigma_lipschitz().max(self.k_lipschitz())
    }

    /// Upper bound of σ_p over X × V.
    pub fn sigma_p_sup(&self) -> f64 {
        match &self.spec.scattering {
            ScatteringModel::LinearAnisotropic {
                density, incoming, ..
            } => density * self.domain.sphere_measure() * (1.0 + norm_of(incoming)),
            s => s.angular_total(self.domain, Vec3::E1),
        }
    }

    /// Same medium with k multiplied by `s`.
    pub fn with_scaled_scattering(&self, s: f64) -> Result<OpticalMedium> {
        let mut spec = self.spec.clone();
        spec.scattering = spec.scattering.scaled(s);
        OpticalMedium::new(spec)
    }

    /// Same absorption model without scattering.
    pub fn without_scattering(&self) -> OpticalMedium {
        let mut spec = self.spec.clone();
        spec.scattering = ScatteringModel::None;
        OpticalMedium::new(spec).expect("removing scattering keeps a medium admissible")
    }
}

impl Absorption for OpticalMedium {
    fn sigma(&self, x: Vec3, v: Vec3) -> f64 {
        OpticalMedium::sigma(self, x, v)
    }

    fn depth(&self, x: Vec3, v: Vec3, len: f64) -> f64 {
        if len <= 0.0 {
            return 0.0;
        }
        let scattering_part = self.spec.extinction_includes_scattering && self.has_scattering();
        if let AbsorptionModel::Constant { value } = self.spec.absorption {
            if !scattering_part {
                return value * len;
            }
        }
        if scattering_part {
            let mut extra = [f64::NAN; 4];
            let outer = self.k_support_radius();
            if let Some((a, b)) = sphere_crossings(x, v, outer) {
                extra[0] = a;
                extra[1] = b;
            }
            if let Some((a, b)) = sphere_crossings(x, v, outer - self.cutoff.margin) {
                extra[2] = a;
                extra[3] = b;
            }
            composite_depth(self, x, v, len, &extra)
        } else {
            composite_depth(self, x, v, len, &[])
        }
    }
}

/// Which subcriticality hypothesis a medium satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// σ − σ_p ≥ 0: absorption dominates scattering.
    #[serde(rename = "HSC1")]
    AbsorptionDominated,
    /// ‖τσ_p‖_∞ < 1.
    #[serde(rename = "HSC2")]
    ShortChords,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcriticalityCertificate {
    pub mode: Regime,
    /// Dimensionless slack of the certified hypothesis.
    pub margin: f64,
    /// Contraction ratio used for truncating collision series.
    pub q: f64,
    /// Sampled ‖τσ_p‖_∞.
    pub tau_sigma_p: f64,
    /// Sampled min of σ − σ_p.
    pub min_absorption_excess: f64,
    pub samples: usize,
}

impl SubcriticalityCertificate {
    /// Geometric tail Σ_{m>M} q^m = q^{M+1}/(1 − q).
    pub fn geometric_tail(&self, truncation: usize) -> f64 {
        if self.q == 0.0 {
            0.0
        } else {
            self.q.powi(truncation as i32 + 1) / (1.0 - self.q)
        }
    }
}

/// Certifies HSC1 or HSC2 on a deterministic Halton sample of X × V.
///
/// HSC1 is reported whenever it holds; otherwise HSC2. The ratio q is the
/// smaller of ‖τσ_p‖ and the sampled sup of ∫₀^{τ₊} e^{−∫σ} σ_p, the norm of
/// the backward collision operator on bounded fields.
pub fn certify(medium: &OpticalMedium, sample_count: usize) -> Result<SubcriticalityCertificate> {
    let domain = medium.domain();
    let n = domain.dimension();
    let dims = n + n - 1;
    let gl = GaussLegendre::new(12);
    struct Stat {
        excess: f64,
        tau_excess: f64,
        tau_sp: f64,
        ratio: f64,
    }
    let stats: Vec<Stat> = (0..sample_count as u64)
        .into_par_iter()
        .map(|i| {
            let u = halton(i, dims);
            let x = unit_cube_to_ball(domain, &u[..n]);
            let v = unit_cube_to_sphere(domain, &u[n..]);
            let sp = medium.sigma_p(x, v);
            let excess = medium.sigma(x, v) - sp;
            let tp = exit_time(x, v);
            let tau = tp + entry_time(x, v);
            let ratio = if medium.has_scattering() {
                collision_ratio(medium, &gl, x, v, tp)
            } else {
                0.0
            };
            Stat {
                excess,
                tau_excess: tau * excess,
                tau_sp: tau * sp,
                ratio,
            }
        })
        .collect();
    let min_excess = stats.iter().map(|s| s.excess).fold(f64::INFINITY, f64::min);
    let tau_sp = stats.iter().map(|s| s.tau_sp).fold(0.0, f64::max);
    let ratio = stats.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let min_tau_excess = stats
        .iter()
        .map(|s| s.tau_excess)
        .fold(f64::INFINITY, f64::min);
    let q = tau_sp.min(ratio);
    let (mode, margin) = if min_excess >= -1e-12 {
        (Regime::AbsorptionDominated, min_tau_excess.max(0.0))
    } else if tau_sp < 1.0 {
        (Regime::ShortChords, 1.0 - tau_sp)
    } else {
        return Err(Error::NotSubcritical(format!(
            "min(σ − σ_p) = {min_excess:.4e} and ‖τσ_p‖ = {tau_sp:.4}"
        )));
    };
    if q >= 1.0 {
        return Err(Error::NotSubcritical(format!(
            "contraction ratio {q:.4} is not below 1"
        )));
    }
    Ok(SubcriticalityCertificate {
        mode,
        margin,
        q,
        tau_sigma_p: tau_sp,
        min_absorption_excess: min_excess,
        samples: sample_count,
    })
}

/// ∫₀^{τ₊} e^{−∫₀^r σ} σ_p(x + r v, v) dr with a composite Gauss rule.
fn collision_ratio(medium: &OpticalMedium, gl: &GaussLegendre, x: Vec3, v: Vec3, len: f64) -> f64 {
    let panels = 4;
    let h = len / panels as f64;
    let mut depth = 0.0;
    let mut at = 0.0;
    let mut total = 0.0;
    for p in 0..panels {
        let a = p as f64 * h;
        for (r, w) in gl.on(a, a + h) {
            depth += medium.depth(x + v * at, v, r - at);
            at = r;
            total += w * (-depth).exp() * medium.sigma_p(x + v * r, v);
        }
    }
    total
}

/// Chord average of σ₁ − σ₂: the representative used for gauge classes.
pub fn gauge_representative_diff(m1: &OpticalMedium, m2: &OpticalMedium, p: &PhasePoint) -> f64 {
    let (x, v) = (p.x, p.v);
    let a = -entry_time(x, v);
    let b = exit_time(x, v);
    let chord = b - a;
    let diff = |s: f64| {
        let y = x + v * s;
        m1.sigma(y, v) - m2.sigma(y, v)
    };
    if chord <= 0.0 {
        return diff(0.0);
    }
    adaptive(diff, a, b, 1e-12, 1e-14, 200).value / chord
}
