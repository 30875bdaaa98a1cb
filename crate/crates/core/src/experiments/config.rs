use crate::error::{Error, Result};
use crate::forward::{ExpansionSettings, MonteCarloBudget, SecondOrder};
use crate::geometry::{BoundaryRay, FocusSpec, Side};
use crate::optics::{certify, MediumSpec, OpticalMedium, SubcriticalityCertificate};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: MediumSpec,
}

/// Incoming probe ray (x₀, v₀).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Probe {
    pub fn ray(&self, dimension: usize) -> Result<BoundaryRay> {
        let parse = |c: &[f64], what: &str| {
            if c.len() != dimension {
                return Err(Error::InvalidInput(format!("probe {what} has {} components in dimension {dimension}", c.len())));
            }
            Vec3::from_slice(c).ok_or_else(|| Error::InvalidInput(format!("probe {what} is malformed")))
        };
        BoundaryRay::on_side(parse(&self.x, "position")?, parse(&self.v, "direction")?, Side::Incoming)
    }
}

/// Perturbation levels applied to the second medium's data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    /// Blur widths η_blur.
    #[serde(default)]
    pub blur: Vec<f64>,
    /// Misalignment shifts.
    #[serde(default)]
    pub shift: Vec<f64>,
    /// Source grid meshes h.
    #[serde(default)]
    pub mesh: Vec<f64>,
}

/// Quadrature knobs of the forward expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    pub chord_nodes: usize,
    pub angular: usize,
    #[serde(default)]
    pub focus: Option<FocusSpec>,
    #[serde(default = "monte_carlo")]
    pub second_order: SecondOrder,
}

fn monte_carlo() -> SecondOrder {
    SecondOrder::MonteCarlo
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub media: Vec<MediumEntry>,
    pub probes: Vec<Probe>,
    pub perturbations: PerturbationSchedule,
    pub kappa: Vec<f64>,
    pub truncation_order: usize,
    #[serde(default)]
    pub mc: MonteCarloBudget,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Widths η of the test functions; the reported error is the minimum over them.
    #[serde(default = "default_widths")]
    pub test_widths: Vec<f64>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSettings>,
}

/// 28 widths log-spaced over [0.004, 0.8].
pub fn default_widths() -> Vec<f64> {
    (0..28).map(|i| 0.004 * 200f64.powf(i as f64 / 27.0)).collect()
}

/// A validated configuration with its media built and certified.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub media: [OpticalMedium; 2],
    pub certificates: [SubcriticalityCertificate; 2],
    pub probes: Vec<BoundaryRay>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn dimension(&self) -> usize {
        self.media.first().map(|m| m.spec.dimension).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.media.len() != 2 {
            return bad("exactly two media are required");
        }
        if self.media[0].spec.dimension != self.media[1].spec.dimension {
            return bad("media have different dimensions");
        }
        if self.probes.is_empty() || self.kappa.is_empty() || self.test_widths.is_empty() {
            return bad("probe, kappa and test width lists must be non-empty");
        }
        let p = &self.perturbations;
        if p.blur.is_empty() && p.shift.is_empty() && p.mesh.is_empty() {
            return bad("perturbation schedule is empty");
        }
        if self.kappa.iter().any(|k| !(*k >= 1.0) || !k.is_finite()) {
            return bad("every kappa must be a finite value >= 1");
        }
        if self.test_widths.iter().any(|e| !(*e > 0.0 && *e < 2.0)) {
            return bad("test widths must lie in (0, 2)");
        }
        let levels = p.blur.iter().chain(&p.shift).copied();
        if levels.clone().any(|l| !(l >= 0.0) || !l.is_finite()) || p.mesh.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return bad("perturbation levels must be finite and nonnegative (meshes positive)");
        }
        if self.truncation_order < 2 {
            return bad("truncation order must be at least 2");
        }
        Ok(())
    }

    /// Validates, builds and certifies both media.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let m0 = self.media[0].spec.clone().build()?;
        let m1 = self.media[1].spec.clone().build()?;
        let settings = self.expansion_settings();
        let c0 = certify(&m0, settings.certificate_samples)?;
        let c1 = certify(&m1, settings.certificate_samples)?;
        let probes = self.probes.iter().map(|p| p.ray(self.dimension())).collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            config: self.clone(),
            media: [m0, m1],
            certificates: [c0, c1],
            probes,
        })
    }

    pub fn expansion_settings(&self) -> ExpansionSettings {
        let mut s = ExpansionSettings::for_dimension(self.dimension());
        s.truncation_order = self.truncation_order;
        s.mc = self.mc;
        s.mc.seed = self.seed;
        if let Some(q) = &self.quadrature {
            s.chord_nodes = q.chord_nodes;
            s.angular = q.angular;
            s.focus = q.focus;
            s.second_order = q.second_order;
        }
        s
    }
}
