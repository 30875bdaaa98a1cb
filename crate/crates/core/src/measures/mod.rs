//! Finitely supported measures on Γ₋ or Γ₊, their file format, the W₁,κ
//! distance and the perturbation models applied to detector data.

mod perturb;
mod simplex;
mod wasserstein;

pub use perturb::{blur, grid_discretize, misalign, psi_source, DiscretizedSource, KernelShape};
pub use simplex::{FlowSolution, NetworkSimplex};
pub use wasserstein::{w1kappa, w1kappa_with_stats, KappaMetric, TransportStats};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryRay, Domain, Side};
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Ground distance on Γ: boundary geodesic plus velocity angle.
pub fn ground_distance(a: &BoundaryRay, b: &BoundaryRay) -> f64 {
    a.x.angle_to(b.x) + a.v.angle_to(b.v)
}

/// A weighted boundary ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub ray: BoundaryRay,
    pub mass: f64,
}

/// A finitely supported signed measure on one side of the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRecord", into = "MeasureRecord")]
pub struct BoundaryMeasure {
    domain: Domain,
    side: Side,
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    side: Side,
    x: Vec<f64>,
    v: Vec<f64>,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureRecord {
    dimension: usize,
    side: Side,
    atoms: Vec<PlainAtom>,
}

#[derive(Serialize, Deserialize)]
struct PlainAtom {
    x: Vec<f64>,
    v: Vec<f64>,
    mass: f64,
}

impl From<BoundaryMeasure> for MeasureRecord {
    fn from(m: BoundaryMeasure) -> Self {
        let n = m.domain.dimension();
        let atoms = m
            .atoms
            .iter()
            .map(|a| PlainAtom {
                x: a.ray.x.to_vec(n),
                v: a.ray.v.to_vec(n),
                mass: a.mass,
            })
            .collect();
        MeasureRecord {
            dimension: n,
            side: m.side,
            atoms,
        }
    }
}

impl TryFrom<MeasureRecord> for BoundaryMeasure {
    type Error = Error;

    fn try_from(r: MeasureRecord) -> Result<Self> {
        let domain = Domain::new(r.dimension)?;
        let mut m = BoundaryMeasure::new(domain, r.side);
        for a in r.atoms {
            let x = Vec3::from_slice(&a.x)
                .ok_or_else(|| Error::InvalidInput("bad atom position".into()))?;
            let v = Vec3::from_slice(&a.v)
                .ok_or_else(|| Error::InvalidInput("bad atom direction".into()))?;
            m.push(BoundaryRay::on_side(x, v, r.side)?, a.mass)?;
        }
        Ok(m)
    }
}

impl BoundaryMeasure {
    pub fn new(domain: Domain, side: Side) -> Self {
        BoundaryMeasure {
            domain,
            side,
            atoms: Vec::new(),
        }
    }

    /// A single atom of the given mass.
    pub fn point(domain: Domain, ray: BoundaryRay, mass: f64) -> Result<Self> {
        let mut m = BoundaryMeasure::new(domain, ray.side);
        m.push(ray, mass)?;
        Ok(m)
    }

    pub fn from_atoms(domain: Domain, side: Side, atoms: Vec<Atom>) -> Result<Self> {
        let mut m = BoundaryMeasure::new(domain, side);
        m.atoms.reserve(atoms.len());
        for a in atoms {
            m.push(a.ray, a.mass)?;
        }
        Ok(m)
    }

    /// Appends an atom after checking its side and mass.
    pub fn push(&mut self, ray: BoundaryRay, mass: f64) -> Result<()> {
        if ray.side != self.side {
            return Err(Error::SideViolation);
        }
        if !mass.is_finite() {
            return Err(Error::InvalidInput(format!(
                "atom mass {mass} is not finite"
            )));
        }
        self.atoms.push(Atom { ray, mass });
        Ok(())
    }

    /// Appends without validation; used by internal kernels whose rays are
    /// on the right side by construction.
    pub(crate) fn push_unchecked(&mut self, ray: BoundaryRay, mass: f64) {
        debug_assert_eq!(ray.side, self.side);
        self.atoms.push(Atom { ray, mass });
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Total variation ∑|m_i|.
    pub fn variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass.abs()).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| a.mass >= 0.0)
    }

    /// ⟨f, μ⟩ = ∑ m_i f(ray_i).
    pub fn integrate(&self, mut f: impl FnMut(&BoundaryRay) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.mass * f(&a.ray)).sum()
    }

    pub fn scaled(&self, s: f64) -> BoundaryMeasure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                ray: a.ray,
                mass: a.mass * s,
            })
            .collect();
        BoundaryMeasure {
            domain: self.domain,
            side: self.side,
            atoms,
        }
    }

    /// Sum of two measures on the same side.
    pub fn plus(&self, other: &BoundaryMeasure) -> Result<BoundaryMeasure> {
        if other.side != self.side || other.domain != self.domain {
            return Err(Error::SideMismatch);
        }
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Ok(BoundaryMeasure {
            domain: self.domain,
            side: self.side,
            atoms,
        })
    }

    /// Drops atoms whose mass is exactly zero.
    pub fn pruned(mut self) -> BoundaryMeasure {
        self.atoms.retain(|a| a.mass != 0.0);
        self
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let n = self.domain.dimension();
        for a in &self.atoms {
            let rec = AtomRecord {
                side: self.side,
                x: a.ray.x.to_vec(n),
                v: a.ray.v.to_vec(n),
                mass: a.mass,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads one atom per line; blank lines are skipped.  The dimension is
    /// taken from the vector lengths and the side from the first record.
    pub fn read_jsonl(r: impl BufRead) -> Result<BoundaryMeasure> {
        let mut out: Option<BoundaryMeasure> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AtomRecord = serde_json::from_str(&line)?;
            let bad = |m: &str| Error::InvalidInput(format!("line {}: {m}", lineno + 1));
            if rec.x.len() != rec.v.len() {
                return Err(bad("x and v have different lengths"));
            }
            let domain = Domain::new(rec.x.len())?;
            let x = Vec3::from_slice(&rec.x).ok_or_else(|| bad("bad position"))?;
            let v = Vec3::from_slice(&rec.v).ok_or_else(|| bad("bad direction"))?;
            let ray = BoundaryRay::on_side(x, v, rec.side)?;
            let m = out.get_or_insert_with(|| BoundaryMeasure::new(domain, rec.side));
            if m.domain != domain {
                return Err(bad("mixed dimensions"));
            }
            if m.side != rec.side {
                return Err(Error::SideMismatch);
            }
            m.push(ray, rec.mass)?;
        }
        out.ok_or_else(|| Error::InvalidInput("measure file has no atoms".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let d = Domain::plane();
        let r1 = crate::geometry::planar_incoming(0.3, 0.2);
        let r2 = crate::geometry::planar_incoming(2.0, -0.7);
        let mut m = BoundaryMeasure::new(d, Side::Incoming);
        m.push(r1, 0.25).unwrap();
        m.push(r2, 0.75).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let back = BoundaryMeasure::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.total_mass(), 1.0);
        assert!(back.atoms()[1].ray.x.max_abs_diff(r2.x) < 1e-15);
    }

    #[test]
    fn rejects_wrong_side() {
        let r = crate::geometry::planar_incoming(0.3, 0.2);
        let mut m = BoundaryMeasure::new(Domain::plane(), Side::Outgoing);
        assert!(matches!(m.push(r, 1.0), Err(Error::SideViolation)));
    }

    #[test]
    fn ground_distance_is_additive() {
        let a = BoundaryRay::new(Vec3::E1, -Vec3::E1).unwrap();
        let b = BoundaryRay::new(Vec3::from_angle(0.2), (-Vec3::E1).rotated_planar(0.1)).unwrap();
        assert!((ground_distance(&a, &b) - 0.3).abs() < 1e-14);
    }
}
