use super::config::ExperimentConfig;
use super::fit::fit_exponent;
use crate::error::Result;
use crate::forward::expand_albedo_certified;
use crate::inversion::{ballistic_bump, line_tube, sign_test, TestFunction};
use crate::measures::BoundaryMeasure;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Bump,
    Tube,
    Sign,
}

/// ⟨φ, order m of A g⟩ / ‖φ‖_∞ for one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScalingRow {
    pub probe: usize,
    pub shape: ShapeKind,
    pub order: usize,
    pub width: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub probe: usize,
    pub shape: ShapeKind,
    pub order: usize,
    /// Log-log slope over the positive values, if at least four.
    pub slope: Option<f64>,
    /// Decay rate of the corresponding upper bound, when one applies.
    pub theory: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScaling {
    pub rows: Vec<EtaScalingRow>,
    pub slopes: Vec<SlopeSummary>,
}

/// Upper-bound exponent in η for a shape and collision order.
pub fn theory_rate(shape: ShapeKind, order: usize, n: usize) -> Option<f64> {
    match shape {
        ShapeKind::Bump => Some(n as f64 - 1.0),
        _ if order >= 2 => Some(n as f64 - 2.0),
        _ => None,
    }
}

/// Pairs bump, tube and (in space) sign test functions of every width with
/// each scattering order of the first medium's data.
pub fn run_eta_scaling(config: &ExperimentConfig) -> Result<EtaScaling> {
    let prep = config.prepare()?;
    let settings = config.expansion_settings();
    let n = config.dimension();
    let kappa = config.kappa[0];
    let [m1, m2] = &prep.media;
    let nested: Vec<Vec<EtaScalingRow>> = prep
        .probes
        .par_iter()
        .enumerate()
        .map(|(pi, ray)| {
            let g = BoundaryMeasure::point(m1.domain(), *ray, 1.0)?;
            let exp = expand_albedo_certified(m1, &g, &settings, &prep.certificates[0])?;
            let mut rows = Vec::new();
            for &width in &config.test_widths {
                let mut shapes: Vec<(ShapeKind, TestFunction)> = vec![
                    (ShapeKind::Bump, ballistic_bump(ray, width, kappa)?),
                    (ShapeKind::Tube, line_tube(ray, width, kappa)?),
                ];
                if n == 3 && width < 1.0 / kappa {
                    shapes.push((ShapeKind::Sign, sign_test(m1, m2, ray, width, kappa, config.seed)?));
                }
                for (shape, phi) in shapes {
                    for order in 1..exp.orders.len() {
                        let value = exp.orders[order].integrate(|r| phi.eval(r)).abs() / phi.sup_norm();
                        rows.push(EtaScalingRow { probe: pi, shape, order, width, value });
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<EtaScalingRow> = nested.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.probe, a.shape, a.order)
            .cmp(&(b.probe, b.shape, b.order))
            .then(a.width.total_cmp(&b.width))
    });
    let mut keys: Vec<(usize, ShapeKind, usize)> = rows.iter().map(|r| (r.probe, r.shape, r.order)).collect();
    keys.dedup();
    let slopes = keys
        .into_iter()
        .map(|(probe, shape, order)| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.probe == probe && r.shape == shape && r.order == order && r.value > 0.0)
                .map(|r| (r.width, r.value))
                .collect();
            SlopeSummary {
                probe,
                shape,
                order,
                slope: fit_exponent(&pts, false).ok().map(|f| f.slope),
                theory: theory_rate(shape, order, n),
                points: pts.len(),
            }
        })
        .collect();
    Ok(EtaScaling { rows, slopes })
}

impl EtaScaling {
    pub fn slope(&self, probe: usize, shape: ShapeKind, order: usize) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.probe == probe && s.shape == shape && s.order == order)
            .and_then(|s| s.slope)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::{MediumEntry, PerturbationSchedule, Probe, QuadratureSettings};
    use crate::forward::SecondOrder;
    use crate::optics::{AbsorptionModel, MediumSpec, ScatteringModel};

    fn config(c: f64) -> ExperimentConfig {
        let spec = |c: f64| {
            let s = if c > 0.0 { ScatteringModel::Isotropic { density: c } } else { ScatteringModel::None };
            MediumSpec::new(2, AbsorptionModel::Constant { value: 0.5 }, s)
        };
        ExperimentConfig {
            media: vec![MediumEntry { name: "a".into(), spec: spec(c) }, MediumEntry { name: "b".into(), spec: spec(0.0) }],
            probes: vec![Probe { x: vec![1.0, 0.0], v: vec![-1.0, 0.0] }],
            perturbations: PerturbationSchedule { blur: vec![0.01], ..Default::default() },
            kappa: vec![4.0],
            truncation_order: 2,
            mc: Default::default(),
            seed: 2,
            output_dir: "out".into(),
            test_widths: vec![0.02, 0.04, 0.08, 0.16],
            quadrature: Some(QuadratureSettings { chord_nodes: 8, angular: 64, focus: Some(Default::default()), second_order: SecondOrder::MonteCarlo }),
        }
    }

    #[test]
    fn no_scattering_contributes_nothing() {
        let t = run_eta_scaling(&config(0.0)).unwrap();
        assert!(!t.rows.is_empty());
        assert!(t.rows.iter().all(|r| r.value == 0.0));
        assert!(t.slopes.iter().all(|s| s.slope.is_none()));
    }

    #[test]
    fn order_one_is_linear_in_k() {
        let a = run_eta_scaling(&config(0.02)).unwrap();
        let b = run_eta_scaling(&config(0.04)).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            if ra.order == 1 {
                assert!((rb.value - 2.0 * ra.value).abs() <= 1e-12 * rb.value.abs().max(1e-300), "{ra:?} {rb:?}");
            }
        }
        let s = a.slope(0, ShapeKind::Bump, 1).unwrap();
        assert!(s >= 0.7, "{s}");
    }
}
