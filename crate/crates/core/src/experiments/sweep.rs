use super::config::{ExperimentConfig, Prepared};
use super::fit::log_factor;
use crate::error::{Error, Result};
use crate::forward::{expand_albedo_certified, line_integral, ExpansionSettings};
use crate::geometry::{exit_time, BoundaryRay};
use crate::inversion::{ballistic_bump, sign_test, TestFunction};
use crate::measures::{blur, grid_discretize, misalign, w1kappa, BoundaryMeasure, KappaMetric, KernelShape};
use crate::optics::{OpticalMedium, SubcriticalityCertificate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Version tag written in the first column of every stability CSV row.
pub const STABILITY_SCHEMA: u32 = 1;

/// Above this product of support sizes ε is bounded atom by atom instead
/// of solving one transport problem.
pub const LP_SIZE_LIMIT: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Blur,
    Shift,
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMethod {
    /// Exact W₁,κ of the exact and perturbed data.
    Lp,
    /// Sum over atoms of W₁,κ(atom, perturbed atom), an upper bound.
    Coupling,
    /// No measurement perturbation.
    None,
}

/// One perturbation level seen through one probe at one κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub schema: u32,
    pub kind: PerturbationKind,
    pub level: f64,
    pub probe: usize,
    pub kappa: f64,
    /// W₁,κ between exact and perturbed data.
    pub epsilon: f64,
    /// Certified source error.
    pub delta: f64,
    pub recon_error: f64,
    /// Test-function width attaining `recon_error`.
    pub best_width: f64,
    /// 1 + √|ln((ε + δ)/κ)|, or 0 when ε + δ = 0.
    pub log_factor: f64,
    pub epsilon_method: EpsilonMethod,
}

impl StabilityRecord {
    /// (ε + δ)/κ.
    pub fn abscissa(&self) -> f64 {
        (self.epsilon + self.delta) / self.kappa
    }
}

/// Writes records with a header row.
pub fn write_records(records: &[StabilityRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(r: impl std::io::Read) -> Result<Vec<StabilityRecord>> {
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        let rec: StabilityRecord = rec?;
        if rec.schema != STABILITY_SCHEMA {
            return Err(Error::InvalidInput(format!("unsupported stability schema {}", rec.schema)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Worst case over probes: per (level, κ) the largest abscissa and error.
/// Levels with zero abscissa are dropped.
pub fn envelope(records: &[StabilityRecord], kind: PerturbationKind) -> Vec<(f64, f64)> {
    let mut keys: Vec<(f64, f64)> = records.iter().filter(|r| r.kind == kind).map(|r| (r.level, r.kappa)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .filter_map(|(level, kappa)| {
            let group = records.iter().filter(|r| r.kind == kind && r.level == level && r.kappa == kappa);
            let (x, y) = group.fold((0.0f64, 0.0f64), |(x, y), r| (x.max(r.abscissa()), y.max(r.recon_error)));
            (x > 0.0).then_some((x, y))
        })
        .collect()
}

/// ∫ σ along the chord of an incoming ray.
pub fn chord_integral(medium: &OpticalMedium, ray: &BoundaryRay) -> f64 {
    let len = exit_time(ray.x, ray.v);
    line_integral(|s| medium.sigma(ray.x + ray.v * s, ray.v), 0.0, len)
}

/// W₁,κ between data and a perturbation of it acting atom by atom.
pub fn measurement_error(
    exact: &BoundaryMeasure,
    perturb: &(dyn Fn(&BoundaryMeasure) -> Result<BoundaryMeasure> + Sync),
    measured: &BoundaryMeasure,
    metric: &KappaMetric,
) -> Result<(f64, EpsilonMethod)> {
    if exact.len() * measured.len() <= LP_SIZE_LIMIT {
        return Ok((w1kappa(exact, measured, metric)?, EpsilonMethod::Lp));
    }
    let parts: Vec<f64> = exact
        .atoms()
        .par_iter()
        .map(|a| {
            let point = BoundaryMeasure::from_atoms(exact.domain(), exact.side(), vec![*a])?;
            w1kappa(&point, &perturb(&point)?, metric)
        })
        .collect::<Result<_>>()?;
    Ok((parts.iter().sum(), EpsilonMethod::Coupling))
}

/// Test functions of one probe at one κ with their pairings against the
/// exact reference data.
struct WidthPlan {
    width: f64,
    phi: TestFunction,
    reference: f64,
    truth: f64,
}

/// Which functional a sweep reconstructs.
trait Extraction: Sync {
    fn test_function(&self, probe: &BoundaryRay, width: f64, kappa: f64) -> Result<Option<TestFunction>>;
    /// Error of the reconstruction from the two pairings.
    fn error(&self, phi: &TestFunction, reference: f64, measured: f64, truth: f64) -> Option<f64>;
    /// True value of the functional seen through φ, given both media's
    /// exact single-scattering data.
    fn truth(&self, probe: &BoundaryRay, phi: &TestFunction, single: [&BoundaryMeasure; 2]) -> f64;
}

struct Ballistic<'a> {
    media: &'a [OpticalMedium; 2],
}

impl Extraction for Ballistic<'_> {
    fn test_function(&self, probe: &BoundaryRay, width: f64, kappa: f64) -> Result<Option<TestFunction>> {
        ballistic_bump(probe, width, kappa).map(Some)
    }

    fn error(&self, _: &TestFunction, reference: f64, measured: f64, truth: f64) -> Option<f64> {
        // value₁ − value₂ = ln(P₂ / P₁) for unit sources
        (reference > 0.0 && measured > 0.0).then(|| ((measured / reference).ln() - truth).abs())
    }

    fn truth(&self, probe: &BoundaryRay, _: &TestFunction, _: [&BoundaryMeasure; 2]) -> f64 {
        chord_integral(&self.media[0], probe) - chord_integral(&self.media[1], probe)
    }
}

struct SingleScatter<'a> {
    media: &'a [OpticalMedium; 2],
    seed: u64,
}


impl Extraction for SingleScatter<'_> {
    fn test_function(&self, probe: &BoundaryRay, width: f64, kappa: f64) -> Result<Option<TestFunction>> {
        if width >= 1.0 / kappa {
            return Ok(None);
        }
        sign_test(&self.media[0], &self.media[1], probe, width, kappa, self.seed).map(Some)
    }

    fn error(&self, phi: &TestFunction, reference: f64, measured: f64, truth: f64) -> Option<f64> {
        Some(((reference - measured) / phi.amplitude - truth).abs())
    }

    /// The single-scattering part of the estimate, so that exact data leave
    /// only the multiple-scattering bias.
    fn truth(&self, _: &BoundaryRay, phi: &TestFunction, single: [&BoundaryMeasure; 2]) -> f64 {
        (single[0].integrate(|r| phi.eval(r)) - single[1].integrate(|r| phi.eval(r))) / phi.amplitude
    }
}

struct ProbeState {
    source: BoundaryMeasure,
    exact2: BoundaryMeasure,
    /// Per κ, the usable widths.
    plans: Vec<Vec<WidthPlan>>,
}

fn expand_total(
    medium: &OpticalMedium,
    g: &BoundaryMeasure,
    settings: &ExpansionSettings,
    cert: &SubcriticalityCertificate,
) -> Result<BoundaryMeasure> {
    expand_albedo_certified(medium, g, settings, cert)?.total()
}

fn run_sweep(prep: &Prepared, extraction: &dyn Extraction, second_seed: u64) -> Result<Vec<StabilityRecord>> {
    let cfg = &prep.config;
    let settings = cfg.expansion_settings();
    let mut settings2 = settings.clone();
    settings2.mc.seed = second_seed;
    let domain = prep.media[0].domain();

    let states: Vec<ProbeState> = prep
        .probes
        .par_iter()
        .map(|ray| {
            let source = BoundaryMeasure::point(domain, *ray, 1.0)?;
            let exp1 = expand_albedo_certified(&prep.media[0], &source, &settings, &prep.certificates[0])?;
            let exp2 = expand_albedo_certified(&prep.media[1], &source, &settings2, &prep.certificates[1])?;
            let (exact1, exact2) = (exp1.total()?, exp2.total()?);
            let single = [&exp1.orders[1], &exp2.orders[1]];
            let mut plans = Vec::new();
            for &kappa in &cfg.kappa {
                let mut plan = Vec::new();
                for &width in &cfg.test_widths {
                    if let Some(phi) = extraction.test_function(ray, width, kappa)? {
                        let reference = exact1.integrate(|r| phi.eval(r));
                        let truth = extraction.truth(ray, &phi, single);
                        plan.push(WidthPlan { width, phi, reference, truth });
                    }
                }
                plans.push(plan);
            }
            Ok(ProbeState { source, exact2, plans })
        })
        .collect::<Result<_>>()?;

    let p = &cfg.perturbations;
    let mut jobs = Vec::new();
    for (kind, levels) in [(PerturbationKind::Blur, &p.blur), (PerturbationKind::Shift, &p.shift), (PerturbationKind::Mesh, &p.mesh)] {
        for &level in levels {
            for probe in 0..states.len() {
                jobs.push((kind, level, probe));
            }
        }
    }
    let shape = KernelShape::default_for(domain);
    let nested: Vec<Vec<StabilityRecord>> = jobs
        .par_iter()
        .map(|&(kind, level, probe)| {
            let st = &states[probe];
            let perturb = |m: &BoundaryMeasure| match kind {
                PerturbationKind::Blur => blur(m, level, shape),
                PerturbationKind::Shift => misalign(m, level),
                PerturbationKind::Mesh => Ok(m.clone()),
            };
            let (measured, comb) = match kind {
                PerturbationKind::Mesh => {
                    let comb = grid_discretize(&st.source, level, 1.0)?;
                    let data = expand_total(&prep.media[1], &comb.comb, &settings2, &prep.certificates[1])?;
                    (data, Some(comb))
                }
                _ => (perturb(&st.exact2)?, None),
            };
            let mut out = Vec::new();
            for (ki, &kappa) in cfg.kappa.iter().enumerate() {
                let metric = KappaMetric::new(kappa)?;
                let (epsilon, method, delta) = match &comb {
                    Some(c) => (0.0, EpsilonMethod::None, (kappa * c.mesh.max(c.max_move)).min(2.0) * st.source.total_mass()),
                    None => {
                        let (e, m) = measurement_error(&st.exact2, &perturb, &measured, &metric)?;
                        (e, m, 0.0)
                    }
                };
                let mut best = (f64::INFINITY, f64::NAN);
                for plan in &st.plans[ki] {
                    let pairing = measured.integrate(|r| plan.phi.eval(r));
                    if let Some(err) = extraction.error(&plan.phi, plan.reference, pairing, plan.truth) {
                        if err < best.0 {
                            best = (err, plan.width);
                        }
                    }
                }
                if !best.0.is_finite() {
                    return Err(Error::NonPositiveEstimate(0.0));
                }
                let x = (epsilon + delta) / kappa;
                out.push(StabilityRecord {
                    schema: STABILITY_SCHEMA,
                    kind,
                    level,
                    probe,
                    kappa,
                    epsilon,
                    delta,
                    recon_error: best.0,
                    best_width: best.1,
                    log_factor: if x > 0.0 { log_factor(x) } else { 0.0 },
                    epsilon_method: method,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<StabilityRecord> = nested.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(a.level.total_cmp(&b.level))
            .then(a.probe.cmp(&b.probe))
            .then(a.kappa.total_cmp(&b.kappa))
    });
    Ok(records)
}

/// Stability of the extracted line integrals of σ under data and source errors.
///
/// The first medium's data are exact; perturbations act on the second
/// medium's data (blur, shift) or on its source (mesh).
pub fn run_ballistic_sweep(config: &ExperimentConfig) -> Result<Vec<StabilityRecord>> {
    let prep = config.prepare()?;
    let ex = Ballistic { media: &prep.media };
    run_sweep(&prep, &ex, config.seed)
}

/// Stability of the single-scattering discrepancy functional (space only).
/// The second medium's Monte Carlo orders use an independent stream.
pub fn run_singlescatter_sweep(config: &ExperimentConfig) -> Result<Vec<StabilityRecord>> {
    let prep = config.prepare()?;
    if config.dimension() != 3 {
        return Err(Error::InvalidDimension(config.dimension()));
    }
    let ex = SingleScatter { media: &prep.media, seed: config.seed };
    run_sweep(&prep, &ex, config.seed.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::{MediumEntry, PerturbationSchedule, Probe, QuadratureSettings};
    use crate::forward::SecondOrder;
    use crate::optics::{AbsorptionModel, MediumSpec, ScatteringModel};

    fn config(c: f64, blur: Vec<f64>) -> ExperimentConfig {
        let scat = if c > 0.0 { ScatteringModel::Isotropic { density: c } } else { ScatteringModel::None };
        ExperimentConfig {
            media: vec![
                MediumEntry {
                    name: "a".into(),
                    spec: MediumSpec::new(2, AbsorptionModel::GaussianBump { background: 0.3, amplitude: 1.0, center: vec![0.1, 0.2], width: 0.3 }, scat),
                },
                MediumEntry { name: "b".into(), spec: MediumSpec::new(2, AbsorptionModel::Constant { value: 0.6 }, ScatteringModel::None) },
            ],
            probes: vec![
                Probe { x: vec![1.0, 0.0], v: vec![-0.9, 0.4358898943540674] },
                Probe { x: vec![0.0, -1.0], v: vec![0.2, 0.9797958971132712] },
            ],
            perturbations: PerturbationSchedule { blur, shift: vec![0.02], mesh: vec![] },
            kappa: vec![4.0],
            truncation_order: 2,
            mc: Default::default(),
            seed: 5,
            output_dir: "out".into(),
            test_widths: crate::experiments::config::default_widths(),
            quadrature: Some(QuadratureSettings { chord_nodes: 8, angular: 64, focus: Some(Default::default()), second_order: SecondOrder::MonteCarlo }),
        }
    }

    #[test]
    fn exact_data_without_scattering() {
        let recs = run_ballistic_sweep(&config(0.0, vec![0.0])).unwrap();
        let blur: Vec<_> = recs.iter().filter(|r| r.kind == PerturbationKind::Blur).collect();
        assert_eq!(blur.len(), 2);
        for r in blur {
            assert_eq!(r.epsilon, 0.0);
            assert!(r.recon_error <= 1e-6, "{}", r.recon_error);
        }
    }

    #[test]
    fn epsilon_is_linear_in_small_blur() {
        let recs = run_ballistic_sweep(&config(0.05, vec![0.01, 0.02, 0.04])).unwrap();
        let eps: Vec<f64> = recs.iter().filter(|r| r.kind == PerturbationKind::Blur && r.probe == 0).map(|r| r.epsilon).collect();
        for w in eps.windows(2) {
            let ratio = w[1] / w[0];
            assert!((1.8..=2.2).contains(&ratio), "{ratio}");
        }
        for r in &recs {
            assert!(r.epsilon >= 0.0 && r.epsilon <= 2.0 && r.recon_error.is_finite());
            assert_eq!(r.epsilon_method, EpsilonMethod::Lp);
        }
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("schema,kind,level,probe,kappa,epsilon"));
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
        assert_eq!(envelope(&recs, PerturbationKind::Blur).len(), 3);
    }

    #[test]
    fn single_sweep_needs_space() {
        assert!(matches!(run_singlescatter_sweep(&config(0.05, vec![0.01])), Err(Error::InvalidDimension(2))));
    }
}
