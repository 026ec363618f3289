//! Running a configured analysis and the versioned JSON report it produces.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError, ConfigFile, MetricSource, Property};
use crate::contraction::{
    contraction_margin, demidovic_certify, origin_sup, search_p, ContractionError, DemidovicCertificate, MetricField,
    SearchFailure, RHO_SWEEP,
};
use crate::convergent::{
    check_convergence, convergence_samples, default_probes, find_reference, uniqueness_probe,
    verify_convergent_lyapunov, ReferenceFailure,
};
use crate::dsl::{parse_candidate, parse_system, CandidateMode, DslError, SystemDef};
use crate::incremental::{
    default_window, falsify_incremental, fit_exp_rate, verify_incremental_lyapunov, FalsifyConfig,
};
use crate::matrix::SymMatrix;
use crate::registry::{Column, Expectation, Registry};
use crate::sampling::{Grid, PairGrid, TimeRange};
use crate::verdict::{Status, Verdict};

pub const SCHEMA_VERSION: u32 = 1;

/// The JSON schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../data/report-v1.schema.json");

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Dsl { path: String, source: DslError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Certified,
    Falsified,
    Inconclusive,
    Failure,
}

impl From<Status> for Outcome {
    fn from(s: Status) -> Self {
        match s {
            Status::Certified => Outcome::Certified,
            Status::Falsified => Outcome::Falsified,
            Status::Inconclusive => Outcome::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub status: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub data: Value,
}

impl Section {
    fn verdict(name: &str, verdict: Verdict, data: Value) -> Self {
        Section {
            name: name.into(),
            status: verdict.status.into(),
            verdict: Some(verdict),
            error: None,
            data,
        }
    }

    fn failure(name: &str, error: impl ToString, data: Value) -> Self {
        Section {
            name: name.into(),
            status: Outcome::Failure,
            verdict: None,
            error: Some(error.to_string()),
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Match {
    Match,
    Mismatch,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub example: String,
    pub column: Column,
    pub expected: Expectation,
    pub observed: Expectation,
    pub result: Match,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub name: String,
    pub dim: usize,
    pub builtin: bool,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: Tool,
    pub config: AnalysisConfig,
    pub system: SystemInfo,
    pub property: Property,
    pub status: Outcome,
    pub sections: Vec<Section>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expectation: Option<ExpectationCheck>,
    pub side_files: Vec<String>,
    /// Wall-clock time; the only field allowed to differ between runs.
    pub elapsed_ms: f64,
}

impl Report {
    /// 0 for a match or an acceptable outcome, 1 for a mismatch or a
    /// falsified certification request.
    pub fn exit_code(&self) -> i32 {
        match &self.expectation {
            Some(e) => i32::from(e.result == Match::Mismatch),
            None => i32::from(
                self.property.requests_certification() && matches!(self.status, Outcome::Falsified | Outcome::Failure),
            ),
        }
    }

    /// The report as JSON with the timing field removed.
    pub fn deterministic_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("elapsed_ms");
        v
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Layers the registry defaults (for builtin names) under `cfg_file` and
/// fills in the remaining defaults.
pub fn resolve_file(cfg_file: ConfigFile) -> Result<AnalysisConfig, RunError> {
    let registry = Registry::builtin();
    let layered = match cfg_file.system.as_deref().and_then(|s| registry.get(s)) {
        Some(ex) => ex.defaults.clone().overlay(cfg_file),
        None => cfg_file,
    };
    Ok(layered.resolve()?)
}

/// Resolves `cfg_file` and runs it on the current pool.
pub fn run_file(cfg_file: ConfigFile) -> Result<Report, RunError> {
    run(&resolve_file(cfg_file)?)
}

/// Runs `cfg` on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &AnalysisConfig, threads: usize) -> Result<Report, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Usage(e.to_string()))?;
    pool.install(|| run(cfg))
}

fn read(path: &str) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.into(),
        source,
    })
}

/// Loads a builtin example by name or a system file by path.
pub fn load_system(spec: &str) -> Result<(SystemDef, Option<String>), RunError> {
    let registry = Registry::builtin();
    if let Some(ex) = registry.get(spec) {
        let def = ex.system_def().map_err(|source| RunError::Dsl {
            path: spec.into(),
            source,
        })?;
        return Ok((def, Some(ex.name.clone())));
    }
    let text = read(spec)?;
    let def = parse_system(&text).map_err(|source| RunError::Dsl {
        path: spec.into(),
        source,
    })?;
    Ok((def, None))
}

pub fn run(cfg: &AnalysisConfig) -> Result<Report, RunError> {
    let start = Instant::now();
    let (def, builtin) = load_system(&cfg.system)?;
    let bx = cfg.state_box(def.n)?;
    let mut side = SideFiles::new(cfg.out.as_deref());
    let sections = match cfg.property {
        Property::Incremental | Property::ExponentialIncremental => incremental_sections(&def, cfg, &bx, &mut side),
        Property::Convergent => convergent_sections(&def, cfg, &bx, &mut side),
        Property::Contraction => vec![contraction_section(&def, cfg, &bx)],
        Property::Demidovic => vec![demidovic_section(&def, cfg, &bx)],
        Property::LyapunovCheck => lyapunov_sections(&def, cfg, &bx)?,
    };
    let status = overall(cfg.property, &sections);
    let expectation = builtin.as_ref().and_then(|name| {
        let column = Column::for_property(cfg.property)?;
        let expected = Registry::builtin().get(name)?.expected.get(column);
        let observed = observed(status);
        let result = match (expected, observed) {
            (Expectation::Unknown, _) => Match::Inconclusive,
            (e, o) if e == o => Match::Match,
            // sampling alone cannot certify a property over all of Rⁿ
            (Expectation::Yes, Expectation::Unknown) => Match::Match,
            (Expectation::No, Expectation::Unknown) => Match::Inconclusive,
            _ => Match::Mismatch,
        };
        Some(ExpectationCheck {
            example: name.clone(),
            column,
            expected,
            observed,
            result,
        })
    });
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool: Tool {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config: cfg.clone(),
        system: SystemInfo {
            name: def.name.clone(),
            dim: def.n,
            builtin: builtin.is_some(),
            source: def.to_source(),
        },
        property: cfg.property,
        status,
        sections,
        expectation,
        side_files: side.written,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn observed(status: Outcome) -> Expectation {
    match status {
        Outcome::Certified => Expectation::Yes,
        Outcome::Falsified | Outcome::Failure => Expectation::No,
        Outcome::Inconclusive => Expectation::Unknown,
    }
}

/// The worst section decides: any failure or falsification is negative,
/// otherwise every section must certify.
fn overall(property: Property, sections: &[Section]) -> Outcome {
    if property == Property::Convergent {
        return convergent_overall(sections);
    }
    if sections.iter().any(|s| s.status == Outcome::Failure) {
        return Outcome::Failure;
    }
    if sections.iter().any(|s| s.status == Outcome::Falsified) {
        return Outcome::Falsified;
    }
    if !sections.is_empty() && sections.iter().all(|s| s.status == Outcome::Certified) {
        return Outcome::Certified;
    }
    Outcome::Inconclusive
}

fn convergent_overall(sections: &[Section]) -> Outcome {
    let Some(reference) = sections.first() else {
        return Outcome::Inconclusive;
    };
    if reference.status != Outcome::Certified {
        return reference.status;
    }
    let rest = &sections[1..];
    if rest
        .iter()
        .any(|s| s.name == "check_convergence" && s.status == Outcome::Falsified)
    {
        return Outcome::Falsified;
    }
    if rest.iter().all(|s| s.status == Outcome::Certified) {
        Outcome::Certified
    } else {
        Outcome::Inconclusive
    }
}

/// CSV side files next to the report, or embedded text when there is no
/// output path.
struct SideFiles {
    stem: Option<PathBuf>,
    written: Vec<String>,
}

impl SideFiles {
    fn new(out: Option<&str>) -> Self {
        SideFiles {
            stem: out.map(|o| Path::new(o).with_extension("")),
            written: Vec::new(),
        }
    }

    /// Returns the JSON value to store in the report: a file name or the
    /// CSV text itself.
    fn put(&mut self, tag: &str, csv: String) -> Value {
        match &self.stem {
            Some(stem) => {
                let path = PathBuf::from(format!("{}.{tag}.csv", stem.display()));
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    let _ = std::fs::create_dir_all(dir);
                }
                match std::fs::write(&path, csv) {
                    Ok(()) => {
                        let name = path
                            .file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        self.written.push(name.clone());
                        json!({ "file": name })
                    }
                    Err(e) => json!({ "error": e.to_string() }),
                }
            }
            None => json!({ "csv": csv }),
        }
    }
}

fn incremental_sections(
    def: &SystemDef,
    cfg: &AnalysisConfig,
    bx: &crate::sampling::StateBox,
    side: &mut SideFiles,
) -> Vec<Section> {
    let fc = FalsifyConfig {
        bx: bx.clone(),
        k0_range: cfg.k0_range(),
        horizon: cfg.horizon,
        budget: cfg.budget,
        seed: cfg.seed,
        growth_threshold: cfg.growth,
    };
    let rep = match falsify_incremental(def, &fc) {
        Ok(r) => r,
        Err(e) => return vec![Section::failure("falsify_incremental", e, json!({}))],
    };
    let envelope = side.put("envelope", rep.envelope.to_csv_string(cfg.buckets));
    let mut sections = vec![Section::verdict(
        "falsify_incremental",
        rep.verdict.clone(),
        json!({ "pairs": rep.series.len(), "horizon": cfg.horizon, "envelope": envelope }),
    )];
    if cfg.property == Property::ExponentialIncremental {
        let window = default_window(cfg.horizon);
        // a rate fit is evidence only; it never decides the run on its own
        sections.push(match fit_exp_rate(&rep.series, window) {
            Ok(fit) => {
                let mut v = Verdict::inconclusive(rep.series.len());
                if fit.exponential && !fit.degenerate {
                    v.constants
                        .extend([("kappa".to_string(), fit.kappa), ("lambda".to_string(), fit.lambda)]);
                }
                Section::verdict("fit_exp_rate", v, serde_json::to_value(&fit).expect("fit serializes"))
            }
            Err(e) => Section {
                status: Outcome::Inconclusive,
                ..Section::failure("fit_exp_rate", e, json!({ "window": [window.0, window.1] }))
            },
        });
    }
    sections
}

fn convergent_sections(
    def: &SystemDef,
    cfg: &AnalysisConfig,
    bx: &crate::sampling::StateBox,
    side: &mut SideFiles,
) -> Vec<Section> {
    let probes = default_probes(def.n, bx.radius() / (def.n as f64).sqrt());
    let reference = match find_reference(def, cfg.window(), cfg.washout, &probes, cfg.ref_tol) {
        Ok(r) => r,
        Err(e) => {
            let status = match e {
                ReferenceFailure::Unbounded { .. } | ReferenceFailure::DivergedProbes { .. } => Outcome::Falsified,
                ReferenceFailure::NoAgreement(_) => Outcome::Inconclusive,
                ReferenceFailure::Analysis(_) => Outcome::Failure,
            };
            let mut s = Section::failure("find_reference", &e, json!({ "probes": probes.len() }));
            s.status = status;
            return vec![s];
        }
    };
    let trajectory = side.put("reference", reference.to_csv_string());
    let mut ref_verdict = Verdict::certified(
        [("bound", reference.bound), ("agreement", reference.agreement)],
        probes.len(),
    );
    ref_verdict.constants.insert("washout".into(), reference.washout as f64);
    let mut sections = vec![Section::verdict(
        "find_reference",
        ref_verdict,
        json!({ "probe": reference.probe, "tol": reference.tol, "trajectory": trajectory }),
    )];
    let horizon = cfg.horizon.min((cfg.window_end - cfg.window_start) as usize);
    match convergence_samples(&reference, bx, horizon, cfg.budget, cfg.seed)
        .and_then(|samples| check_convergence(def, &reference, &samples, horizon))
    {
        Ok(rep) => {
            let csv = side.put("deviation", rep.to_csv_string());
            sections.push(Section::verdict(
                "check_convergence",
                rep.verdict.clone(),
                json!({ "horizon": horizon, "fit": rep.fit, "deviation": csv }),
            ));
        }
        Err(e) => sections.push(Section::failure("check_convergence", e, json!({}))),
    }
    let alt = Grid::random(bx, 8, TimeRange::single(0), cfg.seed ^ 0x5eed).points;
    let alt: Vec<Vec<f64>> = alt.into_iter().map(|(_, x)| x).collect();
    match uniqueness_probe(def, &reference, &alt, cfg.lookback, cfg.ref_tol) {
        Ok(v) => sections.push(Section::verdict(
            "uniqueness_probe",
            v,
            json!({ "lookback": cfg.lookback }),
        )),
        Err(e) => sections.push(Section::failure("uniqueness_probe", e, json!({}))),
    }
    sections
}

fn metric_for(def: &SystemDef, cfg: &AnalysisConfig) -> MetricField {
    let builder = MetricField::QBuilder {
        horizon: cfg.q_horizon,
        rate: cfg.q_rate(),
    };
    match cfg.metric {
        MetricSource::Auto if def.theta.is_some() => MetricField::Expression,
        MetricSource::Auto | MetricSource::QBuilder => builder,
        MetricSource::Expression => MetricField::Expression,
        MetricSource::Identity => MetricField::identity(def.n),
    }
}

fn contraction_section(def: &SystemDef, cfg: &AnalysisConfig, bx: &crate::sampling::StateBox) -> Section {
    let metric = metric_for(def, cfg);
    let grid = cfg.grid(bx, cfg.k_range());
    let data = json!({ "metric": metric, "grid": grid.description, "grid_size": grid.len() });
    match contraction_margin(def, &metric, &grid) {
        Ok(cert) => {
            let verdict = cert.verdict.clone();
            let mut data = serde_json::to_value(&cert).expect("certificate serializes");
            data.as_object_mut().expect("object").remove("verdict");
            data["metric"] = serde_json::to_value(&metric).expect("metric serializes");
            Section::verdict("contraction_margin", verdict, data)
        }
        Err(e) => Section::failure("contraction_margin", e, data),
    }
}

fn demidovic_section(def: &SystemDef, cfg: &AnalysisConfig, bx: &crate::sampling::StateBox) -> Section {
    let grid = cfg.grid(bx, cfg.k_range());
    let c = match origin_sup(def) {
        Ok(c) => c,
        Err(e) => return Section::failure("demidovic_certify", e, json!({})),
    };
    let rhos: Vec<f64> = match cfg.rho {
        Some(r) => vec![r],
        None => RHO_SWEEP.to_vec(),
    };
    let attempt = |rho: f64| -> Result<(DemidovicCertificate, Option<String>), ContractionError> {
        let identity = SymMatrix::identity(def.n);
        let cert = demidovic_certify(def, &identity, rho, &grid, false)?;
        if cert.verdict.is_certified() || !cfg.p_search {
            return Ok((cert, None));
        }
        match search_p(def, &grid, rho, cfg.p_iters, cfg.seed) {
            Ok(found) => Ok((demidovic_certify(def, &found.p, rho, &grid, false)?, None)),
            Err(SearchFailure::NotFound(best)) => Ok((cert, Some(format!("P search ended at {:e}", best.g)))),
            Err(SearchFailure::Contraction(e)) => Err(e),
        }
    };
    let mut best: Option<DemidovicCertificate> = None;
    let mut first_failure: Option<(DemidovicCertificate, Option<String>)> = None;
    for rho in rhos {
        match attempt(rho) {
            Ok((cert, _)) if cert.verdict.is_certified() => best = Some(cert),
            Ok(fail) => {
                if best.is_none() {
                    first_failure = Some(fail);
                }
                break;
            }
            Err(e) => return Section::failure("demidovic_certify", e, json!({ "grid": grid.description })),
        }
    }
    let bounded = c <= crate::convergent::BOUNDED_LIMIT;
    match (best, first_failure) {
        (Some(mut cert), _) => {
            cert.c = bounded.then_some(c);
            cert.c_bounded = bounded;
            cert.convergence_upgrade = bounded;
            if bounded {
                cert.verdict.constants.insert("c".into(), c);
            }
            let verdict = cert.verdict.clone();
            let mut data = serde_json::to_value(&cert).expect("certificate serializes");
            data.as_object_mut().expect("object").remove("verdict");
            Section::verdict("demidovic_certify", verdict, data)
        }
        (None, Some((cert, search))) => {
            let verdict = cert.verdict.clone();
            let mut data = serde_json::to_value(&cert).expect("certificate serializes");
            data.as_object_mut().expect("object").remove("verdict");
            data["search"] = json!(search);
            Section::verdict("demidovic_certify", verdict, data)
        }
        (None, None) => Section::failure("demidovic_certify", "no contraction factor to try", json!({})),
    }
}

fn lyapunov_sections(
    def: &SystemDef,
    cfg: &AnalysisConfig,
    bx: &crate::sampling::StateBox,
) -> Result<Vec<Section>, RunError> {
    let path = cfg
        .candidate
        .as_deref()
        .ok_or(RunError::Config(ConfigError::Missing("candidate")))?;
    let cand = parse_candidate(&read(path)?).map_err(|source| RunError::Dsl {
        path: path.into(),
        source,
    })?;
    if cand.mode == CandidateMode::Convergent {
        let probes = default_probes(def.n, bx.radius() / (def.n as f64).sqrt());
        let reference = match find_reference(def, cfg.window(), cfg.washout, &probes, cfg.ref_tol) {
            Ok(r) => r,
            Err(e) => return Ok(vec![Section::failure("find_reference", e, json!({}))]),
        };
        let times = TimeRange::new(cfg.window_start, cfg.window_end - 1).map_err(ConfigError::from)?;
        let grid = Grid::random(bx, cfg.budget, times, cfg.seed);
        let data = json!({ "mode": "convergent", "grid": grid.description, "reference_bound": reference.bound });
        Ok(vec![match verify_convergent_lyapunov(def, &cand, &reference, &grid) {
            Ok(v) => Section::verdict("verify_convergent_lyapunov", v, data),
            Err(e) => Section::failure("verify_convergent_lyapunov", e, data),
        }])
    } else {
        let grid = PairGrid::random(bx, cfg.budget, cfg.k_range(), cfg.seed);
        let data = json!({ "mode": format!("{:?}", cand.mode).to_lowercase(), "pairs": grid.len() });
        Ok(vec![match verify_incremental_lyapunov(def, &cand, &grid) {
            Ok(v) => Section::verdict("verify_incremental_lyapunov", v, data),
            Err(e) => Section::failure("verify_incremental_lyapunov", e, data),
        }])
    }
}

/// A gnuplot script drawing the envelope table from `csv_path`.
pub fn gnuplot_script(csv_path: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key off\n\
         set logscale y\n\
         set xlabel 'lag'\n\
         set ylabel 'max separation'\n\
         set title '{title}'\n\
         set palette rgbformulae 33,13,10\n\
         set cblabel 'initial separation'\n\
         plot '{csv_path}' every ::1 using 2:3:1 with linespoints palette\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(system: &str, property: &str, extra: &str) -> ConfigFile {
        ConfigFile::parse(
            &format!("system = \"{system}\"\nproperty = \"{property}\"\n{extra}"),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn example_runs_match_registry() {
        let r = run_file(cfg("ex1", "incremental", "budget = 2000\nseed = 42")).unwrap();
        assert_eq!(r.status, Outcome::Falsified);
        assert_eq!(r.expectation.as_ref().unwrap().result, Match::Match);
        assert_eq!(r.exit_code(), 0);

        let r = run_file(cfg("ex2", "convergent", "")).unwrap();
        assert_eq!(r.status, Outcome::Falsified);
        assert!(r.sections[0].error.as_ref().unwrap().contains("unbounded"));
        assert_eq!(r.expectation.as_ref().unwrap().result, Match::Match);

        let r = run_file(cfg(
            "ex3",
            "contraction",
            "metric = \"q-builder\"\ngrid_points = 5\nk_min = 0\nk_max = 0",
        ))
        .unwrap();
        assert!(matches!(r.status, Outcome::Failure | Outcome::Falsified));
        assert_eq!(r.expectation.as_ref().unwrap().result, Match::Match);
    }

    #[test]
    fn reports_are_deterministic() {
        let c = cfg("ex2", "incremental", "budget = 300").resolve().unwrap();
        let a = run_with_threads(&c, 1).unwrap();
        let b = run_with_threads(&c, 4).unwrap();
        assert_eq!(a.deterministic_json(), b.deterministic_json());
    }
}
