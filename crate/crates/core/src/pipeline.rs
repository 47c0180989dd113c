//! End-to-end runs: base DC solve, MGA per criterion, AC recovery of every
//! distinct alternative, classification, cross-criterion analyses and report
//! files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ac::{
    classify_solution, redispatch_stats, solve_ac_recovery, AcError, Classification, RecoveryConfig, RecoveryResult,
    RedispatchStats,
};
use crate::baseline::{greedy_switch_search, GreedyTrajectory, DEFAULT_GREEDY_TOL};
use crate::formulations::{build_dc_ots, build_dc_uc, DcProblem, FormulationConfig, FormulationError, OpfSolution};
use crate::mga::{run_mga, Criterion, IterationRecord, MgaConfig, MgaError, MgaStatus, DEFAULT_MAX_ITER};
use crate::milp::{solve_milp, MilpConfig, MilpStatus};
use crate::network::{
    has_errors, parse_matpower_case, parse_network_json, validate_network, Diagnostic, Network, NetworkError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("network failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Mga(#[from] MgaError),
    #[error(transparent)]
    Ac(#[from] AcError),
    #[error("no MGA criterion requested")]
    NoCriteria,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Ots,
    Uc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub problem: Problem,
    /// Run order; duplicates are ignored.
    pub criteria: Vec<Criterion>,
    pub delta_f: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub formulation: FormulationConfig,
    pub recovery: RecoveryConfig,
    pub greedy_baseline: bool,
    pub greedy_tol: f64,
    /// Greedy seed topology; `None` closes every switchable branch and keeps
    /// fixed branches at their initial state.
    pub greedy_start: Option<Vec<u8>>,
}

impl PipelineConfig {
    pub fn new(problem: Problem) -> Self {
        Self {
            problem,
            criteria: Criterion::ALL.to_vec(),
            delta_f: 0.0,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            formulation: FormulationConfig::default(),
            recovery: RecoveryConfig::default(),
            greedy_baseline: false,
            greedy_tol: DEFAULT_GREEDY_TOL,
            greedy_start: None,
        }
    }

    fn criteria(&self) -> Vec<Criterion> {
        let mut seen = BTreeSet::new();
        self.criteria.iter().copied().filter(|c| seen.insert(*c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInfo {
    pub name: String,
    pub base_mva: f64,
    pub n_buses: usize,
    pub n_branches: usize,
    pub n_devices: usize,
    pub n_switchable: usize,
    pub n_commitable: usize,
    pub device_ids: Vec<usize>,
    pub warnings: Vec<String>,
}

impl CaseInfo {
    fn of(net: &Network, name: &str, diagnostics: &[Diagnostic]) -> Self {
        Self {
            name: name.to_string(),
            base_mva: net.base_mva(),
            n_buses: net.n_buses(),
            n_branches: net.n_branches(),
            n_devices: net.n_devices(),
            n_switchable: net.branches().iter().filter(|b| b.switchable).count(),
            n_commitable: net.devices().iter().filter(|d| d.commitable).count(),
            device_ids: net.devices().iter().map(|d| d.id).collect(),
            warnings: diagnostics.iter().map(|d| d.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Completed,
    BaseInfeasible,
    /// The base MILP ended without a proven optimum (limit or numerical failure).
    BaseUnsolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredAlternative {
    pub criterion: Criterion,
    pub iteration: usize,
    pub x: Vec<u8>,
    pub dc_objective: f64,
    /// On branches (OTS) or committed device-periods (UC).
    pub connected: usize,
    pub dispatch: OpfSolution,
    pub recovery: RecoveryResult,
    /// Final classification; `Optimal` marks the cheapest Safe recoveries.
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: Criterion,
    pub status: MgaStatus,
    pub iterations: Vec<IterationRecord>,
    /// Distinct solutions in discovery order, base first.
    pub alternatives: Vec<RecoveredAlternative>,
    pub flags: Vec<String>,
    pub n_feasible: usize,
    /// Alternatives recovered, base included, up to and including the first
    /// Safe one.
    pub recoveries_to_first_safe: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: Criterion,
    pub b: Criterion,
    pub shared: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    /// Every unordered pair, diagonal included (`a == b` gives the set size).
    pub pairwise: Vec<PairOverlap>,
    /// Solutions present in every set.
    pub common: usize,
    /// Distinct solutions over all sets.
    pub union: usize,
}

/// Exact intersections of per-criterion solution sets.
pub fn overlap_analysis(sets: &[(Criterion, Vec<Vec<u8>>)]) -> Overlap {
    let sets: Vec<(Criterion, BTreeSet<&Vec<u8>>)> = sets.iter().map(|(c, s)| (*c, s.iter().collect())).collect();
    let mut out = Overlap::default();
    for (i, (a, sa)) in sets.iter().enumerate() {
        for (b, sb) in &sets[i..] {
            out.pairwise.push(PairOverlap {
                a: *a,
                b: *b,
                shared: sa.intersection(sb).count(),
            });
        }
    }
    if let Some((_, first)) = sets.first() {
        out.common = first.iter().filter(|x| sets.iter().all(|(_, s)| s.contains(*x))).count();
    }
    out.union = sets.iter().flat_map(|(_, s)| s.iter()).collect::<BTreeSet<_>>().len();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyReport {
    pub trajectory: Option<GreedyTrajectory>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub base_s: f64,
    pub mga_s: f64,
    pub recovery_s: f64,
    pub greedy_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseReport {
    pub milp_status: MilpStatus,
    pub node_count: usize,
    pub solution: Option<OpfSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub case: CaseInfo,
    pub status: PipelineStatus,
    pub base: BaseReport,
    pub criteria: Vec<CriterionReport>,
    pub overlap: Overlap,
    /// Distinct integer vectors found over all criteria, base included.
    pub distinct_solutions: usize,
    /// One entry per alternative in report order (criteria, then discovery).
    pub redispatch: RedispatchStats,
    /// Fewest recoveries any criterion needed to reach a Safe alternative.
    pub recoveries_to_first_safe: Option<usize>,
    pub greedy: Option<GreedyReport>,
    pub config: PipelineConfig,
    pub timings: StageTimes,
}

impl PipelineReport {
    pub fn alternatives(&self) -> impl Iterator<Item = &RecoveredAlternative> {
        self.criteria.iter().flat_map(|c| c.alternatives.iter())
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.timings = StageTimes::default();
        if let Some(t) = r.greedy.as_mut().and_then(|g| g.trajectory.as_mut()) {
            t.steps.iter_mut().for_each(|s| s.wall_time_s = 0.0);
        }
        r
    }
}

/// Reads a `.m` (MATPOWER) or JSON case and rejects networks with errors.
pub fn load_case(path: &Path) -> Result<(Network, Vec<Diagnostic>), PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let net = if path.extension().is_some_and(|e| e == "m") {
        parse_matpower_case(&text)?
    } else {
        parse_network_json(&text)?
    };
    let diagnostics = validate_network(&net);
    if has_errors(&diagnostics) {
        return Err(PipelineError::Invalid(diagnostics));
    }
    Ok((net, diagnostics))
}

pub fn run_pipeline_file(path: &Path, cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    let (net, diagnostics) = load_case(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    run_pipeline(&net, &name, &diagnostics, cfg)
}

fn build(net: &Network, cfg: &PipelineConfig) -> Result<DcProblem, FormulationError> {
    match cfg.problem {
        Problem::Ots => build_dc_ots(net, &cfg.formulation),
        Problem::Uc => build_dc_uc(net, &cfg.formulation),
    }
}

fn greedy_seed(net: &Network, cfg: &PipelineConfig) -> Vec<u8> {
    cfg.greedy_start.clone().unwrap_or_else(|| {
        net.branches()
            .iter()
            .map(|b| u8::from(b.switchable || b.x0))
            .collect()
    })
}

pub fn run_pipeline(
    net: &Network,
    name: &str,
    diagnostics: &[Diagnostic],
    cfg: &PipelineConfig,
) -> Result<PipelineReport, PipelineError> {
    let criteria = cfg.criteria();
    if criteria.is_empty() {
        return Err(PipelineError::NoCriteria);
    }
    let total = Instant::now();
    let mut timings = StageTimes::default();
    let milp_cfg = MilpConfig::default();

    let clock = Instant::now();
    let problem = build(net, cfg)?;
    let base = solve_milp(&problem.model, &milp_cfg);
    timings.base_s = clock.elapsed().as_secs_f64();
    let status = match base.status {
        MilpStatus::Optimal => PipelineStatus::Completed,
        MilpStatus::Infeasible => PipelineStatus::BaseInfeasible,
        _ => PipelineStatus::BaseUnsolved,
    };
    let mut report = PipelineReport {
        case: CaseInfo::of(net, name, diagnostics),
        status,
        base: BaseReport {
            milp_status: base.status,
            node_count: base.node_count,
            solution: (status == PipelineStatus::Completed).then(|| problem.extract(net, &base)),
        },
        criteria: Vec::new(),
        overlap: Overlap::default(),
        distinct_solutions: 0,
        redispatch: RedispatchStats::default(),
        recoveries_to_first_safe: None,
        greedy: None,
        config: cfg.clone(),
        timings,
    };
    if status != PipelineStatus::Completed {
        report.timings.total_s = total.elapsed().as_secs_f64();
        return Ok(report);
    }

    let clock = Instant::now();
    let runs = criteria
        .par_iter()
        .map(|&criterion| {
            let mga_cfg = MgaConfig {
                criterion,
                delta_f: cfg.delta_f,
                max_iter: cfg.max_iter,
                seed: cfg.seed,
            };
            run_mga(net, &problem, &base, &mga_cfg, &milp_cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    report.timings.mga_s = clock.elapsed().as_secs_f64();

    // Each distinct vector is recovered once, from its first occurrence.
    let clock = Instant::now();
    let mut index: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    let mut unique: Vec<OpfSolution> = Vec::new();
    for alt in runs.iter().flat_map(|r| r.alternatives.iter()) {
        index.entry(alt.x.clone()).or_insert_with(|| {
            unique.push(alt.dispatch.clone());
            unique.len() - 1
        });
    }
    let recoveries = unique
        .par_iter()
        .map(|dc| solve_ac_recovery(net, &dc.topology(net), dc, &cfg.recovery))
        .collect::<Result<Vec<_>, _>>()?;
    report.timings.recovery_s = clock.elapsed().as_secs_f64();
    report.distinct_solutions = unique.len();

    let best_safe = recoveries
        .iter()
        .filter(|r| r.classification.is_safe())
        .map(|r| r.objective)
        .fold(f64::INFINITY, f64::min);
    for run in runs {
        let mut alternatives = Vec::with_capacity(run.alternatives.len());
        for alt in run.alternatives {
            let recovery = recoveries[index[&alt.x]].clone();
            let classification = classify_solution(&recovery, best_safe, cfg.recovery.tol_overload);
            alternatives.push(RecoveredAlternative {
                criterion: alt.criterion,
                iteration: alt.iteration,
                connected: alt.x.iter().map(|&v| usize::from(v)).sum(),
                x: alt.x,
                dc_objective: alt.dc_objective,
                dispatch: alt.dispatch,
                recovery,
                classification,
            });
        }
        let n_feasible = alternatives.iter().filter(|a| a.classification.is_safe()).count();
        let recoveries_to_first_safe = alternatives.iter().position(|a| a.classification.is_safe()).map(|k| k + 1);
        report.criteria.push(CriterionReport {
            criterion: run.criterion,
            status: run.status,
            iterations: run.iterations,
            alternatives,
            flags: run.flags,
            n_feasible,
            recoveries_to_first_safe,
        });
    }
    report.recoveries_to_first_safe = report.criteria.iter().filter_map(|c| c.recoveries_to_first_safe).min();

    let feasible: Vec<(Criterion, Vec<Vec<u8>>)> = report
        .criteria
        .iter()
        .map(|c| {
            let xs = c.alternatives.iter().filter(|a| a.classification.is_safe()).map(|a| a.x.clone());
            (c.criterion, xs.collect())
        })
        .collect();
    report.overlap = overlap_analysis(&feasible);
    report.redispatch = redispatch_stats(&report.alternatives().map(|a| &a.recovery).collect::<Vec<_>>());

    if cfg.greedy_baseline {
        let clock = Instant::now();
        report.greedy = Some(match cfg.problem {
            Problem::Ots => match greedy_switch_search(net, &greedy_seed(net, cfg), cfg.greedy_tol, &cfg.recovery) {
                Ok(t) => GreedyReport {
                    trajectory: Some(t),
                    error: None,
                },
                Err(e) => GreedyReport {
                    trajectory: None,
                    error: Some(e.to_string()),
                },
            },
            Problem::Uc => GreedyReport {
                trajectory: None,
                error: Some("greedy switching applies to OTS only".into()),
            },
        });
        report.timings.greedy_s = clock.elapsed().as_secs_f64();
    }
    report.timings.total_s = total.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvBundle,
}

pub const REPORT_JSON: &str = "report.json";
pub const ITERATIONS_CSV: &str = "iterations.csv";
pub const OVERLAP_CSV: &str = "overlap.csv";
pub const REDISPATCH_CSV: &str = "redispatch.csv";

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn classification_tag(c: Classification) -> &'static str {
    match c {
        Classification::Infeasible => "infeasible",
        Classification::Overloaded => "overloaded",
        Classification::Safe => "safe",
        Classification::Optimal => "optimal",
    }
}

/// Writes the requested formats into `dir` (created if missing) and returns
/// the written paths.
pub fn emit_report(report: &PipelineReport, dir: &Path, formats: &[ReportFormat]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join(REPORT_JSON);
        fs::write(&path, serde_json::to_string_pretty(report).map_err(io::Error::other)?)?;
        written.push(path);
    }
    if !formats.contains(&ReportFormat::CsvBundle) {
        return Ok(written);
    }

    let path = dir.join(ITERATIONS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([
        "iteration",
        "criterion",
        "dc_objective",
        "ac_classification",
        "connected_branches",
        "redispatch_mean",
    ])
    .map_err(csv_err)?;
    for (alt, mean) in report.alternatives().zip(&report.redispatch.mean_abs) {
        w.write_record([
            alt.iteration.to_string(),
            alt.criterion.tag().to_string(),
            alt.dc_objective.to_string(),
            classification_tag(alt.classification).to_string(),
            alt.connected.to_string(),
            mean.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join(OVERLAP_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["criterion_a", "criterion_b", "shared"]).map_err(csv_err)?;
    for p in &report.overlap.pairwise {
        w.write_record([p.a.tag(), p.b.tag(), &p.shared.to_string()]).map_err(csv_err)?;
    }
    w.write_record(["all", "all", &report.overlap.common.to_string()]).map_err(csv_err)?;
    w.flush()?;
    written.push(path);

    let path = dir.join(REDISPATCH_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["criterion", "iteration", "device_id", "redispatch"]).map_err(csv_err)?;
    for alt in report.alternatives() {
        for (id, d) in report.case.device_ids.iter().zip(&alt.recovery.redispatch) {
            w.write_record([
                alt.criterion.tag().to_string(),
                alt.iteration.to_string(),
                id.to_string(),
                d.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mga::IterationOutcome;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    fn sets(a: &[&[u8]], b: &[&[u8]]) -> Vec<(Criterion, Vec<Vec<u8>>)> {
        vec![
            (Criterion::Hsj, a.iter().map(|x| x.to_vec()).collect()),
            (Criterion::RandomVector, b.iter().map(|x| x.to_vec()).collect()),
        ]
    }

    fn shared(o: &Overlap, a: Criterion, b: Criterion) -> usize {
        o.pairwise.iter().find(|p| p.a == a && p.b == b).unwrap().shared
    }

    #[test]
    fn overlap_identical_disjoint_and_subset() {
        let (h, r) = (Criterion::Hsj, Criterion::RandomVector);
        let o = overlap_analysis(&sets(&[&[1, 0], &[0, 1]], &[&[0, 1], &[1, 0]]));
        assert_eq!(shared(&o, h, r), 2);
        assert_eq!((o.common, o.union), (2, 2));

        let o = overlap_analysis(&sets(&[&[1, 0]], &[&[0, 1]]));
        assert_eq!(shared(&o, h, r), 0);
        assert_eq!((o.common, o.union), (0, 2));

        let o = overlap_analysis(&sets(&[&[1, 1]], &[&[1, 1], &[0, 1], &[1, 0]]));
        assert_eq!(shared(&o, h, r), 1);
        assert_eq!(shared(&o, h, h), 1);
        assert_eq!(shared(&o, r, r), 3);
    }

    fn trap_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::new(Problem::Ots);
        cfg.delta_f = 4.0;
        cfg
    }

    #[test]
    fn report_round_trips_and_tables_match() {
        let report = run_pipeline_file(&fixture("voltage_trap.json"), &trap_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path(), &[ReportFormat::Json, ReportFormat::CsvBundle]).unwrap();

        let text = fs::read_to_string(dir.path().join(REPORT_JSON)).unwrap();
        let back: PipelineReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);

        let mut rows = csv::Reader::from_path(dir.path().join(ITERATIONS_CSV)).unwrap();
        let rows: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), report.alternatives().count());
        // The connected column follows the recorded MGA trajectory.
        for c in &report.criteria {
            let recorded: Vec<usize> = c
                .iterations
                .iter()
                .filter(|r| matches!(r.outcome, IterationOutcome::Base | IterationOutcome::New))
                .map(|r| r.connected.unwrap())
                .collect();
            let column: Vec<usize> = rows
                .iter()
                .filter(|r| &r[1] == c.criterion.tag())
                .map(|r| r[4].parse().unwrap())
                .collect();
            assert_eq!(column, recorded);
        }

        let redispatch = csv::Reader::from_path(dir.path().join(REDISPATCH_CSV)).unwrap().records().count();
        assert_eq!(redispatch, report.alternatives().count() * report.case.n_devices);
    }

    #[test]
    fn classifications_and_residuals_are_consistent() {
        let cfg = trap_config();
        let report = run_pipeline_file(&fixture("voltage_trap.json"), &cfg).unwrap();
        let (net, _) = load_case(&fixture("voltage_trap.json")).unwrap();
        let base = report.base.solution.as_ref().unwrap();
        for alt in report.alternatives() {
            assert!(alt.dc_objective <= base.objective + cfg.delta_f + 1e-6);
            if alt.classification.is_safe() {
                let topo = alt.dispatch.topology(&net);
                let r = crate::ac::ac_residuals(&net, &alt.recovery.state, &topo, cfg.recovery.flow_model).unwrap();
                assert!(crate::ac::max_residual(&r) <= 1e-6);
            }
        }
        let optimal = report.alternatives().filter(|a| a.classification == Classification::Optimal).count();
        assert!(optimal >= 1);
    }

    #[test]
    fn infeasible_base_gives_empty_report() {
        let text = r#"{"base_mva": 100.0,
            "buses": [{"id": 1}, {"id": 2}],
            "branches": [{"id": 1, "origin": 1, "dest": 2, "b": 10.0, "p_max": 1.0}],
            "devices": [{"id": 1, "bus": 1, "cost": 1.0, "p_min": 0.0, "p_max": 0.5},
                        {"id": 2, "bus": 2, "cost": 0.0, "p_min": -2.0, "p_max": -2.0}]}"#;
        let net = parse_network_json(text).unwrap();
        let report = run_pipeline(&net, "short", &[], &PipelineConfig::new(Problem::Ots)).unwrap();
        assert_eq!(report.status, PipelineStatus::BaseInfeasible);
        assert!(report.criteria.is_empty());
        assert!(report.base.solution.is_none());
    }
}
