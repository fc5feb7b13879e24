//! Config ingestion, experiment dispatch and artifact writing for `ddm`.
//!
//! Config files are line oriented:
//!
//! ```text
//! # comment
//! [problem]
//! box = -1, 1
//! shape = interval
//! interval = -0.5, 0.5
//! alpha = 2
//! beta = 1
//! gamma = 1
//! q = "1"
//! h = "0"
//! g = "0.1"
//!
//! [experiment]
//! eps = 0.1, 0.05, 0.025, 0.0125
//! rho = 8
//! ```
//!
//! Expressions are quoted, lists are comma separated, and unknown sections
//! or keys are errors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffuse::solve_diffuse;
use crate::energy::{error_norms, EnergyBreakdown, ErrorNorms};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::fields::ProblemSpec;
use crate::geometry::{Cuboid, InterfaceShape};
use crate::harness::{
    build_reference, coupled_grid, eps_sweep, gamma_recovery_check, lemma_checks, monotone_check,
    CheckStatus, ColumnCheck, LemmaReport, RecoveryRow, ReferenceKind, SweepOptions, SweepReport,
    DEFAULT_CUTFEM_CELLS, DEFAULT_FEM_CELLS_1D, DEFAULT_MAX_NODES, DEFAULT_RHO,
};
use crate::linalg::{CgOptions, SolveReport, DEFAULT_TOL};

pub const DEFAULT_OUTPUT: &str = "ddm-out";
/// Largest admissible max/min of the bump trace ratio over a lemma sweep.
pub const TRACE_BAND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Sweep,
    GammaCheck,
    LemmaCheck,
}

impl ExperimentKind {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "solve" => Some(Self::Solve),
            "sweep" => Some(Self::Sweep),
            "gamma-check" => Some(Self::GammaCheck),
            "lemma-check" => Some(Self::LemmaCheck),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub kind: Option<ExperimentKind>,
    /// Strictly decreasing. `solve` uses the first entry.
    pub eps: Vec<f64>,
    pub rho: f64,
    pub tol: f64,
    pub max_nodes: usize,
    pub output: Option<PathBuf>,
    pub reference: ReferenceKind,
    /// Fixed field for `gamma-check`.
    pub field: Option<Expression>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub experiment: Experiment,
}

struct Entry {
    line: usize,
    value: String,
}

const PROBLEM_KEYS: &[&str] = &[
    "box", "shape", "interval", "center", "radius", "alpha", "beta", "gamma", "kappa", "q", "h", "g",
];
const EXPERIMENT_KEYS: &[&str] = &[
    "kind", "eps", "rho", "tol", "max_nodes", "output", "reference", "reference_cells", "u",
];

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

/// Drops a trailing `#` comment that is not inside quotes.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

struct Sections(HashMap<(String, String), Entry>);

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = strip_comment(raw).trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, "unterminated section header"))?
                    .trim();
                if name != "problem" && name != "experiment" {
                    return Err(config_err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .clone()
                .ok_or_else(|| config_err(line, format!("key `{key}` appears before any section")))?;
            let allowed = if sec == "problem" { PROBLEM_KEYS } else { EXPERIMENT_KEYS };
            if !allowed.contains(&key) {
                return Err(config_err(line, format!("unknown key `{key}` in [{sec}]")));
            }
            if value.is_empty() {
                return Err(config_err(line, format!("empty value for `{key}`")));
            }
            let previous = map.insert(
                (sec.clone(), key.to_string()),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
            if let Some(prev) = previous {
                return Err(config_err(line, format!("duplicate key `{key}` (first on line {})", prev.line)));
            }
        }
        Ok(Self(map))
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.0.get(&(section.to_string(), key.to_string()))
    }

    fn required(&self, section: &str, key: &str) -> Result<&Entry> {
        self.get(section, key)
            .ok_or_else(|| Error::Invalid(format!("missing key `{key}` in [{section}]")))
    }

    fn number(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.get(section, key).map(parse_number).transpose()
    }

    fn numbers(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|part| {
                        part.trim()
                            .parse::<f64>()
                            .map_err(|_| config_err(e.line, format!("`{key}`: `{}` is not a number", part.trim())))
                    })
                    .collect()
            })
            .transpose()
    }

    fn expression(&self, section: &str, key: &str) -> Result<Option<Expression>> {
        self.get(section, key)
            .map(|e| {
                let inner = e
                    .value
                    .strip_prefix('"')
                    .and_then(|v| v.strip_suffix('"'))
                    .filter(|v| !v.contains('"'))
                    .ok_or_else(|| config_err(e.line, format!("`{key}` must be a quoted expression")))?;
                Expression::parse(inner).map_err(|err| config_err(e.line, format!("`{key}`: {err}")))
            })
            .transpose()
    }

    fn word(&self, section: &str, key: &str) -> Option<(usize, String)> {
        self.get(section, key)
            .map(|e| (e.line, e.value.trim_matches('"').to_string()))
    }
}

fn parse_number(e: &Entry) -> Result<f64> {
    e.value
        .parse::<f64>()
        .map_err(|_| config_err(e.line, format!("`{}` is not a number", e.value)))
}

fn fixed_list(sections: &Sections, key: &str, lengths: &[usize]) -> Result<Option<Vec<f64>>> {
    let Some(values) = sections.numbers("problem", key)? else {
        return Ok(None);
    };
    if !lengths.contains(&values.len()) {
        let line = sections.get("problem", key).map_or(0, |e| e.line);
        return Err(config_err(line, format!("`{key}` needs {lengths:?} numbers, got {}", values.len())));
    }
    Ok(Some(values))
}

/// Parses and validates a config held in memory.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let s = Sections::parse(text)?;
    let bounds = fixed_list(&s, "box", &[2, 4])?.ok_or_else(|| Error::Invalid("missing key `box` in [problem]".into()))?;
    let cuboid = if bounds.len() == 2 {
        Cuboid::interval(bounds[0], bounds[1])?
    } else {
        Cuboid::rectangle((bounds[0], bounds[1]), (bounds[2], bounds[3]))?
    };
    let shape_entry = s.required("problem", "shape")?;
    let shape = match shape_entry.value.as_str() {
        "interval" => {
            let v = fixed_list(&s, "interval", &[2])?
                .ok_or_else(|| Error::Invalid("shape `interval` needs key `interval = lo, hi`".into()))?;
            InterfaceShape::Interval { lo: v[0], hi: v[1] }
        }
        "disk" => {
            let c = fixed_list(&s, "center", &[2])?
                .ok_or_else(|| Error::Invalid("shape `disk` needs key `center = x, y`".into()))?;
            let radius = s
                .number("problem", "radius")?
                .ok_or_else(|| Error::Invalid("shape `disk` needs key `radius`".into()))?;
            InterfaceShape::Disk {
                center: [c[0], c[1]],
                radius,
            }
        }
        other => {
            return Err(config_err(
                shape_entry.line,
                format!("unknown shape `{other}`; expected interval or disk"),
            ))
        }
    };
    let number = |key: &str| -> Result<f64> {
        s.number("problem", key)?
            .ok_or_else(|| Error::Invalid(format!("missing key `{key}` in [problem]")))
    };
    let expression = |key: &str| -> Result<Expression> {
        s.expression("problem", key)?
            .ok_or_else(|| Error::Invalid(format!("missing key `{key}` in [problem]")))
    };
    let spec = ProblemSpec {
        cuboid,
        shape,
        alpha: number("alpha")?,
        beta: number("beta")?,
        gamma: number("gamma")?,
        kappa: s.number("problem", "kappa")?.unwrap_or(0.0),
        q: expression("q")?,
        h: expression("h")?,
        g: expression("g")?,
    };
    spec.validate()?;

    let kind = match s.word("experiment", "kind") {
        None => None,
        Some((line, word)) => Some(
            ExperimentKind::parse(&word)
                .ok_or_else(|| config_err(line, format!("unknown experiment kind `{word}`")))?,
        ),
    };
    let eps = s
        .numbers("experiment", "eps")?
        .ok_or_else(|| Error::Invalid("missing key `eps` in [experiment]".into()))?;
    let eps_line = s.get("experiment", "eps").map_or(0, |e| e.line);
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(config_err(eps_line, "eps list must be strictly decreasing"));
    }
    for &e in &eps {
        spec.validate_eps(e)
            .map_err(|err| config_err(eps_line, format!("eps = {e}: {err}")))?;
    }
    let rho = s.number("experiment", "rho")?.unwrap_or(DEFAULT_RHO);
    if !(rho >= 2.0 && rho.is_finite()) {
        return Err(Error::Invalid(format!("rho must be at least 2, got {rho}")));
    }
    let tol = s.number("experiment", "tol")?.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Invalid(format!("tol must lie in (0, 1), got {tol}")));
    }
    let max_nodes = match s.get("experiment", "max_nodes") {
        None => DEFAULT_MAX_NODES,
        Some(e) => e
            .value
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 81)
            .ok_or_else(|| config_err(e.line, format!("max_nodes must be an integer >= 81, got `{}`", e.value)))?,
    };
    let cells = match s.get("experiment", "reference_cells") {
        None => None,
        Some(e) => Some(
            e.value
                .parse::<usize>()
                .map_err(|_| config_err(e.line, format!("`{}` is not a cell count", e.value)))?,
        ),
    };
    let reference = match (s.word("experiment", "reference"), cells) {
        (None, None) => ReferenceKind::Auto,
        (None, Some(_)) => {
            let line = s.get("experiment", "reference_cells").map_or(0, |e| e.line);
            return Err(config_err(line, "reference_cells needs `reference = fitted-fem` or `cut-fem`"));
        }
        (Some((line, word)), cells) => match word.as_str() {
            "auto" => ReferenceKind::Auto,
            "closed-form" => ReferenceKind::ClosedForm,
            "fitted-fem" => ReferenceKind::FittedFem {
                cells: cells.unwrap_or(DEFAULT_FEM_CELLS_1D),
            },
            "cut-fem" => ReferenceKind::CutFem {
                cells: cells.unwrap_or(DEFAULT_CUTFEM_CELLS),
            },
            other => return Err(config_err(line, format!("unknown reference `{other}`"))),
        },
    };
    let output = s.word("experiment", "output").map(|(_, w)| PathBuf::from(w));
    let field = s.expression("experiment", "u")?;
    if let Some(u) = &field {
        if spec.dim() == 1 && u.uses_var(crate::expr::Var::Y) {
            return Err(Error::Invalid("u uses y in a 1D problem".into()));
        }
    }
    Ok(RunConfig {
        spec,
        experiment: Experiment {
            kind,
            eps,
            rho,
            tol,
            max_nodes,
            output,
            reference,
            field,
        },
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Invalid(format!("{} is not valid UTF-8", path.display())))?;
    parse_config_str(&text)
}

/// A named pass/fail outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl From<ColumnCheck> for Assertion {
    fn from(c: ColumnCheck) -> Self {
        Assertion {
            passed: c.ok(),
            detail: match c.status {
                CheckStatus::Skipped => format!("skipped: {}", c.detail),
                CheckStatus::PassedWithWarning => format!("warning: {}", c.detail),
                _ => c.detail,
            },
            name: c.column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveArtifact {
    pub spec: ProblemSpec,
    pub eps: f64,
    pub cells: Vec<usize>,
    pub report: SolveReport,
    pub energy: EnergyBreakdown,
    pub reference: String,
    pub reference_energy: f64,
    pub errors: ErrorNorms,
    /// Node coordinates, x fastest.
    pub nodes: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub reference_values: Vec<f64>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Artifact {
    Solve {
        result: SolveArtifact,
        assertions: Vec<Assertion>,
    },
    Sweep {
        report: SweepReport,
        assertions: Vec<Assertion>,
    },
    GammaCheck {
        field: Expression,
        rows: Vec<RecoveryRow>,
        assertions: Vec<Assertion>,
    },
    LemmaCheck {
        report: LemmaReport,
        assertions: Vec<Assertion>,
    },
}

impl Artifact {
    pub fn assertions(&self) -> &[Assertion] {
        match self {
            Artifact::Solve { assertions, .. }
            | Artifact::Sweep { assertions, .. }
            | Artifact::GammaCheck { assertions, .. }
            | Artifact::LemmaCheck { assertions, .. } => assertions,
        }
    }

    pub fn passed(&self) -> bool {
        self.assertions().iter().all(|a| a.passed)
    }
}

/// Runs one experiment without touching the file system.
pub fn execute(config: &RunConfig, kind: ExperimentKind) -> Result<Artifact> {
    let spec = &config.spec;
    let exp = &config.experiment;
    match kind {
        ExperimentKind::Solve => {
            let eps = exp.eps[0];
            let (grid, _) = coupled_grid(spec, eps, exp.rho, exp.max_nodes)?;
            let sol = solve_diffuse(spec, &grid, eps, &CgOptions::with_tol(exp.tol))?;
            let reference = build_reference(spec, exp.reference, exp.tol)?;
            let errors = error_norms(&sol.u, &reference)?;
            let dim = grid.dim();
            let nodes: Vec<Vec<f64>> = (0..grid.node_count()).map(|k| grid.coords(k)[..dim].to_vec()).collect();
            let reference_values = nodes.iter().map(|x| reference.evaluate(x)).collect();
            let assertions = vec![
                Assertion {
                    name: "solver_converged".into(),
                    passed: sol.report.converged,
                    detail: format!("relative residual {:e}", sol.report.relative_residual),
                },
                Assertion {
                    name: "minimum_energy_nonpositive".into(),
                    passed: sol.energy.total <= 0.0,
                    detail: format!("F_eps[u_eps] = {:e}", sol.energy.total),
                },
            ];
            Ok(Artifact::Solve {
                result: SolveArtifact {
                    spec: spec.clone(),
                    eps,
                    cells: (0..dim).map(|a| grid.cells(a)).collect(),
                    report: sol.report,
                    energy: sol.energy,
                    reference: reference.kind().to_string(),
                    reference_energy: reference.energy().total,
                    errors,
                    nodes,
                    u: sol.u.into_values(),
                    reference_values,
                },
                assertions,
            })
        }
        ExperimentKind::Sweep => {
            let opts = SweepOptions {
                rho: exp.rho,
                max_nodes: exp.max_nodes,
                tol: exp.tol,
                reference: exp.reference,
            };
            let report = eps_sweep(spec, &exp.eps, &opts)?;
            let mut assertions: Vec<Assertion> = report.convergence_checks().into_iter().map(Into::into).collect();
            let failed: Vec<String> = report
                .rows
                .iter()
                .filter(|r| r.error.is_some())
                .map(|r| r.eps.to_string())
                .collect();
            assertions.push(Assertion {
                name: "all_rows_solved".into(),
                passed: failed.is_empty(),
                detail: if failed.is_empty() {
                    "every row solved".into()
                } else {
                    format!("failed rows at eps = {}", failed.join(", "))
                },
            });
            Ok(Artifact::Sweep { report, assertions })
        }
        ExperimentKind::GammaCheck => {
            let field = exp
                .field
                .clone()
                .ok_or_else(|| Error::Invalid("gamma-check needs key `u` in [experiment]".into()))?;
            let rows = gamma_recovery_check(spec, &field, &exp.eps, exp.rho, exp.max_nodes)?;
            let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
            let assertions = vec![monotone_check("recovery_gap", &gaps, 1.0).into()];
            Ok(Artifact::GammaCheck {
                field,
                rows,
                assertions,
            })
        }
        ExperimentKind::LemmaCheck => {
            let report = lemma_checks(spec, &exp.eps, exp.rho, exp.max_nodes)?;
            Ok(Artifact::LemmaCheck {
                assertions: lemma_assertions(&report),
                report,
            })
        }
    }
}

fn lemma_assertions(report: &LemmaReport) -> Vec<Assertion> {
    let perimeter_gap: Vec<f64> = report
        .rows
        .iter()
        .map(|r| (r.perimeter - report.interface_measure).abs())
        .collect();
    let mut out: Vec<Assertion> = vec![monotone_check("perimeter_gap", &perimeter_gap, 1.0).into()];
    let names: Vec<String> = report.rows[0].weights.iter().map(|w| w.name.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        let col = |f: fn(&crate::harness::WeightCheck) -> f64| -> Vec<f64> {
            report.rows.iter().map(|r| f(&r.weights[i])).collect()
        };
        out.push(monotone_check(&format!("{name}.boundary_gap"), &col(|w| (w.boundary_diffuse - w.boundary_sharp).abs()), 1.0).into());
        out.push(monotone_check(&format!("{name}.diffusivity_gap"), &col(|w| w.diffusivity_gap), 1.0).into());
        out.push(monotone_check(&format!("{name}.reaction_gap"), &col(|w| w.reaction_gap), 1.0).into());
        out.push(monotone_check(&format!("{name}.source_gap"), &col(|w| w.source_gap), 1.0).into());
        let ratios = col(|w| w.trace_ratio);
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let band = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        // other panel functions may vanish on the interface, where the ratio has no lower bound
        let asserted = name == "bump";
        out.push(Assertion {
            name: format!("{name}.trace_band"),
            passed: !asserted || band <= TRACE_BAND,
            detail: if asserted {
                format!("max/min trace ratio = {band:.4} (bound {TRACE_BAND})")
            } else {
                format!("informational: max/min trace ratio = {band:.4}")
            },
        });
    }
    out
}

/// Writes every float with 17 significant digits and indents like serde_json's pretty printer.
struct DigitsFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for DigitsFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json(artifact: &Artifact) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        DigitsFormatter(serde_json::ser::PrettyFormatter::new()),
    );
    artifact.serialize(&mut ser).expect("artifact serializes");
    buf.push(b'\n');
    String::from_utf8(buf).expect("json is utf-8")
}

/// Same digits as the JSON; non-finite values become empty fields.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub const SWEEP_CSV_HEADER: &[&str] = &[
    "eps", "h", "cells", "capped", "l2_error", "h1_error", "energy_diffuse", "energy_sharp", "energy_gap",
    "perimeter", "trace_ratio", "cg_iterations", "relative_residual", "wall_time_s", "error",
];
pub const RECOVERY_CSV_HEADER: &[&str] = &["eps", "h", "energy_diffuse", "energy_sharp", "gap"];
pub const LEMMA_CSV_HEADER: &[&str] = &[
    "eps", "h", "perimeter", "interface_measure", "weight", "boundary_diffuse", "boundary_sharp",
    "diffusivity_gap", "reaction_gap", "source_gap", "trace_ratio",
];

/// The CSV view of an artifact; one row per eps (per eps and test function
/// for lemma checks, per node for a solve).
pub fn to_csv(artifact: &Artifact) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut put = |rec: Vec<String>| w.write_record(&rec).expect("in-memory csv write");
    let strs = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match artifact {
        Artifact::Solve { result, .. } => {
            let mut header = strs(if result.nodes[0].len() == 1 { &["x"] } else { &["x", "y"] });
            header.extend(strs(&["u_eps", "u_0"]));
            put(header);
            for (k, x) in result.nodes.iter().enumerate() {
                let mut rec: Vec<String> = x.iter().map(|&v| num(v)).collect();
                rec.push(num(result.u[k]));
                rec.push(num(result.reference_values[k]));
                put(rec);
            }
        }
        Artifact::Sweep { report, .. } => {
            put(strs(SWEEP_CSV_HEADER));
            for r in &report.rows {
                let cells = r.cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x");
                let mut rec = vec![num(r.eps), num(r.h), cells, r.capped.to_string()];
                match &r.metrics {
                    Some(m) => rec.extend([
                        num(m.l2_error),
                        num(m.h1_error),
                        num(m.energy_diffuse),
                        num(m.energy_sharp),
                        num(m.energy_gap),
                        num(m.perimeter),
                        num(m.trace_ratio),
                        m.cg_iterations.to_string(),
                        num(m.relative_residual),
                    ]),
                    None => rec.extend(std::iter::repeat_n(String::new(), 9)),
                }
                rec.push(num(r.wall_time_s));
                rec.push(r.error.clone().unwrap_or_default());
                put(rec);
            }
        }
        Artifact::GammaCheck { rows, .. } => {
            put(strs(RECOVERY_CSV_HEADER));
            for r in rows {
                put(vec![num(r.eps), num(r.h), num(r.energy_diffuse), num(r.energy_sharp), num(r.gap)]);
            }
        }
        Artifact::LemmaCheck { report, .. } => {
            put(strs(LEMMA_CSV_HEADER));
            for r in &report.rows {
                for wc in &r.weights {
                    put(vec![
                        num(r.eps),
                        num(r.h),
                        num(r.perimeter),
                        num(report.interface_measure),
                        wc.name.clone(),
                        num(wc.boundary_diffuse),
                        num(wc.boundary_sharp),
                        num(wc.diffusivity_gap),
                        num(wc.reaction_gap),
                        num(wc.source_gap),
                        num(wc.trace_ratio),
                    ]);
                }
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A standalone SVG 1.1 line chart. With `log` set, both axes are base-10
/// logarithmic and non-positive points are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log: bool) -> String {
    let (width, height) = (640.0, 440.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 60.0);
    let map = |v: f64| if log { v.log10() } else { v };
    let kept: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || (*x > 0.0 && *y > 0.0)))
                .map(|&(x, y)| (map(x), map(y)))
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = kept.iter().flatten().copied().collect();
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(all.iter().map(|p| p.0).collect());
    let (y0, y1) = span(all.iter().map(|p| p.1).collect());
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * plot_h;
    let tick = |v: f64| if log { format!("{:.1e}", 10f64.powf(v)) } else { format!("{v:.3}") };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            top + plot_h + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        left + plot_w / 2.0,
        height - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (s, pts)) in series.iter().zip(&kept).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = top + 16.0 + 18.0 * i as f64;
        let lx = left + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// The plot for an artifact: log-log convergence curves, or a solution
/// profile along the x axis through the box center for a solve.
pub fn to_svg(artifact: &Artifact) -> String {
    match artifact {
        Artifact::Solve { result, .. } => {
            let cy = result.spec.cuboid.center()[1];
            let on_axis: Vec<usize> = (0..result.nodes.len())
                .filter(|&k| result.nodes[k].len() == 1 || result.nodes[k][1] == nearest_row(&result.nodes, cy))
                .collect();
            let curve = |vals: &[f64]| on_axis.iter().map(|&k| (result.nodes[k][0], vals[k])).collect();
            line_chart(
                &format!("solution profile, eps = {}", result.eps),
                "x",
                "u",
                &[
                    Series { name: "u_eps".into(), points: curve(&result.u) },
                    Series { name: "u_0".into(), points: curve(&result.reference_values) },
                ],
                false,
            )
        }
        Artifact::Sweep { report, .. } => {
            let col = |f: fn(&crate::harness::RowMetrics) -> f64| -> Vec<(f64, f64)> {
                report.rows.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r.eps, f(m)))).collect()
            };
            line_chart(
                "convergence in eps",
                "eps",
                "error / energy gap",
                &[
                    Series { name: "L2 error".into(), points: col(|m| m.l2_error) },
                    Series { name: "H1 error".into(), points: col(|m| m.h1_error) },
                    Series { name: "energy gap".into(), points: col(|m| m.energy_gap) },
                ],
                true,
            )
        }
        Artifact::GammaCheck { rows, .. } => line_chart(
            "recovery sequence energy gap",
            "eps",
            "|F_eps[u] - F_0[u]|",
            &[Series { name: "gap".into(), points: rows.iter().map(|r| (r.eps, r.gap)).collect() }],
            true,
        ),
        Artifact::LemmaCheck { report, .. } => {
            let mut series = vec![Series {
                name: "perimeter gap".into(),
                points: report
                    .rows
                    .iter()
                    .map(|r| (r.eps, (r.perimeter - report.interface_measure).abs()))
                    .collect(),
            }];
            for (i, w) in report.rows[0].weights.iter().enumerate() {
                series.push(Series {
                    name: format!("{} D-blend gap", w.name),
                    points: report.rows.iter().map(|r| (r.eps, r.weights[i].diffusivity_gap)).collect(),
                });
            }
            line_chart("lemma checks", "eps", "gap", &series, true)
        }
    }
}

fn nearest_row(nodes: &[Vec<f64>], y: f64) -> f64 {
    nodes
        .iter()
        .map(|p| p[1])
        .min_by(|a, b| (a - y).abs().total_cmp(&(b - y).abs()))
        .unwrap_or(y)
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CONVERGENCE_SVG: &str = "convergence.svg";

/// Writes `report.json`, `report.csv` and `convergence.svg` into `out`.
pub fn write_artifacts(artifact: &Artifact, out: &Path) -> Result<Vec<PathBuf>> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let files = [
        (REPORT_JSON, to_json(artifact)),
        (REPORT_CSV, to_csv(artifact)),
        (CONVERGENCE_SVG, to_svg(artifact)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Exit status of a `ddm` invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    AssertionFailed = 1,
    ConfigError = 2,
}

/// Loads a config, runs `kind`, writes artifacts and reports the status.
/// Config problems are detected before any file is created.
pub fn run(config_path: &Path, kind: ExperimentKind, out: Option<&Path>, max_nodes: Option<usize>) -> (Status, String) {
    let mut config = match parse_config(config_path) {
        Ok(c) => c,
        Err(e) => return (Status::ConfigError, format!("config error: {e}")),
    };
    if let Some(declared) = config.experiment.kind {
        if declared != kind {
            return (
                Status::ConfigError,
                format!("config error: config declares kind {declared:?} but {kind:?} was requested"),
            );
        }
    }
    if let Some(n) = max_nodes {
        if n < 81 {
            return (Status::ConfigError, format!("config error: --max-nodes must be >= 81, got {n}"));
        }
        config.experiment.max_nodes = n;
    }
    if kind == ExperimentKind::GammaCheck && config.experiment.field.is_none() {
        return (Status::ConfigError, "config error: gamma-check needs key `u` in [experiment]".into());
    }
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| config.experiment.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    let artifact = match execute(&config, kind) {
        Ok(a) => a,
        Err(e) => return (Status::AssertionFailed, format!("run failed: {e}")),
    };
    if let Err(e) = write_artifacts(&artifact, &out) {
        return (Status::AssertionFailed, format!("could not write artifacts: {e}"));
    }
    let mut summary = String::new();
    for a in artifact.assertions() {
        let _ = writeln!(summary, "{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    let _ = write!(summary, "artifacts written to {}", out.display());
    let status = if artifact.passed() { Status::Success } else { Status::AssertionFailed };
    (status, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[problem]
box = -1, 1
shape = interval
interval = -0.5, 0.5
alpha = 2
beta = 1
gamma = 1
q = \"1\"
h = \"0\"
g = \"0.1\"   # flux datum

[experiment]
eps = 0.1, 0.05
";

    fn with(extra_problem: &str, extra_experiment: &str) -> String {
        MINIMAL
            .replace("[experiment]\n", &format!("{extra_problem}\n[experiment]\n{extra_experiment}\n"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.experiment.rho, 4.0);
        assert_eq!(c.experiment.tol, 1e-10);
        assert_eq!(c.experiment.max_nodes, DEFAULT_MAX_NODES);
        assert_eq!(c.experiment.reference, ReferenceKind::Auto);
        assert_eq!(c.spec.kappa, 0.0);
        assert_eq!(c.spec.g.to_string(), "0.1");
        assert_eq!(c.experiment.eps, vec![0.1, 0.05]);
    }

    #[test]
    fn validation_messages() {
        let disk = "\
[problem]
box = -1, 1, -1, 1
shape = disk
center = 0, 0
radius = 0.3
alpha = 2
beta = 1
gamma = 1
kappa = 1
q = \"1\"
h = \"0\"
g = \"0.1\"
[experiment]
eps = 0.05
";
        let err = parse_config_str(disk).unwrap_err().to_string();
        assert!(err.contains("Robin case supported in 1D only"), "{err}");
        let err = parse_config_str(&MINIMAL.replace("alpha = 2", "alpha = -1")).unwrap_err().to_string();
        assert!(err.contains("alpha must be positive"), "{err}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            (with("colour = 3", ""), 12, "unknown key"),
            (MINIMAL.replace("beta = 1", "beta = one"), 6, "not a number"),
            (MINIMAL.replace("q = \"1\"", "q = 1"), 8, "quoted"),
            (MINIMAL.replace("q = \"1\"", "q = \"1 +\""), 8, "syntax"),
            (MINIMAL.replace("eps = 0.1, 0.05", "eps = 0.05, 0.1"), 13, "decreasing"),
            (MINIMAL.replace("eps = 0.1, 0.05", "eps = 0.2, 0.05"), 13, "clearance"),
            (with("", "kind = shuffle"), 14, "unknown experiment kind"),
            (format!("alpha = 2\n{MINIMAL}"), 1, "before any section"),
            (MINIMAL.replace("[experiment]", "[other]"), 12, "unknown section"),
            (with("alpha = 3", ""), 12, "duplicate"),
        ];
        for (text, line, needle) in cases {
            match parse_config_str(&text) {
                Err(Error::Config { line: l, message }) => {
                    assert_eq!(l, line, "{message}");
                    assert!(message.contains(needle), "{message} lacks {needle}");
                }
                other => panic!("expected a config error containing {needle}, got {other:?}"),
            }
        }
        assert!(matches!(parse_config_str(&MINIMAL.replace("gamma = 1\n", "")), Err(Error::Invalid(_))));
    }

    #[test]
    fn references_and_fields() {
        let c = parse_config_str(&with("", "reference = fitted-fem\nreference_cells = 512\nu = \"cos(x)\"")).unwrap();
        assert_eq!(c.experiment.reference, ReferenceKind::FittedFem { cells: 512 });
        assert!(c.experiment.field.is_some());
        assert!(parse_config_str(&with("", "reference_cells = 512")).is_err());
        assert!(parse_config_str(&with("", "u = \"y\"")).is_err());
    }

    #[test]
    fn json_numbers_have_seventeen_digits() {
        let c = parse_config_str(MINIMAL).unwrap();
        let a = execute(&c, ExperimentKind::GammaCheck).err();
        assert!(a.is_some(), "gamma-check without u must fail");
        let a = execute(&c, ExperimentKind::Sweep).unwrap();
        let json = to_json(&a);
        assert!(json.contains("1.0000000000000001e-1"), "eps = 0.1 printed with 17 digits");
        let back: Artifact = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn svg_is_well_formed() {
        let series = [
            Series { name: "a & b".into(), points: vec![(0.1, 1.0), (0.05, 0.5), (0.025, 0.0)] },
            Series { name: "empty".into(), points: vec![] },
        ];
        let svg = line_chart("t<1>", "eps", "err", &series, true);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(lines.len(), 1);
        // the zero point is dropped on log axes
        assert_eq!(lines[0].attribute("points").unwrap().split(' ').count(), 2);
    }
}
