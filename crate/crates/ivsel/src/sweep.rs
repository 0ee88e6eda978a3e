//! Parameter sweeps: evaluate the estimands over 1- or 2-axis grids, label
//! each cell with the less biased estimator, and emit deterministic CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimands::{plim_matrix, SelectionRule};
use crate::model::{PathModel, PresetParams, Scenario};
use crate::normal::{psi_inverse, severity_to_threshold};

/// Severity axes are clamped inside the open unit interval because the
/// variance-reduction factor is undefined at the endpoints.
const SEVERITY_CLAMP: (f64, f64) = (1e-4, 1.0 - 1e-4);
/// A target variance-reduction factor this close to one is treated as
/// full adjustment rather than an absurdly deep cut.
const PSI_ADJUSTMENT_EDGE: f64 = 1.0 - 1e-9;
/// Ties in absolute bias are declared within this tolerance.
pub const TIE_TOL: f64 = 1e-12;

/// What a sweep axis ranges over: a model coefficient, the truncation
/// severity, or the variance-reduction factor directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisParam {
    Gamma,
    Severity,
    Psi,
    Tau,
    Delta1,
    Delta2,
    Delta3,
    Delta4,
    Beta,
}

impl AxisParam {
    pub const ALL: [AxisParam; 9] = [
        AxisParam::Gamma,
        AxisParam::Severity,
        AxisParam::Psi,
        AxisParam::Tau,
        AxisParam::Delta1,
        AxisParam::Delta2,
        AxisParam::Delta3,
        AxisParam::Delta4,
        AxisParam::Beta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AxisParam::Gamma => "gamma",
            AxisParam::Severity => "severity",
            AxisParam::Psi => "psi",
            AxisParam::Tau => "tau",
            AxisParam::Delta1 => "delta1",
            AxisParam::Delta2 => "delta2",
            AxisParam::Delta3 => "delta3",
            AxisParam::Delta4 => "delta4",
            AxisParam::Beta => "beta",
        }
    }

    /// Severity and psi drive the selection rule, not the model.
    pub fn is_rule_axis(self) -> bool {
        matches!(self, AxisParam::Severity | AxisParam::Psi)
    }
}

impl FromStr for AxisParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<AxisParam> {
        AxisParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or(Error::BadGrid(format!("unknown axis parameter '{s}'")))
    }
}

/// One sweep axis: `steps` evenly spaced values from `lo` to `hi`
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub param: AxisParam,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(param: AxisParam, lo: f64, hi: f64, steps: usize) -> Result<Axis> {
        let axis = Axis { param, lo, hi, steps };
        axis.validate()?;
        Ok(axis)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::BadGrid(format!("axis {} has zero steps", self.param.name())));
        }
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::BadGrid(format!(
                "axis {} range [{}, {}] is not an ordered finite interval",
                self.param.name(),
                self.lo,
                self.hi
            )));
        }
        let bound_ok = match self.param {
            AxisParam::Severity | AxisParam::Psi => self.lo > 0.0 && self.hi < 1.0 + 1e-12,
            _ => self.lo >= -1.0 && self.hi <= 1.0,
        };
        if !bound_ok {
            return Err(Error::BadGrid(format!(
                "axis {} range [{}, {}] leaves the parameter's valid range",
                self.param.name(),
                self.lo,
                self.hi
            )));
        }
        Ok(())
    }

    /// The axis values, endpoints included; a single step yields `lo`.
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.clamp(self.lo)];
        }
        (0..self.steps)
            .map(|i| {
                let t = i as f64 / (self.steps - 1) as f64;
                self.clamp(self.lo + (self.hi - self.lo) * t)
            })
            .collect()
    }

    fn clamp(&self, v: f64) -> f64 {
        match self.param {
            AxisParam::Severity => v.clamp(SEVERITY_CLAMP.0, SEVERITY_CLAMP.1),
            AxisParam::Psi => v.clamp(SEVERITY_CLAMP.0, 1.0),
            _ => v,
        }
    }
}

/// A sweep request: scenario, pinned parameter values, and 1-2 axes.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGrid {
    pub scenario: Scenario,
    pub fixed: BTreeMap<String, f64>,
    pub axes: Vec<Axis>,
}

impl SweepGrid {
    pub fn new(
        scenario: Scenario,
        fixed: BTreeMap<String, f64>,
        axes: Vec<Axis>,
    ) -> Result<SweepGrid> {
        let grid = SweepGrid { scenario, fixed, axes };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::BadGrid(format!(
                "need 1 or 2 axes, got {}",
                self.axes.len()
            )));
        }
        for axis in &self.axes {
            axis.validate()?;
            if !axis.param.is_rule_axis()
                && !self.scenario.param_names().contains(&axis.param.name())
            {
                return Err(Error::BadGrid(format!(
                    "scenario {} has no parameter '{}'",
                    self.scenario,
                    axis.param.name()
                )));
            }
        }
        if self.axes.len() == 2 && self.axes[0].param == self.axes[1].param {
            return Err(Error::BadGrid(format!(
                "both axes range over '{}'",
                self.axes[0].param.name()
            )));
        }
        for (name, &value) in &self.fixed {
            if !value.is_finite() {
                return Err(Error::BadGrid(format!("fixed {name} is not finite")));
            }
            if name == "severity" {
                if !(0.0 < value && value < 1.0) {
                    return Err(Error::BadGrid(format!(
                        "fixed severity {value} outside (0, 1)"
                    )));
                }
            } else if !self.scenario.param_names().contains(&name.as_str()) {
                return Err(Error::BadGrid(format!(
                    "scenario {} has no parameter '{name}'",
                    self.scenario
                )));
            }
        }
        Ok(())
    }

    /// Total number of grid cells.
    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.steps).product()
    }
}

/// Which selection rules to evaluate per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFamily {
    Truncation,
    Adjustment,
    Both,
}

impl FromStr for RuleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<RuleFamily> {
        match s {
            "truncation" => Ok(RuleFamily::Truncation),
            "adjustment" => Ok(RuleFamily::Adjustment),
            "both" => Ok(RuleFamily::Both),
            _ => Err(Error::BadGrid(format!("unknown rule family '{s}'"))),
        }
    }
}

/// Which estimator carries the smaller absolute bias in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeastBiased {
    #[serde(rename = "IV")]
    Iv,
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "tie")]
    Tie,
    #[serde(rename = "infeasible")]
    Infeasible,
}

impl LeastBiased {
    pub fn as_str(self) -> &'static str {
        match self {
            LeastBiased::Iv => "IV",
            LeastBiased::Ols => "OLS",
            LeastBiased::Tie => "tie",
            LeastBiased::Infeasible => "infeasible",
        }
    }
}

/// Compare absolute biases, declaring a tie within `tol`.
pub fn classify_least_biased(iv_bias: f64, ols_bias: f64, tol: f64) -> LeastBiased {
    if !iv_bias.is_finite() || !ols_bias.is_finite() {
        return LeastBiased::Infeasible;
    }
    let gap = ols_bias.abs() - iv_bias.abs();
    if gap.abs() <= tol {
        LeastBiased::Tie
    } else if gap > 0.0 {
        LeastBiased::Iv
    } else {
        LeastBiased::Ols
    }
}

/// One evaluated grid cell. Value fields are `None` when the cell's model
/// cannot be standardized or its estimand is degenerate; such cells are
/// kept and flagged through `status` instead of being dropped.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub rule: &'static str,
    pub gamma: f64,
    pub severity: Option<f64>,
    pub psi: f64,
    pub param_overrides: String,
    pub iv_plim: Option<f64>,
    pub ols_plim: Option<f64>,
    pub iv_bias: Option<f64>,
    pub ols_bias: Option<f64>,
    pub margin: Option<f64>,
    pub least_biased: LeastBiased,
    pub status: &'static str,
}

/// All rows of a sweep, in row-major axis order (first axis outermost);
/// with the `both` family each cell contributes a truncation row followed
/// by an adjustment row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// CSV with a fixed header and 12-significant-digit numbers.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario",
            "rule",
            "gamma",
            "severity",
            "psi",
            "param_overrides",
            "iv_plim",
            "ols_plim",
            "iv_bias",
            "ols_bias",
            "margin",
            "least_biased",
            "status",
        ])?;
        for row in &self.rows {
            w.write_record([
                row.scenario.name().to_string(),
                row.rule.to_string(),
                fmt_sig(row.gamma),
                row.severity.map(fmt_sig).unwrap_or_default(),
                fmt_sig(row.psi),
                row.param_overrides.clone(),
                row.iv_plim.map(fmt_sig).unwrap_or_default(),
                row.ols_plim.map(fmt_sig).unwrap_or_default(),
                row.iv_bias.map(fmt_sig).unwrap_or_default(),
                row.ols_bias.map(fmt_sig).unwrap_or_default(),
                row.margin.map(fmt_sig).unwrap_or_default(),
                row.least_biased.as_str().to_string(),
                row.status.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

/// 12 significant digits, scientific.
fn fmt_sig(v: f64) -> String {
    format!("{v:.11e}")
}

/// Evaluate the grid. Cells run in parallel; output order is the
/// deterministic row-major order regardless of scheduling.
pub fn run_sweep(grid: &SweepGrid, family: RuleFamily) -> Result<SweepResult> {
    grid.validate()?;
    let needs_cut = matches!(family, RuleFamily::Truncation | RuleFamily::Both);
    let has_cut_source = grid.axes.iter().any(|a| a.param.is_rule_axis())
        || grid.fixed.contains_key("severity");
    if needs_cut && !has_cut_source {
        return Err(Error::BadGrid(
            "truncation rows need a severity or psi axis, or a fixed severity".to_string(),
        ));
    }

    let cells = cell_assignments(&grid.axes);
    let nested: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|cell| evaluate_cell(grid, cell, family))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows: nested.into_iter().flatten().collect() })
}

/// Cartesian product of axis values, first axis outermost.
fn cell_assignments(axes: &[Axis]) -> Vec<Vec<(AxisParam, f64)>> {
    let mut cells: Vec<Vec<(AxisParam, f64)>> = vec![Vec::new()];
    for axis in axes {
        let values = axis.values();
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for prefix in &cells {
            for &v in &values {
                let mut cell = prefix.clone();
                cell.push((axis.param, v));
                next.push(cell);
            }
        }
        cells = next;
    }
    cells
}

fn evaluate_cell(
    grid: &SweepGrid,
    assignments: &[(AxisParam, f64)],
    family: RuleFamily,
) -> Result<Vec<SweepRow>> {
    let mut params = PresetParams::default();
    let mut severity = None;
    let mut psi_target = None;
    for (name, &value) in &grid.fixed {
        if name == "severity" {
            severity = Some(value);
        } else {
            params.set(name, value);
        }
    }
    for &(param, value) in assignments {
        match param {
            AxisParam::Severity => severity = Some(value),
            AxisParam::Psi => psi_target = Some(value),
            other => {
                params.set(other.name(), value);
            }
        }
    }

    let truncation_rule = || -> Result<SelectionRule> {
        if let Some(p) = psi_target {
            if p >= PSI_ADJUSTMENT_EDGE {
                Ok(SelectionRule::Adjustment)
            } else {
                SelectionRule::truncation_at_threshold(psi_inverse(p)?)
            }
        } else if let Some(q) = severity {
            SelectionRule::truncation_at_threshold(severity_to_threshold(q)?)
        } else {
            Err(Error::BadGrid("no severity or psi source for this cell".to_string()))
        }
    };
    let rules = match family {
        RuleFamily::Truncation => vec![truncation_rule()?],
        RuleFamily::Adjustment => vec![SelectionRule::Adjustment],
        RuleFamily::Both => vec![truncation_rule()?, SelectionRule::Adjustment],
    };

    let overrides = override_label(grid.scenario, &params);
    let model = PathModel::preset_with(grid.scenario, params);
    let mut rows = Vec::with_capacity(rules.len());
    for rule in rules {
        let outcome = match &model {
            Err(Error::Infeasible { .. }) => Ok(("infeasible", None)),
            Err(e) => Err(e.clone()),
            Ok(m) => match plim_matrix(m, &rule) {
                Ok(report) => Ok(("ok", Some(report))),
                Err(Error::Infeasible { .. }) => Ok(("infeasible", None)),
                Err(Error::Degenerate(_)) | Err(Error::SingularConditioning(_)) => {
                    Ok(("degenerate", None))
                }
                Err(e) => Err(e),
            },
        };
        let (status, report) = outcome?;
        let (iv_bias, ols_bias) = match &report {
            Some(r) => (Some(r.iv_bias()), Some(r.ols_bias())),
            None => (None, None),
        };
        let margin = match (iv_bias, ols_bias) {
            (Some(iv), Some(ols)) => Some(ols.abs() - iv.abs()),
            _ => None,
        };
        rows.push(SweepRow {
            scenario: grid.scenario,
            rule: match rule {
                SelectionRule::Adjustment => "adjustment",
                _ => "truncation",
            },
            gamma: params.gamma,
            severity: match &rule {
                SelectionRule::Truncation(spec) => Some(spec.severity()),
                _ => None,
            },
            psi: rule.psi_value(),
            param_overrides: overrides.clone(),
            iv_plim: report.as_ref().map(|r| r.iv_plim),
            ols_plim: report.as_ref().map(|r| r.ols_plim),
            iv_bias,
            ols_bias,
            margin,
            least_biased: match (iv_bias, ols_bias) {
                (Some(iv), Some(ols)) => classify_least_biased(iv, ols, TIE_TOL),
                _ => LeastBiased::Infeasible,
            },
            status,
        });
    }
    Ok(rows)
}

/// Parameters differing from the preset defaults, except gamma (which has
/// its own column), as a stable `name=value;...` label.
fn override_label(scenario: Scenario, params: &PresetParams) -> String {
    let defaults = PresetParams::default();
    scenario
        .param_names()
        .iter()
        .filter(|&&name| name != "gamma")
        .filter_map(|&name| {
            let v = params.get(name)?;
            if v == defaults.get(name)? {
                None
            } else {
                Some(format!("{name}={v}"))
            }
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// One point of the severity-to-variance-reduction calibration curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiPoint {
    pub severity: f64,
    pub threshold: f64,
    pub psi: f64,
}

/// Map each truncation severity to its cut threshold and
/// variance-reduction factor. The factor is strictly increasing in
/// severity.
pub fn psi_curve(severities: &[f64]) -> Result<Vec<PsiPoint>> {
    severities
        .iter()
        .map(|&q| {
            let threshold = severity_to_threshold(q)?;
            Ok(PsiPoint { severity: q, threshold, psi: crate::normal::psi(threshold) })
        })
        .collect()
}

/// CSV for a calibration curve: `severity,threshold,psi`.
pub fn write_psi_curve_csv<W: Write>(points: &[PsiPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["severity", "threshold", "psi"])?;
    for p in points {
        w.write_record([fmt_sig(p.severity), fmt_sig(p.threshold), fmt_sig(p.psi)])?;
    }
    w.flush()?;
    Ok(())
}

/// The standard 600-point severity grid for the calibration curve.
pub fn calibration_severity_grid() -> Vec<f64> {
    let n = 600;
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            0.001 + (0.999 - 0.001) * t
        })
        .collect()
}

/// Severity-to-psi calibration table over the standard 600-point grid.
pub fn fig_psi_curve() -> Result<Vec<PsiPoint>> {
    psi_curve(&calibration_severity_grid())
}

/// The standard 201 x 201 region map: baseline scenario, gamma in [0, 1]
/// crossed with severity in (0, 1), truncation rule, defaults elsewhere.
pub fn fig_region_map() -> Result<SweepResult> {
    let grid = SweepGrid::new(
        Scenario::Baseline,
        BTreeMap::new(),
        vec![
            Axis::new(AxisParam::Gamma, 0.0, 1.0, 201)?,
            Axis::new(AxisParam::Severity, 0.001, 0.999, 201)?,
        ],
    )?;
    run_sweep(&grid, RuleFamily::Truncation)
}
