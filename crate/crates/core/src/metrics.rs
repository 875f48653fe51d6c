//! KPI arithmetic, benchmark matrices and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formal::{AssertionStatus, CoverStatus, ProverResult};
use crate::record::{Outcome, RunRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{n_proven} proven out of {n_properties} properties")]
    ProvenExceedsTotal { n_proven: usize, n_properties: usize },
    #[error("success rate of an empty run list is undefined")]
    NoRecords,
    #[error("percentage {0} outside 0..=100")]
    OutOfRange(f64),
    #[error("missing benchmark cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("unknown design `{0}` (no complexity assigned)")]
    UnknownDesign(String),
    #[error("attempts must start at 1")]
    ZeroAttempt,
}

/// A percentage kept at full precision; rendered with two decimals,
/// rounding half up.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(f64);

impl Percent {
    pub const ZERO: Percent = Percent(0.0);

    pub fn new(value: f64) -> Result<Self, MetricsError> {
        if value.is_finite() && (0.0..=100.0).contains(&value) {
            Ok(Percent(value))
        } else {
            Err(MetricsError::OutOfRange(value))
        }
    }

    /// `100 * num / den`, or 0 when `den` is 0.
    pub fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Percent::ZERO
        } else {
            Percent(100.0 * num as f64 / den as f64)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The value at two decimals, rounded half up.
    pub fn rounded(self) -> f64 {
        // the epsilon absorbs representation error of values like 45.445
        ((self.0 * 100.0) + 0.5 + 1e-9).floor() / 100.0
    }

    /// Two-decimal text without the percent sign, e.g. `45.45`.
    pub fn render(self) -> String {
        format!("{:.2}", self.rounded())
    }

    /// `45.45\%`, as typeset in LaTeX tables.
    pub fn latex(self) -> String {
        format!("{}\\%", self.render())
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.render())
    }
}

pub fn proven_rate(n_proven: usize, n_properties: usize) -> Result<Percent, MetricsError> {
    if n_proven > n_properties {
        return Err(MetricsError::ProvenExceedsTotal {
            n_proven,
            n_properties,
        });
    }
    Ok(Percent::ratio(n_proven, n_properties))
}

/// Covered covers over all reported covers.
pub fn coverage_rate(result: &ProverResult) -> Percent {
    Percent::ratio(
        result.count_covers(CoverStatus::Covered),
        result.covers.len(),
    )
}

pub fn success_rate(records: &[RunRecord]) -> Result<Percent, MetricsError> {
    success_rate_of(records.iter().map(|r| r.outcome))
}

pub fn success_rate_of(
    outcomes: impl IntoIterator<Item = Outcome>,
) -> Result<Percent, MetricsError> {
    let (mut n, mut ok) = (0, 0);
    for o in outcomes {
        n += 1;
        ok += usize::from(o == Outcome::Success);
    }
    if n == 0 {
        return Err(MetricsError::NoRecords);
    }
    Ok(Percent::ratio(ok, n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiSummary {
    pub n_properties: usize,
    pub n_proven: usize,
    pub proven_rate: Percent,
    pub coverage_rate: Percent,
    pub run_success: bool,
}

impl KpiSummary {
    pub fn from_result(
        n_properties: usize,
        result: &ProverResult,
        run_success: bool,
    ) -> Result<Self, MetricsError> {
        let n_proven = result.count(AssertionStatus::Proven);
        Ok(KpiSummary {
            n_properties,
            n_proven,
            proven_rate: proven_rate(n_proven, n_properties)?,
            coverage_rate: if n_properties == 0 {
                Percent::ZERO
            } else {
                coverage_rate(result)
            },
            run_success,
        })
    }

    /// A cell whose rates were reported rather than computed (as in
    /// published tables); `n_proven` is recovered from the rate.
    pub fn from_reported(
        n_properties: usize,
        proven: f64,
        coverage: f64,
    ) -> Result<Self, MetricsError> {
        let proven_rate = Percent::new(proven)?;
        let coverage_rate = Percent::new(coverage)?;
        Ok(KpiSummary {
            n_properties,
            n_proven: (proven * n_properties as f64 / 100.0).round() as usize,
            proven_rate,
            coverage_rate,
            run_success: n_properties > 0,
        })
    }
}

/// One row of a workflow comparison: shares of proven / failing assertions
/// and of unreachable / covered covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRow {
    pub label: String,
    pub proven: Percent,
    pub cex: Percent,
    pub unreachable: Percent,
    pub covered: Percent,
}

impl WorkflowRow {
    pub fn from_result(label: impl Into<String>, r: &ProverResult) -> Self {
        let n = r.assertions.len();
        let c = r.covers.len();
        WorkflowRow {
            label: label.into(),
            proven: Percent::ratio(r.count(AssertionStatus::Proven), n),
            cex: Percent::ratio(r.count(AssertionStatus::Cex), n),
            unreachable: Percent::ratio(r.count_covers(CoverStatus::Unreachable), c),
            covered: Percent::ratio(r.count_covers(CoverStatus::Covered), c),
        }
    }
}

pub fn render_workflow_table(rows: &[WorkflowRow]) -> String {
    let mut out = String::from(
        "| Workflow | Proved Assertions | CEX | Unreachable Covers | Covered Covers |\n|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.label, r.proven, r.cex, r.unreachable, r.covered
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Complexity {
    Basic,
    Intermediate,
    Advanced,
}

impl Complexity {
    pub fn as_str(self) -> &'static str {
        match self {
            Complexity::Basic => "Basic",
            Complexity::Intermediate => "Intermediate",
            Complexity::Advanced => "Advanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub design: String,
    pub model_id: String,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMatrix {
    pub cells: BTreeMap<CellKey, KpiSummary>,
    pub complexity: BTreeMap<String, Complexity>,
    /// Designs and models in first-seen order, for stable table layout.
    #[serde(default)]
    design_order: Vec<String>,
    #[serde(default)]
    model_order: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cells: usize,
    pub mean_proven_rate: Percent,
    pub mean_coverage_rate: Percent,
    pub success_rate: Percent,
}

impl BenchmarkMatrix {
    pub fn add_design(&mut self, design: &str, complexity: Complexity) {
        if self.complexity.insert(design.to_string(), complexity).is_none() {
            self.design_order.push(design.to_string());
        }
    }

    pub fn insert(
        &mut self,
        design: &str,
        model_id: &str,
        attempt: u32,
        kpi: KpiSummary,
    ) -> Result<(), MetricsError> {
        if !self.complexity.contains_key(design) {
            return Err(MetricsError::UnknownDesign(design.to_string()));
        }
        if attempt == 0 {
            return Err(MetricsError::ZeroAttempt);
        }
        if !self.model_order.iter().any(|m| m == model_id) {
            self.model_order.push(model_id.to_string());
        }
        self.cells.insert(
            CellKey {
                design: design.to_string(),
                model_id: model_id.to_string(),
                attempt,
            },
            kpi,
        );
        Ok(())
    }

    pub fn designs(&self) -> &[String] {
        &self.design_order
    }

    pub fn models(&self) -> &[String] {
        &self.model_order
    }

    pub fn max_attempt(&self) -> u32 {
        self.cells.keys().map(|k| k.attempt).max().unwrap_or(0)
    }

    /// Cells that must exist for `model_id` but do not: every design at
    /// every attempt 1..=K, K being the largest attempt in the matrix.
    pub fn missing_cells(&self, model_id: &str) -> Vec<String> {
        let k = self.max_attempt();
        let mut missing = Vec::new();
        for design in &self.design_order {
            for attempt in 1..=k {
                let key = CellKey {
                    design: design.clone(),
                    model_id: model_id.to_string(),
                    attempt,
                };
                if !self.cells.contains_key(&key) {
                    missing.push(format!("{design}/{model_id}/pass@{attempt}"));
                }
            }
        }
        missing
    }

    /// Unweighted mean per complexity class over all (design, attempt)
    /// cells of the model.
    pub fn aggregate_by_complexity(
        &self,
        model_id: &str,
    ) -> Result<BTreeMap<Complexity, Aggregate>, MetricsError> {
        let missing = self.missing_cells(model_id);
        if !missing.is_empty() {
            return Err(MetricsError::MissingCells(missing));
        }
        let mut groups: BTreeMap<Complexity, Vec<&KpiSummary>> = BTreeMap::new();
        for (key, kpi) in &self.cells {
            if key.model_id == model_id {
                groups.entry(self.complexity[&key.design]).or_default().push(kpi);
            }
        }
        Ok(groups
            .into_iter()
            .map(|(c, kpis)| (c, aggregate(&kpis)))
            .collect())
    }
}

fn aggregate(kpis: &[&KpiSummary]) -> Aggregate {
    let n = kpis.len();
    let mean = |f: &dyn Fn(&KpiSummary) -> f64| {
        if n == 0 {
            0.0
        } else {
            kpis.iter().map(|k| f(k)).sum::<f64>() / n as f64
        }
    };
    Aggregate {
        cells: n,
        mean_proven_rate: Percent(mean(&|k| k.proven_rate.value())),
        mean_coverage_rate: Percent(mean(&|k| k.coverage_rate.value())),
        success_rate: Percent::ratio(kpis.iter().filter(|k| k.run_success).count(), n),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
}

pub const CSV_HEADER: [&str; 9] = [
    "design",
    "complexity",
    "model",
    "attempt",
    "n_properties",
    "n_proven",
    "proven_rate",
    "coverage_rate",
    "outcome",
];

/// Markdown tables (one per complexity class, designs × metrics against
/// pass@k × model, then per-class means, then per-run rows) and a CSV with
/// one row per cell.
pub fn render_report(matrix: &BenchmarkMatrix, records: &[RunRecord]) -> Report {
    let mut md = String::from("# Benchmark report\n");
    let k = matrix.max_attempt();
    let models = matrix.models();

    for class in [Complexity::Basic, Complexity::Intermediate, Complexity::Advanced] {
        let designs: Vec<&String> = matrix
            .designs()
            .iter()
            .filter(|d| matrix.complexity[*d] == class)
            .collect();
        if designs.is_empty() && !matrix.cells.is_empty() {
            continue;
        }
        md.push_str(&format!("\n## {} designs\n\n| Design | Metric |", class.as_str()));
        let mut cols = 0;
        for a in 1..=k {
            for m in models {
                md.push_str(&format!(" Pass@{a} {m} |"));
                cols += 1;
            }
        }
        md.push_str("\n|---|---|");
        md.push_str(&"---|".repeat(cols));
        md.push('\n');
        for d in designs {
            for metric in ["# Properties", "% Proven", "% Coverage"] {
                md.push_str(&format!("| {d} | {metric} |"));
                for a in 1..=k {
                    for m in models {
                        let key = CellKey {
                            design: d.clone(),
                            model_id: m.clone(),
                            attempt: a,
                        };
                        let cell = match matrix.cells.get(&key) {
                            None => "-".to_string(),
                            Some(kpi) => match metric {
                                "# Properties" => kpi.n_properties.to_string(),
                                "% Proven" => kpi.proven_rate.to_string(),
                                _ => kpi.coverage_rate.to_string(),
                            },
                        };
                        md.push_str(&format!(" {cell} |"));
                    }
                }
                md.push('\n');
            }
        }
        if matrix.cells.is_empty() {
            break;
        }
    }

    md.push_str("\n## Aggregate by complexity\n\n| Complexity | Model | Cells | Success | Coverage | Proven |\n|---|---|---|---|---|---|\n");
    for m in models {
        match matrix.aggregate_by_complexity(m) {
            Ok(groups) => {
                for (c, agg) in groups {
                    md.push_str(&format!(
                        "| {} | {m} | {} | {} | {} | {} |\n",
                        c.as_str(),
                        agg.cells,
                        agg.success_rate,
                        agg.mean_coverage_rate,
                        agg.mean_proven_rate
                    ));
                }
            }
            Err(e) => md.push_str(&format!("| - | {m} | incomplete: {e} | | | |\n")),
        }
    }

    md.push_str("\n## Runs\n\n| Run | Outcome | Stage | # Properties | % Proven | % Coverage |\n|---|---|---|---|---|---|\n");
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.run_id,
            r.outcome.as_str(),
            r.stage_reached.as_str(),
            r.kpi.n_properties,
            r.kpi.proven_rate,
            r.kpi.coverage_rate
        ));
    }
    if !records.is_empty() {
        let rows: Vec<WorkflowRow> = records
            .iter()
            .map(|r| WorkflowRow::from_result(&r.run_id, &r.prover_result))
            .collect();
        md.push('\n');
        md.push_str(&render_workflow_table(&rows));
    }

    Report {
        markdown: md,
        csv: render_csv(matrix),
    }
}

pub fn render_csv(matrix: &BenchmarkMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv");
    for (key, kpi) in &matrix.cells {
        let complexity = matrix.complexity[&key.design].as_str();
        w.write_record([
            key.design.as_str(),
            complexity,
            key.model_id.as_str(),
            &key.attempt.to_string(),
            &kpi.n_properties.to_string(),
            &kpi.n_proven.to_string(),
            &kpi.proven_rate.render(),
            &kpi.coverage_rate.render(),
            if kpi.run_success { "SUCCESS" } else { "FAILED" },
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Distinct complexity classes present in a matrix.
pub fn classes(matrix: &BenchmarkMatrix) -> BTreeSet<Complexity> {
    matrix.complexity.values().copied().collect()
}
