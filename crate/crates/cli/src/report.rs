use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use hfgt::qp::CompilationReport;
use hfgt::solver::{Extract, OperandBalance, Series, VerificationReport};
use hfgt::{Program, ScenarioDocument, Solution};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunReport<'a> {
    pub scenario: &'a str,
    pub name: &'a str,
    pub dimensions: &'a CompilationReport,
    pub status: hfgt::SolveStatus,
    /// Value of the QP objective, regularization included.
    pub objective: f64,
    /// Capability costs only.
    pub total_cost: f64,
    pub regularization: f64,
    pub cost_by_capability: &'a [(String, f64)],
    pub total_co2: f64,
    pub co2_by_resource: Vec<Series>,
    pub balances: &'a [OperandBalance],
    pub solver: &'a Solution,
    pub verification: &'a VerificationReport,
    pub wall_seconds: f64,
}

impl<'a> RunReport<'a> {
    pub fn new(
        program: &'a Program,
        scenario: &'a ScenarioDocument,
        sol: &'a Solution,
        verification: &'a VerificationReport,
        ex: &'a Extract,
        wall_seconds: f64,
    ) -> Self {
        RunReport {
            scenario: &scenario.id,
            name: &scenario.name,
            dimensions: &program.report,
            status: sol.status,
            objective: sol.objective,
            total_cost: ex.costs.capabilities_total,
            regularization: ex.costs.regularization,
            cost_by_capability: &ex.costs.by_capability,
            total_co2: ex.total_emissions,
            co2_by_resource: ex.emissions_by_resource(),
            balances: &ex.balances,
            solver: sol,
            verification,
            wall_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    drop(f);
    fs::rename(tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn num(v: f64) -> String {
    // keep -0.000000 out of the files
    let s = format!("{v:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0.000000".into()
    } else {
        s
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> anyhow::Result<String> {
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}

/// Long format: one row per resource and step.
pub fn co2_csv(ex: &Extract) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["resource", "step", "co2"])?;
    for s in ex.emissions_by_resource() {
        for (k, v) in s.values.iter().enumerate() {
            w.write_record([s.resource.as_str(), &(k + 1).to_string(), &num(*v)])?;
        }
    }
    finish(w)
}

pub fn balance_csv(b: &OperandBalance) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["operand", "kind", "capability", "resource", "step", "amount"])?;
    for (kind, series) in [("production", &b.production), ("consumption", &b.consumption)] {
        for s in series {
            for (k, v) in s.values.iter().enumerate() {
                w.write_record([
                    b.operand.as_str(),
                    kind,
                    s.id.as_str(),
                    s.resource.as_str(),
                    &(k + 1).to_string(),
                    &num(*v),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn objective_txt(sol: &Solution, ex: &Extract) -> String {
    format!(
        "total_cost {:.2}\nobjective {:.2}\nregularization {:.2}\ntotal_co2 {:.2}\n",
        ex.costs.capabilities_total, sol.objective, ex.costs.regularization, ex.total_emissions
    )
}
