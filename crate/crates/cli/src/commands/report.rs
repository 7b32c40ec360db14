use anyhow::{Context, Result};
use longrisk::eval::MetricReport;

use crate::args::{Format, ReportArgs};

fn markdown(r: &MetricReport) -> String {
    let mut s = String::from("| history | C-index | 1 year | 2 years | 3 years | 4 years | 5 years |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for row in &r.rows {
        let cells: Vec<String> = std::iter::once(&row.c_index).chain(&row.auc).map(|c| c.format()).collect();
        s.push_str(&format!("| {} | {} |\n", row.scenario, cells.join(" | ")));
    }
    let p = &r.provenance;
    s.push_str(&format!(
        "\n{} of {} splits, {} pseudo test sets per cell; intervals: {}\n",
        p.n_successful_splits, p.n_splits, p.n_repeats, p.ci_method
    ));
    s
}

pub fn run(a: &ReportArgs) -> Result<()> {
    let path = if a.input.is_dir() { a.input.join("report.json") } else { a.input.clone() };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: MetricReport = serde_json::from_str(&text)
        .map_err(longrisk::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    report.validate()?;
    match a.format {
        Format::Csv => print!("{}", report.to_table()),
        Format::Markdown => print!("{}", markdown(&report)),
        Format::Json => println!("{}", report.to_json()?),
    }
    Ok(())
}
