//! Aggregation of run manifests into result tables and perplexity figures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mlm_core::evalx::{round2, MetricReport, PHENOMENA};
use mlm_core::finetune::TrialResult;
use mlm_core::pretrain::{render_svg, PerplexityLog};
use walkdir::WalkDir;

use crate::manifest::{self, ManifestBuilder, RunManifest, RUN_MANIFEST};
use crate::CliError;

pub const TABLE_SCORES: &str = "table4_scores.csv";
pub const TABLE_TURBLIMP: &str = "table5_turblimp.csv";
pub const TABLE_RUNTIME: &str = "table6_runtime.csv";
pub const TABLE_HYPERPARAMS: &str = "table7_hyperparams.csv";
pub const PERPLEXITY_SVG: &str = "perplexity.svg";

/// Task ids with their column titles, in table order.
const TASKS: [(&str, &str); 3] = [("pos", "PoS"), ("ner", "NER"), ("offense", "Offense")];

/// Short column title of a phenomenon.
pub fn phenomenon_label(name: &str) -> &'static str {
    match name {
        "anaphor_agreement" => "Ana. Agr.",
        "argument_structure_transitive" => "Arg. Tr.",
        "argument_structure_ditransitive" => "Arg. Ditr.",
        "binding" => "Bind.",
        "determiners" => "Det.",
        "ellipsis" => "Ellip.",
        "irregular_forms" => "Irr.",
        "island_effects" => "Isl.",
        "nominalization" => "Nom.",
        "npi_licensing" => "NPI",
        "passives" => "Pass.",
        "quantifiers" => "Quant.",
        "relative_clauses" => "RelCl.",
        "scrambling" => "Scramb.",
        "subject_agreement" => "Subj. Agr.",
        "suspended_affixation" => "Susp. Aff.",
        _ => "?",
    }
}

/// Renders rows as CSV with a header line.
pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(CliError::runtime)?;
    for r in rows {
        w.write_record(r).map_err(CliError::runtime)?;
    }
    let bytes = w.into_inner().map_err(CliError::runtime)?;
    String::from_utf8(bytes).map_err(CliError::runtime)
}

fn score(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Header and row of the per-phenomenon table for one model.
pub fn turblimp_row(model: &str, report: &MetricReport) -> (Vec<String>, Vec<String>) {
    let mut header = vec!["model".to_string()];
    header.extend(PHENOMENA.iter().map(|p| phenomenon_label(p).to_string()));
    header.push("AVG".into());
    let mut row = vec![model.to_string()];
    row.extend(PHENOMENA.iter().map(|p| report.breakdown.get(*p).map(|v| score(*v)).unwrap_or_default()));
    row.push(score(report.primary_score));
    (header, row)
}

fn hours_minutes(seconds: f64) -> String {
    let minutes = (seconds / 60.0).round() as u64;
    format!("{}:{:02}", minutes / 60, minutes % 60)
}

#[derive(Default)]
struct ModelRow {
    best: BTreeMap<String, TrialResult>,
    turblimp: Option<MetricReport>,
}

#[derive(Default)]
struct Collected {
    models: BTreeMap<String, ModelRow>,
    task_seconds: BTreeMap<String, f64>,
    logs: BTreeMap<String, PathBuf>,
    warnings: Vec<String>,
}

fn is_manifest(path: &Path) -> bool {
    path.file_name().is_some_and(|n| n == RUN_MANIFEST)
}

impl Collected {
    fn add(&mut self, path: &Path, m: RunManifest) {
        let model = m.model.clone().unwrap_or_else(|| "model".into());
        match (m.stage.as_str(), m.task.as_deref()) {
            ("finetune", Some(task)) => {
                let best = m.result.get("best").cloned().map(serde_json::from_value::<TrialResult>);
                let seconds = m.result.get("grid_wall_clock_seconds").and_then(|v| v.as_f64());
                match (best, seconds) {
                    (Some(Ok(best)), Some(secs)) => {
                        *self.task_seconds.entry(task.to_string()).or_default() += secs;
                        let row = self.models.entry(model).or_default();
                        if row.best.insert(task.to_string(), best).is_some() {
                            self.warnings.push(format!("{}: replaces an earlier {task} result", path.display()));
                        }
                    }
                    _ => self.warnings.push(format!("{}: finetune manifest has no result", path.display())),
                }
            }
            ("eval", Some("turblimp")) => match serde_json::from_value::<MetricReport>(m.result.clone()) {
                Ok(r) => {
                    self.models.entry(model).or_default().turblimp = Some(r);
                }
                Err(e) => self.warnings.push(format!("{}: bad turblimp result: {e}", path.display())),
            },
            ("pretrain", _) => match m.outputs.get("log_dir") {
                Some(dir) => {
                    self.models.entry(model.clone()).or_default();
                    self.logs.insert(model, PathBuf::from(dir));
                }
                None => self.warnings.push(format!("{}: pretrain manifest has no log_dir", path.display())),
            },
            _ => {}
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Reads every run manifest under `runs` and writes the tables and figures to
/// `out`. Unreadable manifests are reported as warnings and skipped.
pub fn run(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    for r in runs {
        if !r.exists() {
            return Err(CliError::usage(format!("run directory {} does not exist", r.display())));
        }
    }
    let mut files: Vec<PathBuf> = runs
        .iter()
        .flat_map(|r| WalkDir::new(r).into_iter().filter_map(|e| e.ok()))
        .map(|e| e.into_path())
        .filter(|p| is_manifest(p))
        .collect();
    files.sort();
    files.dedup();

    let mut c = Collected::default();
    for f in &files {
        match manifest::load(f) {
            Ok(m) if m.stage == "report" => {}
            Ok(m) => c.add(f, m),
            Err(e) => c.warnings.push(format!("corrupt manifest {e}")),
        }
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let mut m = ManifestBuilder::start("report", 0);
    m.config(&serde_json::json!({ "runs": runs }))?;

    let mut header = vec!["model".to_string()];
    header.extend(TASKS.iter().map(|(_, t)| t.to_string()));
    header.push("TurBLiMP AVG".into());
    let rows: Vec<Vec<String>> = c
        .models
        .iter()
        .map(|(name, row)| {
            let mut r = vec![name.clone()];
            r.extend(TASKS.iter().map(|(id, _)| row.best.get(*id).map(|b| score(b.test_score)).unwrap_or_default()));
            r.push(row.turblimp.as_ref().map(|t| score(t.primary_score)).unwrap_or_default());
            r
        })
        .collect();
    let scores = out.join(TABLE_SCORES);
    write(&scores, &csv_string(&header, &rows)?)?;
    m.output("scores", &scores);

    let mut t5_header = turblimp_row("", &empty_report()).0;
    let mut t5_rows = Vec::new();
    for (name, row) in &c.models {
        if let Some(r) = &row.turblimp {
            let (h, line) = turblimp_row(name, r);
            t5_header = h;
            t5_rows.push(line);
        }
    }
    let turblimp = out.join(TABLE_TURBLIMP);
    write(&turblimp, &csv_string(&t5_header, &t5_rows)?)?;
    m.output("turblimp", &turblimp);

    let mut t6_rows: Vec<Vec<String>> = TASKS
        .iter()
        .filter_map(|(id, title)| c.task_seconds.get(*id).map(|s| vec![title.to_string(), hours_minutes(*s)]))
        .collect();
    t6_rows.push(vec!["Total".into(), hours_minutes(c.task_seconds.values().sum())]);
    let runtime = out.join(TABLE_RUNTIME);
    write(&runtime, &csv_string(&["task".into(), "computation time".into()], &t6_rows)?)?;
    m.output("runtime", &runtime);

    let mut t7_header = vec!["model".to_string()];
    for (_, title) in TASKS {
        t7_header.push(format!("{title} BF"));
        t7_header.push(format!("{title} LR"));
    }
    let t7_rows: Vec<Vec<String>> = c
        .models
        .iter()
        .filter(|(_, row)| !row.best.is_empty())
        .map(|(name, row)| {
            let mut r = vec![name.clone()];
            for (id, _) in TASKS {
                match row.best.get(id) {
                    Some(b) => {
                        r.push(b.batch_size.to_string());
                        r.push(format!("{:e}", b.learning_rate));
                    }
                    None => r.extend([String::new(), String::new()]),
                }
            }
            r
        })
        .collect();
    let hyper = out.join(TABLE_HYPERPARAMS);
    write(&hyper, &csv_string(&t7_header, &t7_rows)?)?;
    m.output("hyperparams", &hyper);

    let mut first_svg = true;
    for (name, dir) in &c.logs {
        match PerplexityLog::load(dir) {
            Ok(log) => {
                let svg = render_svg(&log);
                let path = out.join(format!("perplexity_{}.svg", sanitize(name)));
                write(&path, &svg)?;
                m.output(&format!("perplexity_{name}"), &path);
                if first_svg {
                    let main = out.join(PERPLEXITY_SVG);
                    write(&main, &svg)?;
                    m.output("perplexity", &main);
                    first_svg = false;
                }
            }
            Err(e) => c.warnings.push(format!("{}: cannot read perplexity log: {e}", dir.display())),
        }
    }
    for w in &c.warnings {
        log::warn!("{w}");
    }
    if !c.warnings.is_empty() {
        eprintln!("report: {} warning(s)", c.warnings.len());
    }
    m.result(&serde_json::json!({ "manifests": files.len(), "warnings": c.warnings }))?;
    m.finish(out)?;
    Ok(())
}

fn empty_report() -> MetricReport {
    MetricReport {
        task: String::new(),
        metric: String::new(),
        primary_score: 0.0,
        breakdown: BTreeMap::new(),
        support: BTreeMap::new(),
        skipped: 0,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phenomenon_labels_cover_every_phenomenon() {
        assert!(PHENOMENA.iter().all(|p| phenomenon_label(p) != "?"));
    }

    #[test]
    fn hours_minutes_formatting() {
        assert_eq!(hours_minutes(0.0), "0:00");
        assert_eq!(hours_minutes(3_600.0 * 200.0 + 21.0 * 60.0), "200:21");
    }

    #[test]
    fn csv_quotes_commas() {
        let s = csv_string(&["a".into(), "b".into()], &[vec!["x,y".into(), "1".into()]]).unwrap();
        assert_eq!(s, "a,b\n\"x,y\",1\n");
    }
}
