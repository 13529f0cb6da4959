//! Report files. Tables use 9 significant digits; `report.json` keeps full
//! precision. Nothing time-dependent is written, so a fixed report always
//! produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnalysisError, BudgetStats, DiversityBin, EntropyRecord, EvaluationReport};
use crate::scaling::MethodId;

/// Optional analyses written next to the main tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportExtras {
    pub diversity_bins: Option<Vec<DiversityBin>>,
    pub entropy: Option<Vec<EntropyRecord>>,
    pub budget: Option<BudgetStats>,
}

/// Fixed 9-significant-digit rendering with trailing zeros trimmed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&magnitude) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

fn write_table(
    path: &Path,
    delimiter: u8,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn methods_of(report: &EvaluationReport) -> Vec<MethodId> {
    report.per_method.keys().copied().collect()
}

/// Writes `report.json`, `per_method.csv`, `per_problem.csv` and plot-ready
/// TSV series under `dir/series`. Returns the paths written.
pub fn emit_report(
    report: &EvaluationReport,
    extras: &ReportExtras,
    dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir.join("series"))?;
    let mut written = Vec::new();
    let methods = methods_of(report);

    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n")?;
    written.push(json);

    let path = dir.join("per_method.csv");
    let header: Vec<String> = [
        "method",
        "metric",
        "mean_distance",
        "ci_low",
        "ci_high",
        "n_problems",
        "fallback_count",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = report
        .per_method
        .iter()
        .map(|(m, s)| {
            vec![
                m.to_string(),
                report.metric.clone(),
                format_sig(s.mean_distance),
                format_sig(s.ci_low),
                format_sig(s.ci_high),
                s.n_problems.to_string(),
                s.fallback_count.to_string(),
            ]
        })
        .collect();
    write_table(&path, b',', &header, &rows)?;
    written.push(path);

    let path = dir.join("per_problem.csv");
    let mut header: Vec<String> = [
        "problem_id",
        "diversity",
        "n_samples",
        "compliance",
        "fallback",
        "worst_sample_distance",
        "mean_reasoning_tokens",
        "mean_completion_tokens",
        "tokens_approximate",
        "flagged_ratings",
    ]
    .map(String::from)
    .to_vec();
    header.extend(methods.iter().map(|m| format!("distance:{m}")));
    header.extend(
        methods
            .iter()
            .filter(|m| m.selects_a_sample())
            .map(|m| format!("selected:{m}")),
    );
    let rows: Vec<Vec<String>> = report
        .per_problem
        .iter()
        .map(|r| {
            let mut row = vec![
                r.problem_id.clone(),
                opt(r.diversity),
                r.n_samples.to_string(),
                format_sig(r.compliance),
                r.fallback.to_string(),
                opt(r.worst_sample_distance),
                format_sig(r.mean_reasoning_tokens),
                format_sig(r.mean_completion_tokens),
                r.tokens_approximate.to_string(),
                r.flagged_ratings.to_string(),
            ];
            row.extend(methods.iter().map(|m| opt(r.distances.get(m).copied())));
            row.extend(
                methods
                    .iter()
                    .filter(|m| m.selects_a_sample())
                    .map(|m| r.selected.get(m).map(|i| i.to_string()).unwrap_or_default()),
            );
            row
        })
        .collect();
    write_table(&path, b',', &header, &rows)?;
    written.push(path);

    let path = dir.join("series/diversity_distance.tsv");
    let mut header = vec!["problem_id".to_string(), "diversity".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    let rows: Vec<Vec<String>> = report
        .per_problem
        .iter()
        .filter(|r| r.diversity.is_some())
        .map(|r| {
            let mut row = vec![r.problem_id.clone(), opt(r.diversity)];
            row.extend(methods.iter().map(|m| opt(r.distances.get(m).copied())));
            row
        })
        .collect();
    write_table(&path, b'\t', &header, &rows)?;
    written.push(path);

    if let Some(bins) = &extras.diversity_bins {
        let path = dir.join("series/diversity_bins.tsv");
        let mut header: Vec<String> = ["bin", "n_problems", "diversity_min", "diversity_max"]
            .map(String::from)
            .to_vec();
        for prefix in ["mean", "improvement", "gain_fraction"] {
            header.extend(methods.iter().map(|m| format!("{prefix}:{m}")));
        }
        let rows: Vec<Vec<String>> = bins
            .iter()
            .map(|b| {
                let mut row = vec![
                    b.bin.to_string(),
                    b.n_problems.to_string(),
                    format_sig(b.diversity_min),
                    format_sig(b.diversity_max),
                ];
                row.extend(methods.iter().map(|m| opt(b.mean_distance.get(m).copied())));
                row.extend(
                    methods
                        .iter()
                        .map(|m| opt(b.improvement_over_simple.get(m).copied())),
                );
                row.extend(
                    methods
                        .iter()
                        .map(|m| opt(b.gain_fraction.get(m).copied().flatten())),
                );
                row
            })
            .collect();
        write_table(&path, b'\t', &header, &rows)?;
        written.push(path);
    }

    if let Some(entropy) = &extras.entropy {
        let path = dir.join("series/entropy.tsv");
        let header: Vec<String> = [
            "problem_id",
            "truth_entropy",
            "simple_entropy",
            "mean_sample_entropy",
            "averaged_entropy",
            "smoothed_entropy",
            "simple_distance",
            "averaged_distance",
            "smoothed_distance",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = entropy
            .iter()
            .map(|e| {
                let mut row = vec![e.problem_id.clone()];
                row.extend(
                    [
                        e.truth_entropy,
                        e.simple_entropy,
                        e.mean_sample_entropy,
                        e.averaged_entropy,
                        e.smoothed_entropy,
                        e.simple_distance,
                        e.averaged_distance,
                        e.smoothed_distance,
                    ]
                    .map(format_sig),
                );
                row
            })
            .collect();
        write_table(&path, b'\t', &header, &rows)?;
        written.push(path);
    }

    if let Some(budget) = &extras.budget {
        let path = dir.join("series/budget.tsv");
        let header: Vec<String> = ["tokens", "n_samples", "q25", "median", "q75", "approximate"]
            .map(String::from)
            .to_vec();
        let mut rows = Vec::new();
        for (name, q, approx) in [
            ("reasoning", budget.reasoning, budget.reasoning_approximate),
            ("completion", budget.completion, false),
        ] {
            let cells = match q {
                Some(q) => [q.q25, q.median, q.q75].map(format_sig).to_vec(),
                None => vec![String::new(); 3],
            };
            let mut row = vec![name.to_string(), budget.n_samples.to_string()];
            row.extend(cells);
            row.push(approx.to_string());
            rows.push(row);
        }
        write_table(&path, b'\t', &header, &rows)?;
        written.push(path);
    }

    if extras != &ReportExtras::default() {
        let path = dir.join("extras.json");
        fs::write(&path, serde_json::to_string_pretty(extras)? + "\n")?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_report(dir: &Path) -> Result<EvaluationReport, AnalysisError> {
    Ok(serde_json::from_str(&fs::read_to_string(
        dir.join("report.json"),
    )?)?)
}

/// Reads `per_problem.csv` back as one column map per row.
pub fn load_per_problem_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}
