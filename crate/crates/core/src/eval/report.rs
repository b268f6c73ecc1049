use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{pass_at_k, refinement_success_rate, refinement_success_rate_macro, EvalRun, TaskOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Keyed by k. Mean over complete tasks.
    pub pass_at: BTreeMap<usize, f64>,
    /// Pooled rate; null for round 0 or when nothing entered the round.
    pub refinement_rate: Option<f64>,
    pub refinement_rate_macro: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub rounds: Vec<RoundReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_tasks: usize,
    pub incomplete_tasks: Vec<String>,
    /// Keyed by prompt mode.
    pub series: BTreeMap<String, SeriesReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub per_benchmark: BTreeMap<String, BenchmarkReport>,
}

fn series(outcomes: &[TaskOutcome], ks: &[usize]) -> SeriesReport {
    let complete: Vec<&TaskOutcome> = outcomes.iter().filter(|o| !o.incomplete).collect();
    let n_rounds = complete.iter().map(|o| o.c_by_round.len()).min().unwrap_or(0);
    let owned: Vec<TaskOutcome> = complete.iter().map(|o| (*o).clone()).collect();
    let rounds = (0..n_rounds)
        .map(|round| {
            let pass_at = ks
                .iter()
                .filter(|&&k| complete.iter().all(|o| k <= o.n))
                .map(|&k| {
                    let sum: f64 = complete
                        .iter()
                        .map(|o| pass_at_k(o.n, o.c_by_round[round], k).expect("checked k <= n"))
                        .sum();
                    (k, sum / complete.len() as f64)
                })
                .collect();
            RoundReport {
                round,
                pass_at,
                refinement_rate: (round > 0)
                    .then(|| refinement_success_rate(&owned, round).ok())
                    .flatten(),
                refinement_rate_macro: (round > 0)
                    .then(|| refinement_success_rate_macro(&owned, round).ok())
                    .flatten(),
            }
        })
        .collect();
    SeriesReport { rounds }
}

impl EvalReport {
    pub fn new(ks: Vec<usize>) -> Self {
        Self {
            ks,
            per_benchmark: BTreeMap::new(),
        }
    }

    pub fn add_run(&mut self, run: &EvalRun) {
        let mut b = BenchmarkReport::default();
        let mut incomplete = std::collections::BTreeSet::new();
        for (mode, outcomes) in &run.outcomes {
            b.n_tasks = b.n_tasks.max(outcomes.len());
            incomplete.extend(outcomes.iter().filter(|o| o.incomplete).map(|o| o.problem_id.clone()));
            b.series.insert(mode.clone(), series(outcomes, &self.ks));
        }
        b.incomplete_tasks = incomplete.into_iter().collect();
        self.per_benchmark.insert(run.benchmark.clone(), b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "markdown-table" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

const SETTINGS: [(&str, &str); 2] = [("refine", "Refine"), ("explain-then-refine", "Expl. + Refine")];

fn at(s: Option<&SeriesReport>, round: usize, k: usize) -> Option<f64> {
    s?.rounds.get(round)?.pass_at.get(&k).copied()
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let ks = &report.ks;
    out.push_str("| Benchmark | Setting |");
    for k in ks {
        let _ = write!(out, " pass@{k} |");
    }
    out.push_str(" Refine rate |\n|---|---|");
    for _ in ks {
        out.push_str("---|");
    }
    out.push_str("---|\n");

    for (name, b) in &report.per_benchmark {
        let init = b.series.values().next();
        let _ = write!(out, "| {name} | Init. |");
        for &k in ks {
            let _ = write!(out, " {} |", pct(at(init, 0, k)));
        }
        out.push_str(" - |\n");
        for (key, label) in SETTINGS {
            let Some(s) = b.series.get(key) else { continue };
            let _ = write!(out, "| {name} | {label} |");
            for &k in ks {
                let _ = write!(out, " {} |", pct(at(Some(s), 1, k)));
            }
            let rate = s.rounds.get(1).and_then(|r| r.refinement_rate);
            let _ = writeln!(out, " {} |", pct(rate));
        }
    }

    for (name, b) in &report.per_benchmark {
        let rounds = b.series.values().map(|s| s.rounds.len()).max().unwrap_or(0);
        if rounds <= 1 {
            continue;
        }
        let both = SETTINGS.iter().all(|(k, _)| b.series.contains_key(*k));
        let _ = write!(out, "\n### {name}: per round\n\n| Round |");
        let mut cols: Vec<String> = Vec::new();
        for (key, label) in SETTINGS {
            if b.series.contains_key(key) {
                cols.extend(ks.iter().map(|k| format!("{label} pass@{k}")));
            }
        }
        if both {
            cols.extend(ks.iter().map(|k| format!("Best of both pass@{k}")));
        }
        for c in &cols {
            let _ = write!(out, " {c} |");
        }
        out.push_str("\n|---|");
        for _ in &cols {
            out.push_str("---|");
        }
        out.push('\n');
        for round in 0..rounds {
            let _ = write!(out, "| {round} |");
            for (key, _) in SETTINGS {
                if let Some(s) = b.series.get(key) {
                    for &k in ks {
                        let _ = write!(out, " {} |", pct(at(Some(s), round, k)));
                    }
                }
            }
            if both {
                for &k in ks {
                    let best = SETTINGS
                        .iter()
                        .filter_map(|(key, _)| at(b.series.get(*key), round, k))
                        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                    let _ = write!(out, " {} |", pct(best));
                }
            }
            out.push('\n');
        }
        if !b.incomplete_tasks.is_empty() {
            let _ = writeln!(out, "\nIncomplete tasks: {}", b.incomplete_tasks.join(", "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run() -> EvalRun {
        let o = |c: &[usize]| TaskOutcome {
            problem_id: "p".into(),
            n: 10,
            c_by_round: c.to_vec(),
            incomplete: false,
            error: None,
        };
        let mut outcomes = BTreeMap::new();
        outcomes.insert("refine".to_string(), vec![o(&[2, 4])]);
        outcomes.insert("explain-then-refine".to_string(), vec![o(&[2, 6])]);
        EvalRun {
            benchmark: "toy".into(),
            outcomes,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let md = render_report(&EvalReport::new(vec![1, 10]), ReportFormat::Markdown);
        assert_eq!(
            md,
            "| Benchmark | Setting | pass@1 | pass@10 | Refine rate |\n|---|---|---|---|---|\n"
        );
    }

    #[test]
    fn markdown_rows() {
        let mut r = EvalReport::new(vec![1]);
        r.add_run(&run());
        let md = render_report(&r, ReportFormat::Markdown);
        assert!(md.contains("| toy | Init. | 20.00 | - |"));
        assert!(md.contains("| toy | Refine | 40.00 | 25.00 |"));
        assert!(md.contains("| toy | Expl. + Refine | 60.00 | 50.00 |"));
        assert!(md.contains("| 1 | 40.00 | 60.00 | 60.00 |"));
    }

    #[test]
    fn json_round_trips() {
        let mut r = EvalReport::new(vec![1, 5]);
        r.add_run(&run());
        let back: EvalReport = serde_json::from_str(&render_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }
}
