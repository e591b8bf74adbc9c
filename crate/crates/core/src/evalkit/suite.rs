use std::fmt::Write as _;
use std::io;
use std::sync::Arc;

use super::score::{score_run, Metric, Score};
use super::EvalError;
use crate::memory::KnowledgeBase;
use crate::orchestrator::{run_scenario, Assets, BackendRef, RunConfig, RunTrace};

pub const FAMILIES: [&str; 4] = ["flight", "hotel", "shopping", "takeaway"];
pub const DILEMMA_VARIANTS: [&str; 3] = ["ambiguous", "incremental", "conflict"];

/// The twelve family × dilemma scenario names.
pub fn battery_names() -> Vec<String> {
    FAMILIES
        .iter()
        .flat_map(|f| DILEMMA_VARIANTS.iter().map(move |v| format!("{f}-{v}")))
        .collect()
}

/// One scored run.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub scenario: String,
    pub label: String,
    pub status: String,
    pub score: Score,
    pub trace: RunTrace,
}

/// Scored runs, in the order they ran.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub rows: Vec<RunRow>,
}

impl Table {
    pub fn pooled(&self) -> Score {
        Score::pool(self.rows.iter().map(|r| &r.score))
    }

    pub fn pooled_for(&self, label: &str) -> Score {
        Score::pool(self.rows.iter().filter(|r| r.label == label).map(|r| &r.score))
    }

    /// One line per run: value, numerator and denominator of every metric.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["scenario".to_string(), "label".into(), "status".into()];
        for m in Metric::ALL {
            header.extend([
                m.as_str().to_string(),
                format!("{}_num", m.as_str()),
                format!("{}_den", m.as_str()),
            ]);
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.scenario.clone(), r.label.clone(), r.status.clone()];
            for m in Metric::ALL {
                let x = r.score.get(m);
                rec.extend([x.display(), x.num.to_string(), x.den.to_string()]);
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Markdown: one row per run plus a pooled row per label.
    pub fn render(&self) -> String {
        let mut s = metric_header("scenario | label");
        for r in &self.rows {
            s += &metric_row(&format!("{} | {}", r.scenario, r.label), &r.score);
        }
        let mut labels: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        labels.dedup();
        for l in labels {
            s += &metric_row(&format!("**all** | {l}"), &self.pooled_for(l));
        }
        s
    }
}

fn metric_header(lead: &str) -> String {
    let names: Vec<&str> = Metric::ALL.iter().map(|m| m.as_str()).collect();
    let cols = lead.matches('|').count() + 1 + names.len();
    format!("| {lead} | {} |\n|{}\n", names.join(" | "), "---|".repeat(cols))
}

fn metric_row(lead: &str, s: &Score) -> String {
    let vals: Vec<String> = Metric::ALL.iter().map(|&m| s.get(m).display()).collect();
    format!("| {lead} | {} |\n", vals.join(" | "))
}

/// Runs scenarios from an asset tree and scores them.
pub struct Suite {
    pub assets: Assets,
    pub backend: BackendRef,
    knowledge: Arc<KnowledgeBase>,
}

impl Suite {
    pub fn new(assets: Assets, backend: BackendRef) -> Result<Self, EvalError> {
        let knowledge = assets.knowledge()?;
        Ok(Self {
            assets,
            backend,
            knowledge,
        })
    }

    pub fn run_one(&self, name: &str, label: &str, cfg: &RunConfig) -> Result<RunRow, EvalError> {
        let cfg = RunConfig {
            evaluator: true,
            ..cfg.clone()
        };
        let scenario = self.assets.load_scenario(name)?;
        let backend = self.assets.backend(&self.backend, &scenario)?;
        let trace = run_scenario(&scenario, &cfg, backend, self.knowledge.clone())?;
        let score = score_run(&trace, &scenario)?;
        Ok(RunRow {
            scenario: scenario.name.clone(),
            label: label.to_string(),
            status: trace
                .end()
                .and_then(|e| e.str_field("status"))
                .unwrap_or_default()
                .to_string(),
            score,
            trace,
        })
    }

    pub fn run_all(&self, names: &[String], label: &str, cfg: &RunConfig) -> Result<Table, EvalError> {
        let mut t = Table::default();
        for n in names {
            t.rows.push(self.run_one(n, label, cfg)?);
        }
        Ok(t)
    }

    /// The same scenario under each window size.
    pub fn sweep(&self, name: &str, windows: &[usize], base: &RunConfig) -> Result<SweepReport, EvalError> {
        let mut rows = Vec::new();
        for &n in windows {
            let cfg = RunConfig {
                window: n,
                ..base.clone()
            };
            rows.push((n, self.run_one(name, &format!("N={n}"), &cfg)?));
        }
        Ok(SweepReport {
            scenario: name.to_string(),
            rows,
        })
    }

    /// Full agent against each reflection dimension switched off.
    pub fn ablate(&self, names: &[String], base: &RunConfig) -> Result<Table, EvalError> {
        let mut t = Table::default();
        for (label, cfg) in ablation_variants(base) {
            t.rows.extend(self.run_all(names, label, &cfg)?.rows);
        }
        Ok(t)
    }
}

pub fn ablation_variants(base: &RunConfig) -> [(&'static str, RunConfig); 3] {
    [
        ("full", base.clone()),
        (
            "no_action_reflection",
            RunConfig {
                action_reflection: false,
                ..base.clone()
            },
        ),
        (
            "no_info_reflection",
            RunConfig {
                information_reflection: false,
                ..base.clone()
            },
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub scenario: String,
    pub rows: Vec<(usize, RunRow)>,
}

impl SweepReport {
    pub fn score(&self, window: usize) -> Option<&Score> {
        self.rows.iter().find(|(n, _)| *n == window).map(|(_, r)| &r.score)
    }

    pub fn render(&self) -> String {
        let mut s = format!("Window sweep on `{}`\n\n", self.scenario);
        s += &metric_header("N | status | steps");
        for (n, r) in &self.rows {
            let steps = r.trace.end().and_then(|e| e.payload["t"].as_u64()).unwrap_or(0);
            s += &metric_row(&format!("{n} | {} | {steps}", r.status), &r.score);
        }
        let _ = writeln!(s);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_has_twelve() {
        let b = battery_names();
        assert_eq!(b.len(), 12);
        assert!(b.contains(&"hotel-conflict".to_string()));
    }

    #[test]
    fn header_columns_line_up() {
        let h = metric_header("a | b");
        let lines: Vec<&str> = h.lines().collect();
        assert_eq!(lines[0].matches('|').count(), lines[1].matches('|').count());
    }
}
