//! Ranking of variants by median steps-to-threshold over seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RunReport, VariantName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub variant: VariantName,
    pub runs: usize,
    /// Median over seeds with censored runs counted as never crossing;
    /// `None` when that median itself is censored.
    pub median_steps: Option<f64>,
    pub censored_runs: usize,
    pub mean_final_success: f64,
    pub median_final_success: f64,
}

impl ComparisonRow {
    pub fn censored(&self) -> bool {
        self.median_steps.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub theta: f64,
    pub rows: Vec<ComparisonRow>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Rank variants: median steps-to-`theta` ascending (censored last), then
/// mean final success descending, then name. Crossings are recomputed from
/// each run's eval curve, so `theta` may differ from the training one.
pub fn compare(reports: &[RunReport], theta: f64) -> Comparison {
    let mut by: BTreeMap<VariantName, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        by.entry(r.variant).or_default().push(r);
    }
    let mut rows: Vec<ComparisonRow> = by
        .into_iter()
        .map(|(variant, rs)| {
            let mut steps: Vec<f64> = rs
                .iter()
                .map(|r| super::steps_to_threshold(&r.eval_curve, theta).map_or(f64::INFINITY, |s| s as f64))
                .collect();
            steps.sort_by(f64::total_cmp);
            let m = median(&steps);
            let mut fin: Vec<f64> = rs.iter().map(|r| r.final_success_rate).collect();
            fin.sort_by(f64::total_cmp);
            ComparisonRow {
                rank: 0,
                variant,
                runs: rs.len(),
                median_steps: m.is_finite().then_some(m),
                censored_runs: steps.iter().filter(|s| s.is_infinite()).count(),
                mean_final_success: fin.iter().sum::<f64>() / fin.len() as f64,
                median_final_success: median(&fin),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &ComparisonRow| r.median_steps.unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then(b.mean_final_success.total_cmp(&a.mean_final_success))
            .then(a.variant.as_str().cmp(b.variant.as_str()))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Comparison { theta, rows }
}

impl Comparison {
    pub fn row(&self, v: VariantName) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    fn steps_cell(r: &ComparisonRow) -> String {
        match r.median_steps {
            Some(s) => format!("{s}"),
            None => "censored".to_string(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "| rank | variant | runs | median steps to {} | censored runs | mean final success | median final success |\n",
            self.theta
        );
        s.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.3} | {:.3} |\n",
                r.rank,
                r.variant,
                r.runs,
                Self::steps_cell(r),
                r.censored_runs,
                r.mean_final_success,
                r.median_final_success
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,variant,runs,theta,median_steps,censored,censored_runs,mean_final_success,median_final_success\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.rank,
                r.variant,
                r.runs,
                self.theta,
                r.median_steps.map(|m| m.to_string()).unwrap_or_default(),
                r.censored(),
                r.censored_runs,
                r.mean_final_success,
                r.median_final_success
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::super::EvalPoint;
    use super::*;
    use crate::sim::TaskKind;

    fn run(v: VariantName, seed: u64, curve: &[f64], fin: f64) -> RunReport {
        let eval_curve: Vec<EvalPoint> =
            curve.iter().enumerate().map(|(i, s)| EvalPoint { step: (i + 1) * 500, success_rate: *s }).collect();
        RunReport {
            variant: v,
            task: TaskKind::PickPlace,
            seed,
            config_hash: "h".into(),
            theta: 0.8,
            steps_to_threshold: super::super::steps_to_threshold(&eval_curve, 0.8),
            final_success_rate: fin,
            eval_curve,
            final_loss: None,
            losses: vec![],
        }
    }

    #[test]
    fn never_crossing_is_censored_and_last() {
        let c = compare(
            &[run(VariantName::InDomain, 1, &[0.9], 0.9), run(VariantName::Random, 1, &[0.1, 0.2], 0.95)],
            0.8,
        );
        assert_eq!(c.rows[0].variant, VariantName::InDomain);
        assert_eq!(c.rows[0].median_steps, Some(500.0));
        assert!(c.rows[1].censored());
        assert_eq!(c.rows[1].censored_runs, 1);
        assert!(c.to_markdown().contains("censored"));
    }

    #[test]
    fn ties_break_on_success_then_name() {
        let c = compare(
            &[
                run(VariantName::Random, 1, &[0.9], 0.9),
                run(VariantName::OutDomain, 1, &[0.9], 0.9),
                run(VariantName::InDomain, 1, &[0.9], 0.95),
            ],
            0.8,
        );
        let order: Vec<_> = c.rows.iter().map(|r| r.variant).collect();
        assert_eq!(order, vec![VariantName::InDomain, VariantName::OutDomain, VariantName::Random]);
    }

    #[test]
    fn median_counts_censored_runs_as_infinite() {
        let rs = vec![
            run(VariantName::Random, 1, &[0.9], 1.0),
            run(VariantName::Random, 2, &[0.1, 0.1, 0.9], 1.0),
            run(VariantName::Random, 3, &[0.1], 0.0),
        ];
        let c = compare(&rs, 0.8);
        assert_eq!(c.rows[0].median_steps, Some(1500.0));
        let c = compare(&rs[1..], 0.8);
        assert_eq!(c.rows[0].median_steps, None);
        assert_eq!(compare(&rs, 0.8), compare(&rs, 0.8));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = compare(&[run(VariantName::Random, 1, &[0.9], 0.9)], 0.8);
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,random,1,0.8,500,false,0,"));
    }
}
