//! Detection metrics, ROC sweep and the flow evidence report.
//!
//! Attack is the positive class. The false alarm rate here counts both error
//! kinds, `(FP + FN) / total`, so it is always the complement of accuracy.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::detector::{is_attack, score_batch, NormalBaseline, ScoredFlow};
use crate::error::{Error, Result};
use crate::flow::{Dataset, Label, NORMAL_CLASS};

/// Row order of per-class reports; classes not listed follow alphabetically.
pub const CLASS_ORDER: [&str; 10] = [
    "Normal",
    "Exploits",
    "Backdoor",
    "Shellcode",
    "Worms",
    "DoS",
    "Analysis",
    "Fuzzers",
    "Reconnaissance",
    "Generic",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, label: Label, flagged: bool) {
        match (label, flagged) {
            (Label::Attack, true) => self.tp += 1,
            (Label::Attack, false) => self.fn_ += 1,
            (Label::Normal, true) => self.fp += 1,
            (Label::Normal, false) => self.tn += 1,
        }
    }
}

pub fn confusion(scored: &[ScoredFlow]) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for s in scored {
        let label = s.label.ok_or(Error::Unlabeled)?;
        c.add(label, s.score.decision.is_attack());
    }
    Ok(c)
}

/// `(accuracy, far)`.
pub fn metrics(c: &ConfusionCounts) -> Result<(f64, f64)> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Empty("confusion counts"));
    }
    let t = total as f64;
    Ok(((c.tp + c.tn) as f64 / t, (c.fp + c.fn_) as f64 / t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Normal: share left unflagged. Attack classes: share flagged.
pub fn per_class_accuracy(scored: &[ScoredFlow]) -> Result<Vec<ClassAccuracy>> {
    let mut groups: Vec<ClassAccuracy> = Vec::new();
    for s in scored {
        let class = s
            .class
            .as_deref()
            .ok_or_else(|| Error::param("record without a class label"))?;
        let flagged = s.score.decision.is_attack();
        let correct = if class == NORMAL_CLASS { !flagged } else { flagged };
        let entry = match groups.iter_mut().find(|g| g.class == class) {
            Some(g) => g,
            None => {
                groups.push(ClassAccuracy {
                    class: class.to_string(),
                    correct: 0,
                    total: 0,
                    accuracy: 0.0,
                });
                groups.last_mut().unwrap()
            }
        };
        entry.total += 1;
        entry.correct += correct as u64;
    }
    for g in &mut groups {
        g.accuracy = g.correct as f64 / g.total as f64;
    }
    let absent: Vec<&str> = CLASS_ORDER
        .iter()
        .copied()
        .filter(|c| !groups.iter().any(|g| g.class == *c))
        .collect();
    if !groups.is_empty() && !absent.is_empty() {
        tracing::warn!(classes = ?absent, "classes without records omitted from per-class accuracy");
    }
    groups.sort_by(|a, b| class_order(&a.class, &b.class));
    Ok(groups)
}

fn class_order(a: &str, b: &str) -> Ordering {
    let pos = |c: &str| CLASS_ORDER.iter().position(|k| *k == c).unwrap_or(CLASS_ORDER.len());
    pos(a).cmp(&pos(b)).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub multiplier: f64,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
}

/// 0.0, 0.1, …, 6.0.
pub fn default_multiplier_grid() -> Vec<f64> {
    (0..=60).map(|i| i as f64 / 10.0).collect()
}

/// Re-thresholds fixed deviations at each multiplier.
pub fn roc_from_scores(scored: &[ScoredFlow], sd_corpy: f64, multipliers: &[f64]) -> Result<Vec<RocPoint>> {
    if multipliers.is_empty() {
        return Err(Error::Empty("multiplier grid"));
    }
    if let Some(m) = multipliers.iter().find(|m| m.is_nan() || **m < 0.0) {
        return Err(Error::param(format!("multiplier must be non-negative, got {m}")));
    }
    let mut labeled = Vec::with_capacity(scored.len());
    for s in scored {
        labeled.push((s.label.ok_or(Error::Unlabeled)?, s.score.deviation));
    }
    let positives = labeled.iter().filter(|(l, _)| l.is_attack()).count();
    let negatives = labeled.len() - positives;
    if positives == 0 {
        return Err(Error::MissingClass("attack"));
    }
    if negatives == 0 {
        return Err(Error::MissingClass("normal"));
    }
    Ok(multipliers
        .iter()
        .map(|&m| {
            let mut c = ConfusionCounts::default();
            for (label, dev) in &labeled {
                c.add(*label, is_attack(*dev, sd_corpy, m));
            }
            RocPoint {
                multiplier: m,
                detection_rate: c.tp as f64 / positives as f64,
                false_positive_rate: c.fp as f64 / negatives as f64,
            }
        })
        .collect())
}

pub fn roc_sweep(dataset: &Dataset, baseline: &NormalBaseline, multipliers: &[f64]) -> Result<Vec<RocPoint>> {
    let scored = score_batch(dataset, baseline, crate::detector::DEFAULT_MULTIPLIER)?;
    roc_from_scores(&scored, baseline.sd_corpy, multipliers)
}

pub fn roc_to_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("multiplier,detection_rate,false_positive_rate\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.multiplier, p.detection_rate, p.false_positive_rate);
    }
    out
}

/// Highest-risk flows first, ties by flow key.
pub fn evidence_report(scored: &[ScoredFlow], top_n: usize) -> Vec<&ScoredFlow> {
    let mut rows: Vec<&ScoredFlow> = scored.iter().collect();
    rows.sort_by(|a, b| {
        b.score
            .risk_level
            .total_cmp(&a.score.risk_level)
            .then_with(|| a.key.cmp(&b.key))
    });
    rows.truncate(top_n);
    rows
}

/// Tab-separated table with two-decimal risk levels.
pub fn format_evidence(rows: &[&ScoredFlow]) -> String {
    let mut out = String::from("srcip\tsport\tdstip\tdsport\tproto\tlabel\tRL\n");
    for r in rows {
        let label = r.label.map(|l| l.as_u8().to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.2}",
            r.key.src_ip, r.key.src_port, r.key.dst_ip, r.key.dst_port, r.key.proto, label, r.score.risk_level
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sample_size: usize,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub far: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    /// Builds the report from scored test records. Per-class accuracy is left
    /// empty when the records carry no class labels.
    pub fn build(
        scored: &[ScoredFlow],
        sd_corpy: f64,
        multipliers: &[f64],
        sample_size: usize,
    ) -> Result<EvalReport> {
        let confusion = confusion(scored)?;
        let (accuracy, far) = metrics(&confusion)?;
        let per_class = if scored.iter().all(|s| s.class.is_some()) {
            per_class_accuracy(scored)?
        } else {
            Vec::new()
        };
        let roc = roc_from_scores(scored, sd_corpy, multipliers)?;
        Ok(EvalReport {
            sample_size,
            confusion,
            accuracy,
            far,
            per_class,
            roc,
        })
    }

    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "Sample size\tAccuracy\tFAR");
        let _ = writeln!(out, "{}\t{}\t{}", self.sample_size, percent(self.accuracy), percent(self.far));
        let _ = writeln!(out);
        let _ = writeln!(out, "TP\tTN\tFP\tFN");
        let _ = writeln!(out, "{}\t{}\t{}\t{}", c.tp, c.tn, c.fp, c.fn_);
        if !self.per_class.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Vector type\tAccuracy\tCorrect\tTotal");
            for g in &self.per_class {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", g.class, percent(g.accuracy), g.correct, g.total);
            }
        }
        out
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let c = &self.confusion;
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "sample_size,{}", self.sample_size);
        let _ = writeln!(out, "tp,{}", c.tp);
        let _ = writeln!(out, "tn,{}", c.tn);
        let _ = writeln!(out, "fp,{}", c.fp);
        let _ = writeln!(out, "fn,{}", c.fn_);
        let _ = writeln!(out, "accuracy,{}", self.accuracy);
        let _ = writeln!(out, "far,{}", self.far);
        for g in &self.per_class {
            let _ = writeln!(out, "class_accuracy:{},{}", g.class, g.accuracy);
        }
        out
    }
}

pub fn percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Table with one `sample size / accuracy / FAR` row per report.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("Sample size\tAccuracy\tFAR\n");
    for r in reports {
        let _ = writeln!(out, "{}\t{}\t{}", r.sample_size, percent(r.accuracy), percent(r.far));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Decision, RiskScore};
    use crate::flow::FlowKey;

    fn flow(label: Label, class: &str, flagged: bool, rl: f64, dev: f64) -> ScoredFlow {
        ScoredFlow {
            key: FlowKey::new("175.45.176.2", 7434, "149.171.126.16", 80, "tcp"),
            label: Some(label),
            class: Some(class.into()),
            score: RiskScore {
                corpy: 0.0,
                deviation: dev,
                risk_level: rl,
                decision: if flagged { Decision::Attack } else { Decision::Normal },
            },
        }
    }

    #[test]
    fn metric_arithmetic() {
        let c = ConfusionCounts { tp: 50, tn: 40, fp: 5, fn_: 5 };
        assert_eq!(metrics(&c).unwrap(), (0.9, 0.1));
        let c = ConfusionCounts { tp: 3, tn: 4, fp: 0, fn_: 0 };
        assert_eq!(metrics(&c).unwrap(), (1.0, 0.0));
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn confusion_tally() {
        let all_flagged: Vec<_> = (0..4).map(|_| flow(Label::Normal, "Normal", true, 0.9, 1.0)).collect();
        assert_eq!(confusion(&all_flagged).unwrap(), ConfusionCounts { tp: 0, tn: 0, fp: 4, fn_: 0 });
        let mut unlabeled = all_flagged.clone();
        unlabeled[2].label = None;
        assert!(confusion(&unlabeled).is_err());
    }

    #[test]
    fn per_class_rows() {
        let scored = vec![
            flow(Label::Attack, "DoS", true, 0.9, 1.0),
            flow(Label::Normal, "Normal", false, 0.1, 0.0),
            flow(Label::Normal, "Normal", false, 0.1, 0.0),
            flow(Label::Normal, "Normal", true, 0.6, 0.5),
            flow(Label::Normal, "Normal", false, 0.1, 0.0),
            flow(Label::Attack, "Exploits", false, 0.2, 0.1),
        ];
        let pc = per_class_accuracy(&scored).unwrap();
        let classes: Vec<_> = pc.iter().map(|g| g.class.as_str()).collect();
        assert_eq!(classes, vec!["Normal", "Exploits", "DoS"]);
        assert_eq!(pc[0].accuracy, 0.75);
        assert_eq!(pc[1].accuracy, 0.0);
        assert_eq!(pc[2].accuracy, 1.0);
    }

    #[test]
    fn roc_extremes_and_errors() {
        let scored = vec![
            flow(Label::Attack, "DoS", true, 0.9, 1.0),
            flow(Label::Normal, "Normal", false, 0.1, 0.01),
        ];
        let roc = roc_from_scores(&scored, 0.1, &[0.0, 1e9]).unwrap();
        assert_eq!((roc[0].detection_rate, roc[0].false_positive_rate), (1.0, 1.0));
        assert_eq!((roc[1].detection_rate, roc[1].false_positive_rate), (0.0, 0.0));
        assert!(roc_from_scores(&scored[..1], 0.1, &[1.0]).is_err());
        assert!(roc_from_scores(&scored, 0.1, &[]).is_err());
        assert!(roc_to_csv(&roc).starts_with("multiplier,detection_rate,false_positive_rate\n0,1,1\n"));
        assert_eq!(default_multiplier_grid().len(), 61);
    }

    #[test]
    fn evidence_formatting() {
        assert!(evidence_report(&[], 5).is_empty());
        let one = vec![flow(Label::Attack, "Exploits", true, 0.83, 1.0)];
        let text = format_evidence(&evidence_report(&one, 5));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "175.45.176.2\t7434\t149.171.126.16\t80\ttcp\t1\t0.83"
        );
    }

    #[test]
    fn evidence_sorted_by_risk() {
        let mut rows = vec![
            flow(Label::Normal, "Normal", false, 0.23, 0.0),
            flow(Label::Attack, "Exploits", true, 0.72, 0.0),
            flow(Label::Normal, "Normal", false, 0.11, 0.0),
            flow(Label::Attack, "Exploits", true, 0.83, 0.0),
            flow(Label::Normal, "Normal", false, 0.25, 0.0),
        ];
        rows[2].key.src_ip = "175.45.176.1".into();
        let top = evidence_report(&rows, 3);
        let rls: Vec<f64> = top.iter().map(|r| r.score.risk_level).collect();
        assert_eq!(rls, vec![0.83, 0.72, 0.25]);
        assert!(top[..2].iter().all(|r| r.label == Some(Label::Attack)));
    }

    #[test]
    fn report_text() {
        let scored = vec![
            flow(Label::Attack, "DoS", true, 0.9, 1.0),
            flow(Label::Normal, "Normal", false, 0.1, 0.0),
        ];
        let r = EvalReport::build(&scored, 0.1, &[2.0], 2).unwrap();
        let text = r.to_text();
        assert!(text.contains("2\t100.00%\t0.00%"));
        assert!(text.contains("DoS\t100.00%"));
        assert!(summary_table(&[r]).ends_with("2\t100.00%\t0.00%\n"));
    }
}
