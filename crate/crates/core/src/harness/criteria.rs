//! Pass/fail checks for the ablation trends, with their pinned thresholds.

use serde::{Deserialize, Serialize};

use crate::finetune::SweepRow;

/// Minimum task-success gain from replanning.
pub const REPLAN_MIN_GAIN: f64 = 0.10;
/// Minimum relative reduction of the mean final initiation-pose error.
pub const REPLAN_MIN_ERROR_REDUCTION: f64 = 0.30;
/// Minimum drop of skill success between the ends of the noise grid.
pub const SWEEP_MIN_DROP: f64 = 0.30;
/// Minimum skill-success recovery from residual fine-tuning.
pub const SKILL_FT_MIN_GAIN: f64 = 0.20;
/// Max ratio of fine-tuned to baseline mean skill steps.
pub const SKILL_FT_MAX_STEP_RATIO: f64 = 1.05;
/// Minimum relative reduction of false-positive-caused failures.
pub const TERM_FT_MIN_FP_REDUCTION: f64 = 0.50;
/// Max success gap between oracle and learned terminations.
pub const TERM_MAX_GAP: f64 = 0.10;
/// Minimum end-to-end success as a fraction of the hybrid agent's.
pub const DISTILL_MIN_RATIO: f64 = 0.60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn new(id: &str, name: &str, passed: bool, detail: String) -> Self {
        CriterionResult { id: id.into(), name: name.into(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!("[{}] {} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

fn rel_reduction(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (before - after) / before
    } else {
        0.0
    }
}

/// Replanning gain on one task: success rates and mean final errors
/// without and with replanning.
pub fn replanning(task: &str, succ: (f64, f64), err: (f64, f64)) -> CriterionResult {
    let gain = succ.1 - succ.0;
    let red = rel_reduction(err.0, err.1);
    CriterionResult::new(
        "C3",
        &format!("replanning {task}"),
        gain >= REPLAN_MIN_GAIN - 1e-12 && red >= REPLAN_MIN_ERROR_REDUCTION - 1e-12,
        format!(
            "success {:.3} -> {:.3} (+{:.1} pts, need {:.0}); error {:.4} -> {:.4} (-{:.1}%, need {:.0}%)",
            succ.0,
            succ.1,
            100.0 * gain,
            100.0 * REPLAN_MIN_GAIN,
            err.0,
            err.1,
            100.0 * red,
            100.0 * REPLAN_MIN_ERROR_REDUCTION
        ),
    )
}

/// Sharp drop across the grid, and no row above the previous row's upper
/// confidence bound.
pub fn noise_sensitivity(rows: &[SweepRow]) -> CriterionResult {
    let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
        return CriterionResult::new("C4", "noise sensitivity", false, "empty sweep".into());
    };
    let drop = first.rate - last.rate;
    let monotone = rows.windows(2).all(|w| w[1].rate <= w[0].ci_high + 1e-12);
    let curve: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.sigma, r.rate)).collect();
    CriterionResult::new(
        "C4",
        "noise sensitivity",
        drop >= SWEEP_MIN_DROP - 1e-12 && monotone,
        format!("[{}] drop {:.1} pts (need {:.0}), non-increasing within CI: {monotone}", curve.join(" "), 100.0 * drop, 100.0 * SWEEP_MIN_DROP),
    )
}

/// Residual fine-tuning against a biased baseline: skill success and mean
/// successful skill steps of baseline and fine-tuned policy.
pub fn skill_finetuning(label: &str, succ: (f64, f64), steps: (f64, f64)) -> CriterionResult {
    let gain = succ.1 - succ.0;
    let ratio = if steps.0 > 0.0 { steps.1 / steps.0 } else { f64::INFINITY };
    CriterionResult::new(
        "C5",
        &format!("skill fine-tuning {label}"),
        gain >= SKILL_FT_MIN_GAIN - 1e-12 && ratio <= SKILL_FT_MAX_STEP_RATIO + 1e-12,
        format!(
            "skill success {:.3} -> {:.3} (+{:.1} pts, need {:.0}); steps {:.2} -> {:.2} (ratio {:.3}, max {:.2})",
            succ.0,
            succ.1,
            100.0 * gain,
            100.0 * SKILL_FT_MIN_GAIN,
            steps.0,
            steps.1,
            ratio,
            SKILL_FT_MAX_STEP_RATIO
        ),
    )
}

/// Termination rejection: failures following a false-positive stage
/// termination, and task successes (counts over paired seeds).
pub fn termination_finetuning(fp_failures: (usize, usize), successes: (usize, usize)) -> CriterionResult {
    let red = rel_reduction(fp_failures.0 as f64, fp_failures.1 as f64);
    let red_ok = fp_failures.0 > 0 && red >= TERM_FT_MIN_FP_REDUCTION - 1e-12;
    let succ_ok = successes.1 >= successes.0;
    CriterionResult::new(
        "C6",
        "termination fine-tuning",
        red_ok && succ_ok,
        format!(
            "false-positive failures {} -> {} (-{:.1}%, need {:.0}%); successes {} -> {} (must not decrease)",
            fp_failures.0,
            fp_failures.1,
            100.0 * red,
            100.0 * TERM_FT_MIN_FP_REDUCTION,
            successes.0,
            successes.1
        ),
    )
}

/// Oracle versus learned termination success rates on one task.
pub fn termination_gap(task: &str, oracle: f64, learned: f64) -> CriterionResult {
    let gap = oracle - learned;
    CriterionResult::new(
        "C7",
        &format!("learned termination {task}"),
        gap <= TERM_MAX_GAP + 1e-12,
        format!("oracle {:.3}, learned {:.3}, gap {:.1} pts (max {:.0})", oracle, learned, 100.0 * gap, 100.0 * TERM_MAX_GAP),
    )
}

pub fn distillation_ratio(task: &str, hybrid: f64, end_to_end: f64) -> CriterionResult {
    let ratio = if hybrid > 0.0 { end_to_end / hybrid } else { 0.0 };
    CriterionResult::new(
        "C8",
        &format!("distillation {task}"),
        ratio >= DISTILL_MIN_RATIO - 1e-12,
        format!("hybrid {:.3}, end-to-end {:.3}, ratio {:.3} (need {:.2})", hybrid, end_to_end, ratio, DISTILL_MIN_RATIO),
    )
}

/// Relative-drop ordering: the fine-tuned-source policy must drop no more
/// than the BC-source policy at every grid point.
pub fn distillation_robustness(finetuned: &[f64], baseline: &[f64], sigmas: &[f64]) -> CriterionResult {
    let ok = finetuned.len() == baseline.len() && finetuned.iter().zip(baseline).all(|(f, b)| *f <= *b + 1e-12);
    let pts: Vec<String> =
        sigmas.iter().zip(finetuned.iter().zip(baseline)).map(|(s, (f, b))| format!("{s}: {:.3} vs {:.3}", f, b)).collect();
    CriterionResult::new("C8", "distillation noise robustness", ok, format!("relative drops fine-tuned vs BC source [{}]", pts.join(", ")))
}
