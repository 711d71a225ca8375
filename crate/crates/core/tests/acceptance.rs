//! Acceptance suite: one line per criterion. Failing criteria are reported,
//! not hidden; the process exits non-zero only if the suite cannot run.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use skillforge::datagen::{adapt_segment, replays_to_success, Dataset};
use skillforge::finetune::{residual_finetune_skill, CemConfig};
use skillforge::harness::criteria::{self, CriterionResult};
use skillforge::harness::pipeline::{RunDir, DATASET};
use skillforge::harness::io::{load_json, load_with_weights};
use skillforge::harness::pipeline::AGENT_POSE;
use skillforge::harness::{Condition, MetricsReport, RunConfig};
use skillforge::hsp::{episode_env, run_episode, EpisodeOptions, HspAgent, SkillPolicy};
use skillforge::se3::{from_axis_angle, interpolate_pose, pose_distance, slerp, to_axis_angle};
use skillforge::{Pose, Quat, Result, SeedTree, TaskSpec};

const GEOMETRY_SAMPLES: usize = 1000;
const GEOMETRY_TOL: f64 = 1e-9;
const GEOMETRY_MAX: Duration = Duration::from_secs(5);
const ADAPTATION_MAX: Duration = Duration::from_secs(120);
const PIPELINE_MAX: Duration = Duration::from_secs(45 * 60);
const BIAS: f64 = -0.005;
const PAIRED_EPISODES: usize = 500;

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let axis: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-9);
    let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    Pose::new(p, Quat::from_axis_angle([axis[0] / n, axis[1] / n, axis[2] / n], rng.gen_range(0.0..PI - 1e-6)))
}

fn geometry() -> CriterionResult {
    let t = Instant::now();
    let mut rng = SeedTree::new(1).rng("geometry");
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut check = |v: f64| {
        worst = worst.max(v);
        failures += (v > GEOMETRY_TOL) as usize;
    };
    for _ in 0..GEOMETRY_SAMPLES {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        check(pose_distance(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        check(pose_distance(&a.compose(&a.invert()), &Pose::default()));
        check(pose_distance(&a.invert().compose(&a), &Pose::default()));
        check((pose_distance(&a, &b) - pose_distance(&b, &a)).abs());
        check(pose_distance(&a, &a));
        check((pose_distance(&a, &c) - pose_distance(&a, &b) - pose_distance(&b, &c)).max(0.0));
        check(pose_distance(&from_axis_angle(&to_axis_angle(&a)), &a));
        check(pose_distance(&interpolate_pose(&a, &b, 0.0), &a));
        check(pose_distance(&interpolate_pose(&a, &b, 1.0), &b));
    }
    // quaternion-dot oracle: a 90 degree turn has |q1.q2| = cos(pi/4)
    let rz = Pose::rot_z(PI / 2.0);
    let oracle = (Quat::from_yaw(0.0).dot(&rz.orientation)).abs().acos() / PI;
    let d90 = pose_distance(&Pose::default(), &rz);
    check((d90 - 0.25).abs());
    check((d90 - oracle).abs());
    let half = slerp(&Quat::from_yaw(0.0), &Quat::from_yaw(PI / 2.0), 0.5);
    check(pose_distance(&Pose::new([0.0; 3], half), &Pose::rot_z(PI / 4.0)));
    let el = t.elapsed();
    CriterionResult::new(
        "C1",
        "geometry suite",
        failures == 0 && el < GEOMETRY_MAX,
        format!("{failures} violations over {GEOMETRY_SAMPLES} samples, worst {worst:.1e} (tol {GEOMETRY_TOL:.0e}), d(90 deg) = {d90}, {:.2}s (max {}s)", el.as_secs_f64(), GEOMETRY_MAX.as_secs()),
    )
}

fn adaptation(datasets: &[(&str, &Dataset, &Arc<TaskSpec>)]) -> CriterionResult {
    let t = Instant::now();
    let mut rng = SeedTree::new(2).rng("adaptation");
    let (mut id_err, mut eq_err) = (0.0f64, 0.0f64);
    for _ in 0..GEOMETRY_SAMPLES {
        let (g, src_ref, new_ref) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        let src: Vec<Pose> = (0..4).map(|_| random_pose(&mut rng)).collect();
        for (o, s) in adapt_segment(&src, &src_ref, &src_ref).iter().zip(&src) {
            id_err = id_err.max(pose_distance(o, s));
        }
        let plain = adapt_segment(&src, &src_ref, &new_ref);
        let moved: Vec<Pose> = src.iter().map(|p| g.compose(p)).collect();
        for (o, p) in adapt_segment(&moved, &g.compose(&src_ref), &g.compose(&new_ref)).iter().zip(&plain) {
            eq_err = eq_err.max(pose_distance(o, &g.compose(p)));
        }
    }
    let mut replay = Vec::new();
    let mut all_replay = true;
    for (name, ds, task) in datasets {
        let ok = ds.demos.iter().filter(|d| replays_to_success(d, task)).count();
        all_replay &= ok == ds.demos.len();
        replay.push(format!("{name} {ok}/{}", ds.demos.len()));
    }
    let el = t.elapsed();
    CriterionResult::new(
        "C2",
        "adaptation suite",
        id_err <= GEOMETRY_TOL && eq_err <= GEOMETRY_TOL && all_replay && el < ADAPTATION_MAX,
        format!(
            "identity error {id_err:.1e}, equivariance error {eq_err:.1e} on {GEOMETRY_SAMPLES} triples, replays {}, {:.1}s",
            replay.join(", "),
            el.as_secs_f64()
        ),
    )
}

/// Success and mean successful skill steps of one stage over paired seeds.
fn skill_stats(agent: &HspAgent, task: &Arc<TaskSpec>, stage: usize, opts: &EpisodeOptions, seeds: &SeedTree) -> Result<(f64, f64)> {
    let (mut succ, mut steps) = (0usize, 0usize);
    for k in 0..PAIRED_EPISODES as u64 {
        let mut env = episode_env(task, seeds, k)?;
        let r = run_episode(agent, &mut env, k, opts, &mut seeds.rng(&format!("ep/{k}")));
        if let Some(s) = r.stages.iter().find(|s| s.stage == stage && s.success) {
            succ += 1;
            steps += s.skill_steps;
        }
    }
    Ok((succ as f64 / PAIRED_EPISODES as f64, steps as f64 / succ.max(1) as f64))
}

fn skill_finetuning(rd: &RunDir, agent: &HspAgent) -> Result<Vec<CriterionResult>> {
    let task = &rd.task;
    let stage = rd.cfg.skill_stages(task).last().copied().unwrap_or(task.n_stages() - 1);
    let seeds = rd.cfg.seeds().child("eval");
    let clean = EpisodeOptions { replan: Some(true), ..EpisodeOptions::default() };
    let base = skill_stats(agent, task, stage, &clean, &seeds)?;
    let mut out = Vec::new();
    let variants = [
        ("initiation bias", EpisodeOptions { initiation_bias: Some((stage, [BIAS, 0.0, 0.0])), ..clean.clone() }),
        ("action bias", EpisodeOptions { action_bias: Some((stage, [BIAS, 0.0, 0.0, 0.0, 0.0, 0.0])), ..clean.clone() }),
    ];
    for (label, opts) in variants {
        let t = Instant::now();
        let cem = CemConfig { alpha: rd.cfg.alpha, seed: rd.cfg.seeds().derive(&format!("acceptance/cem/{label}")), ..rd.cfg.cem.clone() };
        let (policy, log) = residual_finetune_skill(agent, task, stage, &cem, &opts)?;
        let mut ft = agent.clone();
        ft.skills[stage].policy = SkillPolicy::Residual { policy };
        let biased = skill_stats(agent, task, stage, &opts, &seeds)?;
        let tuned = skill_stats(&ft, task, stage, &opts, &seeds)?;
        let secs = t.elapsed().as_secs_f64();
        let mut r = criteria::skill_finetuning(&format!("{label}, steps vs biased baseline"), (biased.0, tuned.0), (biased.1, tuned.1));
        r.detail += &format!("; selected {}, {secs:.0}s", log.selected);
        out.push(r);
        let mut r = criteria::skill_finetuning(&format!("{label}, steps vs unbiased base"), (biased.0, tuned.0), (base.1, tuned.1));
        r.detail += &format!("; unbiased base success {:.3}", base.0);
        out.push(r);
    }
    Ok(out)
}

fn pick(report: &MetricsReport, id: &str) -> Vec<CriterionResult> {
    report.criteria.iter().filter(|c| c.id == id).cloned().collect()
}

/// Every file of two runs of the same config is byte-identical, and the
/// report does not depend on the worker count.
fn determinism(out: &Path) -> Result<CriterionResult> {
    let mut cfg = RunConfig::for_task("peg-thread");
    cfg.n_sources = 3;
    cfg.n_demos = 20;
    cfg.hsp.initiation.epochs = 10;
    cfg.hsp.policy.epochs = 20;
    cfg.termination.learned_rollouts = 20;
    cfg.termination.learned_train.epochs = 10;
    cfg.pose_ft.offline_episodes = 10;
    cfg.pose_ft.online_episodes = 10;
    cfg.pose_ft.train.epochs = 5;
    cfg.cem = CemConfig { population: 4, generations: 2, episodes_per_candidate: 2, pool_size: 8, select_episodes: 8, ..cfg.cem };
    cfg.eval_episodes = 20;
    cfg.sweep.episodes = 10;
    cfg.distill.n_success_target = 5;
    cfg.distill.train.epochs = 3;
    let a = RunDir::create(&out.join("a"), cfg.clone())?;
    a.run_all()?;
    let b = RunDir::create(&out.join("b"), cfg.clone())?;
    b.run_all()?;
    let mut names: Vec<_> = std::fs::read_dir(&a.dir).map_err(|e| skillforge::Error::Io { path: a.dir.clone(), source: e })?.flatten().map(|e| e.file_name()).collect();
    names.sort();
    let mut differing = Vec::new();
    for n in &names {
        if std::fs::read(a.dir.join(n)).ok() != std::fs::read(b.dir.join(n)).ok() {
            differing.push(n.to_string_lossy().into_owned());
        }
    }
    cfg.workers = 3;
    let c = RunDir::create(&out.join("c"), cfg)?;
    c.run_all()?;
    let same_report = std::fs::read(a.dir.join("report.json")).ok() == std::fs::read(c.dir.join("report.json")).ok();
    Ok(CriterionResult::new(
        "C9",
        "determinism",
        differing.is_empty() && same_report,
        format!("{} artifacts compared, differing {:?}; report with 3 workers identical: {same_report}", names.len(), differing),
    ))
}

struct TaskRun {
    rd: RunDir,
    report: MetricsReport,
    seconds: f64,
}

fn full_run(out: &Path, task: &str) -> Result<TaskRun> {
    let t = Instant::now();
    let rd = RunDir::create(out, RunConfig::for_task(task))?;
    let report = rd.run_all()?;
    Ok(TaskRun { rd, report, seconds: t.elapsed().as_secs_f64() })
}

fn run() -> Result<Vec<CriterionResult>> {
    let mut results = vec![geometry()];
    println!("{}", results[0].line());
    let tmp = tempfile::tempdir().expect("temp dir");
    let peg = full_run(tmp.path(), "peg-thread")?;
    let two = full_run(tmp.path(), "two-piece")?;
    let peg_ds: Dataset = load_json(&peg.rd.path(DATASET), "dataset")?.0;
    let two_ds: Dataset = load_json(&two.rd.path(DATASET), "dataset")?.0;
    let mut rest = vec![adaptation(&[("peg-thread", &peg_ds, &peg.rd.task), ("two-piece", &two_ds, &two.rd.task)])];
    for r in [&peg.report, &two.report] {
        rest.extend(pick(r, "C3"));
    }
    rest.extend(pick(&peg.report, "C4"));
    let pose_agent: HspAgent = load_with_weights(&peg.rd.path(AGENT_POSE), "hsp-agent")?.0;
    rest.extend(skill_finetuning(&peg.rd, &pose_agent)?);
    rest.extend(pick(&two.report, "C6"));
    for r in [&peg.report, &two.report] {
        rest.extend(pick(r, "C7"));
    }
    rest.extend(pick(&peg.report, "C8"));
    rest.push(determinism(&tmp.path().join("determinism"))?);
    for run in [&peg, &two] {
        rest.push(CriterionResult::new(
            "C10",
            &format!("full pipeline {}", run.report.task),
            run.seconds < PIPELINE_MAX.as_secs_f64(),
            format!("{:.0}s (max {}s)", run.seconds, PIPELINE_MAX.as_secs()),
        ));
    }
    for r in &rest {
        println!("{}", r.line());
    }
    if let Some(d) = &two.report.distillation {
        for s in &d.sources {
            let rows: Vec<String> = s.rows.iter().map(|r| format!("{}:{:.3}", r.sigma, r.rate)).collect();
            println!("[INFO] C8 distillation two-piece ({} source, reported only): hybrid {:.3}, end-to-end [{}]", s.source, s.hybrid_rate, rows.join(" "));
        }
        for e in &d.errors {
            println!("[INFO] C8 distillation two-piece: {e}");
        }
    }
    for c in [Condition::SkillFt, Condition::TermFt] {
        if let Some(m) = two.report.condition(c) {
            println!("[INFO] two-piece {}: success {:.3}, false positives {}, failures after false positive {}", c.name(), m.success_rate, m.false_positives, m.false_positive_failures);
        }
    }
    results.extend(rest);
    Ok(results)
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    match run() {
        Ok(results) => {
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("acceptance: {} criteria checks, {} passed, {failed} failed", results.len(), results.len() - failed);
        }
        Err(e) => {
            eprintln!("acceptance suite could not run: {e}");
            std::process::exit(1);
        }
    }
}
