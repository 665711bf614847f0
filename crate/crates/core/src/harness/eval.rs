//! Corpus evaluation and report files.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::metrics::{ade, collision_flags, collision_rates_dt, pdms_trajectory, PdmsScore, PdmsThresholds};
use crate::model::PolicySnapshot;
use crate::planner::plan_with_iters;
use crate::world::Scenario;

/// One scenario's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub seed: u64,
    pub ade: Vec<f64>,
    pub ade_avg: f64,
    pub collisions: Vec<bool>,
    pub pdms: Option<PdmsScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade_1s: f64,
    pub ade_2s: f64,
    pub ade_3s: f64,
    pub ade_avg: f64,
    /// Percent, mean over horizons.
    pub collision_rate: f64,
    /// `(horizon, percent)`.
    pub collision_by_horizon: Vec<(f64, f64)>,
    pub pdms: Vec<PdmsScore>,
    pub pdms_mean: Option<f64>,
    pub scenarios: Vec<ScenarioEval>,
}

/// Plans every scenario with the configured refinement depth.
pub fn evaluate(pol: &PolicySnapshot, corpus: &[Scenario], thresholds: Option<&PdmsThresholds>) -> Result<EvalReport> {
    evaluate_with_iters(pol, corpus, thresholds, pol.cfg.planner.refine_iters)
}

pub fn evaluate_with_iters(
    pol: &PolicySnapshot,
    corpus: &[Scenario],
    thresholds: Option<&PdmsThresholds>,
    iters: usize,
) -> Result<EvalReport> {
    let scenarios: Vec<ScenarioEval> = corpus
        .par_iter()
        .map(|s| {
            let cache = pol.encode(s)?;
            let out = plan_with_iters(&pol.layout.planner, &pol.params, &cache.ctx, iters)?;
            let traj = out.trajectory();
            let a = ade(&traj, &s.expert)?;
            Ok(ScenarioEval {
                seed: s.seed,
                ade: a.per_horizon.iter().map(|h| h.1).collect(),
                ade_avg: a.average,
                collisions: collision_flags(&traj, s)?,
                pdms: thresholds.map(|t| pdms_trajectory(&traj, s, t)).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(assemble(scenarios, pol.cfg.planner.dt))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn assemble(scenarios: Vec<ScenarioEval>, dt: f64) -> EvalReport {
    let col = |k: usize| mean(scenarios.iter().filter_map(|s| s.ade.get(k).copied()));
    let (by_h, cr) = collision_rates_dt(scenarios.iter().map(|s| s.collisions.as_slice()), dt).expect("flags");
    let pdms: Vec<PdmsScore> = scenarios.iter().filter_map(|s| s.pdms).collect();
    let pdms_mean = (!pdms.is_empty()).then(|| mean(pdms.iter().map(|p| p.pdms)));
    let (a1, a2, a3) = (col(0), col(1), col(2));
    let avail: Vec<f64> = [a1, a2, a3].into_iter().filter(|v| !v.is_nan()).collect();
    EvalReport {
        ade_1s: a1,
        ade_2s: a2,
        ade_3s: a3,
        ade_avg: mean(avail.into_iter()),
        collision_rate: cr,
        collision_by_horizon: by_h,
        pdms,
        pdms_mean,
        scenarios,
    }
}

/// Per-scenario report: `seed, ade_1s, ade_2s, ade_3s, ade_avg, collided,
/// nc, dac, ttc, comf, ep, pdms` (PDM columns empty when not scored), then
/// a final `mean` row.
pub fn write_eval_report(path: &Path, r: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed", "ade_1s", "ade_2s", "ade_3s", "ade_avg", "collided", "nc", "dac", "ttc", "comf", "ep", "pdms",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for s in &r.scenarios {
        let p = s.pdms;
        let mut row = vec![s.seed.to_string()];
        row.extend((0..3).map(|k| opt(s.ade.get(k).copied())));
        row.push(s.ade_avg.to_string());
        row.push((s.collisions.iter().any(|&c| c) as u8).to_string());
        row.extend(
            [
                p.map(|p| p.nc),
                p.map(|p| p.dac),
                p.map(|p| p.ttc),
                p.map(|p| p.comf),
                p.map(|p| p.ep),
                p.map(|p| p.pdms),
            ]
            .map(opt),
        );
        w.write_record(&row)?;
    }
    w.write_record([
        "mean".to_string(),
        r.ade_1s.to_string(),
        r.ade_2s.to_string(),
        r.ade_3s.to_string(),
        r.ade_avg.to_string(),
        r.collision_rate.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        opt(r.pdms_mean),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::world::{generate_corpus, Difficulty};

    #[test]
    fn report_is_deterministic_and_well_formed() {
        let corpus = generate_corpus(5, Difficulty::Medium, 3).unwrap();
        let pol = PolicySnapshot::new(ModelConfig::tiny(), 1).unwrap();
        let t = PdmsThresholds::default();
        let a = evaluate(&pol, &corpus, Some(&t)).unwrap();
        assert_eq!(a, evaluate(&pol, &corpus, Some(&t)).unwrap());
        assert_eq!(a.pdms.len(), 5);
        assert!((0.0..=100.0).contains(&a.collision_rate));
        assert!((a.ade_avg - (a.ade_1s + a.ade_2s + a.ade_3s) / 3.0).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_eval_report(&p, &a).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
    }
}
