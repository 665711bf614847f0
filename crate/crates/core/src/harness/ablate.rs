//! Ablation suites over refinement depth, fine-tuning method, group size
//! and path configuration.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::{evaluate, EvalReport};
use crate::harness::experiment::{pretrain_stage, rft_stage, sft_stage, splits, ExperimentConfig, Splits};
use crate::model::PolicySnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    RefineK,
    RftVsSft,
    GroupSize,
    PathConfig,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::RefineK, Suite::RftVsSft, Suite::GroupSize, Suite::PathConfig];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::RefineK => "refine-k",
            Suite::RftVsSft => "rft-vs-sft",
            Suite::GroupSize => "group-size",
            Suite::PathConfig => "path-config",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| Error::Usage(format!("unknown suite `{s}`")))
    }
}

pub const REFINE_KS: [usize; 4] = [0, 1, 3, 6];
pub const GROUP_SIZES: [usize; 3] = [5, 10, 15];
pub const PATH_POINTS: [usize; 3] = [30, 50, 80];
pub const PATH_SPACINGS: [f64; 2] = [1.0, 2.0];

/// One result line of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: Suite,
    pub seed: u64,
    pub setting: String,
    pub ade_1s: f64,
    pub ade_2s: f64,
    pub ade_3s: f64,
    pub ade_avg: f64,
    pub collision_rate: f64,
    /// Training finished without non-finite losses.
    pub stable: bool,
}

impl AblationRow {
    fn from_report(suite: Suite, seed: u64, setting: String, r: &EvalReport) -> Self {
        AblationRow {
            suite,
            seed,
            setting,
            ade_1s: r.ade_1s,
            ade_2s: r.ade_2s,
            ade_3s: r.ade_3s,
            ade_avg: r.ade_avg,
            collision_rate: r.collision_rate,
            stable: true,
        }
    }

    fn unstable(suite: Suite, seed: u64, setting: String) -> Self {
        AblationRow {
            suite,
            seed,
            setting,
            ade_1s: f64::NAN,
            ade_2s: f64::NAN,
            ade_3s: f64::NAN,
            ade_avg: f64::NAN,
            collision_rate: f64::NAN,
            stable: false,
        }
    }
}

fn pretrained(cfg: &ExperimentConfig, s: &Splits) -> Result<PolicySnapshot> {
    Ok(pretrain_stage(cfg, s)?.policy)
}

/// Runs one suite for one seed.
pub fn run_suite(suite: Suite, base: &ExperimentConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let cfg = base.clone().with_seed(seed);
    cfg.validate()?;
    let s = splits(&cfg)?;
    let mut rows = Vec::new();
    match suite {
        Suite::RefineK => {
            for k in REFINE_KS {
                let mut c = cfg.clone();
                c.model.planner.refine_iters = k;
                let pol = pretrained(&c, &s)?;
                let r = evaluate(&pol, &s.heldout, None)?;
                rows.push(AblationRow::from_report(suite, seed, format!("k={k}"), &r));
            }
        }
        Suite::RftVsSft => {
            let reference = pretrained(&cfg, &s)?;
            let r = evaluate(&reference, &s.heldout, None)?;
            rows.push(AblationRow::from_report(suite, seed, "pretrained".into(), &r));
            let fine = rft_stage(&cfg, &reference, &s)?.policy;
            let r = evaluate(&fine, &s.heldout, None)?;
            rows.push(AblationRow::from_report(suite, seed, "rft".into(), &r));
            let sup = sft_stage(&cfg, &reference, &s)?;
            let r = evaluate(&sup, &s.heldout, None)?;
            rows.push(AblationRow::from_report(suite, seed, "sft".into(), &r));
        }
        Suite::GroupSize => {
            let reference = pretrained(&cfg, &s)?;
            for g in GROUP_SIZES {
                let mut c = cfg.clone();
                c.rft.group_size = g;
                let setting = format!("g={g}");
                match rft_stage(&c, &reference, &s) {
                    Ok(out) => {
                        let r = evaluate(&out.policy, &s.heldout, None)?;
                        let finite = out.diagnostics.iter().all(|d| d.surrogate.is_finite() && d.kl.is_finite());
                        let mut row = AblationRow::from_report(suite, seed, setting, &r);
                        row.stable = finite;
                        rows.push(row);
                    }
                    Err(Error::Diverged(_)) | Err(Error::NonFinite(_)) => {
                        rows.push(AblationRow::unstable(suite, seed, setting))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Suite::PathConfig => {
            for n in PATH_POINTS {
                for sp in PATH_SPACINGS {
                    let mut c = cfg.clone();
                    c.model.planner.path_points = n;
                    c.model.planner.path_spacing = sp;
                    let pol = pretrained(&c, &s)?;
                    let r = evaluate(&pol, &s.heldout, None)?;
                    rows.push(AblationRow::from_report(suite, seed, format!("n={n},spacing={sp}"), &r));
                }
            }
        }
    }
    Ok(rows)
}

/// Columns: `suite, seed, setting, ade_1s, ade_2s, ade_3s, ade_avg,
/// collision_rate, stable`.
pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["suite", "seed", "setting", "ade_1s", "ade_2s", "ade_3s", "ade_avg", "collision_rate", "stable"])?;
    for r in rows {
        w.write_record([
            r.suite.as_str().to_string(),
            r.seed.to_string(),
            r.setting.clone(),
            r.ade_1s.to_string(),
            r.ade_2s.to_string(),
            r.ade_3s.to_string(),
            r.ade_avg.to_string(),
            r.collision_rate.to_string(),
            (r.stable as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
