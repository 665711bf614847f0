use serde::{Deserialize, Serialize};

use super::layout::{inverse_softplus, PlannerLayout, B_FLOOR};
use super::PlanState;
use crate::error::Result;
use crate::geom::{integrate_increments, IncrementSeq, Point2, Trajectory};
use crate::nnet::{softplus, Graph};

/// Per-axis Laplace region in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub mu: Point2,
    pub b: [f64; 2],
}

impl TargetRegion {
    /// From `[μx, μy, logit x, logit y]`.
    pub fn from_raw(raw: &[f64], shared: bool) -> Self {
        let (lx, ly) = if shared {
            let m = (raw[2] + raw[3]) / 2.0;
            (m, m)
        } else {
            (raw[2], raw[3])
        };
        TargetRegion { mu: Point2::new(raw[0], raw[1]), b: [softplus(lx) + B_FLOOR, softplus(ly) + B_FLOOR] }
    }

    /// Inverse of [`TargetRegion::from_raw`].
    pub fn raw(&self) -> [f64; 4] {
        [self.mu.x, self.mu.y, inverse_softplus(self.b[0] - B_FLOOR), inverse_softplus(self.b[1] - B_FLOOR)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPath {
    pub points: Vec<Point2>,
}

impl SpatialPath {
    pub fn from_flat(v: &[f64]) -> Self {
        SpatialPath { points: v.chunks(2).map(|c| Point2::new(c[0], c[1])).collect() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// One refinement iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanIterate {
    pub target: TargetRegion,
    pub path: SpatialPath,
    pub increments: IncrementSeq,
}

impl PlanIterate {
    pub fn trajectory(&self) -> Trajectory {
        integrate_increments(&self.increments, Point2::ORIGIN).expect("non-empty increments")
    }
}

/// Planner result: the last iterate plus the full refinement history and
/// the variance head's standard deviations (`2T`, interleaved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub target: TargetRegion,
    pub path: SpatialPath,
    pub increments: IncrementSeq,
    pub history: Vec<PlanIterate>,
    pub sigma: Vec<f64>,
}

impl PlanOutput {
    pub(super) fn read(g: &Graph, lay: &PlannerLayout, history: &[PlanState], sigma: Vec<f64>) -> Result<Self> {
        let history = history
            .iter()
            .map(|st| {
                Ok(PlanIterate {
                    target: TargetRegion::from_raw(g.value(st.target), lay.cfg.shared_scale),
                    path: SpatialPath::from_flat(g.value(st.path)),
                    increments: IncrementSeq::from_flat(g.value(st.incr), lay.cfg.dt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let last = history.last().expect("history is never empty").clone();
        Ok(PlanOutput { target: last.target, path: last.path, increments: last.increments, history, sigma })
    }

    /// Ego-frame trajectory points.
    pub fn trajectory(&self) -> Trajectory {
        integrate_increments(&self.increments, Point2::ORIGIN).expect("non-empty increments")
    }
}

/// Result of query interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput {
    /// Q'' (after self-attention).
    pub queries: [Vec<f64>; 3],
    /// Q' (after cross-attention).
    pub stage1: [Vec<f64>; 3],
    pub attention: [Vec<f64>; 3],
}
