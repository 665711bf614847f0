//! Open-loop metrics: displacement error, collision rate and the PDM score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{obb_overlap, point_in_polygon, OrientedBox, Point2, Pose, Trajectory};
use crate::world::{headings_along, Scenario, EGO_HALF_EXTENTS};

/// Reporting horizons in seconds.
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

/// Zero-based point index of a horizon: the point at time `(i+1)·dt`.
/// With `dt = 0.5` the 1 s horizon is index 1.
pub fn horizon_index(h: f64, dt: f64) -> usize {
    ((h / dt).round() as usize).saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdeReport {
    /// `(horizon seconds, L2 meters)` for every horizon the trajectory reaches.
    pub per_horizon: Vec<(f64, f64)>,
    pub average: f64,
}

/// L2 at each reporting horizon and their mean.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<AdeReport> {
    if pred.points.len() != gt.points.len() {
        return Err(Error::Shape(format!("trajectory lengths differ: {} vs {}", pred.points.len(), gt.points.len())));
    }
    let per_horizon: Vec<(f64, f64)> = HORIZONS
        .iter()
        .map(|&h| (h, horizon_index(h, gt.dt)))
        .filter(|&(_, i)| i < gt.points.len())
        .map(|(h, i)| (h, pred.points[i].distance(gt.points[i])))
        .collect();
    if per_horizon.is_empty() {
        return Err(Error::Shape("trajectory shorter than the first horizon".into()));
    }
    let average = per_horizon.iter().map(|p| p.1).sum::<f64>() / per_horizon.len() as f64;
    Ok(AdeReport { per_horizon, average })
}

/// Per-point overlap of the ego (placed along the ego-frame trajectory) with
/// any agent at the matching script step. Point `j` lies at time `(j+1)·dt`.
pub fn collision_flags(traj: &Trajectory, s: &Scenario) -> Result<Vec<bool>> {
    let ego = s.ego_boxes_along(&traj.points)?;
    ego.iter()
        .enumerate()
        .map(|(j, e)| {
            for a in &s.agents {
                if obb_overlap(e, &a.box_at(j + 1)?)? {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect()
}

/// Collision rate in percent from per-point flags. For each horizon, the
/// share of (scenario, point) pairs up to that horizon that collide; the
/// result is the mean over horizons.
pub fn collision_rate_from_flags<'a>(flags: impl IntoIterator<Item = &'a [bool]>) -> Result<f64> {
    collision_rates_dt(flags, crate::geom::DEFAULT_DT).map(|r| r.1)
}

/// Per-horizon rates and their mean, both in percent.
pub fn collision_rates_dt<'a>(flags: impl IntoIterator<Item = &'a [bool]>, dt: f64) -> Result<(Vec<(f64, f64)>, f64)> {
    let mut hits = [0usize; HORIZONS.len()];
    let mut pairs = [0usize; HORIZONS.len()];
    let mut any = false;
    for f in flags {
        any = true;
        for (k, &h) in HORIZONS.iter().enumerate() {
            let end = (horizon_index(h, dt) + 1).min(f.len());
            hits[k] += f[..end].iter().filter(|&&c| c).count();
            pairs[k] += end;
        }
    }
    if !any {
        return Ok((Vec::new(), 0.0));
    }
    let rates: Vec<(f64, f64)> = HORIZONS
        .iter()
        .zip(hits.iter().zip(&pairs))
        .filter(|(_, (_, &p))| p > 0)
        .map(|(&h, (&c, &p))| (h, 100.0 * c as f64 / p as f64))
        .collect();
    let mean = if rates.is_empty() { 0.0 } else { rates.iter().map(|r| r.1).sum::<f64>() / rates.len() as f64 };
    Ok((rates, mean))
}

/// Collision rate (percent) of ego-frame trajectories over aligned scenarios.
pub fn collision_rate(plans: &[Trajectory], scenarios: &[Scenario]) -> Result<f64> {
    if plans.len() != scenarios.len() {
        return Err(Error::Shape(format!("{} plans for {} scenarios", plans.len(), scenarios.len())));
    }
    let flags = plans.iter().zip(scenarios).map(|(p, s)| collision_flags(p, s)).collect::<Result<Vec<_>>>()?;
    collision_rate_from_flags(flags.iter().map(|f| f.as_slice()))
}

/// Pass/fail thresholds for the binary PDM subscores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdmsThresholds {
    /// m/s².
    pub max_accel: f64,
    /// m/s³.
    pub max_jerk: f64,
    /// Seconds of constant-velocity look-ahead.
    pub ttc_window: f64,
    pub ttc_step: f64,
}

impl Default for PdmsThresholds {
    fn default() -> Self {
        PdmsThresholds { max_accel: 3.0, max_jerk: 5.0, ttc_window: 1.0, ttc_step: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdmsScore {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comf: f64,
    pub ep: f64,
    pub pdms: f64,
}

/// `nc·dac·(5·ep + 5·ttc + 2·comf)/12`.
pub fn pdms_compose(nc: f64, dac: f64, ttc: f64, comf: f64, ep: f64) -> f64 {
    nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * comf) / 12.0
}

impl PdmsScore {
    pub fn new(nc: f64, dac: f64, ttc: f64, comf: f64, ep: f64) -> Result<Self> {
        for (name, v) in [("nc", nc), ("dac", dac), ("ttc", ttc), ("comf", comf), ("ep", ep)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(PdmsScore { nc, dac, ttc, comf, ep, pdms: pdms_compose(nc, dac, ttc, comf, ep) })
    }
}

/// Arc length along `route` of the closest point to `p`.
pub fn route_progress(route: &[Point2], p: Point2) -> f64 {
    let (mut best, mut at, mut acc) = (f64::INFINITY, 0.0, 0.0);
    for w in route.windows(2) {
        let ab = w[1] - w[0];
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { ((p - w[0]).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = p.distance(w[0] + ab.scale(t));
        if d < best {
            best = d;
            at = acc + t * len2.sqrt();
        }
        acc += len2.sqrt();
    }
    at
}

fn velocities(start: Point2, pts: &[Point2], dt: f64) -> Vec<Point2> {
    let mut prev = start;
    pts.iter()
        .map(|&p| {
            let v = (p - prev).scale(1.0 / dt);
            prev = p;
            v
        })
        .collect()
}

fn finite_diff(v: &[Point2], dt: f64) -> Vec<Point2> {
    v.windows(2).map(|w| (w[1] - w[0]).scale(1.0 / dt)).collect()
}

/// 1 when the largest finite-differenced acceleration and jerk magnitudes
/// are within the thresholds.
pub fn comfort(traj: &Trajectory, thr: &PdmsThresholds) -> f64 {
    let v = velocities(Point2::ORIGIN, &traj.points, traj.dt);
    let a = finite_diff(&v, traj.dt);
    let j = finite_diff(&a, traj.dt);
    let ok = a.iter().all(|x| x.norm() <= thr.max_accel) && j.iter().all(|x| x.norm() <= thr.max_jerk);
    ok as u8 as f64
}

/// 1 when holding each point's velocity (and every agent's) for up to the
/// TTC window never produces an overlap.
pub fn time_to_collision(traj: &Trajectory, s: &Scenario, thr: &PdmsThresholds) -> Result<f64> {
    let dt = traj.dt;
    let world = s.points_to_world(&traj.points);
    let start = s.ego_start.pose();
    let heads = headings_along(start, &world);
    let vel = velocities(start.position, &world, dt);
    let steps = (thr.ttc_window / thr.ttc_step).round() as usize;
    for (j, (&p, &h)) in world.iter().zip(&heads).enumerate() {
        let agents: Vec<(Pose, Point2, [f64; 2])> = s
            .agents
            .iter()
            .map(|a| {
                let (now, before) = (a.poses[j + 1], a.poses[j]);
                (now, (now.position - before.position).scale(1.0 / dt), a.half_extents)
            })
            .collect();
        for k in 1..=steps {
            let tau = k as f64 * thr.ttc_step;
            let ego = OrientedBox::new(p + vel[j].scale(tau), EGO_HALF_EXTENTS, h)?;
            for (pose, v, half) in &agents {
                let b = OrientedBox::new(pose.position + v.scale(tau), *half, pose.heading)?;
                if obb_overlap(&ego, &b)? {
                    return Ok(0.0);
                }
            }
        }
    }
    Ok(1.0)
}

/// Route progress of the plan relative to the expert, clipped to [0, 1].
pub fn ego_progress(traj: &Trajectory, s: &Scenario) -> f64 {
    let origin = route_progress(&s.route, s.ego_start.position());
    let end_of = |t: &Trajectory| route_progress(&s.route, s.to_world(*t.points.last().unwrap())) - origin;
    let expert = end_of(&s.expert);
    if expert <= 1e-6 {
        return 1.0;
    }
    (end_of(traj) / expert).clamp(0.0, 1.0)
}

/// PDM score of an ego-frame trajectory.
pub fn pdms_trajectory(traj: &Trajectory, s: &Scenario, thr: &PdmsThresholds) -> Result<PdmsScore> {
    if traj.points.len() + 1 > s.agents.first().map_or(usize::MAX, |a| a.poses.len()) {
        return Err(Error::Shape("plan horizon exceeds the agent scripts".into()));
    }
    let nc = if collision_flags(traj, s)?.iter().any(|&c| c) { 0.0 } else { 1.0 };
    let mut dac = 1.0;
    for p in s.points_to_world(&traj.points) {
        if !point_in_polygon(p, &s.drivable)? {
            dac = 0.0;
            break;
        }
    }
    let ttc = time_to_collision(traj, s, thr)?;
    PdmsScore::new(nc, dac, ttc, comfort(traj, thr), ego_progress(traj, s))
}

pub fn pdms(plan: &crate::planner::PlanOutput, s: &Scenario, thr: &PdmsThresholds) -> Result<PdmsScore> {
    pdms_trajectory(&plan.trajectory(), s, thr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, Agent, Difficulty};

    fn shift(t: &Trajectory, d: Point2) -> Trajectory {
        Trajectory::new(t.points.iter().map(|&p| p + d).collect(), t.dt).unwrap()
    }

    #[test]
    fn ade_zero_for_identical() {
        let s = generate_scenario(3, Difficulty::Easy).unwrap();
        let r = ade(&s.expert, &s.expert).unwrap();
        assert!(r.per_horizon.iter().all(|h| h.1 == 0.0));
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn ade_constant_offset_is_three_four_five() {
        let s = generate_scenario(4, Difficulty::Easy).unwrap();
        let r = ade(&shift(&s.expert, Point2::new(0.3, 0.4)), &s.expert).unwrap();
        for (_, v) in &r.per_horizon {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert_eq!(r.per_horizon.len(), 3);
    }

    #[test]
    fn horizon_indices_at_half_second_steps() {
        assert_eq!(horizon_index(1.0, 0.5), 1);
        assert_eq!(horizon_index(2.0, 0.5), 3);
        assert_eq!(horizon_index(3.0, 0.5), 5);
    }

    #[test]
    fn ade_reads_the_horizon_point_only() {
        let s = generate_scenario(5, Difficulty::Easy).unwrap();
        let mut p = s.expert.clone();
        p.points[1] = p.points[1] + Point2::new(1.0, 0.0);
        let r = ade(&p, &s.expert).unwrap();
        assert_eq!(r.per_horizon[0].1, 1.0);
        assert_eq!(r.per_horizon[1].1, 0.0);
        assert!((r.average - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ade_length_mismatch() {
        let s = generate_scenario(5, Difficulty::Easy).unwrap();
        let short = Trajectory::new(s.expert.points[..4].to_vec(), 0.5).unwrap();
        assert!(matches!(ade(&short, &s.expert), Err(Error::Shape(_))));
    }

    fn with_static_agent_on_plan(seed: u64) -> Scenario {
        let mut s = generate_scenario(seed, Difficulty::Easy).unwrap();
        let at = s.to_world(s.expert.points[2]);
        let heading = s.ego_start.heading;
        s.agents =
            vec![Agent { half_extents: [2.0, 1.0], poses: vec![Pose::new(at.x, at.y, heading); s.horizon() + 1] }];
        s
    }

    #[test]
    fn agent_free_corpus_has_zero_rate() {
        let mut scen = Vec::new();
        for seed in 0..5 {
            let mut s = generate_scenario(seed, Difficulty::Medium).unwrap();
            s.agents.clear();
            scen.push(s);
        }
        let plans: Vec<_> = scen.iter().map(|s| s.expert.clone()).collect();
        assert_eq!(collision_rate(&plans, &scen).unwrap(), 0.0);
    }

    #[test]
    fn static_obstacle_rate_matches_overlap_window() {
        let scen: Vec<Scenario> = (0..4).map(with_static_agent_on_plan).collect();
        let plans: Vec<_> = scen.iter().map(|s| s.expert.clone()).collect();
        let flags: Vec<Vec<bool>> = plans.iter().zip(&scen).map(|(p, s)| collision_flags(p, s).unwrap()).collect();
        // Oracle: same rule computed from the flags by brute force.
        let mut expect = 0.0;
        for &h in &HORIZONS {
            let end = horizon_index(h, 0.5) + 1;
            let c: usize = flags.iter().map(|f| f[..end].iter().filter(|&&x| x).count()).sum();
            expect += 100.0 * c as f64 / (end * flags.len()) as f64;
        }
        expect /= 3.0;
        assert!(flags.iter().all(|f| f[2]));
        let r = collision_rate(&plans, &scen).unwrap();
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn full_overlap_is_one_hundred_percent() {
        let flags = vec![vec![true; 6]; 3];
        let r = collision_rate_from_flags(flags.iter().map(|f| f.as_slice())).unwrap();
        assert_eq!(r, 100.0);
    }

    #[test]
    fn rate_is_order_invariant() {
        let flags =
            [vec![true, false, false, true, false, false], vec![false; 6], vec![false, true, true, false, false, true]];
        let a = collision_rate_from_flags(flags.iter().map(|f| f.as_slice())).unwrap();
        let b = collision_rate_from_flags(flags.iter().rev().map(|f| f.as_slice())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pdms_formula_examples() {
        assert_eq!(pdms_compose(1.0, 1.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(pdms_compose(0.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        assert!((pdms_compose(1.0, 1.0, 1.0, 1.0, 0.8) - 11.0 / 12.0).abs() < 1e-12);
        assert!(PdmsScore::new(1.0, 1.0, 1.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn expert_scores_full_progress_and_no_collision() {
        let s = generate_scenario(11, Difficulty::Easy).unwrap();
        let sc = pdms_trajectory(&s.expert, &s, &PdmsThresholds::default()).unwrap();
        assert_eq!(sc.nc, 1.0);
        assert_eq!(sc.dac, 1.0);
        assert!((sc.ep - 1.0).abs() < 1e-9);
        assert_eq!(sc.pdms, pdms_compose(sc.nc, sc.dac, sc.ttc, sc.comf, sc.ep));
    }

    #[test]
    fn collision_zeroes_pdms() {
        let s = with_static_agent_on_plan(2);
        let sc = pdms_trajectory(&s.expert, &s, &PdmsThresholds::default()).unwrap();
        assert_eq!(sc.nc, 0.0);
        assert_eq!(sc.pdms, 0.0);
    }

    #[test]
    fn standing_still_has_no_progress() {
        let s = generate_scenario(12, Difficulty::Easy).unwrap();
        let still = Trajectory::new(vec![Point2::ORIGIN; 6], 0.5).unwrap();
        let sc = pdms_trajectory(&still, &s, &PdmsThresholds::default()).unwrap();
        assert!(sc.ep < 0.05);
        assert_eq!(sc.comf, 1.0);
    }

    #[test]
    fn hard_braking_is_uncomfortable() {
        let pts = [10.0, 20.0, 20.5, 20.5, 20.5, 20.5].iter().map(|&x| Point2::new(x, 0.0)).collect();
        let t = Trajectory::new(pts, 0.5).unwrap();
        assert_eq!(comfort(&t, &PdmsThresholds::default()), 0.0);
        let cruise = Trajectory::new((1..=6).map(|i| Point2::new(5.0 * i as f64, 0.0)).collect(), 0.5).unwrap();
        assert_eq!(comfort(&cruise, &PdmsThresholds::default()), 1.0);
    }

    #[test]
    fn route_progress_on_straight_route() {
        let route = vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(20.0, 0.0)];
        assert!((route_progress(&route, Point2::new(13.0, 2.0)) - 13.0).abs() < 1e-12);
        assert_eq!(route_progress(&route, Point2::new(-5.0, 0.0)), 0.0);
    }
}
