use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, OrientedBox, Point2, Polygon2, Pose, Trajectory};

/// Half length and half width of the ego vehicle, meters.
pub const EGO_HALF_EXTENTS: [f64; 2] = [2.25, 0.95];

/// Steps shorter than this keep the previous heading.
pub const MIN_HEADING_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Left,
    Straight,
    Right,
}

impl Command {
    pub const ALL: [Command; 3] = [Command::Left, Command::Straight, Command::Right];

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Command::Left => [1.0, 0.0, 0.0],
            Command::Straight => [0.0, 1.0, 0.0],
            Command::Right => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Argument(format!("unknown difficulty {other:?} (expected easy, medium or hard)"))),
        }
    }
}

/// Ego pose and speed at planning time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// A scripted agent. `poses[k]` is the pose at time `k·dt`; index 0 is the
/// planning instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub half_extents: [f64; 2],
    pub poses: Vec<Pose>,
}

impl Agent {
    pub fn box_at(&self, step: usize) -> Result<OrientedBox> {
        let pose = self.poses.get(step).ok_or_else(|| {
            Error::Shape(format!("agent script has {} poses, step {step} requested", self.poses.len()))
        })?;
        OrientedBox::at_pose(*pose, self.half_extents)
    }
}

/// One synthetic driving case. The expert trajectory is in the ego frame;
/// everything else is in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioRecord", into = "ScenarioRecord")]
pub struct Scenario {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub command: Command,
    pub ego_start: EgoState,
    pub agents: Vec<Agent>,
    pub drivable: Polygon2,
    pub route: Vec<Point2>,
    pub expert: Trajectory,
}

/// On-disk JSON record: one object per corpus line.
#[derive(Serialize, Deserialize)]
struct ScenarioRecord {
    seed: u64,
    difficulty: Difficulty,
    command: Command,
    ego_start: EgoState,
    agents: Vec<Agent>,
    drivable: Polygon2,
    route: Vec<Point2>,
    expert: Vec<Point2>,
    dt: f64,
}

impl From<Scenario> for ScenarioRecord {
    fn from(s: Scenario) -> Self {
        ScenarioRecord {
            seed: s.seed,
            difficulty: s.difficulty,
            command: s.command,
            ego_start: s.ego_start,
            agents: s.agents,
            drivable: s.drivable,
            route: s.route,
            dt: s.expert.dt,
            expert: s.expert.points,
        }
    }
}

impl TryFrom<ScenarioRecord> for Scenario {
    type Error = Error;
    fn try_from(r: ScenarioRecord) -> Result<Self> {
        let s = Scenario {
            seed: r.seed,
            difficulty: r.difficulty,
            command: r.command,
            ego_start: r.ego_start,
            agents: r.agents,
            drivable: r.drivable,
            route: r.route,
            expert: Trajectory::new(r.expert, r.dt)?,
        };
        s.validate()?;
        Ok(s)
    }
}

impl Scenario {
    /// Number of planned points (T).
    pub fn horizon(&self) -> usize {
        self.expert.len()
    }

    pub fn dt(&self) -> f64 {
        self.expert.dt
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.ego_start;
        if ![e.x, e.y, e.heading, e.speed].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite ego start".into()));
        }
        for (k, a) in self.agents.iter().enumerate() {
            if a.poses.len() < self.horizon() + 1 {
                return Err(Error::Shape(format!(
                    "agent {k} script covers {} poses, horizon needs {}",
                    a.poses.len(),
                    self.horizon() + 1
                )));
            }
            for step in 0..a.poses.len() {
                a.box_at(step)?;
            }
        }
        if self.route.len() < 2 || self.route.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("route needs ≥ 2 finite waypoints".into()));
        }
        if !point_in_polygon(e.position(), &self.drivable)? {
            return Err(Error::InvalidGeometry("ego start outside drivable area".into()));
        }
        Ok(())
    }

    /// Maps an ego-frame point to world coordinates.
    pub fn to_world(&self, p: Point2) -> Point2 {
        self.ego_start.pose().to_parent(p)
    }

    pub fn points_to_world(&self, pts: &[Point2]) -> Vec<Point2> {
        let pose = self.ego_start.pose();
        pts.iter().map(|&p| pose.to_parent(p)).collect()
    }

    /// Agent boxes at script step `step`.
    pub fn agent_boxes(&self, step: usize) -> Result<Vec<OrientedBox>> {
        self.agents.iter().map(|a| a.box_at(step)).collect()
    }

    pub fn ego_box(&self) -> OrientedBox {
        OrientedBox::at_pose(self.ego_start.pose(), EGO_HALF_EXTENTS).expect("validated ego start")
    }

    /// Ego boxes along an ego-frame trajectory; see [`boxes_along`].
    pub fn ego_boxes_along(&self, pts: &[Point2]) -> Result<Vec<OrientedBox>> {
        boxes_along(self.ego_start.pose(), &self.points_to_world(pts), EGO_HALF_EXTENTS)
    }

    /// Ego state after the first planned step along the expert trajectory.
    pub fn ego_after_first_step(&self) -> EgoState {
        let pts = self.points_to_world(&self.expert.points[..1]);
        let start = self.ego_start.pose();
        let heading = headings_along(start, &pts)[0];
        let p = pts[0];
        EgoState { x: p.x, y: p.y, heading, speed: p.distance(start.position) / self.dt() }
    }

    /// Copy of the scene with every world-frame element shifted by `by`.
    /// The expert stays put because it is expressed in the ego frame.
    pub fn translated(&self, by: Point2) -> Scenario {
        let mut s = self.clone();
        s.ego_start.x += by.x;
        s.ego_start.y += by.y;
        for a in &mut s.agents {
            for p in &mut a.poses {
                p.position = p.position + by;
            }
        }
        s.drivable = self.drivable.translated(by);
        for p in &mut s.route {
            *p = *p + by;
        }
        s
    }
}

/// Heading at each point from the direction of travel since the previous
/// point (the start pose precedes the first). Steps shorter than
/// [`MIN_HEADING_STEP`] keep the previous heading.
pub fn headings_along(start: Pose, pts: &[Point2]) -> Vec<f64> {
    let mut prev = start.position;
    let mut heading = start.heading;
    pts.iter()
        .map(|&p| {
            let d = p - prev;
            if d.norm() >= MIN_HEADING_STEP {
                heading = d.y.atan2(d.x);
            }
            prev = p;
            heading
        })
        .collect()
}

/// Boxes of the given size placed at each world point with headings from
/// [`headings_along`].
pub fn boxes_along(start: Pose, pts: &[Point2], half_extents: [f64; 2]) -> Result<Vec<OrientedBox>> {
    headings_along(start, pts).into_iter().zip(pts).map(|(h, &p)| OrientedBox::new(p, half_extents, h)).collect()
}
