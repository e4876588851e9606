use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Points closer than this to an existing entry are merged into it.
pub const MERGE_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisteredObstacle {
    pub position: Vector3<f64>,
    pub time: f64,
}

/// Known collision points, append-only within a trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRegistry {
    points: Vec<RegisteredObstacle>,
}

impl ObstacleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `position` unless it lies within 1 cm of a known point.
    /// Returns whether the registry grew.
    pub fn register(&mut self, position: Vector3<f64>, time: f64) -> bool {
        if !position.iter().all(|x| x.is_finite()) {
            return false;
        }
        if self.points.iter().any(|o| (o.position - position).norm() < MERGE_RADIUS) {
            return false;
        }
        self.points.push(RegisteredObstacle { position, time });
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[RegisteredObstacle] {
        &self.points
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> + '_ {
        self.points.iter().map(|o| &o.position)
    }
}
