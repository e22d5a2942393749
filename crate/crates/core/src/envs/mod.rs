//! Exact grid environments, dataset generation, corruption and storage.
//!
//! Three environments are provided:
//!
//! * `heart`: one object moving in eight compass directions on an `n × n`
//!   grid. A move that would leave the grid on either axis leaves the object
//!   in place, so the ground-truth displacement takes exactly nine values.
//! * `wall`: one object moving in four cardinal directions with a vertical
//!   wall in column `n/2`, rows `n/4 ..= 3n/4`.
//! * `shapes`: `k` objects; each action moves one object one cell in a
//!   cardinal direction unless the target is off-grid or occupied.
//!
//! Observations are one-hot occupancy channels, one per object slot.

mod dataset;
mod grid;

pub use dataset::{corrupt, generate_dataset, load_dataset, save_dataset, TransitionDataset};
pub use grid::{
    heart_step, in_grid, is_wall, render, shapes_step, step, wall_cells, wall_step, EnvState,
    CARDINAL, COMPASS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid env config: {field}: {msg}")]
    InvalidConfig { field: &'static str, msg: String },
    #[error("cannot place {objects} objects on {cells} free cells")]
    ImpossiblePlacement { objects: usize, cells: usize },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Heart,
    Wall,
    Shapes,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Heart => "heart",
            EnvKind::Wall => "wall",
            EnvKind::Shapes => "shapes",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heart" => Ok(EnvKind::Heart),
            "wall" => Ok(EnvKind::Wall),
            "shapes" => Ok(EnvKind::Shapes),
            other => Err(EnvError::InvalidConfig {
                field: "env.kind",
                msg: format!("unknown environment {other:?} (expected heart, wall or shapes)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Cells per side.
    pub grid_size: usize,
    /// Object slots, which fixes the channel count and action width.
    pub num_objects: usize,
    /// Objects actually placed; `None` means all slots. Used for
    /// generalization sets with fewer objects than the model was trained on.
    pub present_objects: Option<usize>,
    /// Observations per episode (`episode_length - 1` transitions).
    pub episode_length: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::shapes(5)
    }
}

impl EnvConfig {
    pub fn heart() -> Self {
        Self {
            kind: EnvKind::Heart,
            grid_size: 8,
            num_objects: 1,
            present_objects: None,
            episode_length: 20,
            seed: 0,
        }
    }

    pub fn wall() -> Self {
        Self {
            kind: EnvKind::Wall,
            ..Self::heart()
        }
    }

    pub fn shapes(objects: usize) -> Self {
        Self {
            kind: EnvKind::Shapes,
            grid_size: 5,
            num_objects: objects,
            present_objects: None,
            episode_length: 20,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_episode_length(mut self, t: usize) -> Self {
        self.episode_length = t;
        self
    }

    pub fn with_present(mut self, present: usize) -> Self {
        self.present_objects = Some(present);
        self
    }

    pub fn present(&self) -> usize {
        self.present_objects.unwrap_or(self.num_objects)
    }

    pub fn channels(&self) -> usize {
        self.num_objects
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Heart => 8,
            EnvKind::Wall => 4,
            EnvKind::Shapes => 4 * self.num_objects,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.channels() * self.grid_size * self.grid_size
    }

    /// Cells an object may occupy.
    pub fn free_cells(&self) -> usize {
        let n = self.grid_size;
        match self.kind {
            EnvKind::Wall => n * n - wall_cells(n).len(),
            _ => n * n,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |field, msg: String| Err(EnvError::InvalidConfig { field, msg });
        if self.grid_size < 4 {
            return bad("env.grid_size", format!("{} < 4", self.grid_size));
        }
        if self.episode_length < 2 {
            return bad("env.episode_length", format!("{} < 2", self.episode_length));
        }
        match self.kind {
            EnvKind::Heart | EnvKind::Wall if self.num_objects != 1 => {
                return bad(
                    "env.num_objects",
                    format!("{} env holds exactly one object", self.kind.name()),
                )
            }
            EnvKind::Shapes if !(1..=9).contains(&self.num_objects) => {
                return bad("env.num_objects", format!("{} outside 1..=9", self.num_objects))
            }
            _ => {}
        }
        if !(1..=self.num_objects).contains(&self.present()) {
            return bad(
                "env.present_objects",
                format!("{} outside 1..={}", self.present(), self.num_objects),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        assert_eq!(EnvConfig::heart().action_dim(), 8);
        assert_eq!(EnvConfig::wall().action_dim(), 4);
        let s = EnvConfig::shapes(5);
        assert_eq!(s.action_dim(), 20);
        assert_eq!(s.obs_dim(), 125);
        assert_eq!(s.with_present(2).action_dim(), 20);
    }

    #[test]
    fn validation() {
        assert!(EnvConfig::shapes(5).validate().is_ok());
        assert!(EnvConfig::shapes(10).validate().is_err());
        assert!(EnvConfig::shapes(0).validate().is_err());
        let mut c = EnvConfig::heart();
        c.grid_size = 3;
        assert!(c.validate().is_err());
        c = EnvConfig::heart().with_episode_length(1);
        assert!(c.validate().is_err());
        c = EnvConfig::heart();
        c.num_objects = 2;
        assert!(c.validate().is_err());
        assert!(EnvConfig::shapes(3).with_present(4).validate().is_err());
    }

    #[test]
    fn unknown_kind_names_the_field() {
        let err = "cubes".parse::<EnvKind>().unwrap_err();
        assert!(err.to_string().contains("env.kind"));
    }
}
