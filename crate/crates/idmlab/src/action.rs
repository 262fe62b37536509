//! Continuous action vectors: joint angles plus gripper openings, carried in
//! either raw control units or the normalized training space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension kind; decides the strict-accuracy threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Rotation,
    Gripper,
}

/// Which space the values live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Raw,
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub values: Vec<f64>,
    pub space: ActionSpace,
    pub kinds: Vec<DimKind>,
}

impl Action {
    pub fn raw(values: Vec<f64>, kinds: Vec<DimKind>) -> Result<Self> {
        if values.len() != kinds.len() {
            return Err(Error::Shape(format!(
                "action has {} values but {} dim kinds",
                values.len(),
                kinds.len()
            )));
        }
        Ok(Action { values, space: ActionSpace::Raw, kinds })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
