//! The closed set of six device actions, which double as class labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of actions on the mat (and classes the forest can learn).
pub const NUM_ACTIONS: usize = 6;

/// An output action of the device. The discriminant is the wire id and
/// the class index; the order is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    Shake = 0,
    GoForward = 1,
    LightUp = 2,
    TurnLeft = 3,
    GoBackward = 4,
    TurnRight = 5,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; NUM_ACTIONS] = [
        ActionLabel::Shake,
        ActionLabel::GoForward,
        ActionLabel::LightUp,
        ActionLabel::TurnLeft,
        ActionLabel::GoBackward,
        ActionLabel::TurnRight,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionLabel::Shake => "shake",
            ActionLabel::GoForward => "go_forward",
            ActionLabel::LightUp => "light_up",
            ActionLabel::TurnLeft => "turn_left",
            ActionLabel::GoBackward => "go_backward",
            ActionLabel::TurnRight => "turn_right",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action name {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for ActionLabel {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_name(s).ok_or_else(|| UnknownAction(s.to_string()))
    }
}
