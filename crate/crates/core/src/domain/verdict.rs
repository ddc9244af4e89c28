use serde::{Deserialize, Serialize};

use super::TaskId;

/// The binary feasibility judgment `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

impl Feasibility {
    /// Indicator value: feasible is 1, infeasible is 0.
    pub fn as_indicator(self) -> u8 {
        match self {
            Feasibility::Feasible => 1,
            Feasibility::Infeasible => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Recovered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub task_id: TaskId,
    /// `None` exactly when `parse_status` is `Failed`.
    pub label: Option<Feasibility>,
    pub body: String,
    pub raw_response: String,
    pub parse_status: ParseStatus,
}

impl FeasibilityVerdict {
    /// The label usable by metrics, or `None` for failed parses.
    pub fn usable_label(&self) -> Option<Feasibility> {
        match self.parse_status {
            ParseStatus::Failed => None,
            _ => self.label,
        }
    }
}
