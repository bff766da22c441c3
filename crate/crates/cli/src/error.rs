//! Error-to-exit-code mapping: 2 for input and schema problems, 3 for
//! infeasible or degenerate mathematical outcomes, 1 for anything else.

use fairbound_core::fairness::FairnessError;
use fairbound_core::feasible::FeasibleError;
use fairbound_core::pipeline::PipelineError;
use fairbound_core::prob::ProbError;
use fairbound_core::simulation::SimError;
use fairbound_core::structural::EmError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files: exit 2.
    Input(String),
    /// Mathematically degenerate outcome (empty feasible set, zero group
    /// mass, everything filtered): exit 3.
    Infeasible(String),
    /// Unexpected internal failure: exit 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Infeasible(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ProbError> for CliError {
    fn from(e: ProbError) -> Self {
        match e {
            ProbError::ZeroConditioningMass { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<FeasibleError> for CliError {
    fn from(e: FeasibleError) -> Self {
        match e {
            FeasibleError::EmptyFeasibleSet { .. }
            | FeasibleError::DegenerateConditional(_)
            | FeasibleError::InfeasiblePoint { .. }
            | FeasibleError::OutOfBox { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<FairnessError> for CliError {
    fn from(e: FairnessError) -> Self {
        match e {
            FairnessError::ZeroGroupMass { .. }
            | FairnessError::EmptyFeasibleSet
            | FairnessError::AllValuesFiltered { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EmError> for CliError {
    fn from(e: EmError) -> Self {
        match e {
            EmError::NonFiniteLikelihood => CliError::Infeasible(e.to_string()),
            EmError::Prob(p) => p.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::DegenerateResult(_) => CliError::Infeasible(e.to_string()),
            SimError::Prob(p) => p.into(),
            SimError::InvalidConfig(m) => CliError::Input(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UndefinedTrueMetric(m) => CliError::Infeasible(m),
            PipelineError::Em(em) => em.into(),
            PipelineError::Feasible(fe) => fe.into(),
            PipelineError::Fairness(fa) => fa.into(),
            PipelineError::Prob(p) => p.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}
