//! CLI error taxonomy. Each kind maps to a distinct exit code and prints as
//! one machine-parseable line on stderr.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Missing files and other IO failures. Exit code 2.
    Io(String),
    /// Malformed input files (trace, config, snapshot, metrics). Exit code 3.
    Parse(String),
    /// Structurally valid input with invalid values (unknown scenario,
    /// bad policy string, out-of-range numbers). Exit code 4.
    InvalidConfig(String),
    /// Simulation or calibration failures. Exit code 5.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Parse(_) => 3,
            CliError::InvalidConfig(_) => 4,
            CliError::Run(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::InvalidConfig(_) => "invalid-config",
            CliError::Run(_) => "run",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Io(m) | CliError::Parse(m) | CliError::InvalidConfig(m) | CliError::Run(m) => m,
        };
        // Single line, machine parseable.
        write!(
            f,
            "error kind={} code={}: {}",
            self.kind(),
            self.exit_code(),
            msg.replace('\n', " ")
        )
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<poolsim_core::trace::TraceError> for CliError {
    fn from(e: poolsim_core::trace::TraceError) -> Self {
        use poolsim_core::trace::TraceError as T;
        match e {
            T::Io(io) => CliError::Io(io.to_string()),
            T::Parse { .. } => CliError::Parse(e.to_string()),
            T::Config(_) | T::UnknownScenario(_) => CliError::InvalidConfig(e.to_string()),
            T::Validation(_) => CliError::Parse(e.to_string()),
        }
    }
}

impl From<poolsim_core::predictors::PredictorError> for CliError {
    fn from(e: poolsim_core::predictors::PredictorError) -> Self {
        use poolsim_core::predictors::PredictorError as P;
        match e {
            P::Io(io) => CliError::Io(io.to_string()),
            P::Snapshot(_) => CliError::Parse(e.to_string()),
            P::Config(_) | P::PdmMismatch { .. } => CliError::InvalidConfig(e.to_string()),
            P::TooFewSamples { .. } | P::Uncalibrated(_) => CliError::Run(e.to_string()),
        }
    }
}

impl From<poolsim_core::simulator::SimError> for CliError {
    fn from(e: poolsim_core::simulator::SimError) -> Self {
        use poolsim_core::simulator::SimError as S;
        match e {
            S::Io(io) => CliError::Io(io.to_string()),
            S::Config(_) => CliError::InvalidConfig(e.to_string()),
            S::Trace(t) => CliError::from(t),
            S::Predictor(p) => CliError::from(p),
            S::InfeasibleCluster { .. } => CliError::Run(e.to_string()),
            S::PoolHw(_) | S::ControlPlane(_) => CliError::Run(e.to_string()),
        }
    }
}
