use std::io;
use std::process::ExitCode;

use rwcap_core::dataset::DatasetError;
use rwcap_core::dielectric::DielectricError;
use rwcap_core::frw::EngineError;
use rwcap_core::geometry::GeometryError;
use rwcap_core::linalg::SolverError;
use rwcap_core::nn::NnError;
use thiserror::Error;

/// Failure of a command. Exit code 2 for usage, 3 for data or format, 4 for
/// numerical failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// Prints `error[kind]: message` on one line and yields the exit code.
    pub fn report(&self) -> ExitCode {
        let msg = self.to_string().replace('\n', "; ");
        eprintln!("error[{}]: {}", self.kind(), msg);
        ExitCode::from(self.code())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(format!("i/o: {e}"))
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::UnknownConductor(_) | GeometryError::BadOffset(_) | GeometryError::PointInsideConductor(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DielectricError> for CliError {
    fn from(e: DielectricError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Param(_) | DatasetError::Grid(_) => CliError::Usage(e.to_string()),
            DatasetError::Exhausted { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Degenerate | NnError::Oracle(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::Usage(e.to_string()),
            EngineError::Geometry(g) => g.into(),
            EngineError::Solver(_) | EngineError::Kernel(_) | EngineError::Accumulator(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}
