use inspex_autodiff::AutogradError;
use inspex_core::InspexError;
use inspex_harmonizer::HarmonizerError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Inspex(#[from] InspexError),

    #[error(transparent)]
    Harmonizer(#[from] HarmonizerError),

    #[error("stage {stage} failed for {case}: {source}")]
    Stage {
        stage: String,
        case: String,
        #[source]
        source: Box<CliError>,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

fn inspex_code(e: &InspexError) -> i32 {
    match e {
        InspexError::Argument(_) => EXIT_USAGE,
        InspexError::Numerical(_) | InspexError::Degenerate(_) => EXIT_NUMERICAL,
        InspexError::Io { .. } => EXIT_IO,
        InspexError::Shape(..)
        | InspexError::Format(_)
        | InspexError::Unsupported(_)
        | InspexError::Data(_)
        | InspexError::InsufficientData(_) => EXIT_DATA,
    }
}

impl CliError {
    pub fn stage(stage: &str, case: &str) -> impl FnOnce(CliError) -> CliError {
        let (stage, case) = (stage.to_string(), case.to_string());
        move |e| CliError::Stage { stage, case, source: Box::new(e) }
    }

    /// Process exit status: 2 usage, 3 data/format, 4 numerical, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Inspex(e) => inspex_code(e),
            CliError::Harmonizer(e) => match e {
                HarmonizerError::Inspex(e) => inspex_code(e),
                HarmonizerError::Usage(_) | HarmonizerError::Config(_) => EXIT_USAGE,
                HarmonizerError::Checkpoint(_) => EXIT_DATA,
                HarmonizerError::Divergence { .. } => EXIT_NUMERICAL,
                HarmonizerError::Autograd(e) => match e {
                    AutogradError::Io { .. } => EXIT_IO,
                    AutogradError::Checkpoint { .. } => EXIT_DATA,
                    AutogradError::ShapeMismatch { .. } | AutogradError::InvalidArgument { .. } | AutogradError::Usage(_) => {
                        EXIT_USAGE
                    }
                },
            },
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}
