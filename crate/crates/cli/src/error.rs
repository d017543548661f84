use serde::Serialize;
use tiretwin_core::decision::DecisionError;
use tiretwin_core::domain::DomainError;
use tiretwin_core::plot::PlotError;
use tiretwin_core::reduce::ReduceError;
use tiretwin_core::synth::SynthError;
use tiretwin_core::tft::TftError;
use tiretwin_core::update::UpdateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Config,
    Data,
    Model,
}

impl Class {
    pub fn exit_code(self) -> i32 {
        match self {
            Class::Config => 2,
            Class::Data => 3,
            Class::Model => 4,
        }
    }
}

/// A failure ready to be reported as one JSON line on stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

#[derive(Serialize)]
struct Line<'a> {
    code: i32,
    kind: Class,
    message: &'a str,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { class: Class::Config, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { class: Class::Data, message: msg.into() }
    }

    pub fn model(msg: impl Into<String>) -> Self {
        CliError { class: Class::Model, message: msg.into() }
    }

    pub fn to_line(&self) -> String {
        let line = Line { code: self.class.exit_code(), kind: self.class, message: &self.message };
        serde_json::to_string(&line).expect("plain struct serializes")
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::ConfigInvalid(_) => CliError::config(e.to_string()),
            SynthError::Domain(_) => CliError::data(e.to_string()),
        }
    }
}

impl From<ReduceError> for CliError {
    fn from(e: ReduceError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<TftError> for CliError {
    fn from(e: TftError) -> Self {
        match e {
            TftError::ConfigInvalid(_) => CliError::config(e.to_string()),
            TftError::EmptyDataset | TftError::Domain(_) => CliError::data(e.to_string()),
            TftError::NonFiniteLoss { .. }
            | TftError::ShapeMismatch(_)
            | TftError::SchemaVersionMismatch(_)
            | TftError::CorruptCheckpoint(_)
            | TftError::Autodiff(_)
            | TftError::Io(_) => CliError::model(e.to_string()),
        }
    }
}

impl From<UpdateError> for CliError {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::Tft(t) => t.into(),
            UpdateError::Domain(d) => d.into(),
            UpdateError::EmptyDataset | UpdateError::LengthMismatch { .. } => CliError::data(e.to_string()),
            UpdateError::HorizonMismatch { .. } | UpdateError::ConfigInvalid(_) => CliError::model(e.to_string()),
        }
    }
}

impl From<DecisionError> for CliError {
    fn from(e: DecisionError) -> Self {
        match e {
            DecisionError::Tft(t) => t.into(),
            DecisionError::Update(u) => u.into(),
            DecisionError::Synth(s) => s.into(),
            DecisionError::InvalidArgument(_) | DecisionError::EmptyCandidates => CliError::config(e.to_string()),
            DecisionError::WindowTooShort { .. } | DecisionError::Misalignment(_) | DecisionError::NoLabeledData => {
                CliError::data(e.to_string())
            }
        }
    }
}

impl From<PlotError> for CliError {
    fn from(e: PlotError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("Io: {e}"))
    }
}
