use serde_json::json;
use swarmfield_core::formation::FormationError;
use swarmfield_core::log::LogError;
use swarmfield_core::planner::llm::ConfigError as LlmConfigError;
use swarmfield_core::runner::RunError;
use swarmfield_core::scenario::ScenarioError;
use swarmfield_gateway::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Llm(#[from] LlmConfigError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gateway: {0}")]
    Serve(std::io::Error),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Stable name of the failure for scripts.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Scenario(ScenarioError::Unknown(_)) => "UnknownScenario",
            CliError::Scenario(ScenarioError::Command { source, .. }) => match source {
                FormationError::ShapeInfeasible(_) => "ShapeInfeasible",
                FormationError::FenceViolation { .. } => "FenceViolation",
                FormationError::NoValidMatching(_) => "NoValidMatching",
            },
            CliError::Scenario(_) => "InvalidScenario",
            CliError::Llm(_) | CliError::Config(_) => "ConfigError",
            CliError::Log(LogError::SchemaMismatch { .. }) => "SchemaMismatch",
            CliError::Log(LogError::MissingHeader) => "SchemaMismatch",
            CliError::Log(_) | CliError::Io { .. } | CliError::Serve(_) => "IoError",
            CliError::Run(_) => "RunError",
            CliError::Verify(_) => "ReplayMismatch",
        }
    }

    pub fn to_json(&self) -> String {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Log(LogError::SchemaMismatch { line, .. }) = self {
            body["line"] = json!(line);
        }
        body.to_string()
    }
}
