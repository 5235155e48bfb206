use thiserror::Error;

/// Error type shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CipwError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("feasibility error: {0}")]
    Feasibility(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("precondition error: {0}")]
    Precondition(String),
}

impl CipwError {
    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            CipwError::Config(_) => "config",
            CipwError::Data(_) => "data",
            CipwError::Domain(_) => "domain",
            CipwError::Coverage(_) => "coverage",
            CipwError::Lookup(_) => "lookup",
            CipwError::Size(_) => "size",
            CipwError::Feasibility(_) => "feasibility",
            CipwError::Geometry(_) => "geometry",
            CipwError::Precondition(_) => "precondition",
        }
    }
}

pub type Result<T> = std::result::Result<T, CipwError>;
