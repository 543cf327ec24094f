use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {x} lies on a branch boundary but carries no side")]
    NoBranch { x: f64 },

    #[error("orbit hits the critical set at iterate {0}")]
    OrbitHitsCriticalPoint(usize),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate sequence: {0}")]
    DegenerateSequence(String),

    #[error("no orbit segment stays outside the critical neighbourhood")]
    NoSegments,

    #[error("no cycle stabilised up to period {0}")]
    NoCycleFound(usize),

    #[error("interval J* is not invariant (symmetric difference {0:.3e})")]
    NotInvariant(f64),

    #[error("binding period table too short: cap {0} reached")]
    TableTooShort(usize),

    #[error("no candidate delta passes the tail-sum test")]
    NoFeasibleDelta,

    #[error("component near critical point {c} never expands onto a critical point within {n_max} iterates")]
    NoExpansion { c: f64, n_max: usize },

    #[error("unresolved mass fraction {fraction:.3e} exceeds leak budget {budget:.3e}")]
    LeakBudgetExceeded { fraction: f64, budget: f64 },

    #[error("preimage gaps never fall below {0:.3e}")]
    DensityFailure(f64),

    #[error("only {0} sample pairs reach separation time 3")]
    InsufficientPairs(usize),

    #[error("power iteration did not converge (residual {residual:.3e})")]
    NonConvergence { residual: f64 },

    #[error("fewer than 5 correlation values exceed the noise floor")]
    NoiseFloor,

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Budget failures (leak, convergence) are distinguished from validation
    /// failures by the CLI exit status.
    pub fn is_budget_failure(&self) -> bool {
        matches!(
            self,
            Error::LeakBudgetExceeded { .. }
                | Error::NonConvergence { .. }
                | Error::TableTooShort(_)
                | Error::NoExpansion { .. }
                | Error::DensityFailure(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoBranch { .. } => "NoBranch",
            Error::OrbitHitsCriticalPoint(_) => "OrbitHitsCriticalPoint",
            Error::InvalidMap(_) => "InvalidMap",
            Error::Precondition(_) => "Precondition",
            Error::DegenerateSequence(_) => "DegenerateSequence",
            Error::NoSegments => "NoSegments",
            Error::NoCycleFound(_) => "NoCycleFound",
            Error::NotInvariant(_) => "NotInvariant",
            Error::TableTooShort(_) => "TableTooShort",
            Error::NoFeasibleDelta => "NoFeasibleDelta",
            Error::NoExpansion { .. } => "NoExpansion",
            Error::LeakBudgetExceeded { .. } => "LeakBudgetExceeded",
            Error::DensityFailure(_) => "DensityFailure",
            Error::InsufficientPairs(_) => "InsufficientPairs",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::NoiseFloor => "NoiseFloor",
            Error::Config(_) => "Config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
