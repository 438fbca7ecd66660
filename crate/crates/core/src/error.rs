use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("index ordering violated: need 0 <= k <= l <= n, got k={k}, l={l}, n={n}")]
    IndexOrder { k: u64, l: u64, n: u64 },

    #[error("root finder did not converge within {iterations} iterations ({what})")]
    RootNotConverged { what: &'static str, iterations: usize },

    #[error("invalid design parameters: {0}")]
    InvalidParams(String),

    #[error("invalid decimal literal {0:?}")]
    InvalidDecimal(String),

    #[error("schedule violates {inequality}: {detail}")]
    Schedule {
        inequality: &'static str,
        detail: String,
    },

    #[error("plan does not terminate: success count {k} continues at the final sample size {n}")]
    NonTerminating { k: u64, n: u64 },

    #[error("malformed plan: {0}")]
    MalformedPlan(String),

    #[error("verification inconclusive: {reason}")]
    Inconclusive {
        reason: String,
        lower: f64,
        upper: f64,
    },

    #[error("configuration infeasible: {0}")]
    Infeasible(String),

    #[error("tuning aborted at zeta = {zeta}: {source}")]
    TuneAborted {
        zeta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("trial conduct: {0}")]
    Conduct(String),
}
