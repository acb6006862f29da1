use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("finite-difference oracle evaluated a non-finite loss at coordinate {0}")]
    Oracle(usize),
    #[error("reversible execution requires beta != 0")]
    Irreversible,
    #[error("coefficient {name} = {value} outside {range}")]
    Coefficient {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error("stale cache: {0}")]
    StaleCache(String),
    #[error("numeric Jacobian is singular (det = {det:e}) although beta = {beta}")]
    SingularJacobian { det: f64, beta: f64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
