use latmom::Error;
use std::fmt;

/// A command failure and its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Compute(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Compute(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Compute(m) => write!(f, "computation failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::Json(_) => Failure::Config(msg),
            Error::Dimension(_) | Error::Data(_) | Error::UnknownSubject(_) | Error::Io(_) | Error::Csv(_) => {
                Failure::Data(msg)
            }
            Error::Quadrature(_) | Error::Numerical(_) | Error::NotConverged(..) | Error::Divergent { .. } => {
                Failure::Compute(msg)
            }
        }
    }
}
