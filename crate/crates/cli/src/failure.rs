use std::fmt;

/// Failure categories with their own exit codes.
#[derive(Debug)]
pub enum Failure {
    Missing(String),
    Schema(String),
    Config(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Missing(m) => write!(f, "missing input: {m}"),
            Failure::Schema(m) => write!(f, "schema mismatch: {m}"),
            Failure::Config(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

fn library_code(e: &regmap::Error) -> i32 {
    use regmap::Error as E;
    match e {
        E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        E::MissingMap(_) => EXIT_MISSING,
        E::SchemaMismatch(_) => EXIT_SCHEMA,
        E::UnknownSchema(_) | E::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

/// Exit code of the first categorized error in the chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Missing(_) => EXIT_MISSING,
                Failure::Schema(_) => EXIT_SCHEMA,
                Failure::Config(_) => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<regmap::Error>() {
            return library_code(e);
        }
    }
    EXIT_OTHER
}
