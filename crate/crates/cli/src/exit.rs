//! Exit codes and the one-line error report written to stderr.

use psro_core::Error;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const MISSING_INPUT: i32 = 3;
pub const NUMERIC: i32 = 4;
pub const DOMAIN: i32 = 5;

pub fn code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::FieldCollision(_)
        | Error::UnknownField(_)
        | Error::EmptyEnsemble
        | Error::RegistryMismatch(_)
        | Error::Mesh(_) => CONFIG,
        Error::MissingInput(_) | Error::Io(_) | Error::Format(_) | Error::Truncated { .. } => MISSING_INPUT,
        Error::OutOfDomain { .. } | Error::Shape(_) | Error::UnknownSession(_) | Error::StepOverflow(_) => DOMAIN,
        Error::ReturnMap { .. }
        | Error::Newton { .. }
        | Error::LoadStep { .. }
        | Error::Solver(_)
        | Error::ConstantFeature { .. }
        | Error::DegenerateOutput { .. }
        | Error::Svd(_)
        | Error::StaleCache
        | Error::NonFiniteGradient(_)
        | Error::Diverged { .. } => NUMERIC,
    }
}

pub fn kind(e: &Error) -> &'static str {
    match code(e) {
        CONFIG => "config",
        MISSING_INPUT => "missing_input",
        NUMERIC => "numeric",
        _ => "domain",
    }
}

/// `error code=<n> kind=<kind> message=<json string>`
pub fn report(e: &Error) -> String {
    let msg = serde_json::to_string(&e.to_string()).unwrap_or_else(|_| "\"?\"".into());
    format!("error code={} kind={} message={msg}", code(e), kind(e))
}
