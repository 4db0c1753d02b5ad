use std::io;

use ck_core::autotune::{AutotuneError, SpaceError};
use ck_core::envdetect::DetectError;
use ck_core::metapkg::{InstallError, ResolveError};
use ck_core::pipeline::PipelineError;
use ck_core::registry::RegistryError;
use ck_core::solution::SolutionError;
use serde_json::{Map, Value};

pub const CODE_DOMAIN: i32 = 1;
pub const CODE_USAGE: i32 = 2;
pub const CODE_IO: i32 = 3;

/// A failed command: envelope code, message and extra payload.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub payload: Map<String, Value>,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> CliError {
        CliError {
            code,
            message: message.into(),
            payload: Map::new(),
        }
    }

    pub fn usage(message: impl Into<String>) -> CliError {
        CliError::new(CODE_USAGE, message)
    }

    pub fn with(mut self, key: &str, value: Value) -> CliError {
        self.payload.insert(key.into(), value);
        self
    }
}

fn registry_code(e: &RegistryError) -> i32 {
    match e {
        RegistryError::Io { .. } => CODE_IO,
        _ => CODE_DOMAIN,
    }
}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Io { .. } => CODE_IO,
        PipelineError::Registry(r) => registry_code(r),
        _ => CODE_DOMAIN,
    }
}

fn install_code(e: &InstallError) -> i32 {
    match e {
        InstallError::Io { .. } => CODE_IO,
        InstallError::Registry(r) => registry_code(r),
        _ => CODE_DOMAIN,
    }
}

fn autotune_code(e: &AutotuneError) -> i32 {
    match e {
        AutotuneError::Pipeline(p) => pipeline_code(p),
        AutotuneError::Registry(r) => registry_code(r),
        _ => CODE_DOMAIN,
    }
}

macro_rules! from_error {
    ($t:ty, $code:expr) => {
        impl From<$t> for CliError {
            fn from(e: $t) -> CliError {
                let code: fn(&$t) -> i32 = $code;
                CliError::new(code(&e), e.to_string())
            }
        }
    };
}

from_error!(RegistryError, registry_code);
from_error!(PipelineError, pipeline_code);
from_error!(InstallError, install_code);
from_error!(AutotuneError, autotune_code);
from_error!(ResolveError, |_| CODE_DOMAIN);
from_error!(SpaceError, |_| CODE_DOMAIN);
from_error!(io::Error, |_| CODE_IO);
from_error!(DetectError, |e| match e {
    DetectError::Registry(r) => registry_code(r),
    DetectError::UnsupportedDialect(_) => CODE_USAGE,
    _ => CODE_DOMAIN,
});
from_error!(SolutionError, |e| match e {
    SolutionError::Io { .. } => CODE_IO,
    SolutionError::Autotune(a) => autotune_code(a),
    SolutionError::Pipeline(p) => pipeline_code(p),
    SolutionError::Install(i) => install_code(i),
    SolutionError::Registry(r) => registry_code(r),
    _ => CODE_DOMAIN,
});
