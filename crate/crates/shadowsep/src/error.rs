//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("negative weight {w} at x = {x}")]
    NegativeWeight { x: f64, w: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("breakpoints not strictly increasing near index {index}")]
    NotSorted { index: usize },

    #[error("negative scale factor {0}")]
    NegativeScale(f64),

    #[error("mass mismatch: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    #[error("not dominated atomwise: {detail}")]
    NotPositiveOrder { detail: String },

    #[error("not in convex order: {detail}")]
    NotConvexOrder { detail: String },

    #[error("nonconvex function: slope drops by {drop:.3e} at x = {x}")]
    NonConvex { x: f64, drop: f64 },

    #[error("tail slopes invalid: left {left}, right {right}")]
    BadTails { left: f64, right: f64 },

    #[error("potential inconsistent with its asymptote: gap {gap:.3e} at {side} end")]
    InconsistentPotential { side: &'static str, gap: f64 },

    #[error("shadow infeasible: {check} off by {gap:.3e}")]
    ShadowInfeasible { check: &'static str, gap: f64 },

    #[error("lp solve failed: {0}")]
    Lp(String),

    #[error("atom at {x} outside the hull [{lo}, {hi}] of the target set")]
    OutsideHull { x: f64, lo: f64, hi: f64 },

    #[error("closed sets not nested at stage {stage}")]
    NotNested { stage: usize },

    #[error("invalid closed set: {0}")]
    BadSet(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("surface invariant violated: {0}")]
    Surface(String),

    #[error("coupling invalid: {0}")]
    Coupling(String),

    #[error("simulation: {0}")]
    Sim(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Wraps an error with the index of the pipeline stage it occurred in.
    pub fn at_stage(self, stage: usize) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
