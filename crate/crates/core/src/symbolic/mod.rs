//! Expression trees for candidate invariants.
//!
//! Expressions are immutable trees over indexed state variables. The
//! interchange format is prefix (Polish) notation with space-separated tokens,
//! e.g. `add mul x x mul v v` for `x*x + v*v`.

mod diff;
mod equiv;
mod eval;
mod expr;
mod grammar;
mod prefix;
mod simplify;

pub use diff::{derivative, grad_symbolic};
pub use equiv::{equivalent_affine, AFFINE_TOLERANCE, MIN_PROBE_POINTS};
pub use eval::{evaluate, evaluate_gradient};
pub use expr::{BinaryOp, Expr, UnaryOp};
pub use grammar::{sample_expr, sample_expr_with, Grammar, KindWeights};
pub use prefix::{parse_prefix, parse_str, to_prefix, TokenSeq};
pub use simplify::{complexity, simplify};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("token sequence ended inside an unfinished subtree")]
    IncompleteExpression,
    #[error("{0} token(s) left over after a complete expression")]
    TrailingTokens(usize),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("evaluation produced a non-finite value")]
    NonFinite,
    #[error("point has dimension {got}, expression needs at least {needed}")]
    DimensionMismatch { needed: usize, got: usize },
    #[error("reference expression is constant over the probe")]
    DegenerateProbe,
    #[error("probe has {got} points, at least {needed} required")]
    ProbeTooSmall { needed: usize, got: usize },
    #[error("every one of {0} sampling attempts exceeded the grammar caps")]
    ResampleExhausted(usize),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
}
