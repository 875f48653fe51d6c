//! Boundary to formal tools: assertion extraction and lint, port scanning,
//! and prover backends.

pub mod lexer;
pub mod prover;
pub mod sva;

pub use prover::{
    parse_prover_log, prove, AssertionStatus, AssertionVerdict, CexStep, CexTrace, CoverStatus,
    CoverVerdict, MockProver, ProverBackend, ProverError, ProverResult, RtlSource,
    SubprocessProver,
};
pub use sva::{
    extract_port_list, extract_sva_blocks, lint_sva, render_blocks, split_blocks, Diagnostic,
    LintCode, LintReport, SvaBlock, SvaKind,
};
