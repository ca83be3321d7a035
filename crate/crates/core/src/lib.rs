//! Exact-arithmetic Bernoulli factory: turn a stream of Bernoulli(p) bits
//! (p unknown) into Bernoulli(f(p)) bits for a known factory function f,
//! using cascading Bernstein-polynomial envelopes and integer count tables.

pub mod engine;
pub mod functions;
pub mod numerics;
pub mod oracle;
pub mod planfile;
pub mod planner;
pub mod tables;

pub use engine::{
    run_factory, sample_many, uniform_threshold, von_neumann, AuxRandom, BitSource,
    FactoryOutcome, Outcome, RunLimits, SampleSummary, SimulatedSource, StreamSource, VecSource,
};
pub use functions::{FhVariant, Func, FuncError, Shape};
pub use numerics::{BoundPair, Int, NumericsError, Rat};
pub use oracle::{
    exact_outcome_probs, expected_bits, path_enumeration_probs, OracleError, OutcomeTriple,
};
pub use planfile::{FuncSpec, PlanFile, PlanFileError, RatSpec};
pub use planner::{
    build_explicit_plan, build_plan, choose_checkpoint, next_elbow, preface_plan, CascadePlan,
    DescentCurve, PlannerError, Schedule, VerifyPolicy,
};
pub use tables::{
    bernstein_eval, build_count_table, verify_envelope, CountTable, EnvelopePair, TableError,
    VerificationReport, VerifyMode,
};
