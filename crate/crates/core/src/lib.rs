//! Programming-by-example synthesis over precomputed tree automata.
//!
//! The offline phase ([`build_offline_fta`], [`build_oracle`], [`build_final_index`])
//! models a DSL's abstract semantics over every abstract input once. The online
//! phase slices that automaton for one example ([`slice`]) and searches the slice
//! under concrete semantics ([`concretize_and_search`]).

pub mod bitvec;
pub mod codec;
pub mod domain;
pub mod fta;
pub mod grammar;
pub mod harness;
pub mod oracle;
pub mod search;
pub mod slice;
pub mod string;
pub mod testing;

use std::fmt;

pub use bitvec::{BitVecDomain, BitVecValue, LowBits};
pub use codec::FormatError;
pub use domain::{abstract_input, check_transformer_soundness, AbstractInput, Atomic, CoverageError, Domain};
pub use fta::{build_offline_fta, build_online_fta, BuildError, BuildLimits, Fta, FtaKind, State, StateId, Transition};
pub use grammar::{
    count_programs, enumerate_programs, eval_abstract, eval_concrete, unroll, validate_grammar, Diagnostic,
    EvalError, Example, Grammar, GrammarFile, Literal, ProdId, Production, ProductionKind, Program, SymbolId, VarId,
};
pub use oracle::{build_final_index, build_oracle, FinalIndex, Oracle, OracleError};
pub use search::{concretize_and_search, enumerate_accepting_runs, SearchBudget, SearchOutcome, SearchStatus};
pub use slice::{slice, slice_from_scratch, slice_no_oracle, Slice, SliceError, SliceMetrics, SliceMode};
pub use string::{StrAbs, StrValue, StringDomain};

/// SHA-256 content hash used to chain artifacts (grammar, FTA, oracle).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Fingerprint(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
