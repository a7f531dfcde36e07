//! Example-specific slices of the offline FTA, plus the two ablations used to
//! measure what the oracle saves.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{abstract_input, examples_to_json, CoverageError, Domain};
use crate::fta::{build_online_fta, BuildError, BuildLimits, Fta, FtaKind, StateId, Transition};
use crate::grammar::{Example, Grammar, ProductionKind};
use crate::oracle::{FinalIndex, Oracle, OracleError};
use crate::Fingerprint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SliceMetrics {
    pub states_visited: u64,
    pub states_admitted: u64,
    pub transitions_admitted: u64,
    pub oracle_queries: u64,
    /// Largest state count held at once while building.
    pub peak_states: u64,
    pub peak_transitions: u64,
    pub wall_micros: u64,
}

impl SliceMetrics {
    /// The `--emit-slice` sidecar.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "statesVisited": self.states_visited,
            "statesAdmitted": self.states_admitted,
            "transitionsAdmitted": self.transitions_admitted,
            "oracleQueries": self.oracle_queries,
            "wallMicros": self.wall_micros,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Slice<A> {
    pub fta: Fta<A>,
    /// Fingerprint of the automaton it was cut from; the grammar's for
    /// from-scratch slices.
    pub source: Fingerprint,
    pub example_digest: Fingerprint,
    pub metrics: SliceMetrics,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SliceError {
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("slicing needs an offline FTA, got {0:?}")]
    NotOffline(FtaKind),
    #[error("oracle covers {oracle} states but the FTA has {fta}")]
    OracleMismatch { oracle: usize, fta: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceMode {
    Oracle,
    NoOracle,
    NoPresyn,
}

impl SliceMode {
    pub const ALL: [SliceMode; 3] = [SliceMode::Oracle, SliceMode::NoOracle, SliceMode::NoPresyn];

    pub fn name(self) -> &'static str {
        match self {
            SliceMode::Oracle => "oracle",
            SliceMode::NoOracle => "no-oracle",
            SliceMode::NoPresyn => "no-presyn",
        }
    }
}

impl fmt::Display for SliceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SliceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SliceMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected oracle, no-oracle or no-presyn)"))
    }
}

/// SHA-256 of the example's JSON form.
pub fn example_digest<D: Domain>(domain: &D, g: &Grammar, e: &Example<D::Value>) -> Fingerprint {
    let json = examples_to_json(domain, g, std::slice::from_ref(e));
    let bytes = serde_json::to_vec(&json).expect("examples serialize");
    Fingerprint(Sha256::digest(&bytes).into())
}

fn check_offline<A: Clone + Eq + std::hash::Hash + Ord>(a: &Fta<A>) -> Result<(), SliceError> {
    if a.kind() != FtaKind::Offline {
        return Err(SliceError::NotOffline(a.kind()));
    }
    Ok(())
}

/// Top-down traversal shared by the oracle slicer and the second pass of the
/// no-oracle slicer. `consistent` answers the Transition rule's query.
///
/// A state counts as visited when it is drawn from the final index or
/// admitted; argument states rejected by `consistent` are queries, not visits.
struct Traversal<'a, A> {
    src: &'a Fta<A>,
    admitted: Vec<StateId>,
    admitted_set: HashSet<StateId>,
    kept: Vec<Transition>,
    touched: HashSet<StateId>,
}

impl<'a, A: Clone + Eq + std::hash::Hash + Ord> Traversal<'a, A> {
    fn run(
        src: &'a Fta<A>,
        g: &Grammar,
        gamma: &[A],
        candidates: &[StateId],
        roots: Vec<StateId>,
        mut consistent: impl FnMut(StateId) -> Result<bool, SliceError>,
    ) -> Result<Self, SliceError> {
        let mut tr = Traversal {
            src,
            admitted: Vec::new(),
            admitted_set: HashSet::new(),
            kept: Vec::new(),
            touched: HashSet::new(),
        };
        tr.touched.extend(candidates.iter().copied());
        let mut queue = VecDeque::new();
        for q in roots {
            if tr.admitted_set.insert(q) {
                tr.admitted.push(q);
                queue.push_back(q);
            }
        }
        while let Some(q) = queue.pop_front() {
            for t in src.incoming(q) {
                match g.production(t.prod).kind {
                    ProductionKind::Variable(x) => {
                        if src.state(q).value == gamma[x.index()] {
                            tr.kept.push(t.clone());
                        }
                    }
                    ProductionKind::Constant => tr.kept.push(t.clone()),
                    ProductionKind::Operator => {
                        let mut ok = true;
                        for &a in &t.args {
                            if !consistent(a)? {
                                ok = false;
                                break;
                            }
                        }
                        if !ok {
                            continue;
                        }
                        tr.kept.push(t.clone());
                        for &a in &t.args {
                            if tr.admitted_set.insert(a) {
                                tr.touched.insert(a);
                                tr.admitted.push(a);
                                queue.push_back(a);
                            }
                        }
                    }
                }
            }
        }
        Ok(tr)
    }

    fn into_fta(self, finals: &[StateId], encode: impl Fn(&A) -> Vec<u8>) -> Fta<A> {
        let mut out = Fta::new(FtaKind::Slice);
        let mut remap = HashMap::new();
        for &q in &self.admitted {
            let st = self.src.state(q);
            remap.insert(q, out.intern(st.symbol, st.value.clone()).0);
        }
        for t in &self.kept {
            out.add_transition(Transition {
                prod: t.prod,
                args: t.args.iter().map(|a| remap[a]).collect(),
                result: remap[&t.result],
            });
        }
        for q in finals {
            out.add_final(remap[q]);
        }
        out.trimmed().canonical(encode)
    }
}

fn output_candidates<D: Domain>(
    a: &Fta<D::Abs>,
    domain: &D,
    e: &Example<D::Value>,
    from: impl IntoIterator<Item = StateId>,
) -> Vec<StateId> {
    from.into_iter()
        .filter(|&q| domain.gamma_contains(&a.state(q).value, &e.output, &e.inputs))
        .collect()
}

/// Oracle-guided slicing: the Output rule seeds from `index` filtered by
/// γ ∋ e_out, the Transition rule admits a transition only when every
/// argument is input-consistent, the Input rule keeps variable transitions
/// labelled α(e_in). A final trim drops states left without derivations.
pub fn slice<D: Domain>(
    a: &Fta<D::Abs>,
    oracle: &Oracle<D::Abs>,
    index: &FinalIndex<D::Abs>,
    g: &Grammar,
    domain: &D,
    e: &Example<D::Value>,
) -> Result<Slice<D::Abs>, SliceError> {
    let start = Instant::now();
    check_offline(a)?;
    if oracle.num_states() != a.num_states() {
        return Err(SliceError::OracleMismatch {
            oracle: oracle.num_states(),
            fta: a.num_states(),
        });
    }
    let gamma = abstract_input(domain, g, &e.inputs)?;
    let mut queries = 0u64;
    if !index.is_eager() {
        queries += a.finals().len() as u64;
    }
    let candidates = index.lookup(oracle, &gamma);
    let roots = output_candidates(a, domain, e, candidates.iter().copied());
    let mut memo: HashMap<StateId, bool> = HashMap::new();
    let tr = Traversal::run(a, g, &gamma, &candidates, roots.clone(), |q| {
        if let Some(&b) = memo.get(&q) {
            return Ok(b);
        }
        queries += 1;
        let b = oracle.input_consistent(q, &gamma)?;
        memo.insert(q, b);
        Ok(b)
    })?;
    let metrics = SliceMetrics {
        states_visited: tr.touched.len() as u64,
        states_admitted: tr.admitted.len() as u64,
        transitions_admitted: tr.kept.len() as u64,
        oracle_queries: queries,
        peak_states: tr.admitted.len() as u64,
        peak_transitions: tr.kept.len() as u64,
        wall_micros: 0,
    };
    let fta = tr.into_fta(&roots, |v| domain.encode_abs(v));
    Ok(Slice {
        fta,
        source: oracle.fta_fingerprint(),
        example_digest: example_digest(domain, g, e),
        metrics: SliceMetrics {
            wall_micros: start.elapsed().as_micros() as u64,
            ..metrics
        },
    })
}

/// Two-pass slicing without the oracle: pass 1 marks every state reachable
/// bottom-up from α(e_in), pass 2 walks down from the consistent finals
/// using the marks in place of oracle queries.
pub fn slice_no_oracle<D: Domain>(
    a: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    e: &Example<D::Value>,
    source: Fingerprint,
) -> Result<Slice<D::Abs>, SliceError> {
    let start = Instant::now();
    check_offline(a)?;
    let gamma = abstract_input(domain, g, &e.inputs)?;
    let mut marked = vec![false; a.num_states()];
    let mut n_marked = 0usize;
    let mut fired = 0usize;
    let mut queue = VecDeque::new();
    for t in a.transitions() {
        if !t.args.is_empty() {
            continue;
        }
        let seed = match g.production(t.prod).kind {
            ProductionKind::Variable(x) => a.state(t.result).value == gamma[x.index()],
            _ => true,
        };
        if seed {
            fired += 1;
            if !marked[t.result.index()] {
                marked[t.result.index()] = true;
                n_marked += 1;
                queue.push_back(t.result);
            }
        }
    }
    let mut seen_t: HashSet<&Transition> = HashSet::new();
    while let Some(q) = queue.pop_front() {
        for t in a.outgoing(q) {
            if !t.args.iter().all(|x| marked[x.index()]) || !seen_t.insert(t) {
                continue;
            }
            fired += 1;
            if !marked[t.result.index()] {
                marked[t.result.index()] = true;
                n_marked += 1;
                queue.push_back(t.result);
            }
        }
    }
    let candidates: Vec<StateId> = a.finals().iter().copied().filter(|q| marked[q.index()]).collect();
    let roots = output_candidates(a, domain, e, candidates.iter().copied());
    let tr = Traversal::run(a, g, &gamma, &candidates, roots.clone(), |q| Ok(marked[q.index()]))?;
    let metrics = SliceMetrics {
        states_visited: (n_marked + tr.touched.len()) as u64,
        states_admitted: tr.admitted.len() as u64,
        transitions_admitted: tr.kept.len() as u64,
        oracle_queries: 0,
        peak_states: n_marked.max(tr.admitted.len()) as u64,
        peak_transitions: fired.max(tr.kept.len()) as u64,
        wall_micros: 0,
    };
    let fta = tr.into_fta(&roots, |v| domain.encode_abs(v));
    Ok(Slice {
        fta,
        source,
        example_digest: example_digest(domain, g, e),
        metrics: SliceMetrics {
            wall_micros: start.elapsed().as_micros() as u64,
            ..metrics
        },
    })
}

/// Builds the online FTA for `e` directly from the grammar and trims it.
pub fn slice_from_scratch<D: Domain>(
    g: &Grammar,
    domain: &D,
    e: &Example<D::Value>,
    limits: BuildLimits,
) -> Result<Slice<D::Abs>, SliceError> {
    let start = Instant::now();
    let online = build_online_fta(g, domain, e, limits)?;
    let (n, m) = (online.num_states() as u64, online.num_transitions() as u64);
    let mut fta = online.trimmed();
    fta.set_kind(FtaKind::Slice);
    let fta = fta.canonical(|v| domain.encode_abs(v));
    Ok(Slice {
        fta,
        source: g.fingerprint(),
        example_digest: example_digest(domain, g, e),
        metrics: SliceMetrics {
            states_visited: n,
            states_admitted: n,
            transitions_admitted: m,
            oracle_queries: 0,
            peak_states: n,
            peak_transitions: m,
            wall_micros: start.elapsed().as_micros() as u64,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::{BitVecDomain, BitVecValue, LowBits};
    use crate::fta::build_offline_fta;
    use crate::oracle::{build_final_index, build_oracle, DEFAULT_FINAL_INDEX_CAP, DEFAULT_MAX_CLAUSES};
    use crate::testing::{bitvec_s2_grammar, e1, single_var_grammar};

    struct Bundle {
        g: Grammar,
        d: BitVecDomain,
        fta: Fta<LowBits>,
        oracle: Oracle<LowBits>,
        index: FinalIndex<LowBits>,
    }

    fn bundle(g: Grammar, k: u8) -> Bundle {
        let d = BitVecDomain::new(4, k);
        let fta = build_offline_fta(&g, &d, BuildLimits::default()).unwrap();
        let oracle = build_oracle(&fta, &g, &d, DEFAULT_MAX_CLAUSES).unwrap();
        let index = build_final_index(&fta, &oracle, &g, &d, DEFAULT_FINAL_INDEX_CAP);
        Bundle { g, d, fta, oracle, index }
    }

    fn rendered(b: &Bundle, s: &Slice<LowBits>) -> Vec<String> {
        s.fta.language(100).unwrap().iter().map(|p| b.g.render(p)).collect()
    }

    fn all_three(b: &Bundle, e: &Example<BitVecValue>) -> [Slice<LowBits>; 3] {
        [
            slice(&b.fta, &b.oracle, &b.index, &b.g, &b.d, e).unwrap(),
            slice_no_oracle(&b.fta, &b.g, &b.d, e, b.oracle.fta_fingerprint()).unwrap(),
            slice_from_scratch(&b.g, &b.d, e, BuildLimits::default()).unwrap(),
        ]
    }

    #[test]
    fn worked_example_slice() {
        let b = bundle(bitvec_s2_grammar(), 2);
        let [s, n, f] = all_three(&b, &e1());
        let mut progs = rendered(&b, &s);
        progs.sort();
        assert_eq!(progs, ["(add (shl x 2) 2)", "(shl (add x 2) 1)"]);
        assert_eq!(rendered(&b, &n), rendered(&b, &s));
        assert_eq!(rendered(&b, &f), rendered(&b, &s));
        assert_eq!(s.fta, f.fta);
        let t1 = b.g.symbol("t1").unwrap();
        assert!(s.fta.lookup(t1, &b.d.abs(0b01)).is_none());
        assert!(n.metrics.states_visited >= s.metrics.states_visited);
        assert!(s.metrics.states_visited >= s.metrics.states_admitted);
        assert_eq!(s.fta.kind(), FtaKind::Slice);
    }

    #[test]
    fn unreachable_output_gives_empty_slice() {
        let b = bundle(bitvec_s2_grammar(), 2);
        // From low bits 10 every depth-2 program ends in 00, 01 or 10.
        let e = Example {
            inputs: vec![b.d.value(0b0010)],
            output: b.d.value(0b0011),
        };
        for s in all_three(&b, &e) {
            assert_eq!(s.fta.num_states(), 0);
            assert!(s.fta.finals().is_empty());
        }
    }

    #[test]
    fn trivial_grammar_agrees() {
        let b = bundle(single_var_grammar(), 2);
        let e = Example {
            inputs: vec![b.d.value(5)],
            output: b.d.value(9),
        };
        let [s, n, f] = all_three(&b, &e);
        assert_eq!(rendered(&b, &s), ["x"]);
        assert_eq!(s.fta, n.fta);
        assert_eq!(s.fta, f.fta);
    }

    #[test]
    fn lazy_index_slices_identically() {
        let b = bundle(bitvec_s2_grammar(), 2);
        let lazy = build_final_index(&b.fta, &b.oracle, &b.g, &b.d, 0);
        let eager = slice(&b.fta, &b.oracle, &b.index, &b.g, &b.d, &e1()).unwrap();
        let s = slice(&b.fta, &b.oracle, &lazy, &b.g, &b.d, &e1()).unwrap();
        assert_eq!(s.fta, eager.fta);
        assert!(s.metrics.oracle_queries > eager.metrics.oracle_queries);
    }

    #[test]
    fn modes_parse() {
        for m in SliceMode::ALL {
            assert_eq!(m.name().parse::<SliceMode>().unwrap(), m);
        }
        assert!("fast".parse::<SliceMode>().is_err());
        let j = SliceMetrics::default().sidecar_json();
        assert_eq!(j.as_object().unwrap().len(), 5);
    }
}
