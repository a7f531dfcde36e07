//! The reachability oracle: for every offline-FTA state, a DNF over partial
//! abstract inputs under which an input-consistent run reaches it, and the
//! index M from full abstract inputs to the final states they can reach.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::{check_domain, fta_fingerprint, write_domain, FormatError, Reader, Writer, ORACLE_MAGIC};
use crate::domain::{AbstractInput, Domain};
use crate::fta::{step_odometer, Fta, FtaKind, StateId};
use crate::grammar::{Grammar, ProductionKind, VarId};
use crate::Fingerprint;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle requires an offline FTA, got {0:?}")]
    NotOffline(FtaKind),
    #[error("clause budget of {limit} exceeded at state {state}")]
    Budget { limit: usize, state: u32 },
    #[error("unknown state {0}")]
    UnknownState(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Oracle<A> {
    fta_fingerprint: Fingerprint,
    clauses: Vec<Vec<AbstractInput<A>>>,
}

/// Removes duplicates and disjuncts subsumed by a weaker one, then sorts.
pub fn reduce<A: Clone + Eq + Ord>(mut ds: Vec<AbstractInput<A>>) -> Vec<AbstractInput<A>> {
    ds.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    ds.dedup();
    let mut kept: Vec<AbstractInput<A>> = Vec::with_capacity(ds.len());
    for d in ds {
        if !kept.iter().any(|k| k.is_subset_of(&d)) {
            kept.push(d);
        }
    }
    kept.sort();
    kept
}

impl<A: Clone + Eq + Ord> Oracle<A> {
    pub fn fta_fingerprint(&self) -> Fingerprint {
        self.fta_fingerprint
    }

    pub fn num_states(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self, q: StateId) -> Result<&[AbstractInput<A>], OracleError> {
        self.clauses
            .get(q.index())
            .map(Vec::as_slice)
            .ok_or(OracleError::UnknownState(q.0))
    }

    pub fn total_clauses(&self) -> usize {
        self.clauses.iter().map(Vec::len).sum()
    }

    /// α(e_in) ⊨ O(q): some disjunct agrees with the full input `gamma`.
    pub fn input_consistent(&self, q: StateId, gamma: &[A]) -> Result<bool, OracleError> {
        Ok(self.clauses(q)?.iter().any(|d| d.satisfied_by(gamma)))
    }
}

/// Builds the oracle bottom-up over the FTA's topological order.
///
/// Per incoming transition: a variable transition gives `{x ↦ a}`, a constant
/// the empty disjunct, and an operator the left-to-right cross-product merge
/// of its arguments' clause sets (conflicting merges dropped). Every clause
/// set is subsumption-reduced. `max_clauses` bounds any one state's set.
pub fn build_oracle<D: Domain>(
    fta: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    max_clauses: usize,
) -> Result<Oracle<D::Abs>, OracleError> {
    if fta.kind() != FtaKind::Offline {
        return Err(OracleError::NotOffline(fta.kind()));
    }
    let mut clauses: Vec<Vec<AbstractInput<D::Abs>>> = vec![Vec::new(); fta.num_states()];
    for q in fta.topological_order() {
        let mut acc_state = Vec::new();
        for t in fta.incoming(q) {
            match g.production(t.prod).kind {
                ProductionKind::Variable(x) => {
                    acc_state.push(AbstractInput::singleton(x, fta.state(q).value.clone()));
                }
                ProductionKind::Constant => acc_state.push(AbstractInput::empty()),
                ProductionKind::Operator => {
                    let mut acc = vec![AbstractInput::empty()];
                    for a in &t.args {
                        let mut next = Vec::new();
                        for d in &acc {
                            for c in &clauses[a.index()] {
                                if let Some(m) = d.merge(c) {
                                    next.push(m);
                                }
                            }
                        }
                        acc = reduce(next);
                        if acc.len() > max_clauses {
                            return Err(OracleError::Budget {
                                limit: max_clauses,
                                state: q.0,
                            });
                        }
                        if acc.is_empty() {
                            break;
                        }
                    }
                    acc_state.extend(acc);
                }
            }
        }
        let reduced = reduce(acc_state);
        if reduced.len() > max_clauses {
            return Err(OracleError::Budget {
                limit: max_clauses,
                state: q.0,
            });
        }
        clauses[q.index()] = reduced;
    }
    Ok(Oracle {
        fta_fingerprint: fta_fingerprint(fta, g.fingerprint(), domain),
        clauses,
    })
}

pub const DEFAULT_FINAL_INDEX_CAP: usize = 1_000_000;
pub const DEFAULT_MAX_CLAUSES: usize = 1_000_000;

/// M: full abstract input ↦ input-consistent final states. Materialized when
/// the input-space product is at most the cap, answered per query otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinalIndex<A> {
    Eager(BTreeMap<Vec<A>, Vec<StateId>>),
    Lazy { finals: Vec<StateId> },
}

impl<A: Clone + Eq + Ord> FinalIndex<A> {
    pub fn lookup(&self, oracle: &Oracle<A>, gamma: &[A]) -> Vec<StateId> {
        match self {
            FinalIndex::Eager(m) => m.get(gamma).cloned().unwrap_or_default(),
            FinalIndex::Lazy { finals } => finals
                .iter()
                .copied()
                .filter(|&q| oracle.input_consistent(q, gamma).unwrap_or(false))
                .collect(),
        }
    }

    pub fn is_eager(&self) -> bool {
        matches!(self, FinalIndex::Eager(_))
    }

    /// Number of materialized entries (zero when lazy).
    pub fn len(&self) -> usize {
        match self {
            FinalIndex::Eager(m) => m.len(),
            FinalIndex::Lazy { .. } => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All full abstract inputs, variables' input spaces crossed in order.
pub fn input_space_product<D: Domain>(g: &Grammar, domain: &D) -> Vec<Vec<D::Abs>> {
    let spaces: Vec<Vec<D::Abs>> = (0..g.num_variables()).map(|i| domain.input_space(VarId(i as u32))).collect();
    if spaces.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let lens: Vec<usize> = spaces.iter().map(Vec::len).collect();
    let mut odo = vec![0; spaces.len()];
    let mut out = Vec::new();
    loop {
        out.push(odo.iter().zip(&spaces).map(|(&i, s)| s[i].clone()).collect());
        if !step_odometer(&mut odo, &lens) {
            return out;
        }
    }
}

pub fn input_space_size<D: Domain>(g: &Grammar, domain: &D) -> usize {
    (0..g.num_variables())
        .map(|i| domain.input_space(VarId(i as u32)).len())
        .fold(1usize, |acc, n| acc.saturating_mul(n))
}

pub fn build_final_index<D: Domain>(
    fta: &Fta<D::Abs>,
    oracle: &Oracle<D::Abs>,
    g: &Grammar,
    domain: &D,
    cap: usize,
) -> FinalIndex<D::Abs> {
    let finals: Vec<StateId> = fta.finals().iter().copied().collect();
    if input_space_size(g, domain) > cap {
        return FinalIndex::Lazy { finals };
    }
    let mut m = BTreeMap::new();
    for gamma in input_space_product(g, domain) {
        let hits = finals
            .iter()
            .copied()
            .filter(|&q| oracle.input_consistent(q, &gamma).unwrap_or(false))
            .collect();
        m.insert(gamma, hits);
    }
    FinalIndex::Eager(m)
}

/// Serializes the oracle and its final index. Disjuncts are already sorted.
pub fn write_oracle<D: Domain>(oracle: &Oracle<D::Abs>, index: &FinalIndex<D::Abs>, domain: &D) -> Vec<u8> {
    let mut w = Writer::new(ORACLE_MAGIC);
    w.raw(&oracle.fta_fingerprint.0);
    write_domain(&mut w, domain);
    w.len(oracle.clauses.len());
    for (q, cs) in oracle.clauses.iter().enumerate() {
        w.len(q);
        w.len(cs.len());
        for d in cs {
            w.len(d.len());
            for (v, a) in d.bindings() {
                w.u32(v.0);
                w.bytes(&domain.encode_abs(a));
            }
        }
    }
    match index {
        FinalIndex::Eager(m) => {
            w.u8(1);
            w.len(m.len());
            for (gamma, qs) in m {
                w.len(gamma.len());
                for a in gamma {
                    w.bytes(&domain.encode_abs(a));
                }
                w.len(qs.len());
                for q in qs {
                    w.u32(q.0);
                }
            }
        }
        FinalIndex::Lazy { finals } => {
            w.u8(0);
            w.len(finals.len());
            for q in finals {
                w.u32(q.0);
            }
        }
    }
    w.seal()
}

/// Loads an oracle, refusing one built for a different FTA.
pub fn read_oracle<D: Domain>(
    bytes: &[u8],
    domain: &D,
    expected_fta: Fingerprint,
) -> Result<(Oracle<D::Abs>, FinalIndex<D::Abs>), FormatError> {
    let mut r = Reader::open(bytes, ORACLE_MAGIC, "oracle")?;
    let found = r.fingerprint()?;
    if found != expected_fta {
        return Err(FormatError::FingerprintMismatch {
            expected: expected_fta,
            found,
        });
    }
    check_domain(&mut r, domain)?;
    let decode = |b: &[u8]| {
        domain
            .decode_abs(b)
            .ok_or_else(|| FormatError::Malformed("undecodable abstract value".into()))
    };
    let n = r.count()?;
    let mut clauses = Vec::with_capacity(n);
    for i in 0..n {
        if r.u32()? as usize != i {
            return Err(FormatError::Malformed(format!("clause table entry {i} out of sequence")));
        }
        let m = r.count()?;
        let mut cs = Vec::with_capacity(m);
        for _ in 0..m {
            let b = r.count()?;
            let mut pairs = Vec::with_capacity(b);
            for _ in 0..b {
                let v = VarId(r.u32()?);
                pairs.push((v, decode(r.bytes()?)?));
            }
            let d = AbstractInput::from_pairs(pairs)
                .ok_or_else(|| FormatError::Malformed("disjunct binds a variable twice".into()))?;
            cs.push(d);
        }
        clauses.push(cs);
    }
    let state = |id: u32| -> Result<StateId, FormatError> {
        if (id as usize) < n {
            Ok(StateId(id))
        } else {
            Err(FormatError::Malformed(format!("unknown state id {id}")))
        }
    };
    let index = match r.u8()? {
        1 => {
            let entries = r.count()?;
            let mut m = BTreeMap::new();
            for _ in 0..entries {
                let vars = r.count()?;
                let gamma = (0..vars).map(|_| decode(r.bytes()?)).collect::<Result<Vec<_>, _>>()?;
                let k = r.count()?;
                let qs = (0..k).map(|_| state(r.u32()?)).collect::<Result<Vec<_>, _>>()?;
                m.insert(gamma, qs);
            }
            FinalIndex::Eager(m)
        }
        0 => {
            let k = r.count()?;
            let finals = (0..k).map(|_| state(r.u32()?)).collect::<Result<Vec<_>, _>>()?;
            FinalIndex::Lazy { finals }
        }
        other => return Err(FormatError::Malformed(format!("unknown final-index mode {other}"))),
    };
    r.finish()?;
    Ok((
        Oracle {
            fta_fingerprint: found,
            clauses,
        },
        index,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::{BitVecDomain, LowBits};
    use crate::fta::{build_offline_fta, BuildLimits};
    use crate::testing::bitvec_s2_grammar;

    fn setup() -> (Grammar, BitVecDomain, Fta<LowBits>, Oracle<LowBits>) {
        let g = bitvec_s2_grammar();
        let d = BitVecDomain::new(4, 2);
        let fta = build_offline_fta(&g, &d, BuildLimits::default()).unwrap();
        let o = build_oracle(&fta, &g, &d, DEFAULT_MAX_CLAUSES).unwrap();
        (g, d, fta, o)
    }

    fn entry(g: &Grammar, d: &BitVecDomain, fta: &Fta<LowBits>, o: &Oracle<LowBits>, sym: &str, low: u64) -> Vec<String> {
        let q = fta.lookup(g.symbol(sym).unwrap(), &d.abs(low)).unwrap();
        o.clauses(q)
            .unwrap()
            .iter()
            .map(|c| {
                c.bindings()
                    .iter()
                    .map(|(v, a)| format!("{}↦{a}", g.variables()[v.index()].name))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    }

    #[test]
    fn worked_example_entries() {
        let (g, d, fta, o) = setup();
        assert_eq!(entry(&g, &d, &fta, &o, "t1", 0b01), ["x↦?00", "x↦?11"]);
        assert_eq!(entry(&g, &d, &fta, &o, "t1", 0b11), ["x↦?01", "x↦?10"]);
        assert_eq!(entry(&g, &d, &fta, &o, "t0", 0b10), ["x↦?10"]);
        for low in 0..4 {
            assert_eq!(entry(&g, &d, &fta, &o, "t0", low), [format!("x↦{}", d.abs(low))]);
        }
    }

    #[test]
    fn consistency_queries() {
        let (g, d, fta, o) = setup();
        let t1 = g.symbol("t1").unwrap();
        let gamma = [d.abs(0b01)];
        assert!(!o.input_consistent(fta.lookup(t1, &d.abs(0b01)).unwrap(), &gamma).unwrap());
        assert!(o.input_consistent(fta.lookup(t1, &d.abs(0b11)).unwrap(), &gamma).unwrap());
        assert_eq!(o.input_consistent(StateId(999), &gamma), Err(OracleError::UnknownState(999)));
        let index = build_final_index(&fta, &o, &g, &d, DEFAULT_FINAL_INDEX_CAP);
        let q = fta.lookup(g.start(), &d.abs(0b10)).unwrap();
        assert!(index.lookup(&o, &gamma).contains(&q));
        assert_eq!(index.len(), 4);
        let lazy = build_final_index(&fta, &o, &g, &d, 1);
        assert!(!lazy.is_eager());
        for gamma in input_space_product(&g, &d) {
            assert_eq!(lazy.lookup(&o, &gamma), index.lookup(&o, &gamma));
        }
    }

    #[test]
    fn reduction_drops_subsumed() {
        let x = VarId(0);
        let y = VarId(1);
        let a = AbstractInput::from_pairs([(x, 1u8)]).unwrap();
        let ab = AbstractInput::from_pairs([(x, 1u8), (y, 2)]).unwrap();
        let b = AbstractInput::from_pairs([(y, 3u8)]).unwrap();
        assert_eq!(reduce(vec![ab.clone(), a.clone(), b.clone(), a.clone()]), vec![a.clone(), b]);
        assert_eq!(reduce(vec![ab, AbstractInput::empty(), a]), vec![AbstractInput::empty()]);
    }

    #[test]
    fn serialization() {
        let (g, d, fta, o) = setup();
        let index = build_final_index(&fta, &o, &g, &d, DEFAULT_FINAL_INDEX_CAP);
        let bytes = write_oracle(&o, &index, &d);
        let (o2, i2) = read_oracle(&bytes, &d, o.fta_fingerprint()).unwrap();
        assert_eq!((&o2, &i2), (&o, &index));
        assert_eq!(write_oracle(&o2, &i2, &d), bytes);
        let other = build_offline_fta(&g, &BitVecDomain::new(4, 3), BuildLimits::default()).unwrap();
        let other_fp = fta_fingerprint(&other, g.fingerprint(), &BitVecDomain::new(4, 3));
        assert!(matches!(
            read_oracle(&bytes, &d, other_fp),
            Err(FormatError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn empty_oracle() {
        let g = bitvec_s2_grammar();
        let d = BitVecDomain::new(4, 1);
        let fta = Fta::new(FtaKind::Offline);
        let o = build_oracle(&fta, &g, &d, 10).unwrap();
        let index = build_final_index(&fta, &o, &g, &d, 10);
        assert!(index.lookup(&o, &[d.abs(1)]).is_empty());
        let bytes = write_oracle(&o, &index, &d);
        assert_eq!(read_oracle(&bytes, &d, o.fta_fingerprint()).unwrap().0, o);
    }

    #[test]
    fn online_automata_are_refused() {
        let g = bitvec_s2_grammar();
        let d = BitVecDomain::new(4, 1);
        let fta = crate::fta::build_online_fta(&g, &d, &crate::testing::e1(), BuildLimits::default()).unwrap();
        assert_eq!(build_oracle(&fta, &g, &d, 10), Err(OracleError::NotOffline(FtaKind::Online)));
    }
}
