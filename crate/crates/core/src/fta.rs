//! Bottom-up finite tree automata with interned states, plus the online
//! (per-example) and offline (all abstract inputs) constructions.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::hash::Hash;

use num_bigint::BigUint;
use thiserror::Error;

use crate::domain::{abstract_input, AbstractInput, CoverageError, Domain};
use crate::grammar::{join_diagnostics, Diagnostic, Example, Grammar, ProdId, ProductionKind, Program, SymbolId, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `q_s^v`: grammar symbol `s` carrying label `v` (abstract or concrete value).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State<L> {
    pub symbol: SymbolId,
    pub value: L,
}

/// `f(q₁, …, qₙ) → q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub prod: ProdId,
    pub args: Vec<StateId>,
    pub result: StateId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FtaKind {
    Online,
    Offline,
    Slice,
    Concrete,
}

impl FtaKind {
    pub fn code(self) -> u8 {
        match self {
            FtaKind::Online => 0,
            FtaKind::Offline => 1,
            FtaKind::Slice => 2,
            FtaKind::Concrete => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => FtaKind::Online,
            1 => FtaKind::Offline,
            2 => FtaKind::Slice,
            3 => FtaKind::Concrete,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Fta<L> {
    kind: FtaKind,
    states: Vec<State<L>>,
    index: HashMap<State<L>, StateId>,
    by_symbol: HashMap<SymbolId, Vec<StateId>>,
    transitions: Vec<Transition>,
    tset: HashSet<Transition>,
    incoming: Vec<Vec<u32>>,
    outgoing: Vec<Vec<u32>>,
    by_prod: HashMap<ProdId, Vec<u32>>,
    finals: BTreeSet<StateId>,
}

impl<L: PartialEq> PartialEq for Fta<L> {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.states == other.states
            && self.transitions == other.transitions
            && self.finals == other.finals
    }
}

impl<L: Clone + Eq + Hash + Ord> Fta<L> {
    pub fn new(kind: FtaKind) -> Self {
        Fta {
            kind,
            states: Vec::new(),
            index: HashMap::new(),
            by_symbol: HashMap::new(),
            transitions: Vec::new(),
            tset: HashSet::new(),
            incoming: Vec::new(),
            outgoing: Vec::new(),
            by_prod: HashMap::new(),
            finals: BTreeSet::new(),
        }
    }

    pub fn kind(&self) -> FtaKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: FtaKind) {
        self.kind = kind;
    }

    /// Interns `(symbol, value)`; the flag is true when the state is new.
    pub fn intern(&mut self, symbol: SymbolId, value: L) -> (StateId, bool) {
        let st = State { symbol, value };
        if let Some(&q) = self.index.get(&st) {
            return (q, false);
        }
        let q = StateId(self.states.len() as u32);
        self.index.insert(st.clone(), q);
        self.by_symbol.entry(symbol).or_default().push(q);
        self.states.push(st);
        self.incoming.push(Vec::new());
        self.outgoing.push(Vec::new());
        (q, true)
    }

    pub fn lookup(&self, symbol: SymbolId, value: &L) -> Option<StateId> {
        self.index
            .get(&State {
                symbol,
                value: value.clone(),
            })
            .copied()
    }

    /// Adds a transition unless an identical one exists; true when added.
    pub fn add_transition(&mut self, t: Transition) -> bool {
        assert!(
            t.result.index() < self.states.len() && t.args.iter().all(|a| a.index() < self.states.len()),
            "transition refers to an unknown state"
        );
        if self.tset.contains(&t) {
            return false;
        }
        let i = self.transitions.len() as u32;
        self.incoming[t.result.index()].push(i);
        let mut seen = Vec::with_capacity(t.args.len());
        for a in &t.args {
            if !seen.contains(a) {
                self.outgoing[a.index()].push(i);
                seen.push(*a);
            }
        }
        self.by_prod.entry(t.prod).or_default().push(i);
        self.tset.insert(t.clone());
        self.transitions.push(t);
        true
    }

    pub fn add_final(&mut self, q: StateId) {
        assert!(q.index() < self.states.len(), "final refers to an unknown state");
        self.finals.insert(q);
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn states(&self) -> &[State<L>] {
        &self.states
    }

    pub fn state(&self, q: StateId) -> &State<L> {
        &self.states[q.index()]
    }

    pub fn state_ids(&self) -> impl Iterator<Item = StateId> {
        (0..self.states.len() as u32).map(StateId)
    }

    pub fn states_of_symbol(&self, s: SymbolId) -> &[StateId] {
        self.by_symbol.get(&s).map_or(&[], Vec::as_slice)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn contains_transition(&self, t: &Transition) -> bool {
        self.tset.contains(t)
    }

    pub fn finals(&self) -> &BTreeSet<StateId> {
        &self.finals
    }

    pub fn is_final(&self, q: StateId) -> bool {
        self.finals.contains(&q)
    }

    pub fn incoming(&self, q: StateId) -> impl Iterator<Item = &Transition> {
        self.incoming[q.index()].iter().map(|&i| &self.transitions[i as usize])
    }

    pub fn outgoing(&self, q: StateId) -> impl Iterator<Item = &Transition> {
        self.outgoing[q.index()].iter().map(|&i| &self.transitions[i as usize])
    }

    pub fn transitions_of_prod(&self, p: ProdId) -> impl Iterator<Item = &Transition> {
        self.by_prod.get(&p).into_iter().flatten().map(|&i| &self.transitions[i as usize])
    }

    /// States ordered so that every transition's arguments precede its result.
    ///
    /// Panics on a cyclic automaton, which no builder here produces.
    pub fn topological_order(&self) -> Vec<StateId> {
        let n = self.states.len();
        // A transition fires once every argument slot is ordered; a state is
        // ordered once all of its incoming transitions have fired.
        let mut missing: Vec<usize> = self.transitions.iter().map(|t| t.args.len()).collect();
        let mut waiting: Vec<usize> = self.incoming.iter().map(Vec::len).collect();
        for t in &self.transitions {
            if t.args.is_empty() {
                waiting[t.result.index()] -= 1;
            }
        }
        let mut queue: VecDeque<StateId> = self.state_ids().filter(|q| waiting[q.index()] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(q) = queue.pop_front() {
            order.push(q);
            for &ti in &self.outgoing[q.index()] {
                let t = &self.transitions[ti as usize];
                missing[ti as usize] -= t.args.iter().filter(|&&a| a == q).count();
                if missing[ti as usize] == 0 {
                    let r = t.result.index();
                    waiting[r] -= 1;
                    if waiting[r] == 0 {
                        queue.push_back(t.result);
                    }
                }
            }
        }
        assert_eq!(order.len(), n, "automaton is cyclic");
        order
    }

    /// Number of accepting runs, by summing over incoming transitions the
    /// product of the argument states' run counts.
    pub fn count_accepting_runs(&self) -> BigUint {
        let mut runs = vec![BigUint::ZERO; self.states.len()];
        for q in self.topological_order() {
            let mut total = BigUint::ZERO;
            for t in self.incoming(q) {
                let mut r = BigUint::from(1u32);
                for a in &t.args {
                    r *= &runs[a.index()];
                }
                total += r;
            }
            runs[q.index()] = total;
        }
        self.finals.iter().map(|q| &runs[q.index()]).sum()
    }

    /// Is `p` accepted? With `bindings`, every variable leaf must be mapped to
    /// the state carrying that variable's bound value (an input-consistent run).
    pub fn language_contains(&self, g: &Grammar, p: &Program, bindings: Option<&AbstractInput<L>>) -> bool {
        self.run_states(g, p, bindings)
            .is_some_and(|qs| qs.iter().any(|q| self.is_final(*q)))
    }

    /// The set of states some run of `p` can end in. `None` if `p` is not a grammar term.
    pub fn run_states(&self, g: &Grammar, p: &Program, bindings: Option<&AbstractInput<L>>) -> Option<BTreeSet<StateId>> {
        let prod = g.productions().get(p.prod.index())?;
        if prod.args.len() != p.children.len() {
            return None;
        }
        let children: Vec<BTreeSet<StateId>> = p
            .children
            .iter()
            .map(|c| self.run_states(g, c, bindings))
            .collect::<Option<_>>()?;
        let mut out = BTreeSet::new();
        for t in self.transitions_of_prod(p.prod) {
            if !t.args.iter().zip(&children).all(|(a, set)| set.contains(a)) {
                continue;
            }
            if let (ProductionKind::Variable(x), Some(b)) = (prod.kind, bindings) {
                if let Some(want) = b.get(x) {
                    if self.state(t.result).value != *want {
                        continue;
                    }
                }
            }
            out.insert(t.result);
        }
        Some(out)
    }

    /// Up to `limit` distinct programs with a run ending in `q`, in a fixed
    /// order: incoming transitions in order, arguments leftmost-slowest.
    pub fn programs_to(&self, q: StateId, limit: usize) -> Vec<Program> {
        let mut memo = HashMap::new();
        self.programs_memo(q, limit, &mut memo).as_ref().clone()
    }

    fn programs_memo(
        &self,
        q: StateId,
        limit: usize,
        memo: &mut HashMap<StateId, std::rc::Rc<Vec<Program>>>,
    ) -> std::rc::Rc<Vec<Program>> {
        if let Some(v) = memo.get(&q) {
            return v.clone();
        }
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        'transitions: for &ti in &self.incoming[q.index()] {
            let t = &self.transitions[ti as usize];
            let lists: Vec<_> = t.args.iter().map(|&a| self.programs_memo(a, limit, memo)).collect();
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let mut odo = vec![0usize; lists.len()];
            loop {
                if out.len() >= limit {
                    break 'transitions;
                }
                let p = Program::new(t.prod, odo.iter().zip(&lists).map(|(&i, l)| l[i].clone()).collect());
                if seen.insert(p.clone()) {
                    out.push(p);
                }
                let mut i = odo.len();
                loop {
                    if i == 0 {
                        continue 'transitions;
                    }
                    i -= 1;
                    odo[i] += 1;
                    if odo[i] < lists[i].len() {
                        break;
                    }
                    odo[i] = 0;
                }
            }
        }
        let out = std::rc::Rc::new(out);
        memo.insert(q, out.clone());
        out
    }

    /// The accepted programs, or `None` if there are more than `limit`.
    pub fn language(&self, limit: usize) -> Option<BTreeSet<Program>> {
        let mut memo = HashMap::new();
        let mut out = BTreeSet::new();
        for &q in &self.finals {
            let progs = self.programs_memo(q, limit + 1, &mut memo);
            if progs.len() > limit {
                return None;
            }
            out.extend(progs.iter().cloned());
            if out.len() > limit {
                return None;
            }
        }
        Some(out)
    }

    /// Removes states that lie on no accepting run, with their transitions.
    pub fn trimmed(&self) -> Fta<L> {
        let n = self.states.len();
        let mut productive = vec![false; n];
        for q in self.topological_order() {
            productive[q.index()] = self
                .incoming(q)
                .any(|t| t.args.iter().all(|a| productive[a.index()]));
        }
        let mut useful = vec![false; n];
        let mut keep_t = vec![false; self.transitions.len()];
        let mut stack: Vec<StateId> = self.finals.iter().copied().filter(|q| productive[q.index()]).collect();
        for q in &stack {
            useful[q.index()] = true;
        }
        while let Some(q) = stack.pop() {
            for &ti in &self.incoming[q.index()] {
                let t = &self.transitions[ti as usize];
                if !t.args.iter().all(|a| productive[a.index()]) {
                    continue;
                }
                keep_t[ti as usize] = true;
                for a in &t.args {
                    if !useful[a.index()] {
                        useful[a.index()] = true;
                        stack.push(*a);
                    }
                }
            }
        }
        let mut out = Fta::new(self.kind);
        let mut remap = vec![None; n];
        for q in self.state_ids() {
            if useful[q.index()] {
                let st = self.state(q);
                remap[q.index()] = Some(out.intern(st.symbol, st.value.clone()).0);
            }
        }
        for (ti, t) in self.transitions.iter().enumerate() {
            if keep_t[ti] {
                out.add_transition(Transition {
                    prod: t.prod,
                    args: t.args.iter().map(|a| remap[a.index()].unwrap()).collect(),
                    result: remap[t.result.index()].unwrap(),
                });
            }
        }
        for q in &self.finals {
            if let Some(r) = remap[q.index()] {
                out.add_final(r);
            }
        }
        out
    }

    /// Renumbers states by (symbol, encoded value) and sorts transitions, so
    /// equal automata have equal layouts.
    pub fn canonical(&self, encode: impl Fn(&L) -> Vec<u8>) -> Fta<L> {
        let mut order: Vec<(SymbolId, Vec<u8>, StateId)> = self
            .state_ids()
            .map(|q| (self.state(q).symbol, encode(&self.state(q).value), q))
            .collect();
        order.sort();
        let mut remap = vec![StateId(0); self.states.len()];
        let mut out = Fta::new(self.kind);
        for (_, _, q) in &order {
            let st = self.state(*q);
            remap[q.index()] = out.intern(st.symbol, st.value.clone()).0;
        }
        let mut ts: Vec<Transition> = self
            .transitions
            .iter()
            .map(|t| Transition {
                prod: t.prod,
                args: t.args.iter().map(|a| remap[a.index()]).collect(),
                result: remap[t.result.index()],
            })
            .collect();
        ts.sort();
        for t in ts {
            out.add_transition(t);
        }
        for q in &self.finals {
            out.add_final(remap[q.index()]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildLimits {
    pub max_states: usize,
    pub max_transitions: usize,
}

impl Default for BuildLimits {
    fn default() -> Self {
        BuildLimits {
            max_states: 2_000_000,
            max_transitions: 20_000_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error(
        "{limit} budget exceeded while building symbol `{symbol}` ({symbols_done} of {symbols_total} symbols done, {states} states, {transitions} transitions so far)"
    )]
    Budget {
        limit: &'static str,
        symbol: String,
        symbols_done: usize,
        symbols_total: usize,
        states: usize,
        transitions: usize,
    },
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("grammar does not fit the domain: {}", join_diagnostics(.0))]
    Domain(Vec<Diagnostic>),
}

/// Advances a rightmost-fastest odometer; false once every tuple was visited.
pub(crate) fn step_odometer(odo: &mut [usize], lens: &[usize]) -> bool {
    for i in (0..odo.len()).rev() {
        odo[i] += 1;
        if odo[i] < lens[i] {
            return true;
        }
        odo[i] = 0;
    }
    false
}

/// Applies the variable/production rules to saturation. Variable transitions
/// draw their values from `seeds`. Returns the number of states and
/// transitions added.
fn saturate<D: Domain>(
    fta: &mut Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    seeds: &dyn Fn(VarId) -> Vec<D::Abs>,
    limits: BuildLimits,
) -> Result<usize, BuildError> {
    let mut added = 0;
    let topo = g.topological_order();
    for (done, &s) in topo.iter().enumerate() {
        let budget = |fta: &Fta<D::Abs>, limit| BuildError::Budget {
            limit,
            symbol: g.symbol_name(s).to_string(),
            symbols_done: done,
            symbols_total: topo.len(),
            states: fta.num_states(),
            transitions: fta.num_transitions(),
        };
        for &pid in g.productions_of(s) {
            let prod = g.production(pid);
            let mut emit = |fta: &mut Fta<D::Abs>, args: Vec<StateId>, a: D::Abs| -> Result<(), BuildError> {
                let (q, new) = fta.intern(s, a);
                if new {
                    added += 1;
                    if fta.num_states() > limits.max_states {
                        return Err(budget(fta, "state"));
                    }
                }
                if fta.add_transition(Transition { prod: pid, args, result: q }) {
                    added += 1;
                    if fta.num_transitions() > limits.max_transitions {
                        return Err(budget(fta, "transition"));
                    }
                }
                Ok(())
            };
            if let ProductionKind::Variable(x) = prod.kind {
                for a in seeds(x) {
                    emit(fta, vec![], a)?;
                }
                continue;
            }
            let lists: Vec<Vec<StateId>> = prod.args.iter().map(|&a| fta.states_of_symbol(a).to_vec()).collect();
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let lens: Vec<usize> = lists.iter().map(Vec::len).collect();
            let mut odo = vec![0usize; lists.len()];
            loop {
                let args: Vec<StateId> = odo.iter().zip(&lists).map(|(&i, l)| l[i]).collect();
                let values: Vec<&D::Abs> = args.iter().map(|&q| &fta.state(q).value).collect();
                if let Some(a) = domain.transform(prod, &values) {
                    emit(fta, args, a)?;
                }
                if !step_odometer(&mut odo, &lens) {
                    break;
                }
            }
        }
    }
    Ok(added)
}

fn mark_finals<D: Domain>(fta: &mut Fta<D::Abs>, g: &Grammar, domain: &D, example: Option<&Example<D::Value>>) {
    let starts = fta.states_of_symbol(g.start()).to_vec();
    for q in starts {
        let keep = match example {
            None => true,
            Some(e) => domain.gamma_contains(&fta.state(q).value, &e.output, &e.inputs),
        };
        if keep {
            fta.add_final(q);
        }
    }
}

/// The offline automaton: one variable transition per abstract input value,
/// every start-symbol state final.
pub fn build_offline_fta<D: Domain>(g: &Grammar, domain: &D, limits: BuildLimits) -> Result<Fta<D::Abs>, BuildError> {
    domain.validate(g).map_err(BuildError::Domain)?;
    let mut fta = Fta::new(FtaKind::Offline);
    saturate(&mut fta, g, domain, &|x| domain.input_space(x), limits)?;
    mark_finals(&mut fta, g, domain, None);
    Ok(fta.canonical(|a| domain.encode_abs(a)))
}

/// The per-example automaton: variables seeded with α(e_in) only, start
/// states final iff their value's concretization contains e_out.
pub fn build_online_fta<D: Domain>(
    g: &Grammar,
    domain: &D,
    example: &Example<D::Value>,
    limits: BuildLimits,
) -> Result<Fta<D::Abs>, BuildError> {
    domain.validate(g).map_err(BuildError::Domain)?;
    let gamma = abstract_input(domain, g, &example.inputs)?;
    let mut fta = Fta::new(FtaKind::Online);
    saturate(&mut fta, g, domain, &|x| vec![gamma[x.index()].clone()], limits)?;
    mark_finals(&mut fta, g, domain, Some(example));
    Ok(fta.canonical(|a| domain.encode_abs(a)))
}

/// Re-applies the construction rules to a finished automaton and reports how
/// many states and transitions that added (zero at a fixpoint).
pub fn resaturate<D: Domain>(
    fta: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    example: Option<&Example<D::Value>>,
) -> Result<usize, BuildError> {
    let mut copy = fta.clone();
    let before_finals = copy.finals().len();
    let added = match example {
        None => saturate(&mut copy, g, domain, &|x| domain.input_space(x), BuildLimits::default())?,
        Some(e) => {
            let gamma = abstract_input(domain, g, &e.inputs)?;
            saturate(&mut copy, g, domain, &|x| vec![gamma[x.index()].clone()], BuildLimits::default())?
        }
    };
    mark_finals(&mut copy, g, domain, example);
    Ok(added + copy.finals().len() - before_finals)
}
