//! Concretization of a slice under one example's concrete semantics, with
//! accepting-run enumeration and all-example checking whenever new runs
//! reach a final state.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::domain::Domain;
use crate::fta::{step_odometer, Fta, FtaKind, StateId, Transition};
use crate::grammar::{eval_concrete, EvalError, Example, Grammar, ProductionKind, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchBudget {
    pub timeout: Duration,
    pub max_concrete_states: usize,
    pub max_programs_checked: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            timeout: Duration::from_secs(60),
            max_concrete_states: 1_000_000,
            max_programs_checked: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStatus {
    Found,
    Exhausted,
    Budget,
}

impl fmt::Display for SearchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchStatus::Found => "found",
            SearchStatus::Exhausted => "exhausted",
            SearchStatus::Budget => "budget",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum BudgetReason {
    Timeout,
    ConcreteStates,
    ProgramsChecked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub program: Option<Program>,
    pub budget_reason: Option<BudgetReason>,
    /// Example evaluations performed, summed over every checked program.
    pub examples_checked: u64,
    pub programs_checked: u64,
    pub concrete_states: u64,
    pub concrete_transitions: u64,
    pub wall_micros: u64,
}

impl SearchOutcome {
    /// The result document; `program` is null unless found.
    pub fn to_json(&self, g: &Grammar) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "program": self.program.as_ref().map(|p| g.render(p)),
            "examplesChecked": self.examples_checked,
            "programsChecked": self.programs_checked,
            "concreteStates": self.concrete_states,
            "wallMicros": self.wall_micros,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("no examples given")]
    NoExamples,
    #[error("slice example {index} out of range ({len} examples)")]
    SliceExample { index: usize, len: usize },
    #[error("slice is a {0:?} automaton")]
    NotASlice(FtaKind),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Up to `limit` programs whose runs end in `q`, in transition order with
/// arguments varied rightmost-fastest.
pub fn enumerate_accepting_runs<V: Clone + Eq + std::hash::Hash + Ord>(
    c: &Fta<V>,
    q: StateId,
    limit: usize,
) -> Vec<Program> {
    c.programs_to(q, limit)
}

enum Stop {
    Budget(BudgetReason),
    Found(Program),
}

struct Search<'a, D: Domain> {
    g: &'a Grammar,
    domain: &'a D,
    examples: &'a [Example<D::Value>],
    e: &'a Example<D::Value>,
    budget: SearchBudget,
    start: Instant,
    conc: Fta<D::Value>,
    /// Concrete states in γ of each slice state, filled once its symbol is done.
    candidates: HashMap<StateId, Rc<Vec<StateId>>>,
    /// Program lists per concrete state, with whether the list is complete.
    memo: HashMap<StateId, (Rc<Vec<Program>>, bool)>,
    enumerate: bool,
    examples_checked: u64,
    programs_checked: u64,
}

impl<'a, D: Domain> Search<'a, D> {
    fn out_of_time(&self) -> bool {
        self.start.elapsed() > self.budget.timeout
    }

    fn programs_left(&self) -> usize {
        self.budget.max_programs_checked.saturating_sub(self.programs_checked) as usize
    }

    fn candidates(&mut self, slice: &Fta<D::Abs>, a: StateId) -> Rc<Vec<StateId>> {
        if let Some(c) = self.candidates.get(&a) {
            return c.clone();
        }
        let st = slice.state(a);
        let list: Vec<StateId> = self
            .conc
            .states_of_symbol(st.symbol)
            .iter()
            .copied()
            .filter(|&c| self.domain.gamma_contains(&st.value, &self.conc.state(c).value, &self.e.inputs))
            .collect();
        let list = Rc::new(list);
        self.candidates.insert(a, list.clone());
        list
    }

    /// Adds `f(args) → (s, c)`; returns the transition if it newly reaches a final.
    fn emit(&mut self, prod: crate::grammar::ProdId, args: Vec<StateId>, c: D::Value) -> Result<Option<Transition>, Stop> {
        let s = self.g.production(prod).lhs;
        let is_final = s == self.g.start() && c == self.e.output;
        let (q, new) = self.conc.intern(s, c);
        if new && self.conc.num_states() > self.budget.max_concrete_states {
            return Err(Stop::Budget(BudgetReason::ConcreteStates));
        }
        if is_final {
            self.conc.add_final(q);
        }
        let t = Transition { prod, args, result: q };
        if self.conc.add_transition(t.clone()) && is_final {
            return Ok(Some(t));
        }
        Ok(None)
    }

    /// Memoized programs for a concrete state whose symbol is complete.
    fn programs(&mut self, q: StateId, limit: usize) -> Rc<Vec<Program>> {
        if let Some((v, complete)) = self.memo.get(&q) {
            if *complete || v.len() >= limit {
                return v.clone();
            }
        }
        let incoming: Vec<Transition> = self.conc.incoming(q).cloned().collect();
        let mut out = Vec::new();
        let mut complete = true;
        for t in &incoming {
            if out.len() >= limit {
                complete = false;
                break;
            }
            complete &= self.expand(t, limit - out.len(), &mut out);
        }
        let out = Rc::new(out);
        self.memo.insert(q, (out.clone(), complete));
        out
    }

    /// Appends at most `limit` programs built by `t`; false if cut short.
    fn expand(&mut self, t: &Transition, limit: usize, out: &mut Vec<Program>) -> bool {
        let lists: Vec<Rc<Vec<Program>>> = t.args.iter().map(|&a| self.programs(a, limit)).collect();
        if lists.iter().any(|l| l.is_empty()) {
            return true;
        }
        let complete = lists.iter().all(|l| l.len() < limit);
        let lens: Vec<usize> = lists.iter().map(|l| l.len()).collect();
        let mut odo = vec![0usize; lists.len()];
        let mut taken = 0;
        loop {
            if taken >= limit {
                return false;
            }
            out.push(Program::new(
                t.prod,
                odo.iter().zip(&lists).map(|(&i, l)| l[i].clone()).collect(),
            ));
            taken += 1;
            if !step_odometer(&mut odo, &lens) {
                return complete;
            }
        }
    }

    fn check(&mut self, p: &Program) -> Result<bool, EvalError> {
        self.programs_checked += 1;
        for e in self.examples {
            self.examples_checked += 1;
            if eval_concrete(self.g, self.domain, p, &e.inputs)?.as_ref() != Some(&e.output) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Enumerates the programs through newly added final transitions.
    fn pause(&mut self, fresh: &[Transition]) -> Result<Result<(), Stop>, EvalError> {
        for t in fresh {
            let left = self.programs_left();
            if left == 0 {
                return Ok(Err(Stop::Budget(BudgetReason::ProgramsChecked)));
            }
            let mut progs = Vec::new();
            self.expand(t, left, &mut progs);
            for (i, p) in progs.iter().enumerate() {
                if i % 1024 == 1023 && self.out_of_time() {
                    return Ok(Err(Stop::Budget(BudgetReason::Timeout)));
                }
                if self.check(p)? {
                    return Ok(Err(Stop::Found(p.clone())));
                }
            }
            if self.programs_left() == 0 {
                return Ok(Err(Stop::Budget(BudgetReason::ProgramsChecked)));
            }
        }
        Ok(Ok(()))
    }

    fn run(&mut self, slice: &Fta<D::Abs>) -> Result<Option<Stop>, EvalError> {
        let by_symbol = self.g.topological_order();
        for &s in by_symbol {
            for &q in slice.states_of_symbol(s) {
                let incoming: Vec<Transition> = slice.incoming(q).cloned().collect();
                for t in incoming {
                    if self.out_of_time() {
                        return Ok(Some(Stop::Budget(BudgetReason::Timeout)));
                    }
                    let fresh = match self.fire(slice, q, &t)? {
                        Ok(f) => f,
                        Err(stop) => return Ok(Some(stop)),
                    };
                    if self.enumerate && !fresh.is_empty() {
                        if let Err(stop) = self.pause(&fresh)? {
                            return Ok(Some(stop));
                        }
                    }
                }
            }
        }
        Ok(None)
    }

    /// Fires one slice transition for every guarded concrete argument tuple.
    fn fire(&mut self, slice: &Fta<D::Abs>, q: StateId, t: &Transition) -> Result<Result<Vec<Transition>, Stop>, EvalError> {
        let prod = self.g.production(t.prod);
        let abs = &slice.state(q).value;
        let mut fresh = Vec::new();
        match prod.kind {
            ProductionKind::Variable(x) => {
                let c = self.e.inputs[x.index()].clone();
                debug_assert!(self.domain.gamma_contains(abs, &c, &self.e.inputs));
                match self.emit(t.prod, vec![], c) {
                    Ok(f) => fresh.extend(f),
                    Err(stop) => return Ok(Err(stop)),
                }
            }
            ProductionKind::Constant | ProductionKind::Operator => {
                let lists: Vec<Rc<Vec<StateId>>> = t.args.iter().map(|&a| self.candidates(slice, a)).collect();
                if lists.iter().any(|l| l.is_empty()) {
                    return Ok(Ok(fresh));
                }
                let lens: Vec<usize> = lists.iter().map(|l| l.len()).collect();
                let mut odo = vec![0usize; lists.len()];
                loop {
                    let args: Vec<StateId> = odo.iter().zip(&lists).map(|(&i, l)| l[i]).collect();
                    let values: Vec<&D::Value> = args.iter().map(|&c| &self.conc.state(c).value).collect();
                    if let Some(c) = self.domain.eval(prod, &values)? {
                        match self.emit(t.prod, args, c) {
                            Ok(f) => fresh.extend(f),
                            Err(stop) => return Ok(Err(stop)),
                        }
                    }
                    if !step_odometer(&mut odo, &lens) {
                        break;
                    }
                }
            }
        }
        Ok(Ok(fresh))
    }
}

/// Builds the concrete FTA for `examples[slice_example]` over the slice and
/// returns the first program that satisfies every example.
pub fn concretize_and_search<D: Domain>(
    slice: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    examples: &[Example<D::Value>],
    slice_example: usize,
    budget: SearchBudget,
) -> Result<SearchOutcome, SearchError> {
    let (outcome, _) = search_inner(slice, g, domain, examples, slice_example, budget, true)?;
    Ok(outcome)
}

/// The full concrete automaton of the slice for one example (no search).
pub fn concretize<D: Domain>(
    slice: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    e: &Example<D::Value>,
    budget: SearchBudget,
) -> Result<Fta<D::Value>, SearchError> {
    let (_, conc) = search_inner(slice, g, domain, std::slice::from_ref(e), 0, budget, false)?;
    Ok(conc)
}

fn search_inner<D: Domain>(
    slice: &Fta<D::Abs>,
    g: &Grammar,
    domain: &D,
    examples: &[Example<D::Value>],
    slice_example: usize,
    budget: SearchBudget,
    enumerate: bool,
) -> Result<(SearchOutcome, Fta<D::Value>), SearchError> {
    if examples.is_empty() {
        return Err(SearchError::NoExamples);
    }
    let e = examples.get(slice_example).ok_or(SearchError::SliceExample {
        index: slice_example,
        len: examples.len(),
    })?;
    if slice.kind() != FtaKind::Slice {
        return Err(SearchError::NotASlice(slice.kind()));
    }
    let mut s = Search {
        g,
        domain,
        examples,
        e,
        budget,
        start: Instant::now(),
        conc: Fta::new(FtaKind::Concrete),
        candidates: HashMap::new(),
        memo: HashMap::new(),
        enumerate,
        examples_checked: 0,
        programs_checked: 0,
    };
    let stop = s.run(slice)?;
    let (status, program, budget_reason) = match stop {
        None => (SearchStatus::Exhausted, None, None),
        Some(Stop::Found(p)) => {
            for e in examples {
                assert_eq!(eval_concrete(g, domain, &p, &e.inputs)?.as_ref(), Some(&e.output));
            }
            (SearchStatus::Found, Some(p), None)
        }
        Some(Stop::Budget(r)) => (SearchStatus::Budget, None, Some(r)),
    };
    let outcome = SearchOutcome {
        status,
        program,
        budget_reason,
        examples_checked: s.examples_checked,
        programs_checked: s.programs_checked,
        concrete_states: s.conc.num_states() as u64,
        concrete_transitions: s.conc.num_transitions() as u64,
        wall_micros: s.start.elapsed().as_micros() as u64,
    };
    Ok((outcome, s.conc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitvec::{BitVecDomain, LowBits};
    use crate::fta::BuildLimits;
    use crate::slice::{slice_from_scratch, Slice};
    use crate::testing::{bitvec_s2_grammar, e1, e2, single_var_grammar};

    fn s2_slice(k: u8) -> (Grammar, BitVecDomain, Slice<LowBits>) {
        let g = bitvec_s2_grammar();
        let d = BitVecDomain::new(4, k);
        let s = slice_from_scratch(&g, &d, &e1(), BuildLimits::default()).unwrap();
        (g, d, s)
    }

    #[test]
    fn unique_solution_on_both_examples() {
        for k in [1, 2, 3, 4] {
            let (g, d, s) = s2_slice(k);
            let out = concretize_and_search(&s.fta, &g, &d, &[e1(), e2()], 0, SearchBudget::default()).unwrap();
            assert_eq!(out.status, SearchStatus::Found);
            assert_eq!(g.render(out.program.as_ref().unwrap()), "(add (shl x 2) 2)");
            let json = out.to_json(&g);
            assert_eq!(json["status"], "found");
            assert_eq!(json["program"], "(add (shl x 2) 2)");
        }
    }

    #[test]
    fn first_example_alone() {
        let (g, d, s) = s2_slice(2);
        let out = concretize_and_search(&s.fta, &g, &d, &[e1()], 0, SearchBudget::default()).unwrap();
        let p = g.render(out.program.as_ref().unwrap());
        assert!(["(add (shl x 2) 2)", "(shl (add x 2) 1)"].contains(&p.as_str()));
    }

    #[test]
    fn concrete_runs_to_output() {
        let (g, d, s) = s2_slice(2);
        let c = concretize(&s.fta, &g, &d, &e1(), SearchBudget::default()).unwrap();
        let q = c.lookup(g.start(), &d.value(0b0110)).unwrap();
        assert!(c.is_final(q));
        assert_eq!(enumerate_accepting_runs(&c, q, 10).len(), 2);
        assert_eq!(enumerate_accepting_runs(&c, q, 1), enumerate_accepting_runs(&c, q, 10)[..1]);
        for t in c.transitions() {
            for &a in &t.args {
                assert!(c.state(a).symbol != g.start());
            }
        }
    }

    #[test]
    fn variable_only_final() {
        let g = single_var_grammar();
        let d = BitVecDomain::new(4, 2);
        let e = Example {
            inputs: vec![d.value(7)],
            output: d.value(7),
        };
        let s = slice_from_scratch(&g, &d, &e, BuildLimits::default()).unwrap();
        let c = concretize(&s.fta, &g, &d, &e, SearchBudget::default()).unwrap();
        let q = c.lookup(g.start(), &d.value(7)).unwrap();
        let progs = enumerate_accepting_runs(&c, q, 5);
        assert_eq!(progs.iter().map(|p| g.render(p)).collect::<Vec<_>>(), ["x"]);
    }

    #[test]
    fn empty_slice_is_exhausted() {
        let g = bitvec_s2_grammar();
        let d = BitVecDomain::new(4, 2);
        let e = Example {
            inputs: vec![d.value(0b0010)],
            output: d.value(0b0011),
        };
        let s = slice_from_scratch(&g, &d, &e, BuildLimits::default()).unwrap();
        let out = concretize_and_search(&s.fta, &g, &d, &[e], 0, SearchBudget::default()).unwrap();
        assert_eq!(out.status, SearchStatus::Exhausted);
        assert_eq!(out.to_json(&g)["program"], serde_json::Value::Null);
    }

    #[test]
    fn budgets_and_errors() {
        let (g, d, s) = s2_slice(1);
        // e2 rules out every program the e1 slice yields except the last one
        // checked, so a one-program budget trips.
        let tight = SearchBudget {
            max_programs_checked: 1,
            ..SearchBudget::default()
        };
        let out = concretize_and_search(&s.fta, &g, &d, &[e1(), e2()], 0, tight).unwrap();
        if out.status == SearchStatus::Budget {
            assert_eq!(out.budget_reason, Some(BudgetReason::ProgramsChecked));
        } else {
            assert_eq!(out.programs_checked, 1);
        }
        let few_states = SearchBudget {
            max_concrete_states: 1,
            ..SearchBudget::default()
        };
        let out = concretize_and_search(&s.fta, &g, &d, &[e1()], 0, few_states).unwrap();
        assert_eq!(out.budget_reason, Some(BudgetReason::ConcreteStates));
        assert_eq!(
            concretize_and_search(&s.fta, &g, &d, &[], 0, SearchBudget::default()),
            Err(SearchError::NoExamples)
        );
        assert!(matches!(
            concretize_and_search(&s.fta, &g, &d, &[e1()], 3, SearchBudget::default()),
            Err(SearchError::SliceExample { index: 3, len: 1 })
        ));
    }
}
