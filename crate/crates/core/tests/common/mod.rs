//! Brute-force reference computations and task generators for the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use presyn::domain::SampleRng;
use presyn::string::string_dsl;
use presyn::testing::{planted_examples, random_bitvec_env, random_bitvec_grammar, random_string_env};
use presyn::*;
use rand::{Rng, SeedableRng};

/// Every program of the grammar whose abstract value on α(e_in) has e_out
/// in its concretization.
pub fn abstractly_satisfying<D: Domain>(g: &Grammar, d: &D, e: &Example<D::Value>) -> BTreeSet<Program> {
    let gamma = abstract_input(d, g, &e.inputs).expect("covered input");
    enumerate_programs(g, g.start())
        .filter(|p| matches!(eval_abstract(g, d, p, &gamma), Some(a) if d.gamma_contains(&a, &e.output, &e.inputs)))
        .collect()
}

/// Programs satisfying every example concretely.
pub fn concretely_satisfying<D: Domain>(g: &Grammar, d: &D, examples: &[Example<D::Value>]) -> BTreeSet<Program> {
    enumerate_programs(g, g.start())
        .filter(|p| {
            examples
                .iter()
                .all(|e| eval_concrete(g, d, p, &e.inputs).unwrap().as_ref() == Some(&e.output))
        })
        .collect()
}

/// Which states have a run whose variable transitions all carry `gamma`,
/// by a bottom-up fixpoint over the automaton.
pub fn reachable_under<A: Clone + Eq + std::hash::Hash + Ord>(fta: &Fta<A>, g: &Grammar, gamma: &[A]) -> Vec<bool> {
    let mut reach = vec![false; fta.num_states()];
    for q in fta.topological_order() {
        reach[q.index()] = fta.incoming(q).any(|t| match g.production(t.prod).kind {
            ProductionKind::Variable(x) => fta.state(q).value == gamma[x.index()],
            ProductionKind::Constant => true,
            ProductionKind::Operator => t.args.iter().all(|a| reach[a.index()]),
        });
    }
    reach
}

pub struct Task<D: Domain> {
    pub grammar: Grammar,
    pub domain: D,
    pub examples: Vec<Example<D::Value>>,
}

/// Random bit-vector tasks: depth 1..=3 grammars, k in 1..=4, width 4, with
/// planted solutions; every fifth task gets a random (often unsolvable) output.
pub fn bitvec_tasks(seed: u64, n: usize) -> Vec<Task<BitVecDomain>> {
    let mut rng = SampleRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let depth = rng.random_range(1..=3);
        let g = Grammar::from_file(random_bitvec_grammar(&mut rng, depth)).unwrap();
        let k = rng.random_range(1..=4);
        let d = BitVecDomain::new(4, k);
        let Some(mut examples) = planted_examples(&g, &d, &mut rng, 2, random_bitvec_env(&d, &g)) else {
            continue;
        };
        if out.len() % 5 == 4 {
            examples[0].output = d.value(rng.random_range(0..16));
        }
        out.push(Task {
            grammar: g,
            domain: d,
            examples,
        });
    }
    out
}

/// Random string tasks over the built-in DSL at depth 2, levels 1..=3.
pub fn string_tasks(seed: u64, n: usize) -> Vec<Task<StringDomain>> {
    let mut rng = SampleRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let max_index = rng.random_range(2..=4);
        let g = Grammar::from_file(string_dsl(2, max_index)).unwrap();
        let level = rng.random_range(1..=3);
        let d = StringDomain::new(level, 5);
        let Some(mut examples) = planted_examples(&g, &d, &mut rng, 2, random_string_env(&d)) else {
            continue;
        };
        if out.len() % 5 == 4 {
            if let Some(v) = random_string_env(&d)(&mut rng).pop() {
                examples[0].output = v;
            }
        }
        out.push(Task {
            grammar: g,
            domain: d,
            examples,
        });
    }
    out
}

pub struct Artifacts<D: Domain> {
    pub fta: Fta<D::Abs>,
    pub oracle: Oracle<D::Abs>,
    pub index: FinalIndex<D::Abs>,
}

pub fn presynthesize<D: Domain>(g: &Grammar, d: &D) -> Artifacts<D> {
    let fta = build_offline_fta(g, d, BuildLimits::default()).unwrap();
    let oracle = build_oracle(&fta, g, d, presyn::oracle::DEFAULT_MAX_CLAUSES).unwrap();
    let index = build_final_index(&fta, &oracle, g, d, presyn::oracle::DEFAULT_FINAL_INDEX_CAP);
    Artifacts { fta, oracle, index }
}
