//! Fixtures shared by unit tests, integration tests and benchmarks: the
//! worked bit-vector grammar and its two examples, and random task generators.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::bitvec::{BitVecDomain, BitVecValue};
use crate::domain::{Domain, SampleRng};
use crate::grammar::{
    enumerate_programs, eval_concrete, Example, Grammar, GrammarFile, Literal, ProductionDecl, VariableDecl,
};
use crate::string::{StrValue, StringDomain};

fn decl(lhs: &str, op: &str, constant: Option<i64>, args: &[&str]) -> ProductionDecl {
    ProductionDecl {
        lhs: lhs.into(),
        op: op.into(),
        constant: constant.map(Literal::Int),
        args: args.iter().map(|s| s.to_string()).collect(),
    }
}

/// `t2 ::= t1 + k | t1 << k`, `t1 ::= t0 + k | t0 << k`, `t0 ::= x`, k ∈ {1, 2}.
pub fn bitvec_s2_file() -> GrammarFile {
    let mut productions = Vec::new();
    for (lhs, arg) in [("t2", "t1"), ("t1", "t0")] {
        for op in ["add", "shl"] {
            for k in [1, 2] {
                productions.push(decl(lhs, op, Some(k), &[arg]));
            }
        }
    }
    productions.push(decl("t0", "x", None, &[]));
    GrammarFile {
        start: "t2".into(),
        variables: vec![VariableDecl {
            name: "x".into(),
            domain: "bitvec".into(),
        }],
        nonterminals: vec!["t2".into(), "t1".into(), "t0".into()],
        productions,
    }
}

pub fn bitvec_s2_grammar() -> Grammar {
    Grammar::from_file(bitvec_s2_file()).expect("worked grammar is valid")
}

/// `t0 ::= x` and nothing else.
pub fn single_var_grammar() -> Grammar {
    Grammar::from_file(GrammarFile {
        start: "t0".into(),
        variables: vec![VariableDecl {
            name: "x".into(),
            domain: "bitvec".into(),
        }],
        nonterminals: vec!["t0".into()],
        productions: vec![decl("t0", "x", None, &[])],
    })
    .expect("valid")
}

fn bv(bits: u64) -> BitVecValue {
    BitVecValue::new(4, bits)
}

/// `x = 0b0001 ↦ 0b0110`.
pub fn e1() -> Example<BitVecValue> {
    Example {
        inputs: vec![bv(0b0001)],
        output: bv(0b0110),
    }
}

/// `x = 0b0010 ↦ 0b1010`.
pub fn e2() -> Example<BitVecValue> {
    Example {
        inputs: vec![bv(0b0010)],
        output: bv(0b1010),
    }
}

/// A random bit-vector grammar of exact depth `depth` (1..=3) over one or two
/// variables. Each level draws a few of `add c`, `shl c` and binary `add`.
pub fn random_bitvec_grammar(rng: &mut SampleRng, depth: usize) -> GrammarFile {
    let two_vars = rng.random_bool(0.3);
    let mut productions = vec![decl("t0", "x", None, &[])];
    if two_vars {
        productions.push(decl("t0", "y", None, &[]));
    }
    let unary = [("add", 1), ("add", 2), ("add", 3), ("shl", 1), ("shl", 2)];
    for d in 1..=depth {
        let lhs = format!("t{d}");
        let arg = format!("t{}", d - 1);
        let mut picked: Vec<(&str, i64)> = unary.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if picked.is_empty() {
            picked.push(*unary.choose(rng).unwrap());
        }
        for (op, c) in picked {
            productions.push(decl(&lhs, op, Some(c), &[&arg]));
        }
        if rng.random_bool(if two_vars { 0.6 } else { 0.3 }) {
            productions.push(decl(&lhs, "add", None, &[&arg, &arg]));
        }
    }
    let mut variables = vec![VariableDecl {
        name: "x".into(),
        domain: "bitvec".into(),
    }];
    if two_vars {
        variables.push(VariableDecl {
            name: "y".into(),
            domain: "bitvec".into(),
        });
    }
    GrammarFile {
        start: format!("t{depth}"),
        variables,
        nonterminals: (0..=depth).rev().map(|d| format!("t{d}")).collect(),
        productions,
    }
}

/// Examples produced by a hidden target program drawn from the grammar.
pub fn planted_examples<D: Domain>(
    g: &Grammar,
    domain: &D,
    rng: &mut SampleRng,
    count: usize,
    env: impl Fn(&mut SampleRng) -> Vec<D::Value>,
) -> Option<Vec<Example<D::Value>>> {
    let programs: Vec<_> = enumerate_programs(g, g.start()).take(5000).collect();
    for _ in 0..20 {
        let target = programs.choose(rng)?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count * 10 {
            let inputs = env(rng);
            if let Ok(Some(output)) = eval_concrete(g, domain, target, &inputs) {
                out.push(Example { inputs, output });
                if out.len() == count {
                    return Some(out);
                }
            }
        }
    }
    None
}

pub fn random_bitvec_env(domain: &BitVecDomain, g: &Grammar) -> impl Fn(&mut SampleRng) -> Vec<BitVecValue> {
    let (d, n) = (*domain, g.num_variables());
    move |rng| (0..n).map(|_| d.value(rng.random_range(0..1u64 << d.width))).collect()
}

pub fn random_string_env(domain: &StringDomain) -> impl Fn(&mut SampleRng) -> Vec<StrValue> {
    let max = domain.max_input_len as usize;
    move |rng| {
        let n = rng.random_range(1..=max);
        let s: String = (0..n)
            .map(|_| *crate::string::ALPHABET.choose(rng).unwrap() as char)
            .collect();
        vec![StrValue::Str(s)]
    }
}
