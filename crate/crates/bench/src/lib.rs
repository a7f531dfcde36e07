//! Fixtures shared by the pipeline benchmarks.

use presyn::grammar::{GrammarFile, ProductionDecl, VariableDecl};
use presyn::oracle::{DEFAULT_FINAL_INDEX_CAP, DEFAULT_MAX_CLAUSES};
use presyn::string::string_dsl;
use presyn::*;

pub struct Prepared<D: Domain> {
    pub grammar: Grammar,
    pub domain: D,
    pub examples: Vec<Example<D::Value>>,
    pub fta: Fta<D::Abs>,
    pub oracle: Oracle<D::Abs>,
    pub index: FinalIndex<D::Abs>,
}

impl<D: Domain> Prepared<D> {
    pub fn new(grammar: Grammar, domain: D, examples: Vec<Example<D::Value>>) -> Self {
        let fta = build_offline_fta(&grammar, &domain, BuildLimits::default()).expect("fixture builds");
        let oracle = build_oracle(&fta, &grammar, &domain, DEFAULT_MAX_CLAUSES).expect("fixture oracle");
        let index = build_final_index(&fta, &oracle, &grammar, &domain, DEFAULT_FINAL_INDEX_CAP);
        Prepared {
            grammar,
            domain,
            examples,
            fta,
            oracle,
            index,
        }
    }

    pub fn slice(&self, mode: SliceMode) -> Slice<D::Abs> {
        let (g, d, e) = (&self.grammar, &self.domain, &self.examples[0]);
        match mode {
            SliceMode::Oracle => slice(&self.fta, &self.oracle, &self.index, g, d, e),
            SliceMode::NoOracle => slice_no_oracle(&self.fta, g, d, e, self.oracle.fta_fingerprint()),
            SliceMode::NoPresyn => slice_from_scratch(g, d, e, BuildLimits::default()),
        }
        .expect("fixture slices")
    }
}

fn decl(lhs: &str, op: &str, constant: Option<i64>, args: &[&str]) -> ProductionDecl {
    ProductionDecl {
        lhs: lhs.into(),
        op: op.into(),
        constant: constant.map(presyn::grammar::Literal::Int),
        args: args.iter().map(|a| a.to_string()).collect(),
    }
}

/// Every level offers `+1 +2 +3 <<1 <<2` and binary `add` over the level below.
pub fn layered_bitvec_file(depth: usize) -> GrammarFile {
    let mut productions = vec![decl("t0", "x", None, &[])];
    for d in 1..=depth {
        let (lhs, arg) = (format!("t{d}"), format!("t{}", d - 1));
        for (op, c) in [("add", 1), ("add", 2), ("add", 3), ("shl", 1), ("shl", 2)] {
            productions.push(decl(&lhs, op, Some(c), &[&arg]));
        }
        productions.push(decl(&lhs, "add", None, &[&arg, &arg]));
    }
    GrammarFile {
        start: format!("t{depth}"),
        variables: vec![VariableDecl {
            name: "x".into(),
            domain: "bitvec".into(),
        }],
        nonterminals: (0..=depth).rev().map(|d| format!("t{d}")).collect(),
        productions,
    }
}

/// Depth-3 layered grammar at width 8, examples from `((x << 1) + 3) << 2`.
pub fn bitvec_fixture(k: u8) -> Prepared<BitVecDomain> {
    let g = Grammar::from_file(layered_bitvec_file(3)).expect("valid");
    let d = BitVecDomain::new(8, k);
    let target = g.parse_program("(shl (add (shl x 1) 3) 2)").expect("parses");
    let examples = [5, 18, 77]
        .map(|x| {
            let inputs = vec![d.value(x)];
            let output = eval_concrete(&g, &d, &target, &inputs).unwrap().expect("defined");
            Example { inputs, output }
        })
        .to_vec();
    Prepared::new(g, d, examples)
}

/// The depth-2 string DSL, examples taking characters 1..3.
pub fn string_fixture(level: u8) -> Prepared<StringDomain> {
    let g = Grammar::from_file(string_dsl(2, 6)).expect("valid");
    let d = StringDomain::new(level, 8);
    let examples = [("hello", "el"), ("a1b2c3", "1b")]
        .map(|(x, y)| Example {
            inputs: vec![StrValue::Str(x.into())],
            output: StrValue::Str(y.into()),
        })
        .to_vec();
    Prepared::new(g, d, examples)
}
