//! Finitized DSL grammars, programs as terms, and concrete evaluation.
//!
//! A grammar is loaded from its JSON file form ([`GrammarFile`]) and validated
//! into an indexed [`Grammar`]. Validation rejects cyclic production graphs;
//! recursive DSLs are finitized beforehand with [`unroll`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::Domain;
use crate::Fingerprint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProdId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ProdId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Literal attached to a production: the `k` of `shl k`, or a nullary constant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Str(String),
}

impl Literal {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Literal::Int(v) => Some(*v),
            Literal::Str(_) => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Str(s) => write!(f, "{}", serde_json::to_string(s).map_err(|_| fmt::Error)?),
        }
    }
}

/// On-disk grammar form. Field names are part of the file contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarFile {
    pub start: String,
    pub variables: Vec<VariableDecl>,
    pub nonterminals: Vec<String>,
    pub productions: Vec<ProductionDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub domain: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionDecl {
    pub lhs: String,
    pub op: String,
    #[serde(rename = "const", default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Literal>,
    #[serde(default)]
    pub args: Vec<String>,
}

impl GrammarFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let bytes = serde_json::to_vec(self).expect("grammar serializes");
        Fingerprint(Sha256::digest(&bytes).into())
    }
}

/// A violated grammar invariant, naming the offending symbol.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Diagnostic {
    #[error("unknown start symbol `{0}`")]
    UnknownStartSymbol(String),
    #[error("production {production}: unknown symbol `{symbol}`")]
    UnknownSymbol { production: usize, symbol: String },
    #[error("duplicate nonterminal `{0}`")]
    DuplicateNonterminal(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}` clashes with a nonterminal of the same name")]
    NameClash(String),
    #[error("cyclic production graph through `{}`", .cycle.join(" -> "))]
    CyclicProductionGraph { cycle: Vec<String> },
    #[error("variable `{0}` appears in no production")]
    UnusedVariable(String),
    #[error("production {production}: variable `{variable}` must be nullary without a constant")]
    MalformedVariableProduction { production: usize, variable: String },
    #[error("production {production} (`{op}`): {message}")]
    Operator {
        production: usize,
        op: String,
        message: String,
    },
    #[error("variable `{variable}` has domain `{found}`, expected `{expected}`")]
    VariableDomain {
        variable: String,
        expected: String,
        found: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProductionKind {
    Variable(VarId),
    Constant,
    Operator,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Production {
    pub lhs: SymbolId,
    pub op: String,
    pub kind: ProductionKind,
    pub args: Vec<SymbolId>,
    pub constant: Option<Literal>,
}

impl Production {
    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn int_constant(&self) -> Option<i64> {
        self.constant.as_ref().and_then(Literal::as_int)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub domain: String,
}

/// A validated, indexed grammar. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Grammar {
    file: GrammarFile,
    nonterminals: Vec<String>,
    variables: Vec<Variable>,
    productions: Vec<Production>,
    start: SymbolId,
    by_lhs: Vec<Vec<ProdId>>,
    topo: Vec<SymbolId>,
    fingerprint: Fingerprint,
}

/// Checks every grammar invariant; `Ok` iff the file loads as a [`Grammar`].
pub fn validate_grammar(file: &GrammarFile) -> Result<(), Vec<Diagnostic>> {
    Grammar::from_file(file.clone()).map(|_| ())
}

impl Grammar {
    pub fn from_json(text: &str) -> Result<Self, GrammarLoadError> {
        let file = GrammarFile::from_json(text)?;
        Grammar::from_file(file).map_err(GrammarLoadError::Invalid)
    }

    pub fn from_file(file: GrammarFile) -> Result<Self, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut symbol_ids = HashMap::new();
        for (i, name) in file.nonterminals.iter().enumerate() {
            if symbol_ids.insert(name.as_str(), SymbolId(i as u32)).is_some() {
                diags.push(Diagnostic::DuplicateNonterminal(name.clone()));
            }
        }
        let mut var_ids = HashMap::new();
        for (i, v) in file.variables.iter().enumerate() {
            if var_ids.insert(v.name.as_str(), VarId(i as u32)).is_some() {
                diags.push(Diagnostic::DuplicateVariable(v.name.clone()));
            }
            if symbol_ids.contains_key(v.name.as_str()) {
                diags.push(Diagnostic::NameClash(v.name.clone()));
            }
        }
        let start = match symbol_ids.get(file.start.as_str()) {
            Some(&s) => s,
            None => {
                diags.push(Diagnostic::UnknownStartSymbol(file.start.clone()));
                SymbolId(0)
            }
        };

        let mut productions = Vec::with_capacity(file.productions.len());
        let mut used_vars = HashSet::new();
        for (i, decl) in file.productions.iter().enumerate() {
            let lhs = match symbol_ids.get(decl.lhs.as_str()) {
                Some(&s) => s,
                None => {
                    diags.push(Diagnostic::UnknownSymbol {
                        production: i,
                        symbol: decl.lhs.clone(),
                    });
                    continue;
                }
            };
            let mut args = Vec::with_capacity(decl.args.len());
            let mut ok = true;
            for a in &decl.args {
                match symbol_ids.get(a.as_str()) {
                    Some(&s) => args.push(s),
                    None => {
                        diags.push(Diagnostic::UnknownSymbol {
                            production: i,
                            symbol: a.clone(),
                        });
                        ok = false;
                    }
                }
            }
            if !ok {
                continue;
            }
            let kind = if let Some(&v) = var_ids.get(decl.op.as_str()) {
                if !args.is_empty() || decl.constant.is_some() {
                    diags.push(Diagnostic::MalformedVariableProduction {
                        production: i,
                        variable: decl.op.clone(),
                    });
                }
                used_vars.insert(v);
                ProductionKind::Variable(v)
            } else if args.is_empty() && decl.constant.is_some() {
                ProductionKind::Constant
            } else {
                ProductionKind::Operator
            };
            productions.push(Production {
                lhs,
                op: decl.op.clone(),
                kind,
                args,
                constant: decl.constant.clone(),
            });
        }
        for (i, v) in file.variables.iter().enumerate() {
            if !used_vars.contains(&VarId(i as u32)) {
                diags.push(Diagnostic::UnusedVariable(v.name.clone()));
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }

        let mut by_lhs = vec![Vec::new(); file.nonterminals.len()];
        for (i, p) in productions.iter().enumerate() {
            by_lhs[p.lhs.index()].push(ProdId(i as u32));
        }
        let topo = match topological_symbols(file.nonterminals.len(), &productions) {
            Ok(order) => order,
            Err(cycle) => {
                return Err(vec![Diagnostic::CyclicProductionGraph {
                    cycle: cycle
                        .into_iter()
                        .map(|s| file.nonterminals[s.index()].clone())
                        .collect(),
                }])
            }
        };
        let fingerprint = file.fingerprint();
        Ok(Grammar {
            nonterminals: file.nonterminals.clone(),
            variables: file
                .variables
                .iter()
                .map(|v| Variable {
                    name: v.name.clone(),
                    domain: v.domain.clone(),
                })
                .collect(),
            productions,
            start,
            by_lhs,
            topo,
            fingerprint,
            file,
        })
    }

    pub fn file(&self) -> &GrammarFile {
        &self.file
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn start(&self) -> SymbolId {
        self.start
    }

    pub fn num_symbols(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn symbol_name(&self, s: SymbolId) -> &str {
        &self.nonterminals[s.index()]
    }

    pub fn symbol(&self, name: &str) -> Option<SymbolId> {
        self.nonterminals
            .iter()
            .position(|n| n == name)
            .map(|i| SymbolId(i as u32))
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn variable(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(|i| VarId(i as u32))
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, p: ProdId) -> &Production {
        &self.productions[p.index()]
    }

    pub fn productions_of(&self, s: SymbolId) -> &[ProdId] {
        &self.by_lhs[s.index()]
    }

    /// Symbols ordered so every production's arguments precede its left-hand side.
    pub fn topological_order(&self) -> &[SymbolId] {
        &self.topo
    }

    /// Renders a program as an s-expression, e.g. `(add (shl x 2) 2)`.
    pub fn render(&self, p: &Program) -> String {
        let mut out = String::new();
        self.render_into(p, &mut out);
        out
    }

    fn render_into(&self, p: &Program, out: &mut String) {
        let prod = self.production(p.prod);
        match prod.kind {
            ProductionKind::Variable(v) => out.push_str(&self.variables[v.index()].name),
            ProductionKind::Constant => {
                out.push_str(&prod.constant.as_ref().expect("constant literal").to_string())
            }
            ProductionKind::Operator => {
                out.push('(');
                out.push_str(&prod.op);
                for c in &p.children {
                    out.push(' ');
                    self.render_into(c, out);
                }
                if let Some(k) = &prod.constant {
                    out.push(' ');
                    out.push_str(&k.to_string());
                }
                out.push(')');
            }
        }
    }

    /// Parses an s-expression derived from the start symbol.
    pub fn parse_program(&self, text: &str) -> Result<Program, ParseError> {
        self.parse_program_at(self.start, text)
    }

    pub fn parse_program_at(&self, symbol: SymbolId, text: &str) -> Result<Program, ParseError> {
        let sexp = Sexp::parse(text)?;
        self.match_sexp(symbol, &sexp)
            .ok_or_else(|| ParseError::NoDerivation(text.trim().to_string()))
    }

    fn match_sexp(&self, symbol: SymbolId, sexp: &Sexp) -> Option<Program> {
        for &pid in self.productions_of(symbol) {
            let prod = self.production(pid);
            match (prod.kind, sexp) {
                (ProductionKind::Variable(v), Sexp::Atom(a)) if *a == self.variables[v.index()].name => {
                    return Some(Program::leaf(pid));
                }
                (ProductionKind::Constant, atom) if atom.as_literal().as_ref() == prod.constant.as_ref() => {
                    return Some(Program::leaf(pid));
                }
                (ProductionKind::Operator, Sexp::List(items)) => {
                    let Some((Sexp::Atom(head), rest)) = items.split_first() else {
                        continue;
                    };
                    if *head != prod.op || rest.len() != prod.args.len() + prod.constant.is_some() as usize {
                        continue;
                    }
                    if let Some(k) = &prod.constant {
                        if rest.last().and_then(Sexp::as_literal).as_ref() != Some(k) {
                            continue;
                        }
                    }
                    let children: Option<Vec<Program>> = prod
                        .args
                        .iter()
                        .zip(rest)
                        .map(|(&s, e)| self.match_sexp(s, e))
                        .collect();
                    if let Some(children) = children {
                        return Some(Program::new(pid, children));
                    }
                }
                _ => {}
            }
        }
        None
    }

    /// True iff the program's shape matches a derivation from `symbol`.
    pub fn derives(&self, symbol: SymbolId, p: &Program) -> bool {
        let Some(prod) = self.productions.get(p.prod.index()) else {
            return false;
        };
        prod.lhs == symbol
            && prod.args.len() == p.children.len()
            && prod.args.iter().zip(&p.children).all(|(&s, c)| self.derives(s, c))
    }
}

#[derive(Debug, Error)]
pub enum GrammarLoadError {
    #[error("malformed grammar file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid grammar: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

pub(crate) fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// Kahn's algorithm over the production graph; returns a cycle on failure.
fn topological_symbols(n: usize, productions: &[Production]) -> Result<Vec<SymbolId>, Vec<SymbolId>> {
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    let mut seen = HashSet::new();
    for p in productions {
        for a in &p.args {
            if seen.insert((a.index(), p.lhs.index())) {
                edges[a.index()].push(p.lhs.index());
                indegree[p.lhs.index()] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(SymbolId(i as u32));
        for &j in edges[i].iter().rev() {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Walk backwards along unresolved edges until a symbol repeats.
    let stuck: Vec<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, tos) in edges.iter().enumerate() {
        for &to in tos {
            if indegree[from] > 0 || from == to {
                preds[to].push(from);
            }
        }
    }
    let mut path = vec![stuck[0]];
    let mut pos: HashMap<usize, usize> = HashMap::from([(stuck[0], 0)]);
    loop {
        let cur = *path.last().unwrap();
        let next = preds[cur][0];
        if let Some(&at) = pos.get(&next) {
            let mut cycle: Vec<SymbolId> = path[at..].iter().map(|&i| SymbolId(i as u32)).collect();
            cycle.reverse();
            return Err(cycle);
        }
        pos.insert(next, path.len());
        path.push(next);
    }
}

/// A program: an ordered term over grammar productions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Program {
    pub prod: ProdId,
    pub children: Vec<Program>,
}

impl Program {
    pub fn new(prod: ProdId, children: Vec<Program>) -> Self {
        Program { prod, children }
    }

    pub fn leaf(prod: ProdId) -> Self {
        Program {
            prod,
            children: Vec::new(),
        }
    }

    pub fn symbol(&self, g: &Grammar) -> SymbolId {
        g.production(self.prod).lhs
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Program::size).sum::<usize>()
    }
}

/// An input-output example; `inputs` is indexed by [`VarId`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example<V> {
    pub inputs: Vec<V>,
    pub output: V,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("production {0:?} is not part of the grammar")]
    UnknownProduction(ProdId),
    #[error("operator `{op}` expects {expected} arguments, got {found}")]
    Arity {
        op: String,
        expected: usize,
        found: usize,
    },
    #[error("variable {0:?} is unbound")]
    UnboundVariable(VarId),
    #[error("operator `{op}`: {message}")]
    BadArgument { op: String, message: String },
}

/// Bottom-up concrete evaluation. `Ok(None)` is the undefined result of a
/// partial operator whose precondition failed.
pub fn eval_concrete<D: Domain>(
    g: &Grammar,
    domain: &D,
    p: &Program,
    inputs: &[D::Value],
) -> Result<Option<D::Value>, EvalError> {
    let prod = g
        .productions()
        .get(p.prod.index())
        .ok_or(EvalError::UnknownProduction(p.prod))?;
    if let ProductionKind::Variable(v) = prod.kind {
        return inputs
            .get(v.index())
            .cloned()
            .map(Some)
            .ok_or(EvalError::UnboundVariable(v));
    }
    if prod.args.len() != p.children.len() {
        return Err(EvalError::Arity {
            op: prod.op.clone(),
            expected: prod.args.len(),
            found: p.children.len(),
        });
    }
    let mut args = Vec::with_capacity(p.children.len());
    for c in &p.children {
        match eval_concrete(g, domain, c, inputs)? {
            Some(v) => args.push(v),
            None => return Ok(None),
        }
    }
    let refs: Vec<&D::Value> = args.iter().collect();
    domain.eval(prod, &refs)
}

/// Abstract evaluation of a program under a full abstract input. `None` when
/// some transformer returns bottom or a variable is unbound.
pub fn eval_abstract<D: Domain>(g: &Grammar, domain: &D, p: &Program, inputs: &[D::Abs]) -> Option<D::Abs> {
    let prod = g.productions().get(p.prod.index())?;
    if let ProductionKind::Variable(v) = prod.kind {
        return inputs.get(v.index()).cloned();
    }
    let args: Option<Vec<D::Abs>> = p
        .children
        .iter()
        .map(|c| eval_abstract(g, domain, c, inputs))
        .collect();
    let args = args?;
    let refs: Vec<&D::Abs> = args.iter().collect();
    domain.transform(prod, &refs)
}

/// Number of programs derivable from `symbol`, by the sum/product recurrence.
pub fn count_programs(g: &Grammar, symbol: SymbolId) -> BigUint {
    let mut counts: Vec<BigUint> = vec![BigUint::ZERO; g.num_symbols()];
    for &s in g.topological_order() {
        let mut total = BigUint::ZERO;
        for &pid in g.productions_of(s) {
            let mut prod_count = BigUint::from(1u32);
            for a in &g.production(pid).args {
                prod_count *= &counts[a.index()];
            }
            total += prod_count;
        }
        counts[s.index()] = total;
    }
    counts[symbol.index()].clone()
}

/// Lazily enumerates every program derivable from `symbol`, each exactly once.
///
/// Order: productions in declaration order, then children in odometer order with
/// the leftmost child varying slowest.
pub fn enumerate_programs(g: &Grammar, symbol: SymbolId) -> ProgramEnumerator<'_> {
    ProgramEnumerator::new(g, symbol)
}

pub struct ProgramEnumerator<'g> {
    g: &'g Grammar,
    symbol: SymbolId,
    memo: HashMap<SymbolId, std::rc::Rc<Vec<Program>>>,
    prod_pos: usize,
    lists: Vec<std::rc::Rc<Vec<Program>>>,
    odometer: Vec<usize>,
    fresh: bool,
}

impl<'g> ProgramEnumerator<'g> {
    fn new(g: &'g Grammar, symbol: SymbolId) -> Self {
        ProgramEnumerator {
            g,
            symbol,
            memo: HashMap::new(),
            prod_pos: 0,
            lists: Vec::new(),
            odometer: Vec::new(),
            fresh: true,
        }
    }

    fn all_at(&mut self, s: SymbolId) -> std::rc::Rc<Vec<Program>> {
        if let Some(v) = self.memo.get(&s) {
            return v.clone();
        }
        let mut out = Vec::new();
        for &pid in self.g.productions_of(s) {
            let lists: Vec<_> = self
                .g
                .production(pid)
                .args
                .iter()
                .map(|&a| self.all_at(a))
                .collect();
            for_each_tuple(&lists, |children| out.push(Program::new(pid, children)));
        }
        let out = std::rc::Rc::new(out);
        self.memo.insert(s, out.clone());
        out
    }

    fn load_production(&mut self) -> bool {
        let prods = self.g.productions_of(self.symbol);
        while self.prod_pos < prods.len() {
            let pid = prods[self.prod_pos];
            let args = self.g.production(pid).args.clone();
            self.lists = args.iter().map(|&a| self.all_at(a)).collect();
            if self.lists.iter().all(|l| !l.is_empty()) {
                self.odometer = vec![0; self.lists.len()];
                return true;
            }
            self.prod_pos += 1;
        }
        false
    }
}

impl Iterator for ProgramEnumerator<'_> {
    type Item = Program;

    fn next(&mut self) -> Option<Program> {
        if self.fresh {
            self.fresh = false;
            if !self.load_production() {
                return None;
            }
        } else if !advance(&mut self.odometer, &self.lists) {
            self.prod_pos += 1;
            if !self.load_production() {
                return None;
            }
        }
        let pid = *self.g.productions_of(self.symbol).get(self.prod_pos)?;
        let children = self
            .odometer
            .iter()
            .zip(&self.lists)
            .map(|(&i, l)| l[i].clone())
            .collect();
        Some(Program::new(pid, children))
    }
}

/// Rightmost-fastest odometer step; false once exhausted.
fn advance<T>(odometer: &mut [usize], lists: &[std::rc::Rc<Vec<T>>]) -> bool {
    for i in (0..odometer.len()).rev() {
        odometer[i] += 1;
        if odometer[i] < lists[i].len() {
            return true;
        }
        odometer[i] = 0;
    }
    false
}

fn for_each_tuple(lists: &[std::rc::Rc<Vec<Program>>], mut f: impl FnMut(Vec<Program>)) {
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    let mut odometer = vec![0; lists.len()];
    loop {
        f(odometer.iter().zip(lists).map(|(&i, l)| l[i].clone()).collect());
        if !advance(&mut odometer, lists) {
            break;
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected `)` at byte {0}")]
    UnexpectedClose(usize),
    #[error("trailing input after program: `{0}`")]
    Trailing(String),
    #[error("bad string literal: {0}")]
    BadString(String),
    #[error("no derivation of `{0}` in the grammar")]
    NoDerivation(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Sexp {
    Atom(String),
    Str(String),
    List(Vec<Sexp>),
}

impl Sexp {
    fn as_literal(&self) -> Option<Literal> {
        match self {
            Sexp::Atom(a) => a.parse::<i64>().ok().map(Literal::Int),
            Sexp::Str(s) => Some(Literal::Str(s.clone())),
            Sexp::List(_) => None,
        }
    }

    fn parse(text: &str) -> Result<Sexp, ParseError> {
        let mut pos = 0;
        let bytes = text.as_bytes();
        let e = Self::parse_at(text, bytes, &mut pos)?;
        skip_ws(bytes, &mut pos);
        if pos < bytes.len() {
            return Err(ParseError::Trailing(text[pos..].to_string()));
        }
        Ok(e)
    }

    fn parse_at(text: &str, bytes: &[u8], pos: &mut usize) -> Result<Sexp, ParseError> {
        skip_ws(bytes, pos);
        match bytes.get(*pos) {
            None => Err(ParseError::UnexpectedEnd),
            Some(b')') => Err(ParseError::UnexpectedClose(*pos)),
            Some(b'(') => {
                *pos += 1;
                let mut items = Vec::new();
                loop {
                    skip_ws(bytes, pos);
                    match bytes.get(*pos) {
                        None => return Err(ParseError::UnexpectedEnd),
                        Some(b')') => {
                            *pos += 1;
                            return Ok(Sexp::List(items));
                        }
                        _ => items.push(Self::parse_at(text, bytes, pos)?),
                    }
                }
            }
            Some(b'"') => {
                let start = *pos;
                *pos += 1;
                while *pos < bytes.len() {
                    match bytes[*pos] {
                        b'\\' => *pos += 2,
                        b'"' => {
                            *pos += 1;
                            let lit = &text[start..*pos];
                            return serde_json::from_str::<String>(lit)
                                .map(Sexp::Str)
                                .map_err(|e| ParseError::BadString(e.to_string()));
                        }
                        _ => *pos += 1,
                    }
                }
                Err(ParseError::UnexpectedEnd)
            }
            Some(_) => {
                let start = *pos;
                while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && !matches!(bytes[*pos], b'(' | b')') {
                    *pos += 1;
                }
                Ok(Sexp::Atom(text[start..*pos].to_string()))
            }
        }
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

/// Mechanically unrolls a recursive grammar to exactly `depth` levels.
///
/// Every nonterminal on a cycle gets fresh copies `s0..s{depth}`: `s0` keeps the
/// productions with no same-cycle argument, `sd` keeps the recursive productions
/// with their same-cycle arguments rewritten to depth `d-1`. Nonterminals off any
/// cycle are copied unchanged. Copies left without productions are dropped.
pub fn unroll(file: &GrammarFile, depth: usize) -> Result<GrammarFile, Vec<Diagnostic>> {
    let n = file.nonterminals.len();
    let index: HashMap<&str, usize> = file
        .nonterminals
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut diags = Vec::new();
    if !index.contains_key(file.start.as_str()) {
        diags.push(Diagnostic::UnknownStartSymbol(file.start.clone()));
    }
    for (i, p) in file.productions.iter().enumerate() {
        for s in std::iter::once(&p.lhs).chain(&p.args) {
            if !index.contains_key(s.as_str()) {
                diags.push(Diagnostic::UnknownSymbol {
                    production: i,
                    symbol: s.clone(),
                });
            }
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let mut edges = vec![Vec::new(); n];
    for p in &file.productions {
        for a in &p.args {
            edges[index[p.lhs.as_str()]].push(index[a.as_str()]);
        }
    }
    let scc = strongly_connected(&edges);
    let recursive: Vec<bool> = (0..n)
        .map(|i| scc.iter().filter(|&&c| c == scc[i]).count() > 1 || edges[i].contains(&i))
        .collect();
    let same_cycle = |a: usize, b: usize| recursive[a] && scc[a] == scc[b];
    let copy_name = |s: &str, d: usize| format!("{s}{d}");

    let mut nonterminals = Vec::new();
    let mut productions: Vec<ProductionDecl> = Vec::new();
    for (i, name) in file.nonterminals.iter().enumerate() {
        if !recursive[i] {
            nonterminals.push(name.clone());
            continue;
        }
        for d in 0..=depth {
            nonterminals.push(copy_name(name, d));
        }
    }
    for p in &file.productions {
        let lhs = index[p.lhs.as_str()];
        if !recursive[lhs] {
            productions.push(p.clone());
            continue;
        }
        let is_rec = p.args.iter().any(|a| same_cycle(lhs, index[a.as_str()]));
        for d in 0..=depth {
            if is_rec != (d > 0) {
                continue;
            }
            let args = p
                .args
                .iter()
                .map(|a| {
                    if same_cycle(lhs, index[a.as_str()]) {
                        copy_name(a, d - 1)
                    } else if recursive[index[a.as_str()]] {
                        copy_name(a, depth)
                    } else {
                        a.clone()
                    }
                })
                .collect();
            productions.push(ProductionDecl {
                lhs: copy_name(&p.lhs, d),
                op: p.op.clone(),
                constant: p.constant.clone(),
                args,
            });
        }
    }
    // Drop copies that ended up empty, and everything that depends on them.
    loop {
        let defined: HashSet<&str> = productions.iter().map(|p| p.lhs.as_str()).collect();
        let before = productions.len();
        let kept: Vec<ProductionDecl> = productions
            .iter()
            .filter(|p| p.args.iter().all(|a| defined.contains(a.as_str())))
            .cloned()
            .collect();
        let changed = kept.len() != before;
        productions = kept;
        if !changed {
            break;
        }
    }
    let defined: HashSet<String> = productions.iter().map(|p| p.lhs.clone()).collect();
    let start_idx = index[file.start.as_str()];
    let start = if recursive[start_idx] {
        copy_name(&file.start, depth)
    } else {
        file.start.clone()
    };
    nonterminals.retain(|s| defined.contains(s) || *s == start);
    // Deepest copies first, so the unrolled start symbol leads like a hand-written grammar.
    let mut ordered: BTreeMap<(usize, std::cmp::Reverse<usize>), String> = BTreeMap::new();
    for s in nonterminals {
        let (base, d) = split_copy(&s, &file.nonterminals, &recursive);
        ordered.insert((base, std::cmp::Reverse(d)), s);
    }
    Ok(GrammarFile {
        start,
        variables: file.variables.clone(),
        nonterminals: ordered.into_values().collect(),
        productions: sorted_by_lhs(productions, &file.nonterminals, &recursive),
    })
}

fn split_copy(name: &str, originals: &[String], recursive: &[bool]) -> (usize, usize) {
    for (i, o) in originals.iter().enumerate() {
        if recursive[i] {
            if let Some(d) = name.strip_prefix(o.as_str()).and_then(|r| r.parse::<usize>().ok()) {
                return (i, d);
            }
        } else if o == name {
            return (i, 0);
        }
    }
    (usize::MAX, 0)
}

fn sorted_by_lhs(mut prods: Vec<ProductionDecl>, originals: &[String], recursive: &[bool]) -> Vec<ProductionDecl> {
    // Stable: declaration order is preserved within each left-hand side.
    prods.sort_by_key(|p| {
        let (base, d) = split_copy(&p.lhs, originals, recursive);
        (base, std::cmp::Reverse(d))
    });
    prods
}

/// Tarjan-free SCC labelling via reachability (grammars are small).
fn strongly_connected(edges: &[Vec<usize>]) -> Vec<usize> {
    let n = edges.len();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &v in &edges[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        })
        .collect();
    (0..n)
        .map(|i| (0..n).find(|&j| j == i || (reach[i][j] && reach[j][i])).unwrap())
        .collect()
}
