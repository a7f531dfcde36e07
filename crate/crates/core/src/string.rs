//! String transformations over `concat`/`substr`, abstracted by conjunctions of
//! `Len`, `FromInp` and `CharEq` predicates. Integer index arguments are
//! tracked exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use crate::domain::{conjoin_transform, Atomic, Domain, SampleRng};
use crate::grammar::{
    Diagnostic, EvalError, Grammar, GrammarFile, Literal, Production, ProductionDecl, ProductionKind, SymbolId, VarId,
    VariableDecl,
};

pub const TAG: &str = "string";
pub const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrValue {
    Str(String),
    Int(i64),
}

impl StrValue {
    pub fn str(s: &str) -> Self {
        StrValue::Str(s.to_string())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            StrValue::Str(s) => Some(s),
            StrValue::Int(_) => None,
        }
    }
}

impl fmt::Display for StrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrValue::Str(s) => write!(f, "{s:?}"),
            StrValue::Int(i) => write!(f, "{i}"),
        }
    }
}

/// Atomic predicate. The derived order (template, then parameters) is the
/// canonical conjunct order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pred {
    Len(u32),
    /// Every character at an index in `idx` occurs somewhere in `var`'s value.
    FromInp { idx: Vec<u32>, var: VarId },
    /// Every character at an index in `idx` equals `var`'s character at `pos`.
    CharEq { idx: Vec<u32>, var: VarId, pos: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrAbs {
    /// Canonical conjunction; empty means no information.
    Conj(Vec<Pred>),
    Index(i64),
}

/// Sorts, merges and checks a conjunction. `None` is bottom: two different
/// lengths, or an index at or beyond the known length.
pub fn canonicalize(preds: impl IntoIterator<Item = Pred>) -> Option<Vec<Pred>> {
    let mut len: Option<u32> = None;
    let mut from: BTreeMap<VarId, BTreeSet<u32>> = BTreeMap::new();
    let mut eq: BTreeMap<(VarId, u32), BTreeSet<u32>> = BTreeMap::new();
    for p in preds {
        match p {
            Pred::Len(k) => {
                if len.is_some_and(|l| l != k) {
                    return None;
                }
                len = Some(k);
            }
            Pred::FromInp { idx, var } => from.entry(var).or_default().extend(idx),
            Pred::CharEq { idx, var, pos } => eq.entry((var, pos)).or_default().extend(idx),
        }
    }
    let mut out: Vec<Pred> = len.into_iter().map(Pred::Len).collect();
    for (var, idx) in from {
        if !idx.is_empty() {
            out.push(Pred::FromInp {
                idx: idx.into_iter().collect(),
                var,
            });
        }
    }
    for ((var, pos), idx) in eq {
        if !idx.is_empty() {
            out.push(Pred::CharEq {
                idx: idx.into_iter().collect(),
                var,
                pos,
            });
        }
    }
    out.sort();
    if let Some(l) = len {
        let beyond = out.iter().any(|p| match p {
            Pred::FromInp { idx, .. } | Pred::CharEq { idx, .. } => idx.last().is_some_and(|&j| j >= l),
            Pred::Len(_) => false,
        });
        if beyond {
            return None;
        }
    }
    Some(out)
}

fn shifted(idx: &[u32], by: u32) -> Vec<u32> {
    idx.iter().map(|j| j + by).collect()
}

/// Atomic transformer for `concat(s₁, s₂)`, one predicate per argument.
pub fn concat_atomic(left: &Pred, right: &Pred) -> Atomic<Pred> {
    match (left, right) {
        (Pred::Len(a), Pred::Len(b)) => Atomic::Holds(Pred::Len(a + b)),
        (p @ (Pred::FromInp { .. } | Pred::CharEq { .. }), _) => Atomic::Holds(p.clone()),
        (Pred::Len(k), Pred::FromInp { idx, var }) => Atomic::Holds(Pred::FromInp {
            idx: shifted(idx, *k),
            var: *var,
        }),
        (Pred::Len(k), Pred::CharEq { idx, var, pos }) => Atomic::Holds(Pred::CharEq {
            idx: shifted(idx, *k),
            var: *var,
            pos: *pos,
        }),
    }
}

/// Atomic transformer for `substr(s, jl, jr)`.
pub fn substr_atomic(p: &Pred, jl: i64, jr: i64) -> Atomic<Pred> {
    let window = |idx: &[u32]| -> Vec<u32> {
        idx.iter()
            .filter(|&&j| (j as i64) >= jl && (j as i64) < jr)
            .map(|&j| (j as i64 - jl) as u32)
            .collect()
    };
    match p {
        Pred::Len(k) => {
            if 0 <= jl && jl <= jr && jr <= *k as i64 {
                Atomic::Holds(Pred::Len((jr - jl) as u32))
            } else {
                Atomic::Bottom
            }
        }
        Pred::FromInp { idx, var } => Atomic::Holds(Pred::FromInp {
            idx: window(idx),
            var: *var,
        }),
        Pred::CharEq { idx, var, pos } => Atomic::Holds(Pred::CharEq {
            idx: window(idx),
            var: *var,
            pos: *pos,
        }),
    }
}

/// Does the atomic predicate hold of string `s` under input binding `env`?
pub fn pred_holds(p: &Pred, s: &[char], env: &[StrValue]) -> bool {
    let input = |var: &VarId| -> Option<Vec<char>> { env.get(var.index())?.as_str().map(|x| x.chars().collect()) };
    match p {
        Pred::Len(k) => s.len() == *k as usize,
        Pred::FromInp { idx, var } => match input(var) {
            Some(x) => idx.iter().all(|&j| s.get(j as usize).is_some_and(|c| x.contains(c))),
            None => false,
        },
        Pred::CharEq { idx, var, pos } => match input(var).and_then(|x| x.get(*pos as usize).copied()) {
            Some(c) => idx.iter().all(|&j| s.get(j as usize) == Some(&c)),
            None => false,
        },
    }
}

fn fmt_set(idx: &[u32]) -> String {
    let items: Vec<String> = idx.iter().map(u32::to_string).collect();
    format!("{{{}}}", items.join(","))
}

pub fn fmt_pred(p: &Pred, var_names: &[String]) -> String {
    let name = |v: &VarId| var_names.get(v.index()).cloned().unwrap_or_else(|| format!("v{}", v.0));
    match p {
        Pred::Len(k) => format!("Len({k})"),
        Pred::FromInp { idx, var } => format!("FromInp({},{})", fmt_set(idx), name(var)),
        Pred::CharEq { idx, var, pos } => format!("CharEq({},{},{pos})", fmt_set(idx), name(var)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StringDomain {
    /// 1: Len; 2: + FromInp; 3: + CharEq.
    pub level: u8,
    pub max_input_len: u32,
}

impl StringDomain {
    pub fn new(level: u8, max_input_len: u32) -> Self {
        assert!((1..=3).contains(&level), "string level must be 1, 2 or 3");
        StringDomain { level, max_input_len }
    }

    fn input_abs(&self, var: VarId, n: u32) -> StrAbs {
        let mut preds = vec![Pred::Len(n)];
        if self.level >= 2 && n > 0 {
            preds.push(Pred::FromInp {
                idx: (0..n).collect(),
                var,
            });
        }
        if self.level >= 3 {
            for j in 0..n {
                preds.push(Pred::CharEq { idx: vec![j], var, pos: j });
            }
        }
        StrAbs::Conj(canonicalize(preds).expect("input abstraction is consistent"))
    }

    fn allowed(&self, p: &Pred) -> bool {
        match p {
            Pred::Len(_) => true,
            Pred::FromInp { .. } => self.level >= 2,
            Pred::CharEq { .. } => self.level >= 3,
        }
    }

    /// Checks one atomic rule on `trials` random instances; each instance
    /// draws concrete arguments, a predicate of the rule's shape that holds of
    /// the first string argument (possibly weakened), and compares the atomic
    /// result with the concrete result. Returns the number of instances checked.
    pub fn check_rule_soundness(&self, rule: StrRule, trials: usize, seed: u64) -> Result<usize, RuleCounterexample> {
        let mut rng = SampleRng::seed_from_u64(seed);
        let g = Grammar::from_file(string_dsl(1, 8)).expect("builtin string grammar");
        let s_sym = g.start();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < trials {
            attempts += 1;
            assert!(attempts < trials * 1000, "rule {rule:?}: sampler cannot produce instances");
            let env = self.sample_env(&g, &mut rng);
            let s1 = self.sample_value(&g, s_sym, &env, &mut rng);
            let s2 = self.sample_value(&g, s_sym, &env, &mut rng);
            let (Some(a), Some(b)) = (s1.as_str(), s2.as_str()) else { continue };
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            let pick = |s: &[char], template: u8, rng: &mut SampleRng| -> Option<Pred> {
                let StrAbs::Conj(ps) = self.abstraction_in_context(&StrValue::Str(s.iter().collect()), &env) else {
                    return None;
                };
                let cands: Vec<&Pred> = ps.iter().filter(|p| template_of(p) == template).collect();
                let p = (*cands.choose(rng)?).clone();
                Some(weaken_pred(p, rng))
            };
            let jl = rng.random_range(-1..=9i64);
            let jr = rng.random_range(-1..=9i64);
            let (shape, result, concrete): (Vec<Pred>, Atomic<Pred>, Option<Vec<char>>) = match rule {
                StrRule::ConcatLenLen | StrRule::ConcatLenFromInp | StrRule::ConcatLenCharEq => {
                    let t = match rule {
                        StrRule::ConcatLenLen => 0,
                        StrRule::ConcatLenFromInp => 1,
                        _ => 2,
                    };
                    let (Some(l), Some(r)) = (pick(&ca, 0, &mut rng), pick(&cb, t, &mut rng)) else { continue };
                    let out = concat_atomic(&l, &r);
                    (vec![l, r], out, Some([ca.clone(), cb.clone()].concat()))
                }
                StrRule::ConcatFromInpLeft | StrRule::ConcatCharEqLeft => {
                    let t = if rule == StrRule::ConcatFromInpLeft { 1 } else { 2 };
                    let Some(l) = pick(&ca, t, &mut rng) else { continue };
                    let r = pick(&cb, rng.random_range(0..3), &mut rng).unwrap_or(Pred::Len(cb.len() as u32));
                    let out = concat_atomic(&l, &r);
                    (vec![l, r], out, Some([ca.clone(), cb.clone()].concat()))
                }
                StrRule::SubstrLen | StrRule::SubstrFromInp | StrRule::SubstrCharEq => {
                    let t = match rule {
                        StrRule::SubstrLen => 0,
                        StrRule::SubstrFromInp => 1,
                        _ => 2,
                    };
                    let Some(p) = pick(&ca, t, &mut rng) else { continue };
                    let out = substr_atomic(&p, jl, jr);
                    let conc = (0 <= jl && jl <= jr && jr <= ca.len() as i64)
                        .then(|| ca[jl as usize..jr as usize].to_vec());
                    (vec![p], out, conc)
                }
            };
            checked += 1;
            let sound = match (&result, &concrete) {
                (_, None) => true,
                (Atomic::Holds(p), Some(c)) => pred_holds(p, c, &env),
                (Atomic::Unknown, Some(_)) => true,
                (Atomic::Bottom, Some(_)) => false,
            };
            if !sound {
                return Err(RuleCounterexample {
                    rule,
                    env,
                    args: vec![a.to_string(), b.to_string()],
                    indices: (jl, jr),
                    preds: shape,
                    result,
                });
            }
        }
        Ok(checked)
    }
}

fn template_of(p: &Pred) -> u8 {
    match p {
        Pred::Len(_) => 0,
        Pred::FromInp { .. } => 1,
        Pred::CharEq { .. } => 2,
    }
}

fn weaken_pred(p: Pred, rng: &mut SampleRng) -> Pred {
    let mut thin = |idx: Vec<u32>| -> Vec<u32> {
        let kept: Vec<u32> = idx.iter().copied().filter(|_| rng.random_bool(0.7)).collect();
        if kept.is_empty() {
            idx
        } else {
            kept
        }
    };
    match p {
        Pred::Len(k) => Pred::Len(k),
        Pred::FromInp { idx, var } => Pred::FromInp { idx: thin(idx), var },
        Pred::CharEq { idx, var, pos } => Pred::CharEq {
            idx: thin(idx),
            var,
            pos,
        },
    }
}

/// The atomic transformer rules, one per argument-template shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrRule {
    ConcatLenLen,
    ConcatFromInpLeft,
    ConcatCharEqLeft,
    ConcatLenFromInp,
    ConcatLenCharEq,
    SubstrLen,
    SubstrFromInp,
    SubstrCharEq,
}

impl StrRule {
    pub const ALL: [StrRule; 8] = [
        StrRule::ConcatLenLen,
        StrRule::ConcatFromInpLeft,
        StrRule::ConcatCharEqLeft,
        StrRule::ConcatLenFromInp,
        StrRule::ConcatLenCharEq,
        StrRule::SubstrLen,
        StrRule::SubstrFromInp,
        StrRule::SubstrCharEq,
    ];

    /// Lowest level at which the rule can fire.
    pub fn level(self) -> u8 {
        match self {
            StrRule::ConcatLenLen | StrRule::SubstrLen => 1,
            StrRule::ConcatFromInpLeft | StrRule::ConcatLenFromInp | StrRule::SubstrFromInp => 2,
            _ => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleCounterexample {
    pub rule: StrRule,
    pub env: Vec<StrValue>,
    pub args: Vec<String>,
    pub indices: (i64, i64),
    pub preds: Vec<Pred>,
    pub result: Atomic<Pred>,
}

/// True iff every production of `s` is an integer constant.
pub fn is_index_symbol(g: &Grammar, s: SymbolId) -> bool {
    let prods = g.productions_of(s);
    !prods.is_empty()
        && prods
            .iter()
            .all(|&p| g.production(p).kind == ProductionKind::Constant && g.production(p).int_constant().is_some())
}

/// The built-in string DSL, `S_d ::= x | concat(S_{d-1}, S_{d-1}) | substr(S_{d-1}, I, I)`,
/// `S_0 ::= x`, `I ::= 0 | … | max_index`. Programs have depth at most `depth`.
pub fn string_dsl(depth: usize, max_index: i64) -> GrammarFile {
    let s = |d: usize| format!("S{d}");
    let mut productions = Vec::new();
    for d in (0..=depth).rev() {
        productions.push(ProductionDecl {
            lhs: s(d),
            op: "x".into(),
            constant: None,
            args: vec![],
        });
        if d > 0 {
            productions.push(ProductionDecl {
                lhs: s(d),
                op: "concat".into(),
                constant: None,
                args: vec![s(d - 1), s(d - 1)],
            });
            productions.push(ProductionDecl {
                lhs: s(d),
                op: "substr".into(),
                constant: None,
                args: vec![s(d - 1), "I".into(), "I".into()],
            });
        }
    }
    for j in 0..=max_index {
        productions.push(ProductionDecl {
            lhs: "I".into(),
            op: "int".into(),
            constant: Some(Literal::Int(j)),
            args: vec![],
        });
    }
    let mut nonterminals: Vec<String> = (0..=depth).rev().map(s).collect();
    nonterminals.push("I".into());
    GrammarFile {
        start: s(depth),
        variables: vec![VariableDecl {
            name: "x".into(),
            domain: TAG.into(),
        }],
        nonterminals,
        productions,
    }
}

fn random_string(rng: &mut SampleRng, len: usize) -> String {
    // A small alphabet half the time, so repeated characters are common.
    let alphabet: &[u8] = if rng.random_bool(0.5) { b"abc" } else { ALPHABET };
    (0..len).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

impl Domain for StringDomain {
    type Value = StrValue;
    type Abs = StrAbs;

    fn tag(&self) -> &'static str {
        TAG
    }

    fn granularity(&self) -> u32 {
        self.level as u32
    }

    fn validate(&self, g: &Grammar) -> Result<(), Vec<Diagnostic>> {
        let mut diags = Vec::new();
        for v in g.variables() {
            if v.domain != TAG {
                diags.push(Diagnostic::VariableDomain {
                    variable: v.name.clone(),
                    expected: TAG.into(),
                    found: v.domain.clone(),
                });
            }
        }
        let index: Vec<bool> = (0..g.num_symbols())
            .map(|s| is_index_symbol(g, SymbolId(s as u32)))
            .collect();
        for (i, p) in g.productions().iter().enumerate() {
            let arg_is_index: Vec<bool> = p.args.iter().map(|a| index[a.index()]).collect();
            let problem = match p.kind {
                ProductionKind::Variable(_) => None,
                ProductionKind::Constant => match (&p.constant, index[p.lhs.index()]) {
                    (Some(Literal::Str(_)), false) | (Some(Literal::Int(_)), true) => None,
                    (Some(Literal::Int(_)), false) => Some("integer constants must not share a symbol with string productions".into()),
                    _ => Some("string constant at an index symbol".into()),
                },
                ProductionKind::Operator => match (p.op.as_str(), arg_is_index.as_slice(), &p.constant) {
                    ("concat", [false, false], None) => None,
                    ("substr", [false, true, true], None) => None,
                    ("concat", _, _) => Some("expects two string arguments".into()),
                    ("substr", _, _) => Some("expects a string and two index arguments".into()),
                    (op, _, _) => Some(format!("unknown string operator `{op}`")),
                },
            };
            if let Some(message) = problem {
                diags.push(Diagnostic::Operator {
                    production: i,
                    op: p.op.clone(),
                    message,
                });
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(diags)
        }
    }

    fn abstraction(&self, var: VarId, v: &StrValue) -> StrAbs {
        match v {
            StrValue::Str(s) => self.input_abs(var, s.chars().count() as u32),
            StrValue::Int(j) => StrAbs::Index(*j),
        }
    }

    fn gamma_contains(&self, a: &StrAbs, v: &StrValue, env: &[StrValue]) -> bool {
        match (a, v) {
            (StrAbs::Index(j), StrValue::Int(i)) => i == j,
            (StrAbs::Conj(ps), StrValue::Str(s)) => {
                let chars: Vec<char> = s.chars().collect();
                ps.iter().all(|p| pred_holds(p, &chars, env))
            }
            _ => false,
        }
    }

    fn transform(&self, prod: &Production, args: &[&StrAbs]) -> Option<StrAbs> {
        match (prod.kind, &prod.constant) {
            (ProductionKind::Constant, Some(Literal::Int(j))) => return Some(StrAbs::Index(*j)),
            (ProductionKind::Constant, Some(Literal::Str(s))) => {
                return Some(StrAbs::Conj(vec![Pred::Len(s.chars().count() as u32)]))
            }
            _ => {}
        }
        let preds = match (prod.op.as_str(), args) {
            ("concat", [StrAbs::Conj(l), StrAbs::Conj(r)]) => {
                conjoin_transform(&[&l[..], &r[..]], |t| concat_atomic(t[0], t[1]))?
            }
            ("substr", [StrAbs::Conj(s), StrAbs::Index(jl), StrAbs::Index(jr)]) => {
                conjoin_transform(&[&s[..]], |t| substr_atomic(t[0], *jl, *jr))?
            }
            _ => return None,
        };
        canonicalize(preds).map(StrAbs::Conj)
    }

    fn eval(&self, prod: &Production, args: &[&StrValue]) -> Result<Option<StrValue>, EvalError> {
        match (prod.kind, &prod.constant) {
            (ProductionKind::Constant, Some(Literal::Int(j))) => return Ok(Some(StrValue::Int(*j))),
            (ProductionKind::Constant, Some(Literal::Str(s))) => return Ok(Some(StrValue::Str(s.clone()))),
            _ => {}
        }
        let bad = |message: &str| EvalError::BadArgument {
            op: prod.op.clone(),
            message: message.into(),
        };
        match (prod.op.as_str(), args) {
            ("concat", [StrValue::Str(a), StrValue::Str(b)]) => Ok(Some(StrValue::Str(format!("{a}{b}")))),
            ("concat", _) => Err(bad("expects two strings")),
            ("substr", [StrValue::Str(s), StrValue::Int(jl), StrValue::Int(jr)]) => {
                let chars: Vec<char> = s.chars().collect();
                if 0 <= *jl && jl <= jr && *jr <= chars.len() as i64 {
                    Ok(Some(StrValue::Str(chars[*jl as usize..*jr as usize].iter().collect())))
                } else {
                    Ok(None)
                }
            }
            ("substr", _) => Err(bad("expects a string and two integers")),
            (op, _) => Err(EvalError::UnknownOperator(op.to_string())),
        }
    }

    fn input_space(&self, var: VarId) -> Vec<StrAbs> {
        (0..=self.max_input_len).map(|n| self.input_abs(var, n)).collect()
    }

    fn in_input_space(&self, var: VarId, a: &StrAbs) -> bool {
        match a {
            StrAbs::Conj(ps) => match ps.first() {
                Some(Pred::Len(n)) if *n <= self.max_input_len => *a == self.input_abs(var, *n),
                _ => false,
            },
            StrAbs::Index(_) => false,
        }
    }

    fn encode_abs(&self, a: &StrAbs) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_be_bytes());
        match a {
            StrAbs::Index(j) => {
                out.push(0);
                out.extend_from_slice(&j.to_be_bytes());
            }
            StrAbs::Conj(ps) => {
                out.push(1);
                for p in ps {
                    match p {
                        Pred::Len(k) => {
                            out.push(0);
                            put(&mut out, *k);
                        }
                        Pred::FromInp { idx, var } => {
                            out.push(1);
                            put(&mut out, var.0);
                            put(&mut out, idx.len() as u32);
                            idx.iter().for_each(|&j| put(&mut out, j));
                        }
                        Pred::CharEq { idx, var, pos } => {
                            out.push(2);
                            put(&mut out, var.0);
                            put(&mut out, *pos);
                            put(&mut out, idx.len() as u32);
                            idx.iter().for_each(|&j| put(&mut out, j));
                        }
                    }
                }
            }
        }
        out
    }

    fn decode_abs(&self, bytes: &[u8]) -> Option<StrAbs> {
        let (&tag, mut rest) = bytes.split_first()?;
        let take = |rest: &mut &[u8]| -> Option<u32> {
            let (head, tail) = rest.split_at_checked(4)?;
            *rest = tail;
            Some(u32::from_be_bytes(head.try_into().ok()?))
        };
        match tag {
            0 => Some(StrAbs::Index(i64::from_be_bytes(rest.try_into().ok()?))),
            1 => {
                let mut preds = Vec::new();
                while let Some((&t, tail)) = rest.split_first() {
                    rest = tail;
                    let p = match t {
                        0 => Pred::Len(take(&mut rest)?),
                        1 => {
                            let var = VarId(take(&mut rest)?);
                            let n = take(&mut rest)?;
                            let idx = (0..n).map(|_| take(&mut rest)).collect::<Option<_>>()?;
                            Pred::FromInp { idx, var }
                        }
                        2 => {
                            let var = VarId(take(&mut rest)?);
                            let pos = take(&mut rest)?;
                            let n = take(&mut rest)?;
                            let idx = (0..n).map(|_| take(&mut rest)).collect::<Option<_>>()?;
                            Pred::CharEq { idx, var, pos }
                        }
                        _ => return None,
                    };
                    if !self.allowed(&p) {
                        return None;
                    }
                    preds.push(p);
                }
                // Only canonical encodings are accepted.
                let canon = canonicalize(preds.clone())?;
                (canon == preds).then_some(StrAbs::Conj(preds))
            }
            _ => None,
        }
    }

    fn fmt_abs(&self, a: &StrAbs, var_names: &[String]) -> String {
        match a {
            StrAbs::Index(j) => format!("Index({j})"),
            StrAbs::Conj(ps) if ps.is_empty() => "True".into(),
            StrAbs::Conj(ps) => ps.iter().map(|p| fmt_pred(p, var_names)).collect::<Vec<_>>().join("&"),
        }
    }

    fn parse_value(&self, v: &serde_json::Value) -> Result<StrValue, String> {
        match v {
            serde_json::Value::String(s) => Ok(StrValue::Str(s.clone())),
            serde_json::Value::Number(n) => n.as_i64().map(StrValue::Int).ok_or_else(|| format!("bad integer {n}")),
            other => Err(format!("expected a string, got {other}")),
        }
    }

    fn value_to_json(&self, v: &StrValue) -> serde_json::Value {
        match v {
            StrValue::Str(s) => serde_json::Value::String(s.clone()),
            StrValue::Int(i) => serde_json::Value::from(*i),
        }
    }

    fn sample_env(&self, g: &Grammar, rng: &mut SampleRng) -> Vec<StrValue> {
        (0..g.num_variables())
            .map(|_| {
                let n = rng.random_range(0..=self.max_input_len as usize);
                StrValue::Str(random_string(rng, n))
            })
            .collect()
    }

    fn sample_value(&self, g: &Grammar, symbol: SymbolId, env: &[StrValue], rng: &mut SampleRng) -> StrValue {
        if is_index_symbol(g, symbol) {
            let consts: Vec<i64> = g
                .productions_of(symbol)
                .iter()
                .filter_map(|&p| g.production(p).int_constant())
                .collect();
            return StrValue::Int(*consts.choose(rng).expect("index symbol has constants"));
        }
        let inputs: Vec<Vec<char>> = env.iter().filter_map(|v| v.as_str()).map(|s| s.chars().collect()).collect();
        let mut out = String::new();
        let pieces = rng.random_range(0..=3);
        for _ in 0..pieces {
            match inputs.choose(rng) {
                Some(x) if !x.is_empty() && rng.random_bool(0.7) => {
                    let a = rng.random_range(0..x.len());
                    let b = rng.random_range(a..=x.len());
                    out.extend(&x[a..b]);
                }
                _ => {
                    let n = rng.random_range(0..=3);
                    out.push_str(&random_string(rng, n));
                }
            }
        }
        StrValue::Str(out)
    }

    fn abstraction_in_context(&self, v: &StrValue, env: &[StrValue]) -> StrAbs {
        let s: Vec<char> = match v {
            StrValue::Int(j) => return StrAbs::Index(*j),
            StrValue::Str(s) => s.chars().collect(),
        };
        let mut preds = vec![Pred::Len(s.len() as u32)];
        for (i, x) in env.iter().enumerate() {
            let Some(x) = x.as_str() else { continue };
            let x: Vec<char> = x.chars().collect();
            let var = VarId(i as u32);
            if self.level >= 2 {
                let idx = (0..s.len() as u32).filter(|&j| x.contains(&s[j as usize])).collect();
                preds.push(Pred::FromInp { idx, var });
            }
            if self.level >= 3 {
                for (pos, c) in x.iter().enumerate() {
                    let idx = (0..s.len() as u32).filter(|&j| s[j as usize] == *c).collect();
                    preds.push(Pred::CharEq {
                        idx,
                        var,
                        pos: pos as u32,
                    });
                }
            }
        }
        StrAbs::Conj(canonicalize(preds).expect("abstraction of a concrete string is consistent"))
    }

    fn weaken(&self, a: &StrAbs, rng: &mut SampleRng) -> StrAbs {
        match a {
            StrAbs::Index(_) => a.clone(),
            StrAbs::Conj(ps) => {
                let mut kept = Vec::new();
                for p in ps {
                    if rng.random_bool(0.7) {
                        kept.push(weaken_pred(p.clone(), rng));
                    }
                }
                StrAbs::Conj(canonicalize(kept).expect("weakening keeps consistency"))
            }
        }
    }

    fn sample_in_gamma(&self, a: &StrAbs, env: &[StrValue], rng: &mut SampleRng) -> Option<StrValue> {
        let ps = match a {
            StrAbs::Index(j) => return Some(StrValue::Int(*j)),
            StrAbs::Conj(ps) => ps,
        };
        let max_idx = ps
            .iter()
            .filter_map(|p| match p {
                Pred::FromInp { idx, .. } | Pred::CharEq { idx, .. } => idx.last().copied(),
                Pred::Len(_) => None,
            })
            .max();
        let len = ps
            .iter()
            .find_map(|p| match p {
                Pred::Len(k) => Some(*k as usize),
                _ => None,
            })
            .unwrap_or_else(|| max_idx.map_or(0, |m| m as usize + 1) + rng.random_range(0..3));
        let input = |var: &VarId| -> Option<Vec<char>> { env.get(var.index())?.as_str().map(|x| x.chars().collect()) };
        let mut out = Vec::with_capacity(len);
        for j in 0..len as u32 {
            let mut fixed: Option<char> = None;
            let mut pool: Option<Vec<char>> = None;
            for p in ps {
                match p {
                    Pred::CharEq { idx, var, pos } if idx.contains(&j) => {
                        let c = *input(var)?.get(*pos as usize)?;
                        if fixed.is_some_and(|f| f != c) {
                            return None;
                        }
                        fixed = Some(c);
                    }
                    Pred::FromInp { idx, var } if idx.contains(&j) => {
                        let x = input(var)?;
                        pool = Some(match pool {
                            None => x,
                            Some(prev) => prev.into_iter().filter(|c| x.contains(c)).collect(),
                        });
                    }
                    _ => {}
                }
            }
            let c = match (fixed, pool) {
                (Some(c), Some(pool)) if !pool.contains(&c) => return None,
                (Some(c), _) => c,
                (None, Some(pool)) => *pool.choose(rng)?,
                (None, None) => *ALPHABET.choose(rng).unwrap() as char,
            };
            out.push(c);
        }
        let v = StrValue::Str(out.into_iter().collect());
        self.gamma_contains(a, &v, env).then_some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{abstract_input, check_transformer_soundness};
    use crate::grammar::ProdId;

    fn x() -> VarId {
        VarId(0)
    }

    fn conj(ps: Vec<Pred>) -> StrAbs {
        StrAbs::Conj(canonicalize(ps).unwrap())
    }

    fn prod(g: &Grammar, op: &str) -> ProdId {
        ProdId(g.productions().iter().position(|p| p.op == op).unwrap() as u32)
    }

    #[test]
    fn concrete_operators() {
        let g = Grammar::from_file(string_dsl(1, 6)).unwrap();
        let d = StringDomain::new(3, 8);
        let concat = g.production(prod(&g, "concat"));
        let substr = g.production(prod(&g, "substr"));
        let s = |v: &str| StrValue::str(v);
        assert_eq!(d.eval(concat, &[&s("ab"), &s("cde")]), Ok(Some(s("abcde"))));
        assert_eq!(
            d.eval(substr, &[&s("abcde"), &StrValue::Int(1), &StrValue::Int(3)]),
            Ok(Some(s("bc")))
        );
        assert_eq!(d.eval(substr, &[&s("ab"), &StrValue::Int(1), &StrValue::Int(5)]), Ok(None));
    }

    #[test]
    fn appendix_rules() {
        let d = StringDomain::new(3, 8);
        let g = Grammar::from_file(string_dsl(1, 6)).unwrap();
        let concat = g.production(prod(&g, "concat"));
        let substr = g.production(prod(&g, "substr"));
        let len = |k| conj(vec![Pred::Len(k)]);
        assert_eq!(d.transform(concat, &[&len(2), &len(3)]), Some(len(5)));
        assert_eq!(
            d.transform(substr, &[&len(5), &StrAbs::Index(1), &StrAbs::Index(3)]),
            Some(len(2))
        );
        assert_eq!(d.transform(substr, &[&len(3), &StrAbs::Index(2), &StrAbs::Index(5)]), None);
        assert_eq!(
            substr_atomic(
                &Pred::CharEq {
                    idx: vec![0, 2, 4],
                    var: x(),
                    pos: 7
                },
                1,
                4
            ),
            Atomic::Holds(Pred::CharEq {
                idx: vec![1],
                var: x(),
                pos: 7
            })
        );
        assert_eq!(
            concat_atomic(&Pred::Len(3), &Pred::FromInp { idx: vec![0, 1], var: x() }),
            Atomic::Holds(Pred::FromInp { idx: vec![3, 4], var: x() })
        );
    }

    #[test]
    fn input_abstraction_by_level() {
        let g = Grammar::from_file(string_dsl(1, 6)).unwrap();
        let l1 = StringDomain::new(1, 8);
        assert_eq!(l1.abstraction(x(), &StrValue::str("abc")), conj(vec![Pred::Len(3)]));
        assert_eq!(
            abstract_input(&l1, &g, &[StrValue::str("")]).unwrap(),
            vec![conj(vec![Pred::Len(0)])]
        );
        let l3 = StringDomain::new(3, 8);
        let a = l3.abstraction(x(), &StrValue::str("ab"));
        assert_eq!(
            l3.fmt_abs(&a, &["x".into()]),
            "Len(2)&FromInp({0,1},x)&CharEq({0},x,0)&CharEq({1},x,1)"
        );
        assert!(l3.gamma_contains(&a, &StrValue::str("ab"), &[StrValue::str("ab")]));
        let long = StrValue::str("abcdefghi");
        assert!(abstract_input(&l1, &g, &[long]).is_err());
        assert_eq!(l3.input_space(x()).len(), 9);
    }

    #[test]
    fn canonical_form() {
        assert_eq!(canonicalize([Pred::Len(2), Pred::Len(3)]), None);
        assert_eq!(canonicalize([Pred::Len(2), Pred::FromInp { idx: vec![2], var: x() }]), None);
        let c = canonicalize([
            Pred::FromInp { idx: vec![1], var: x() },
            Pred::Len(4),
            Pred::FromInp { idx: vec![0, 1], var: x() },
            Pred::CharEq { idx: vec![], var: x(), pos: 0 },
        ])
        .unwrap();
        assert_eq!(c, vec![Pred::Len(4), Pred::FromInp { idx: vec![0, 1], var: x() }]);
        assert_eq!(canonicalize(c.clone()), Some(c));
    }

    #[test]
    fn encoding_round_trip() {
        let d = StringDomain::new(3, 8);
        let mut rng = SampleRng::seed_from_u64(5);
        let g = Grammar::from_file(string_dsl(1, 6)).unwrap();
        for _ in 0..200 {
            let env = d.sample_env(&g, &mut rng);
            let v = d.sample_value(&g, g.start(), &env, &mut rng);
            let a = d.abstraction_in_context(&v, &env);
            assert_eq!(d.decode_abs(&d.encode_abs(&a)), Some(a.clone()));
            assert!(d.gamma_contains(&a, &v, &env));
            let w = d.weaken(&a, &mut rng);
            assert!(d.gamma_contains(&w, &v, &env));
            if let Some(c) = d.sample_in_gamma(&w, &env, &mut rng) {
                assert!(d.gamma_contains(&w, &c, &env));
            }
        }
        assert_eq!(d.decode_abs(&[1, 0, 0, 0, 0, 3, 0, 0, 0, 0, 2]), None);
        assert_eq!(StringDomain::new(1, 8).decode_abs(&d.encode_abs(&d.abstraction(x(), &StrValue::str("a")))), None);
    }

    #[test]
    fn rules_are_sound() {
        let d = StringDomain::new(3, 8);
        for (i, rule) in StrRule::ALL.into_iter().enumerate() {
            assert_eq!(d.check_rule_soundness(rule, 500, i as u64), Ok(500), "{rule:?}");
        }
        let g = Grammar::from_file(string_dsl(1, 6)).unwrap();
        for level in 1..=3 {
            let d = StringDomain::new(level, 8);
            for op in ["concat", "substr"] {
                assert_eq!(check_transformer_soundness(&d, &g, prod(&g, op), 1000, 7), Ok(()));
            }
        }
    }

    #[test]
    fn validation() {
        let g = Grammar::from_file(string_dsl(2, 6)).unwrap();
        assert_eq!(StringDomain::new(3, 8).validate(&g), Ok(()));
        let mut f = string_dsl(1, 2);
        f.productions[2].args.swap(0, 1);
        let g = Grammar::from_file(f).unwrap();
        assert!(StringDomain::new(3, 8).validate(&g).is_err());
    }
}
