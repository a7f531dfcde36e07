//! The abstract-domain plugin contract and the machinery shared by domains:
//! abstract inputs, conjunction-of-predicates transformers and randomized
//! soundness checking.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::fta::Fta;
use crate::grammar::{Diagnostic, EvalError, Example, Grammar, ProdId, Production, ProductionKind, SymbolId, VarId};

/// Seeded generator used by every sampler, so failures replay from the seed.
pub type SampleRng = ChaCha8Rng;

/// An abstract domain: α, γ-membership, abstract transformers and a finite
/// abstract input space per variable.
///
/// `gamma_contains` receives the example's input binding because some
/// predicates (e.g. "this character comes from x") only have meaning
/// relative to the inputs.
pub trait Domain {
    type Value: Clone + Eq + Hash + Ord + Debug;
    type Abs: Clone + Eq + Hash + Ord + Debug;

    /// Tag used in grammar files (`"domain": "bitvec"`) and artifact headers.
    fn tag(&self) -> &'static str;

    /// The granularity parameter k.
    fn granularity(&self) -> u32;

    /// Checks operator names, arities and variable domain tags.
    fn validate(&self, g: &Grammar) -> Result<(), Vec<Diagnostic>>;

    /// α for input variable `var`.
    fn abstraction(&self, var: VarId, v: &Self::Value) -> Self::Abs;

    fn gamma_contains(&self, a: &Self::Abs, v: &Self::Value, env: &[Self::Value]) -> bool;

    /// Abstract transformer. `None` is bottom: no state is created.
    fn transform(&self, prod: &Production, args: &[&Self::Abs]) -> Option<Self::Abs>;

    /// Concrete transformer. `Ok(None)` means undefined (failed precondition).
    fn eval(&self, prod: &Production, args: &[&Self::Value]) -> Result<Option<Self::Value>, EvalError>;

    /// D_x: the finite abstract input space of `var`, in a fixed order.
    fn input_space(&self, var: VarId) -> Vec<Self::Abs>;

    fn in_input_space(&self, var: VarId, a: &Self::Abs) -> bool {
        self.input_space(var).contains(a)
    }

    fn encode_abs(&self, a: &Self::Abs) -> Vec<u8>;
    fn decode_abs(&self, bytes: &[u8]) -> Option<Self::Abs>;
    fn fmt_abs(&self, a: &Self::Abs, var_names: &[String]) -> String;

    fn parse_value(&self, v: &serde_json::Value) -> Result<Self::Value, String>;
    fn value_to_json(&self, v: &Self::Value) -> serde_json::Value;
    fn fmt_value(&self, v: &Self::Value) -> String {
        self.value_to_json(v).to_string()
    }

    /// Random binding for every declared variable.
    fn sample_env(&self, g: &Grammar, rng: &mut SampleRng) -> Vec<Self::Value>;

    /// Random concrete value of the sort produced at `symbol`.
    fn sample_value(&self, g: &Grammar, symbol: SymbolId, env: &[Self::Value], rng: &mut SampleRng) -> Self::Value;

    /// The most precise abstraction of `v` expressible at this granularity,
    /// relative to the input binding `env`.
    fn abstraction_in_context(&self, v: &Self::Value, env: &[Self::Value]) -> Self::Abs;

    /// A randomly coarsened abstraction with γ(a) ⊆ γ(weaken(a)).
    fn weaken(&self, a: &Self::Abs, rng: &mut SampleRng) -> Self::Abs;

    /// A random element of γ(a) under `env`, if one is found.
    fn sample_in_gamma(&self, a: &Self::Abs, env: &[Self::Value], rng: &mut SampleRng) -> Option<Self::Value>;
}

/// A partial binding of variables to abstract values, kept sorted by variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractInput<A> {
    bindings: Vec<(VarId, A)>,
}

impl<A> Default for AbstractInput<A> {
    fn default() -> Self {
        AbstractInput { bindings: Vec::new() }
    }
}

impl<A: Clone + Eq + Ord> AbstractInput<A> {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn singleton(var: VarId, a: A) -> Self {
        AbstractInput {
            bindings: vec![(var, a)],
        }
    }

    /// Builds a binding from pairs; `None` if a variable is bound twice to different values.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (VarId, A)>) -> Option<Self> {
        let mut map = BTreeMap::new();
        for (v, a) in pairs {
            if let Some(prev) = map.insert(v, a.clone()) {
                if prev != a {
                    return None;
                }
            }
        }
        Some(AbstractInput {
            bindings: map.into_iter().collect(),
        })
    }

    /// A full binding from a per-variable vector.
    pub fn full(values: &[A]) -> Self {
        AbstractInput {
            bindings: values
                .iter()
                .enumerate()
                .map(|(i, a)| (VarId(i as u32), a.clone()))
                .collect(),
        }
    }

    pub fn bindings(&self) -> &[(VarId, A)] {
        &self.bindings
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, var: VarId) -> Option<&A> {
        self.bindings
            .binary_search_by_key(&var, |(v, _)| *v)
            .ok()
            .map(|i| &self.bindings[i].1)
    }

    /// Conjunction of two bindings; `None` when they disagree on a variable.
    pub fn merge(&self, other: &Self) -> Option<Self> {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.bindings.len() && j < other.bindings.len() {
            let (a, b) = (&self.bindings[i], &other.bindings[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    out.push(a.clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b.clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    if a.1 != b.1 {
                        return None;
                    }
                    out.push(a.clone());
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.bindings[i..]);
        out.extend_from_slice(&other.bindings[j..]);
        Some(AbstractInput { bindings: out })
    }

    /// True iff every binding of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bindings.iter().all(|(v, a)| other.get(*v) == Some(a))
    }

    /// True iff the full binding `gamma` (indexed by variable) agrees with every binding here.
    pub fn satisfied_by(&self, gamma: &[A]) -> bool {
        self.bindings.iter().all(|(v, a)| gamma.get(v.index()) == Some(a))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("input `{variable}` = {value} abstracts to {abstract_value}, outside the abstract input space")]
pub struct CoverageError {
    pub variable: String,
    pub value: String,
    pub abstract_value: String,
}

/// α(e_in): the full abstract input of a concrete binding.
pub fn abstract_input<D: Domain>(domain: &D, g: &Grammar, inputs: &[D::Value]) -> Result<Vec<D::Abs>, CoverageError> {
    let names = g.variable_names();
    inputs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let var = VarId(i as u32);
            let a = domain.abstraction(var, v);
            if domain.in_input_space(var, &a) {
                Ok(a)
            } else {
                Err(CoverageError {
                    variable: names.get(i).cloned().unwrap_or_default(),
                    value: domain.fmt_value(v),
                    abstract_value: domain.fmt_abs(&a, &names),
                })
            }
        })
        .collect()
}

/// Outcome of an atomic transformer applied to one predicate per argument.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atomic<P> {
    Holds(P),
    /// Nothing can be said; contributes no conjunct.
    Unknown,
    /// Contradiction: the whole application is bottom.
    Bottom,
}

/// The generic conjunction transformer: applies `atomic` to every tuple of
/// predicates drawn one per argument and collects the results. `None` is
/// bottom. The caller canonicalizes the returned conjunction.
pub fn conjoin_transform<T, P>(args: &[&[T]], mut atomic: impl FnMut(&[&T]) -> Atomic<P>) -> Option<Vec<P>> {
    let mut out = Vec::new();
    if args.iter().any(|a| a.is_empty()) {
        return Some(out);
    }
    let mut odometer = vec![0usize; args.len()];
    loop {
        let tuple: Vec<&T> = odometer.iter().zip(args).map(|(&i, a)| &a[i]).collect();
        match atomic(&tuple) {
            Atomic::Holds(p) => out.push(p),
            Atomic::Unknown => {}
            Atomic::Bottom => return None,
        }
        let mut i = args.len();
        loop {
            if i == 0 {
                return Some(out);
            }
            i -= 1;
            odometer[i] += 1;
            if odometer[i] < args[i].len() {
                break;
            }
            odometer[i] = 0;
        }
    }
}

/// A tuple violating the soundness condition ⟦f⟧(c) ∈ γ(⟦f⟧#(a)).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample<D: Domain> {
    pub production: ProdId,
    pub env: Vec<D::Value>,
    pub args: Vec<D::Value>,
    pub abstract_args: Vec<D::Abs>,
    pub concrete_result: Option<D::Value>,
    pub abstract_result: Option<D::Abs>,
}

/// Randomized soundness check of the domain's transformer for `prod`.
pub fn check_transformer_soundness<D: Domain>(
    domain: &D,
    g: &Grammar,
    prod: ProdId,
    trials: usize,
    seed: u64,
) -> Result<(), Counterexample<D>> {
    let p = g.production(prod);
    check_soundness_with(domain, g, prod, trials, seed, |args| domain.transform(p, args))
}

/// As [`check_transformer_soundness`], against an arbitrary candidate transformer.
pub fn check_soundness_with<D: Domain>(
    domain: &D,
    g: &Grammar,
    prod: ProdId,
    trials: usize,
    seed: u64,
    transform: impl Fn(&[&D::Abs]) -> Option<D::Abs>,
) -> Result<(), Counterexample<D>> {
    let p = g.production(prod);
    let mut rng = SampleRng::seed_from_u64(seed);
    for _ in 0..trials {
        let env = domain.sample_env(g, &mut rng);
        let mut args = Vec::with_capacity(p.arity());
        let mut abs = Vec::with_capacity(p.arity());
        for &s in &p.args {
            let c = domain.sample_value(g, s, &env, &mut rng);
            let mut a = domain.abstraction_in_context(&c, &env);
            if rng.random_bool(0.5) {
                a = domain.weaken(&a, &mut rng);
            }
            let c = if rng.random_bool(0.5) {
                domain.sample_in_gamma(&a, &env, &mut rng).unwrap_or(c)
            } else {
                c
            };
            args.push(c);
            abs.push(a);
        }
        if let Some(cx) = check_tuple(domain, p, prod, &env, args, abs, &transform) {
            return Err(cx);
        }
    }
    Ok(())
}

/// Checks one concrete tuple against its abstract counterpart, including α/γ
/// coherence of each argument.
pub(crate) fn check_tuple<D: Domain>(
    domain: &D,
    p: &Production,
    prod: ProdId,
    env: &[D::Value],
    args: Vec<D::Value>,
    abs: Vec<D::Abs>,
    transform: &impl Fn(&[&D::Abs]) -> Option<D::Abs>,
) -> Option<Counterexample<D>> {
    let coherent = args.iter().zip(&abs).all(|(c, a)| domain.gamma_contains(a, c, env));
    let arg_refs: Vec<&D::Value> = args.iter().collect();
    let concrete = domain.eval(p, &arg_refs).ok().flatten();
    let abs_refs: Vec<&D::Abs> = abs.iter().collect();
    let abstract_result = transform(&abs_refs);
    let sound = match (&concrete, &abstract_result) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(c), Some(a)) => domain.gamma_contains(a, c, env),
    };
    if coherent && sound {
        return None;
    }
    Some(Counterexample {
        production: prod,
        env: env.to_vec(),
        args,
        abstract_args: abs,
        concrete_result: concrete,
        abstract_result,
    })
}

/// Soundness over the abstract argument tuples that actually occur in an FTA:
/// for every operator transition, `trials` concretizations of its argument
/// states are checked. Returns the number of tuples checked.
pub fn check_fta_soundness<D: Domain>(
    domain: &D,
    g: &Grammar,
    fta: &Fta<D::Abs>,
    trials: usize,
    seed: u64,
) -> Result<usize, Counterexample<D>> {
    let mut rng = SampleRng::seed_from_u64(seed);
    let mut checked = 0;
    for t in fta.transitions() {
        let p = g.production(t.prod);
        if p.kind != ProductionKind::Operator {
            continue;
        }
        let abs: Vec<D::Abs> = t.args.iter().map(|&q| fta.state(q).value.clone()).collect();
        for _ in 0..trials {
            let env = domain.sample_env(g, &mut rng);
            let args: Option<Vec<D::Value>> = abs
                .iter()
                .map(|a| domain.sample_in_gamma(a, &env, &mut rng))
                .collect();
            let Some(args) = args else { continue };
            checked += 1;
            let transform = |a: &[&D::Abs]| domain.transform(p, a);
            if let Some(cx) = check_tuple(domain, p, t.prod, &env, args, abs.clone(), &transform) {
                return Err(cx);
            }
        }
    }
    Ok(checked)
}

#[derive(Debug, Error)]
pub enum ExampleError {
    #[error("malformed examples file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("example {index}: unknown variable `{name}`")]
    UnknownVariable { index: usize, name: String },
    #[error("example {index}: variable `{name}` is not bound")]
    MissingVariable { index: usize, name: String },
    #[error("example {index}: {message}")]
    BadValue { index: usize, message: String },
    #[error("examples file contains no examples")]
    Empty,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleDecl {
    inputs: BTreeMap<String, serde_json::Value>,
    output: serde_json::Value,
}

/// Parses an examples file: `[{"inputs": {"x": ...}, "output": ...}, ...]`.
pub fn parse_examples<D: Domain>(domain: &D, g: &Grammar, text: &str) -> Result<Vec<Example<D::Value>>, ExampleError> {
    let decls: Vec<ExampleDecl> = serde_json::from_str(text)?;
    if decls.is_empty() {
        return Err(ExampleError::Empty);
    }
    decls
        .into_iter()
        .enumerate()
        .map(|(index, d)| {
            for name in d.inputs.keys() {
                if g.variable(name).is_none() {
                    return Err(ExampleError::UnknownVariable {
                        index,
                        name: name.clone(),
                    });
                }
            }
            let mut inputs = Vec::with_capacity(g.num_variables());
            for v in g.variables() {
                let raw = d.inputs.get(&v.name).ok_or_else(|| ExampleError::MissingVariable {
                    index,
                    name: v.name.clone(),
                })?;
                inputs.push(domain.parse_value(raw).map_err(|message| ExampleError::BadValue { index, message })?);
            }
            let output = domain
                .parse_value(&d.output)
                .map_err(|message| ExampleError::BadValue { index, message })?;
            Ok(Example { inputs, output })
        })
        .collect()
}

pub fn examples_to_json<D: Domain>(domain: &D, g: &Grammar, examples: &[Example<D::Value>]) -> serde_json::Value {
    serde_json::Value::Array(
        examples
            .iter()
            .map(|e| {
                let inputs: serde_json::Map<String, serde_json::Value> = g
                    .variables()
                    .iter()
                    .zip(&e.inputs)
                    .map(|(v, c)| (v.name.clone(), domain.value_to_json(c)))
                    .collect();
                serde_json::json!({ "inputs": inputs, "output": domain.value_to_json(&e.output) })
            })
            .collect(),
    )
}
