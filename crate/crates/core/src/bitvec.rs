//! Fixed-width bit-vectors with shift/add operators, abstracted by their
//! lowest k bits.

use std::fmt;

use rand::Rng;

use crate::domain::{check_tuple, Counterexample, Domain, SampleRng};
use crate::grammar::{Diagnostic, EvalError, Grammar, ProdId, Production, ProductionKind, SymbolId, VarId};

pub const TAG: &str = "bitvec";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVecValue {
    pub width: u8,
    pub bits: u64,
}

impl BitVecValue {
    pub fn new(width: u8, bits: u64) -> Self {
        BitVecValue {
            width,
            bits: bits & mask(width),
        }
    }

    pub fn parse(width: u8, text: &str) -> Result<Self, String> {
        let digits = text
            .strip_prefix("0b")
            .ok_or_else(|| format!("bit-vector `{text}` must start with 0b"))?;
        if digits.is_empty() || digits.len() > width as usize {
            return Err(format!("bit-vector `{text}` must have 1..={width} digits"));
        }
        let bits = u64::from_str_radix(digits, 2).map_err(|e| format!("bit-vector `{text}`: {e}"))?;
        Ok(BitVecValue { width, bits })
    }
}

impl fmt::Display for BitVecValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0b{:0w$b}", self.bits, w = self.width as usize)
    }
}

/// `?b₁…b_k`: a vector whose lowest k bits are `low`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LowBits {
    pub k: u8,
    pub low: u64,
}

impl LowBits {
    pub fn new(k: u8, low: u64) -> Self {
        LowBits { k, low: low & mask(k) }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let digits = text.strip_prefix('?')?;
        if digits.is_empty() || digits.len() > 63 {
            return None;
        }
        Some(LowBits {
            k: digits.len() as u8,
            low: u64::from_str_radix(digits, 2).ok()?,
        })
    }
}

impl fmt::Display for LowBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{:0w$b}", self.low, w = self.k as usize)
    }
}

fn mask(bits: u8) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn shl(v: u64, by: i64, bits: u8) -> u64 {
    if by >= 64 {
        0
    } else {
        (v << by) & mask(bits)
    }
}

/// Concrete semantics modulo 2^width. `None` for an operator/arity the domain
/// does not define.
pub fn bv_concrete(op: &str, args: &[u64], constant: Option<i64>, width: u8) -> Option<u64> {
    arith(op, args, constant, width)
}

/// Abstract semantics: the same arithmetic on the low k bits, exact because
/// shift and add never carry information downwards.
pub fn bv_abstract_transform(op: &str, args: &[LowBits], constant: Option<i64>) -> Option<LowBits> {
    let k = args.first()?.k;
    let lows: Vec<u64> = args.iter().map(|a| a.low).collect();
    arith(op, &lows, constant, k).map(|low| LowBits { k, low })
}

fn arith(op: &str, args: &[u64], constant: Option<i64>, bits: u8) -> Option<u64> {
    let m = mask(bits);
    match (op, args, constant) {
        ("add", [a], Some(c)) => Some(a.wrapping_add(c as u64) & m),
        ("add", [a, b], None) => Some(a.wrapping_add(*b) & m),
        ("shl", [a], Some(c)) if c >= 0 => Some(shl(*a, c, bits)),
        (_, [], Some(c)) => Some(c as u64 & m),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitVecDomain {
    pub width: u8,
    pub k: u8,
}

impl BitVecDomain {
    pub fn new(width: u8, k: u8) -> Self {
        assert!((1..=32).contains(&width), "width must be in 1..=32");
        assert!((1..=width).contains(&k), "k must be in 1..=width");
        BitVecDomain { width, k }
    }

    pub fn value(&self, bits: u64) -> BitVecValue {
        BitVecValue::new(self.width, bits)
    }

    pub fn abs(&self, low: u64) -> LowBits {
        LowBits::new(self.k, low)
    }

    /// Soundness of `prod` over every tuple of concrete values. Returns the number of tuples checked.
    pub fn exhaustive_soundness(&self, g: &Grammar, prod: ProdId) -> Result<usize, Counterexample<Self>> {
        self.exhaustive_with(g, prod, |a| self.transform(g.production(prod), a))
    }

    pub fn exhaustive_with(
        &self,
        g: &Grammar,
        prod: ProdId,
        transform: impl Fn(&[&LowBits]) -> Option<LowBits>,
    ) -> Result<usize, Counterexample<Self>> {
        let p = g.production(prod);
        let n = 1u64 << self.width;
        let total = n.pow(p.arity() as u32);
        let env = vec![self.value(0); g.num_variables()];
        for t in 0..total {
            let mut rest = t;
            let args: Vec<BitVecValue> = (0..p.arity())
                .map(|_| {
                    let v = self.value(rest % n);
                    rest /= n;
                    v
                })
                .collect();
            let abs = args.iter().map(|c| self.abstraction(VarId(0), c)).collect();
            if let Some(cx) = check_tuple(self, p, prod, &env, args, abs, &transform) {
                return Err(cx);
            }
        }
        Ok(total as usize)
    }
}

impl Domain for BitVecDomain {
    type Value = BitVecValue;
    type Abs = LowBits;

    fn tag(&self) -> &'static str {
        TAG
    }

    fn granularity(&self) -> u32 {
        self.k as u32
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
        for (i, p) in g.productions().iter().enumerate() {
            let problem = match p.kind {
                ProductionKind::Variable(_) => None,
                ProductionKind::Constant => match p.int_constant() {
                    Some(_) => None,
                    None => Some("constant must be an integer".to_string()),
                },
                ProductionKind::Operator => match (p.op.as_str(), p.arity(), &p.constant) {
                    ("add", 1, Some(c)) | ("shl", 1, Some(c)) => match c.as_int() {
                        Some(c) if c >= 0 => None,
                        _ => Some("attached constant must be a non-negative integer".into()),
                    },
                    ("add", 2, None) => None,
                    ("add", n, _) => Some(format!("expects 1 argument with a constant or 2 without, got {n}")),
                    ("shl", n, _) => Some(format!("expects 1 argument and a constant, got {n}")),
                    (op, _, _) => Some(format!("unknown bit-vector operator `{op}`")),
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

    fn abstraction(&self, _var: VarId, v: &BitVecValue) -> LowBits {
        self.abs(v.bits)
    }

    fn gamma_contains(&self, a: &LowBits, v: &BitVecValue, _env: &[BitVecValue]) -> bool {
        v.bits & mask(a.k) == a.low
    }

    fn transform(&self, prod: &Production, args: &[&LowBits]) -> Option<LowBits> {
        if args.is_empty() {
            return prod.int_constant().map(|c| self.abs(c as u64));
        }
        let args: Vec<LowBits> = args.iter().map(|a| **a).collect();
        bv_abstract_transform(&prod.op, &args, prod.int_constant())
    }

    fn eval(&self, prod: &Production, args: &[&BitVecValue]) -> Result<Option<BitVecValue>, EvalError> {
        let bits: Vec<u64> = args.iter().map(|a| a.bits).collect();
        match bv_concrete(&prod.op, &bits, prod.int_constant(), self.width) {
            Some(v) => Ok(Some(self.value(v))),
            None if !matches!(prod.op.as_str(), "add" | "shl") => Err(EvalError::UnknownOperator(prod.op.clone())),
            None => Err(EvalError::BadArgument {
                op: prod.op.clone(),
                message: "bad arity or constant".into(),
            }),
        }
    }

    fn input_space(&self, _var: VarId) -> Vec<LowBits> {
        (0..1u64 << self.k).map(|low| self.abs(low)).collect()
    }

    fn in_input_space(&self, _var: VarId, a: &LowBits) -> bool {
        a.k == self.k
    }

    fn encode_abs(&self, a: &LowBits) -> Vec<u8> {
        a.low.to_be_bytes().to_vec()
    }

    fn decode_abs(&self, bytes: &[u8]) -> Option<LowBits> {
        let low = u64::from_be_bytes(bytes.try_into().ok()?);
        (low <= mask(self.k)).then_some(LowBits { k: self.k, low })
    }

    fn fmt_abs(&self, a: &LowBits, _var_names: &[String]) -> String {
        a.to_string()
    }

    fn parse_value(&self, v: &serde_json::Value) -> Result<BitVecValue, String> {
        match v {
            serde_json::Value::String(s) => BitVecValue::parse(self.width, s),
            serde_json::Value::Number(n) => match n.as_u64() {
                Some(b) if b <= mask(self.width) => Ok(self.value(b)),
                _ => Err(format!("bit-vector {n} out of range for width {}", self.width)),
            },
            other => Err(format!("expected a 0b-prefixed bit-vector string, got {other}")),
        }
    }

    fn value_to_json(&self, v: &BitVecValue) -> serde_json::Value {
        serde_json::Value::String(v.to_string())
    }

    fn fmt_value(&self, v: &BitVecValue) -> String {
        v.to_string()
    }

    fn sample_env(&self, g: &Grammar, rng: &mut SampleRng) -> Vec<BitVecValue> {
        (0..g.num_variables())
            .map(|_| self.value(rng.random::<u64>()))
            .collect()
    }

    fn sample_value(&self, _g: &Grammar, _symbol: SymbolId, _env: &[BitVecValue], rng: &mut SampleRng) -> BitVecValue {
        self.value(rng.random::<u64>())
    }

    fn abstraction_in_context(&self, v: &BitVecValue, _env: &[BitVecValue]) -> LowBits {
        self.abs(v.bits)
    }

    // Low-bit values at a fixed k form a flat set; nothing coarser exists.
    fn weaken(&self, a: &LowBits, _rng: &mut SampleRng) -> LowBits {
        *a
    }

    fn sample_in_gamma(&self, a: &LowBits, _env: &[BitVecValue], rng: &mut SampleRng) -> Option<BitVecValue> {
        let high = rng.random::<u64>() & !mask(a.k);
        Some(self.value(high | a.low))
    }
}
