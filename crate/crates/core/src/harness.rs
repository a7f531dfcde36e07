//! Artifact bundles and the operations behind the command-line tool:
//! presynthesis, synthesis in three modes, scaling sweeps and statistics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitvec::BitVecDomain;
use crate::codec::{check_fta_against_grammar, fta_fingerprint, read_fta, write_fta, FormatError};
use crate::domain::{parse_examples, Domain, ExampleError};
use crate::fta::{build_offline_fta, BuildError, BuildLimits, Fta, FtaKind};
use crate::grammar::{join_diagnostics, Example, Grammar, GrammarFile, ProductionKind};
use crate::oracle::{
    build_final_index, build_oracle, read_oracle, write_oracle, FinalIndex, Oracle, OracleError,
    DEFAULT_FINAL_INDEX_CAP, DEFAULT_MAX_CLAUSES,
};
use crate::search::{concretize_and_search, SearchBudget, SearchError, SearchOutcome, SearchStatus};
use crate::slice::{slice, slice_from_scratch, slice_no_oracle, Slice, SliceError, SliceMetrics, SliceMode};
use crate::string::{string_dsl, StringDomain};
use crate::{bitvec, string, Fingerprint};

pub const BUILTIN_STRING: &str = "builtin:string";
pub const MANIFEST_VERSION: u32 = 1;

pub const GRAMMAR_FILE: &str = "grammar.json";
pub const FTA_FILE: &str = "fta.bin";
pub const ORACLE_FILE: &str = "oracle.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error("invalid grammar: {0}")]
    Grammar(String),
    #[error("examples: {0}")]
    Examples(#[from] ExampleError),
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("bundle manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl HarnessError {
    /// 3 budget, 4 input error, 5 coverage fault, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Grammar(_)
            | HarnessError::Examples(_)
            | HarnessError::Format { .. }
            | HarnessError::Manifest(_)
            | HarnessError::Build(BuildError::Domain(_)) => 4,
            HarnessError::Build(BuildError::Budget { .. }) | HarnessError::Oracle(OracleError::Budget { .. }) => 3,
            HarnessError::Build(BuildError::Coverage(_))
            | HarnessError::Slice(SliceError::Coverage(_))
            | HarnessError::Slice(SliceError::Build(BuildError::Coverage(_))) => 5,
            HarnessError::Slice(SliceError::Build(BuildError::Budget { .. })) => 3,
            HarnessError::Search(SearchError::SliceExample { .. }) => 4,
            // A path that does not exist is a bad argument; other I/O failures are not.
            HarnessError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitVecConfig {
    #[serde(default = "default_width")]
    pub width: u8,
    #[serde(default = "default_k")]
    pub k: u8,
}

fn default_width() -> u8 {
    4
}

fn default_k() -> u8 {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct StringConfig {
    #[serde(default = "default_level")]
    pub level: u8,
    #[serde(default = "default_max_input_len")]
    pub max_input_len: u32,
    #[serde(default = "default_max_index")]
    pub max_index: i64,
    #[serde(default = "default_unroll_depth")]
    pub unroll_depth: usize,
}

fn default_level() -> u8 {
    3
}

fn default_max_input_len() -> u32 {
    8
}

fn default_max_index() -> i64 {
    6
}

fn default_unroll_depth() -> usize {
    2
}

impl Default for StringConfig {
    fn default() -> Self {
        StringConfig {
            level: default_level(),
            max_input_len: default_max_input_len(),
            max_index: default_max_index(),
            unroll_depth: default_unroll_depth(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum DomainConfig {
    Bitvec(BitVecConfig),
    String(StringConfig),
}

impl DomainConfig {
    /// Parses a config file. The `"domain"` key may be omitted when the
    /// grammar's variables name the domain.
    pub fn parse(text: &str, grammar_domain: Option<&str>) -> Result<Self, HarnessError> {
        let mut v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("malformed domain config: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| HarnessError::Config("domain config must be a JSON object".into()))?;
        match (obj.get("domain").and_then(|d| d.as_str()), grammar_domain) {
            (Some(a), Some(b)) if a != b => {
                return Err(HarnessError::Config(format!(
                    "domain config is for `{a}` but the grammar uses `{b}`"
                )))
            }
            (None, Some(b)) => {
                obj.insert("domain".into(), b.into());
            }
            (None, None) => return Err(HarnessError::Config("domain config needs a \"domain\" key".into())),
            _ => {}
        }
        let cfg: DomainConfig =
            serde_json::from_value(v).map_err(|e| HarnessError::Config(format!("bad domain config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), HarnessError> {
        match *self {
            DomainConfig::Bitvec(c) => {
                if !(1..=32).contains(&c.width) || c.k < 1 || c.k > c.width {
                    return Err(HarnessError::Config(format!(
                        "bitvec config needs 1 <= k <= width <= 32, got width={} k={}",
                        c.width, c.k
                    )));
                }
            }
            DomainConfig::String(c) => {
                if !(1..=3).contains(&c.level) {
                    return Err(HarnessError::Config(format!("string level must be 1..=3, got {}", c.level)));
                }
                if c.max_index < 0 || c.max_input_len == 0 {
                    return Err(HarnessError::Config("string config needs maxIndex >= 0 and maxInputLen >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DomainConfig::Bitvec(_) => bitvec::TAG,
            DomainConfig::String(_) => string::TAG,
        }
    }

    pub fn granularity(&self) -> u32 {
        match self {
            DomainConfig::Bitvec(c) => c.k as u32,
            DomainConfig::String(c) => c.level as u32,
        }
    }

    /// The same config at granularity `k` (bit count or string level).
    pub fn with_granularity(&self, k: u32) -> Result<Self, HarnessError> {
        let out = match *self {
            DomainConfig::Bitvec(c) => DomainConfig::Bitvec(BitVecConfig { k: k as u8, ..c }),
            DomainConfig::String(c) => DomainConfig::String(StringConfig { level: k as u8, ..c }),
        };
        if k > u8::MAX as u32 {
            return Err(HarnessError::Config(format!("granularity {k} out of range")));
        }
        out.check()?;
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Runs `$body` with `$d` bound to the concrete domain of `$cfg`.
macro_rules! with_domain {
    ($cfg:expr, $d:ident => $body:expr) => {
        match $cfg {
            DomainConfig::Bitvec(c) => {
                let $d = BitVecDomain::new(c.width, c.k);
                $body
            }
            DomainConfig::String(c) => {
                let $d = StringDomain::new(c.level, c.max_input_len);
                $body
            }
        }
    };
}

/// The domain tag shared by a grammar's variables, if any.
pub fn grammar_domain(file: &GrammarFile) -> Option<&str> {
    file.variables.first().map(|v| v.domain.as_str())
}

/// Loads a grammar file, or generates the built-in string DSL when the
/// source is absent or `builtin:string`.
pub fn load_grammar_source(
    source: Option<&Path>,
    config_text: &str,
) -> Result<(GrammarFile, DomainConfig), HarnessError> {
    match source {
        Some(p) if p.as_os_str() != BUILTIN_STRING => {
            let file = GrammarFile::from_json(&read_text(p)?)
                .map_err(|e| HarnessError::Grammar(format!("{}: {e}", p.display())))?;
            let cfg = DomainConfig::parse(config_text, grammar_domain(&file))?;
            Ok((file, cfg))
        }
        _ => {
            let cfg = DomainConfig::parse(config_text, Some(string::TAG))?;
            let DomainConfig::String(c) = cfg else {
                return Err(HarnessError::Config("the built-in grammar needs a string domain config".into()));
            };
            Ok((string_dsl(c.unroll_depth, c.max_index), cfg))
        }
    }
}

fn compile(file: &GrammarFile) -> Result<Grammar, HarnessError> {
    Grammar::from_file(file.clone()).map_err(|d| HarnessError::Grammar(join_diagnostics(&d)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ManifestCounts {
    pub states: u64,
    pub transitions: u64,
    pub finals: u64,
    pub variable_transitions: u64,
    pub oracle_clauses: u64,
    pub final_index_mode: String,
    pub final_index_entries: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct Manifest {
    pub format_version: u32,
    pub grammar_fingerprint: String,
    pub fta_fingerprint: String,
    pub oracle_fingerprint: String,
    pub domain: DomainConfig,
    pub counts: ManifestCounts,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Timing {
    pub fta_micros: u64,
    pub oracle_micros: u64,
    pub index_micros: u64,
}

fn count_variable_transitions<A: Clone + Eq + std::hash::Hash + Ord>(fta: &Fta<A>, g: &Grammar) -> u64 {
    fta.transitions()
        .iter()
        .filter(|t| matches!(g.production(t.prod).kind, ProductionKind::Variable(_)))
        .count() as u64
}

fn counts<A: Clone + Eq + std::hash::Hash + Ord>(
    fta: &Fta<A>,
    g: &Grammar,
    oracle: &Oracle<A>,
    index: &FinalIndex<A>,
) -> ManifestCounts {
    ManifestCounts {
        states: fta.num_states() as u64,
        transitions: fta.num_transitions() as u64,
        finals: fta.finals().len() as u64,
        variable_transitions: count_variable_transitions(fta, g),
        oracle_clauses: oracle.total_clauses() as u64,
        final_index_mode: if index.is_eager() { "eager" } else { "lazy" }.into(),
        final_index_entries: index.len() as u64,
    }
}

#[derive(Clone, Debug)]
pub struct PresynReport {
    pub manifest: Manifest,
    pub timing: Timing,
    pub fta_bytes: u64,
    pub oracle_bytes: u64,
}

impl fmt::Display for PresynReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.manifest.counts;
        writeln!(f, "offline FTA: {} states, {} transitions, {} finals ({} bytes, {} us)",
            c.states, c.transitions, c.finals, self.fta_bytes, self.timing.fta_micros)?;
        writeln!(f, "oracle: {} clauses ({} bytes, {} us)", c.oracle_clauses, self.oracle_bytes, self.timing.oracle_micros)?;
        write!(f, "final index: {} with {} entries ({} us)", c.final_index_mode, c.final_index_entries, self.timing.index_micros)
    }
}

/// Builds the offline FTA, oracle and final index and writes a bundle.
pub fn presyn(file: &GrammarFile, cfg: &DomainConfig, limits: BuildLimits, out: &Path) -> Result<PresynReport, HarnessError> {
    let g = compile(file)?;
    with_domain!(*cfg, d => presyn_with(file, &g, &d, cfg, limits, out))
}

fn presyn_with<D: Domain>(
    file: &GrammarFile,
    g: &Grammar,
    d: &D,
    cfg: &DomainConfig,
    limits: BuildLimits,
    out: &Path,
) -> Result<PresynReport, HarnessError> {
    let t0 = Instant::now();
    let fta = build_offline_fta(g, d, limits)?;
    let t1 = Instant::now();
    let oracle = build_oracle(&fta, g, d, DEFAULT_MAX_CLAUSES)?;
    let t2 = Instant::now();
    let index = build_final_index(&fta, &oracle, g, d, DEFAULT_FINAL_INDEX_CAP);
    let t3 = Instant::now();
    log::info!("built offline FTA with {} states, {} transitions", fta.num_states(), fta.num_transitions());
    let fta_bytes = write_fta(&fta, g.fingerprint(), d);
    let oracle_bytes = write_oracle(&oracle, &index, d);
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        grammar_fingerprint: g.fingerprint().to_hex(),
        fta_fingerprint: crate::codec::file_fingerprint(&fta_bytes).to_hex(),
        oracle_fingerprint: crate::codec::file_fingerprint(&oracle_bytes).to_hex(),
        domain: *cfg,
        counts: counts(&fta, g, &oracle, &index),
    };
    let timing = Timing {
        fta_micros: (t1 - t0).as_micros() as u64,
        oracle_micros: (t2 - t1).as_micros() as u64,
        index_micros: (t3 - t2).as_micros() as u64,
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join(GRAMMAR_FILE), file.to_json_pretty() + "\n")?;
    write_file(&out.join(FTA_FILE), &fta_bytes)?;
    write_file(&out.join(ORACLE_FILE), &oracle_bytes)?;
    write_file(&out.join(MANIFEST_FILE), to_pretty(&manifest))?;
    write_file(&out.join(TIMING_FILE), to_pretty(&timing))?;
    Ok(PresynReport {
        manifest,
        timing,
        fta_bytes: fta_bytes.len() as u64,
        oracle_bytes: oracle_bytes.len() as u64,
    })
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

/// Grammar and manifest of a bundle, without the binary artifacts.
#[derive(Clone, Debug)]
pub struct BundleHeader {
    pub dir: PathBuf,
    pub file: GrammarFile,
    pub grammar: Grammar,
    pub manifest: Manifest,
}

pub fn read_bundle_header(dir: &Path) -> Result<BundleHeader, HarnessError> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&read_text(&mpath)?)
        .map_err(|e| HarnessError::Manifest(format!("{}: {e}", mpath.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(HarnessError::Manifest(format!("unsupported format version {}", manifest.format_version)));
    }
    manifest.domain.check()?;
    let gpath = dir.join(GRAMMAR_FILE);
    let file = GrammarFile::from_json(&read_text(&gpath)?)
        .map_err(|e| HarnessError::Grammar(format!("{}: {e}", gpath.display())))?;
    let grammar = compile(&file)?;
    if grammar.fingerprint().to_hex() != manifest.grammar_fingerprint {
        return Err(HarnessError::Manifest("grammar fingerprint does not match grammar.json".into()));
    }
    Ok(BundleHeader {
        dir: dir.to_path_buf(),
        file,
        grammar,
        manifest,
    })
}

pub struct LoadedFta<A> {
    pub fta: Fta<A>,
    pub fingerprint: Fingerprint,
    pub bytes: u64,
}

fn load_fta<D: Domain>(h: &BundleHeader, d: &D) -> Result<LoadedFta<D::Abs>, HarnessError> {
    let path = h.dir.join(FTA_FILE);
    let bytes = read_bytes(&path)?;
    let fmt_err = |source| HarnessError::Format {
        path: path.clone(),
        source,
    };
    let f = read_fta(&bytes, d).map_err(fmt_err)?;
    if f.grammar_fingerprint != h.grammar.fingerprint() {
        return Err(fmt_err(FormatError::FingerprintMismatch {
            expected: h.grammar.fingerprint(),
            found: f.grammar_fingerprint,
        }));
    }
    if f.fta.kind() != FtaKind::Offline {
        return Err(fmt_err(FormatError::Malformed(format!("expected an offline FTA, got {:?}", f.fta.kind()))));
    }
    check_fta_against_grammar(&f.fta, &h.grammar).map_err(fmt_err)?;
    if f.fingerprint.to_hex() != h.manifest.fta_fingerprint {
        return Err(HarnessError::Manifest("fta.bin fingerprint does not match the manifest".into()));
    }
    Ok(LoadedFta {
        fta: f.fta,
        fingerprint: f.fingerprint,
        bytes: bytes.len() as u64,
    })
}

fn load_oracle<D: Domain>(
    h: &BundleHeader,
    d: &D,
    fta: &LoadedFta<D::Abs>,
) -> Result<(Oracle<D::Abs>, FinalIndex<D::Abs>, u64), HarnessError> {
    let path = h.dir.join(ORACLE_FILE);
    let bytes = read_bytes(&path)?;
    let (oracle, index) = read_oracle(&bytes, d, fta.fingerprint).map_err(|source| HarnessError::Format {
        path: path.clone(),
        source,
    })?;
    if oracle.num_states() != fta.fta.num_states() {
        return Err(HarnessError::Format {
            path,
            source: FormatError::Malformed("oracle and FTA disagree on the state count".into()),
        });
    }
    if crate::codec::file_fingerprint(&bytes).to_hex() != h.manifest.oracle_fingerprint {
        return Err(HarnessError::Manifest("oracle.bin fingerprint does not match the manifest".into()));
    }
    Ok((oracle, index, bytes.len() as u64))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatsReport {
    pub domain: DomainConfig,
    pub states: u64,
    pub transitions: u64,
    pub finals: u64,
    pub variable_transitions: u64,
    pub oracle_clauses: u64,
    pub final_index_mode: String,
    pub final_index_entries: u64,
    pub fta_bytes: u64,
    pub oracle_bytes: u64,
    /// (symbol, states) in grammar order.
    pub states_per_symbol: Vec<(String, u64)>,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "domain: {} k={}", self.domain.tag(), self.domain.granularity())?;
        writeln!(f, "states: {}", self.states)?;
        writeln!(f, "transitions: {}", self.transitions)?;
        writeln!(f, "variable transitions: {}", self.variable_transitions)?;
        writeln!(f, "finals: {}", self.finals)?;
        writeln!(f, "oracle clauses: {}", self.oracle_clauses)?;
        writeln!(f, "final index: {} ({} entries)", self.final_index_mode, self.final_index_entries)?;
        writeln!(f, "bytes: fta.bin {} oracle.bin {}", self.fta_bytes, self.oracle_bytes)?;
        for (s, n) in &self.states_per_symbol {
            writeln!(f, "  {s}: {n} states")?;
        }
        Ok(())
    }
}

/// Loads a bundle, recounts everything and checks the counts against the
/// manifest.
pub fn stats(dir: &Path) -> Result<StatsReport, HarnessError> {
    let h = read_bundle_header(dir)?;
    with_domain!(h.manifest.domain, d => stats_with(&h, &d))
}

fn stats_with<D: Domain>(h: &BundleHeader, d: &D) -> Result<StatsReport, HarnessError> {
    let fta = load_fta(h, d)?;
    let (oracle, index, oracle_bytes) = load_oracle(h, d, &fta)?;
    let recount = counts(&fta.fta, &h.grammar, &oracle, &index);
    if recount != h.manifest.counts {
        return Err(HarnessError::Manifest(format!(
            "manifest counts {:?} differ from the artifacts {:?}",
            h.manifest.counts, recount
        )));
    }
    let g = &h.grammar;
    let states_per_symbol = (0..g.num_symbols())
        .map(|i| {
            let s = crate::grammar::SymbolId(i as u32);
            (g.symbol_name(s).to_string(), fta.fta.states_of_symbol(s).len() as u64)
        })
        .collect();
    Ok(StatsReport {
        domain: h.manifest.domain,
        states: recount.states,
        transitions: recount.transitions,
        finals: recount.finals,
        variable_transitions: recount.variable_transitions,
        oracle_clauses: recount.oracle_clauses,
        final_index_mode: recount.final_index_mode,
        final_index_entries: recount.final_index_entries,
        fta_bytes: fta.bytes,
        oracle_bytes,
        states_per_symbol,
    })
}

#[derive(Clone, Debug)]
pub struct SynOptions {
    pub mode: SliceMode,
    pub slice_example: usize,
    pub budget: SearchBudget,
    pub emit_slice: Option<PathBuf>,
    pub limits: BuildLimits,
}

impl Default for SynOptions {
    fn default() -> Self {
        SynOptions {
            mode: SliceMode::Oracle,
            slice_example: 0,
            budget: SearchBudget::default(),
            emit_slice: None,
            limits: BuildLimits::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynReport {
    pub mode: SliceMode,
    pub outcome: SearchOutcome,
    pub program: Option<String>,
    pub slice: SliceMetrics,
    pub slice_states: u64,
    pub slice_transitions: u64,
}

impl SynReport {
    pub fn to_json(&self) -> serde_json::Value {
        let o = &self.outcome;
        let mut slice = self.slice.sidecar_json();
        let m = slice.as_object_mut().expect("object");
        m.insert("peakStates".into(), self.slice.peak_states.into());
        m.insert("peakTransitions".into(), self.slice.peak_transitions.into());
        m.insert("states".into(), self.slice_states.into());
        m.insert("transitions".into(), self.slice_transitions.into());
        serde_json::json!({
            "status": o.status,
            "program": self.program,
            "examplesChecked": o.examples_checked,
            "programsChecked": o.programs_checked,
            "concreteStates": o.concrete_states,
            "wallMicros": o.wall_micros,
            "mode": self.mode,
            "slice": slice,
        })
    }

    /// 0 found, 2 exhausted, 3 budget.
    pub fn exit_code(&self) -> i32 {
        match self.outcome.status {
            SearchStatus::Found => 0,
            SearchStatus::Exhausted => 2,
            SearchStatus::Budget => 3,
        }
    }
}

/// Replaces every `wallMicros` value with 0, for comparisons.
pub fn mask_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m.iter_mut() {
                if k == "wallMicros" {
                    *x = 0.into();
                } else {
                    mask_timing(x);
                }
            }
        }
        serde_json::Value::Array(xs) => xs.iter_mut().for_each(mask_timing),
        _ => {}
    }
}

/// Synthesizes from an examples file against a bundle.
pub fn syn(dir: &Path, examples_text: &str, opts: &SynOptions) -> Result<SynReport, HarnessError> {
    let h = read_bundle_header(dir)?;
    with_domain!(h.manifest.domain, d => {
        let examples = parse_examples(&d, &h.grammar, examples_text)?;
        syn_with(&h, &d, &examples, opts)
    })
}

fn syn_with<D: Domain>(
    h: &BundleHeader,
    d: &D,
    examples: &[Example<D::Value>],
    opts: &SynOptions,
) -> Result<SynReport, HarnessError> {
    let g = &h.grammar;
    let e = examples.get(opts.slice_example).ok_or(SearchError::SliceExample {
        index: opts.slice_example,
        len: examples.len(),
    })?;
    let s: Slice<D::Abs> = match opts.mode {
        SliceMode::Oracle => {
            let fta = load_fta(h, d)?;
            let (oracle, index, _) = load_oracle(h, d, &fta)?;
            slice(&fta.fta, &oracle, &index, g, d, e)?
        }
        SliceMode::NoOracle => {
            let fta = load_fta(h, d)?;
            slice_no_oracle(&fta.fta, g, d, e, fta.fingerprint)?
        }
        SliceMode::NoPresyn => slice_from_scratch(g, d, e, opts.limits)?,
    };
    log::info!(
        "{} slice: {} states, {} transitions, {} visited",
        opts.mode,
        s.fta.num_states(),
        s.fta.num_transitions(),
        s.metrics.states_visited
    );
    if let Some(path) = &opts.emit_slice {
        write_file(path, write_fta(&s.fta, g.fingerprint(), d))?;
        write_file(&sidecar_path(path), to_pretty(&s.metrics.sidecar_json()))?;
    }
    let outcome = concretize_and_search(&s.fta, g, d, examples, opts.slice_example, opts.budget)?;
    Ok(SynReport {
        mode: opts.mode,
        program: outcome.program.as_ref().map(|p| g.render(p)),
        outcome,
        slice: s.metrics,
        slice_states: s.fta.num_states() as u64,
        slice_transitions: s.fta.num_transitions() as u64,
    })
}

/// `PATH.metrics.json` next to an emitted slice.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".metrics.json");
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDecl {
    pub name: String,
    pub examples: serde_json::Value,
}

pub fn parse_tasks(text: &str) -> Result<Vec<TaskDecl>, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("malformed tasks file: {e}")))
}

/// One line of the scaling CSV; numeric fields are empty on failure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScaleRow {
    pub task: String,
    pub k: u32,
    pub mode: SliceMode,
    pub slice_micros: Option<u64>,
    pub total_micros: Option<u64>,
    pub peak_states: Option<u64>,
    pub peak_transitions: Option<u64>,
    pub states_visited: Option<u64>,
    #[serde(skip)]
    pub status: Option<SearchStatus>,
    #[serde(skip)]
    pub error: Option<String>,
}

impl ScaleRow {
    fn failed(task: &str, k: u32, mode: SliceMode, error: String) -> Self {
        log::warn!("task {task} k={k} {mode}: {error}");
        ScaleRow {
            task: task.into(),
            k,
            mode,
            slice_micros: None,
            total_micros: None,
            peak_states: None,
            peak_transitions: None,
            states_visited: None,
            status: None,
            error: Some(error),
        }
    }
}

pub const SCALE_MODES: [SliceMode; 2] = [SliceMode::Oracle, SliceMode::NoPresyn];

/// Sweeps granularities `ks` over the tasks. Each k gets its own offline
/// build; failures become rows with empty fields.
pub fn scale(
    file: &GrammarFile,
    base: &DomainConfig,
    ks: std::ops::RangeInclusive<u32>,
    tasks: &[TaskDecl],
    budget: SearchBudget,
) -> Result<Vec<ScaleRow>, HarnessError> {
    let g = compile(file)?;
    let mut rows = Vec::new();
    for k in ks {
        let fail_all = |rows: &mut Vec<ScaleRow>, msg: String| {
            for t in tasks {
                for m in SCALE_MODES {
                    rows.push(ScaleRow::failed(&t.name, k, m, msg.clone()));
                }
            }
        };
        let cfg = match base.with_granularity(k) {
            Ok(c) => c,
            Err(e) => {
                fail_all(&mut rows, e.to_string());
                continue;
            }
        };
        let parsed = with_domain!(cfg, d => {
            let tasks: Vec<(String, Result<Vec<Example<_>>, String>)> = tasks
                .iter()
                .map(|t| {
                    let ex = parse_examples(&d, &g, &t.examples.to_string()).map_err(|e| e.to_string());
                    (t.name.clone(), ex)
                })
                .collect();
            scale_at(&g, &d, k, &tasks, budget)
        });
        match parsed {
            Ok(r) => rows.extend(r),
            Err(e) => fail_all(&mut rows, e.to_string()),
        }
    }
    Ok(rows)
}

/// Rows for one granularity: builds the offline artifacts once, then runs
/// every task in each scaling mode.
pub fn scale_at<D: Domain>(
    g: &Grammar,
    d: &D,
    k: u32,
    tasks: &[(String, Result<Vec<Example<D::Value>>, String>)],
    budget: SearchBudget,
) -> Result<Vec<ScaleRow>, HarnessError> {
    let fta = build_offline_fta(g, d, BuildLimits::default())?;
    let oracle = build_oracle(&fta, g, d, DEFAULT_MAX_CLAUSES)?;
    let index = build_final_index(&fta, &oracle, g, d, DEFAULT_FINAL_INDEX_CAP);
    let mut rows = Vec::new();
    for (name, examples) in tasks {
        for mode in SCALE_MODES {
            let examples = match examples {
                Ok(e) => e,
                Err(msg) => {
                    rows.push(ScaleRow::failed(name, k, mode, msg.clone()));
                    continue;
                }
            };
            let start = Instant::now();
            let s = match mode {
                SliceMode::Oracle => slice(&fta, &oracle, &index, g, d, &examples[0]),
                _ => slice_from_scratch(g, d, &examples[0], BuildLimits::default()),
            };
            let s = match s {
                Ok(s) => s,
                Err(e) => {
                    rows.push(ScaleRow::failed(name, k, mode, e.to_string()));
                    continue;
                }
            };
            let slice_micros = start.elapsed().as_micros() as u64;
            match concretize_and_search(&s.fta, g, d, examples, 0, budget) {
                Ok(out) => rows.push(ScaleRow {
                    task: name.clone(),
                    k,
                    mode,
                    slice_micros: Some(slice_micros),
                    total_micros: Some(start.elapsed().as_micros() as u64),
                    peak_states: Some(s.metrics.peak_states),
                    peak_transitions: Some(s.metrics.peak_transitions),
                    states_visited: Some(s.metrics.states_visited),
                    status: Some(out.status),
                    error: None,
                }),
                Err(e) => rows.push(ScaleRow::failed(name, k, mode, e.to_string())),
            }
        }
    }
    Ok(rows)
}

pub fn scale_csv(rows: &[ScaleRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Parses `A..B` (inclusive) or a single `A`.
pub fn parse_k_range(s: &str) -> Result<std::ops::RangeInclusive<u32>, HarnessError> {
    let bad = || HarnessError::Config(format!("bad k range `{s}` (expected A..B)"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// Reads the grammar and config files named on the command line.
pub fn load_inputs(grammar: Option<&Path>, config: &Path) -> Result<(GrammarFile, DomainConfig), HarnessError> {
    load_grammar_source(grammar, &read_text(config)?)
}

pub fn unroll_file(grammar: &Path, depth: usize, out: &Path) -> Result<GrammarFile, HarnessError> {
    let file = GrammarFile::from_json(&read_text(grammar)?)
        .map_err(|e| HarnessError::Grammar(format!("{}: {e}", grammar.display())))?;
    let unrolled = crate::grammar::unroll(&file, depth).map_err(|d| HarnessError::Grammar(join_diagnostics(&d)))?;
    compile(&unrolled)?;
    write_file(out, unrolled.to_json_pretty() + "\n")?;
    Ok(unrolled)
}

pub fn timeout_from_secs(secs: f64) -> Result<Duration, HarnessError> {
    if !(secs.is_finite() && secs > 0.0) {
        return Err(HarnessError::Config(format!("timeout must be positive, got {secs}")));
    }
    Ok(Duration::from_secs_f64(secs))
}

/// The bundle's FTA fingerprint as recomputed from the loaded automaton.
pub fn recompute_fta_fingerprint(dir: &Path) -> Result<Fingerprint, HarnessError> {
    let h = read_bundle_header(dir)?;
    with_domain!(h.manifest.domain, d => {
        let f = load_fta(&h, &d)?;
        Ok(fta_fingerprint(&f.fta, h.grammar.fingerprint(), &d))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::bitvec_s2_file;

    fn s2_bundle(dir: &Path, k: u8) -> PresynReport {
        let cfg = DomainConfig::Bitvec(BitVecConfig { width: 4, k });
        presyn(&bitvec_s2_file(), &cfg, BuildLimits::default(), dir).unwrap()
    }

    const E12: &str = r#"[{"inputs":{"x":"0b0001"},"output":"0b0110"},{"inputs":{"x":"0b0010"},"output":"0b1010"}]"#;

    #[test]
    fn config_parsing() {
        let c = DomainConfig::parse(r#"{"width":4,"k":2}"#, Some("bitvec")).unwrap();
        assert_eq!(c, DomainConfig::Bitvec(BitVecConfig { width: 4, k: 2 }));
        let s = DomainConfig::parse(r#"{"level":3,"maxInputLen":8,"maxIndex":6,"unrollDepth":2}"#, Some("string")).unwrap();
        assert_eq!(s, DomainConfig::String(StringConfig::default()));
        assert!(DomainConfig::parse(r#"{"width":4,"k":5}"#, Some("bitvec")).is_err());
        assert!(DomainConfig::parse(r#"{"domain":"string"}"#, Some("bitvec")).is_err());
        assert!(DomainConfig::parse(r#"{"width":4,"bogus":1}"#, Some("bitvec")).is_err());
        assert_eq!(parse_k_range("1..4").unwrap(), 1..=4);
        assert_eq!(parse_k_range("2").unwrap(), 2..=2);
        assert!(parse_k_range("3..1").is_err());
    }

    #[test]
    fn presyn_then_syn_all_modes() {
        let dir = tempfile::tempdir().unwrap();
        let r = s2_bundle(dir.path(), 2);
        assert_eq!(r.manifest.counts.variable_transitions, 4);
        let st = stats(dir.path()).unwrap();
        assert_eq!(st.variable_transitions, 4);
        assert_eq!(st.states, r.manifest.counts.states);
        let mut visited = Vec::new();
        for mode in SliceMode::ALL {
            let opts = SynOptions {
                mode,
                ..SynOptions::default()
            };
            let rep = syn(dir.path(), E12, &opts).unwrap();
            assert_eq!(rep.program.as_deref(), Some("(add (shl x 2) 2)"));
            assert_eq!(rep.exit_code(), 0);
            visited.push(rep.slice.states_visited);
        }
        assert!(visited[1] >= visited[0]);
    }

    #[test]
    fn bundles_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        s2_bundle(a.path(), 2);
        s2_bundle(b.path(), 2);
        for f in [GRAMMAR_FILE, FTA_FILE, ORACLE_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(
            recompute_fta_fingerprint(a.path()).unwrap().to_hex(),
            read_bundle_header(a.path()).unwrap().manifest.fta_fingerprint
        );
    }

    #[test]
    fn emit_slice_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        s2_bundle(dir.path(), 2);
        let out = dir.path().join("slice.bin");
        let opts = SynOptions {
            emit_slice: Some(out.clone()),
            ..SynOptions::default()
        };
        syn(dir.path(), E12, &opts).unwrap();
        assert!(out.exists());
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&out)).unwrap()).unwrap();
        assert!(side["statesVisited"].as_u64().unwrap() >= side["statesAdmitted"].as_u64().unwrap());

        let bad = r#"[{"inputs":{"y":"0b0001"},"output":"0b0110"}]"#;
        let e = syn(dir.path(), bad, &SynOptions::default()).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        let opts = SynOptions {
            slice_example: 5,
            ..SynOptions::default()
        };
        assert_eq!(syn(dir.path(), E12, &opts).unwrap_err().exit_code(), 4);

        let mut m = fs::read(dir.path().join(ORACLE_FILE)).unwrap();
        let n = m.len();
        m[n / 2] ^= 1;
        fs::write(dir.path().join(ORACLE_FILE), m).unwrap();
        assert!(matches!(stats(dir.path()), Err(HarnessError::Format { .. })));
    }

    #[test]
    fn scale_rows() {
        let tasks = parse_tasks(&format!(r#"[{{"name":"s2","examples":{E12}}}]"#)).unwrap();
        let base = DomainConfig::Bitvec(BitVecConfig { width: 4, k: 1 });
        let rows = scale(&bitvec_s2_file(), &base, 1..=5, &tasks, SearchBudget::default()).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows[..8].iter().all(|r| r.status == Some(SearchStatus::Found)));
        assert!(rows[8..].iter().all(|r| r.error.is_some() && r.peak_states.is_none()));
        let csv = scale_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "task,k,mode,sliceMicros,totalMicros,peakStates,peakTransitions,statesVisited"
        );
        assert!(lines.last().unwrap().starts_with("s2,5,no-presyn,,"));
    }
}
