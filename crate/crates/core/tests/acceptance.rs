//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p presyn --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use presyn::codec::{read_fta, write_fta};
use presyn::domain::SampleRng;
use presyn::harness::{self, BitVecConfig, DomainConfig, HarnessError, StringConfig, SynOptions};
use presyn::oracle::{input_space_product, read_oracle, write_oracle, DEFAULT_MAX_CLAUSES};
use presyn::string::{string_dsl, StrRule};
use presyn::testing::{bitvec_s2_file, bitvec_s2_grammar, e1, e2, planted_examples, random_bitvec_env, random_bitvec_grammar};
use presyn::*;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("took {t:?}, limit {limit:?}"));
    }
    Ok(())
}

const E12: &str = r#"[{"inputs":{"x":"0b0001"},"output":"0b0110"},{"inputs":{"x":"0b0010"},"output":"0b1010"}]"#;

fn golden_counts() -> Outcome {
    let start = Instant::now();
    let g = bitvec_s2_grammar();
    let space = count_programs(&g, g.start());
    ensure!(space == 16u32.into(), "program space {space}, expected 16");
    let mut runs = Vec::new();
    for k in [1, 2] {
        let fta = build_online_fta(&g, &BitVecDomain::new(4, k), &e1(), BuildLimits::default()).unwrap();
        runs.push(fta.count_accepting_runs());
    }
    ensure!(runs[0] == 12u32.into(), "k=1 accepting runs {}, expected 12", runs[0]);
    ensure!(runs[1] == 2u32.into(), "k=2 accepting runs {}, expected 2", runs[1]);
    within(Duration::from_secs(1), start)?;
    Ok(format!("runs k=1: {}, k=2: {}; program space {space}", runs[0], runs[1]))
}

fn golden_synthesis() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = DomainConfig::Bitvec(BitVecConfig { width: 4, k: 2 });
    harness::presyn(&bitvec_s2_file(), &cfg, BuildLimits::default(), dir.path()).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for mode in SliceMode::ALL {
        let opts = SynOptions {
            mode,
            ..SynOptions::default()
        };
        let r = harness::syn(dir.path(), E12, &opts).map_err(|e| e.to_string())?;
        let p = r.program.unwrap_or_default();
        ensure!(p == "(add (shl x 2) 2)", "{mode} returned `{p}`");
        got.push(format!("{mode}: {p}"));
    }
    within(Duration::from_secs(1), start)?;
    Ok(got.join("; "))
}

fn golden_oracle() -> Outcome {
    let start = Instant::now();
    let g = bitvec_s2_grammar();
    let d = BitVecDomain::new(4, 2);
    let fta = build_offline_fta(&g, &d, BuildLimits::default()).unwrap();
    let o = build_oracle(&fta, &g, &d, DEFAULT_MAX_CLAUSES).unwrap();
    let x = VarId(0);
    let entry = |sym: &str, low: u64| -> BTreeSet<AbstractInput<LowBits>> {
        let q = fta.lookup(g.symbol(sym).unwrap(), &d.abs(low)).unwrap();
        o.clauses(q).unwrap().iter().cloned().collect()
    };
    let dnf = |lows: &[u64]| -> BTreeSet<AbstractInput<LowBits>> {
        lows.iter().map(|&l| AbstractInput::singleton(x, d.abs(l))).collect()
    };
    ensure!(entry("t1", 0b01) == dnf(&[0b00, 0b11]), "O(q_t1^?01) = {:?}", entry("t1", 0b01));
    ensure!(entry("t1", 0b11) == dnf(&[0b01, 0b10]), "O(q_t1^?11) = {:?}", entry("t1", 0b11));
    for low in 0..4 {
        ensure!(entry("t0", low) == dnf(&[low]), "O(q_t0^{low}) = {:?}", entry("t0", low));
    }
    within(Duration::from_secs(1), start)?;
    Ok("O(q_t1^?01) = {x↦?00} ∨ {x↦?11}; O(q_t1^?11) = {x↦?01} ∨ {x↦?10}; t0 entries singletons".into())
}

fn slice_language_case<D: Domain>(t: &Task<D>) -> Result<usize, String> {
    let (g, d) = (&t.grammar, &t.domain);
    let e = &t.examples[0];
    let expected = abstractly_satisfying(g, d, e);
    let art = presynthesize(g, d);
    let s = slice(&art.fta, &art.oracle, &art.index, g, d, e).map_err(|e| e.to_string())?;
    let lang = s.fta.language(1_000_000).ok_or("slice language too large")?;
    if lang != expected {
        return Err(format!(
            "slice has {} programs, brute force {} (grammar {})",
            lang.len(),
            expected.len(),
            g.file().to_json_pretty()
        ));
    }
    let n = slice_no_oracle(&art.fta, g, d, e, art.oracle.fta_fingerprint()).map_err(|e| e.to_string())?;
    let f = slice_from_scratch(g, d, e, BuildLimits::default()).map_err(|e| e.to_string())?;
    if n.fta.language(1_000_000).as_ref() != Some(&lang) || f.fta.language(1_000_000).as_ref() != Some(&lang) {
        return Err("the three slicing modes disagree".into());
    }
    if n.metrics.states_visited < s.metrics.states_visited {
        return Err("no-oracle visited fewer states than the oracle slicer".into());
    }
    Ok(lang.len())
}

fn slice_language() -> Outcome {
    let start = Instant::now();
    let bv = bitvec_tasks(0xb17, 200);
    let st = string_tasks(0x57, 50);
    let mut programs = 0;
    let mut empty = 0;
    for (i, t) in bv.iter().enumerate() {
        let n = slice_language_case(t).map_err(|m| format!("bit-vector task {i} (k={}): {m}", t.domain.k))?;
        programs += n;
        empty += (n == 0) as usize;
    }
    for (i, t) in st.iter().enumerate() {
        let n = slice_language_case(t).map_err(|m| format!("string task {i} (level {}): {m}", t.domain.level))?;
        programs += n;
        empty += (n == 0) as usize;
    }
    within(Duration::from_secs(300), start)?;
    Ok(format!(
        "{} bit-vector + {} string tasks, 0 mismatches ({programs} slice programs, {empty} empty slices)",
        bv.len(),
        st.len()
    ))
}

fn oracle_precision_fta<D: Domain>(g: &Grammar, d: &D) -> Result<(usize, usize), String> {
    let art = presynthesize(g, d);
    let mut checks = 0;
    for gamma in input_space_product(g, d) {
        let reach = reachable_under(&art.fta, g, &gamma);
        for q in art.fta.state_ids() {
            let got = art.oracle.input_consistent(q, &gamma).unwrap();
            if got != reach[q.index()] {
                return Err(format!("state {} under {:?}: oracle {got}, brute force {}", q.0, gamma, reach[q.index()]));
            }
            checks += 1;
        }
    }
    Ok((art.fta.num_states(), checks))
}

fn oracle_precision() -> Outcome {
    let start = Instant::now();
    let (mut ftas, mut states, mut checks) = (0, 0, 0);
    let mut tally = |r: Result<(usize, usize), String>| -> Result<(), String> {
        let (s, c) = r?;
        ftas += 1;
        states += s;
        checks += c;
        Ok(())
    };
    let s2 = bitvec_s2_grammar();
    for k in 1..=4 {
        tally(oracle_precision_fta(&s2, &BitVecDomain::new(4, k)))?;
    }
    let mut rng = SampleRng::seed_from_u64(0x1e3);
    for i in 0..24 {
        let g = Grammar::from_file(random_bitvec_grammar(&mut rng, 1 + i % 3)).unwrap();
        tally(oracle_precision_fta(&g, &BitVecDomain::new(4, 1 + (i % 4) as u8)))?;
    }
    for level in 1..=3 {
        let g = Grammar::from_file(string_dsl(2, 4)).unwrap();
        tally(oracle_precision_fta(&g, &StringDomain::new(level, 6)))?;
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("{ftas} FTAs, {states} states, {checks} (state, Γ) pairs, 0 mismatches"))
}

fn soundness() -> Outcome {
    let start = Instant::now();
    const TRIALS: usize = 10_000;
    let mut rules = 0;
    let mut exhaustive = 0;
    let file = GrammarFile::from_json(
        r#"{"start":"s","variables":[{"name":"x","domain":"bitvec"},{"name":"y","domain":"bitvec"}],
            "nonterminals":["s","t"],
            "productions":[
              {"lhs":"s","op":"add","const":1,"args":["t"]},{"lhs":"s","op":"add","const":2,"args":["t"]},
              {"lhs":"s","op":"add","const":3,"args":["t"]},{"lhs":"s","op":"shl","const":1,"args":["t"]},
              {"lhs":"s","op":"shl","const":2,"args":["t"]},{"lhs":"s","op":"shl","const":3,"args":["t"]},
              {"lhs":"s","op":"add","args":["t","t"]},
              {"lhs":"t","op":"x","args":[]},{"lhs":"t","op":"y","args":[]}]}"#,
    )
    .unwrap();
    let g = Grammar::from_file(file).unwrap();
    for k in 1..=4 {
        let d = BitVecDomain::new(4, k);
        for &p in g.productions_of(g.start()) {
            check_transformer_soundness(&d, &g, p, TRIALS, 0x50 + k as u64)
                .map_err(|c| format!("bit-vector k={k}: {c:?}"))?;
            rules += 1;
            exhaustive += d.exhaustive_soundness(&g, p).map_err(|c| format!("bit-vector k={k} exhaustive: {c:?}"))?;
        }
    }
    let rule_domain = StringDomain::new(3, 8);
    for rule in StrRule::ALL {
        rule_domain
            .check_rule_soundness(rule, TRIALS, 0x5a)
            .map_err(|c| format!("string rule {rule:?}: {c:?}"))?;
        rules += 1;
    }
    let sg = Grammar::from_file(string_dsl(1, 8)).unwrap();
    for level in 1..=3 {
        let d = StringDomain::new(level, 8);
        for &p in sg.productions_of(sg.start()) {
            if sg.production(p).kind == ProductionKind::Operator {
                check_transformer_soundness(&d, &sg, p, TRIALS, 0x5b + level as u64)
                    .map_err(|c| format!("string level {level} `{}`: {c:?}", sg.production(p).op))?;
                rules += 1;
            }
        }
    }
    within(Duration::from_secs(300), start)?;
    Ok(format!("{rules} rule checks x {TRIALS} trials, {exhaustive} exhaustive bit-vector tuples, 0 violations"))
}

fn geo_mean(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// Bit-vector suite for the scaling sweep: 50 planted tasks over random
/// depth-3 grammars, width 8 so that k = 4 still abstracts.
fn scaling() -> Outcome {
    let start = Instant::now();
    let mut rng = SampleRng::seed_from_u64(7);
    let mut tasks = Vec::new();
    while tasks.len() < 50 {
        let g = Grammar::from_file(random_bitvec_grammar(&mut rng, 3)).unwrap();
        let d = BitVecDomain::new(8, 1);
        if let Some(ex) = planted_examples(&g, &d, &mut rng, 2, random_bitvec_env(&d, &g)) {
            tasks.push((g, ex));
        }
    }
    let mut ratio = Vec::new();
    let mut visited = Vec::new();
    let mut peak = Vec::new();
    for k in 1..=4u8 {
        let (mut r, mut v, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for (g, ex) in &tasks {
            let d = BitVecDomain::new(8, k);
            let art = presynthesize(g, &d);
            let s = slice(&art.fta, &art.oracle, &art.index, g, &d, &ex[0]).map_err(|e| e.to_string())?;
            let n = slice_from_scratch(g, &d, &ex[0], BuildLimits::default()).map_err(|e| e.to_string())?;
            let found = concretize_and_search(&s.fta, g, &d, ex, 0, SearchBudget::default()).unwrap();
            ensure!(found.status == SearchStatus::Found, "planted task unsolved at k={k}");
            r.push(n.metrics.peak_states as f64 / s.metrics.peak_states.max(1) as f64);
            v.push(s.metrics.states_visited.max(1) as f64);
            p.push(n.metrics.peak_states.max(1) as f64);
        }
        ratio.push(geo_mean(&r));
        visited.push(geo_mean(&v));
        peak.push(geo_mean(&p));
    }
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");
    let detail = format!(
        "ratio by k [{}], oracle visited [{}] ({:.2}x), no-presyn peak [{}] ({:.2}x)",
        fmt(&ratio),
        fmt(&visited),
        visited[3] / visited[0],
        fmt(&peak),
        peak[3] / peak[0]
    );
    ensure!(ratio.windows(2).all(|w| w[1] > w[0]), "ratio not strictly increasing: {detail}");
    ensure!(visited[3] / visited[0] < 3.0, "oracle visited grew too much: {detail}");
    ensure!(peak[3] / peak[0] > 3.0, "no-presyn peak grew too little: {detail}");
    within(Duration::from_secs(300), start)?;
    Ok(detail)
}

fn bundle_digest(dir: &Path) -> String {
    let mut h = Sha256::new();
    for f in [harness::GRAMMAR_FILE, harness::FTA_FILE, harness::ORACLE_FILE, harness::MANIFEST_FILE] {
        let bytes = fs::read(dir.join(f)).unwrap();
        h.update((bytes.len() as u64).to_be_bytes());
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

/// Digests of the reference bundles, recorded once and compared on every
/// machine the suite runs on.
const FROZEN_S2_K2: &str = "ab67f775c8fbc338958f3f1eb05fb54e9ae9465599d555227976179d5a7ce8a8";
const FROZEN_STRING_L3: &str = "c5e698bb0718be9ed1de9cf27fd9b30d45a1d563f7efebfe71536eebd4d197d3";

fn determinism() -> Outcome {
    let string_cfg = DomainConfig::String(StringConfig::default());
    let string_file = string_dsl(2, 6);
    let s2_cfg = DomainConfig::Bitvec(BitVecConfig { width: 4, k: 2 });
    let s2_file = bitvec_s2_file();
    let mut digests = Vec::new();
    for (file, cfg, examples) in [
        (&s2_file, &s2_cfg, E12),
        (
            &string_file,
            &string_cfg,
            r#"[{"inputs":{"x":"abcdef"},"output":"bcd"},{"inputs":{"x":"xyz12345"},"output":"yz1"}]"#,
        ),
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        harness::presyn(file, cfg, BuildLimits::default(), a.path()).map_err(|e| e.to_string())?;
        harness::presyn(file, cfg, BuildLimits::default(), b.path()).map_err(|e| e.to_string())?;
        let (da, db) = (bundle_digest(a.path()), bundle_digest(b.path()));
        ensure!(da == db, "{} bundles differ between runs", cfg.tag());
        for mode in SliceMode::ALL {
            let opts = SynOptions {
                mode,
                ..SynOptions::default()
            };
            let mut ja = harness::syn(a.path(), examples, &opts).map_err(|e| e.to_string())?.to_json();
            let mut jb = harness::syn(b.path(), examples, &opts).map_err(|e| e.to_string())?.to_json();
            harness::mask_timing(&mut ja);
            harness::mask_timing(&mut jb);
            ensure!(
                serde_json::to_vec(&ja).unwrap() == serde_json::to_vec(&jb).unwrap(),
                "{} {mode} result JSON differs between runs",
                cfg.tag()
            );
        }
        digests.push(da);
    }
    for (name, got, frozen) in [("s2 k=2", &digests[0], FROZEN_S2_K2), ("string level 3", &digests[1], FROZEN_STRING_L3)] {
        ensure!(got == frozen, "{name} bundle digest {got} differs from the recorded {frozen}");
    }
    Ok(format!("bundles and masked results identical across runs; digests {} {}", &digests[0][..16], &digests[1][..16]))
}

fn round_trip_domain<D: Domain>(g: &Grammar, d: &D, examples: &[Example<D::Value>]) -> Result<usize, String> {
    let art = presynthesize(g, d);
    let mut ftas = vec![art.fta.clone()];
    for e in examples {
        ftas.push(build_online_fta(g, d, e, BuildLimits::default()).map_err(|e| e.to_string())?);
        ftas.push(slice(&art.fta, &art.oracle, &art.index, g, d, e).map_err(|e| e.to_string())?.fta);
    }
    for f in &ftas {
        let bytes = write_fta(f, g.fingerprint(), d);
        let back = read_fta(&bytes, d).map_err(|e| e.to_string())?;
        ensure!(&back.fta == f, "FTA changed across a round trip");
        ensure!(write_fta(&back.fta, g.fingerprint(), d) == bytes, "FTA bytes changed across a round trip");
    }
    let fp = presyn::codec::fta_fingerprint(&art.fta, g.fingerprint(), d);
    for index in [art.index.clone(), build_final_index(&art.fta, &art.oracle, g, d, 0)] {
        let bytes = write_oracle(&art.oracle, &index, d);
        let (o, i) = read_oracle(&bytes, d, fp).map_err(|e| e.to_string())?;
        ensure!(o == art.oracle && i == index, "oracle changed across a round trip");
    }
    Ok(ftas.len() + 2)
}

fn faults() -> Result<usize, String> {
    let g = bitvec_s2_grammar();
    let d = BitVecDomain::new(4, 2);
    let art = presynthesize(&g, &d);
    let bytes = write_fta(&art.fta, g.fingerprint(), &d);
    let mut cases = 0;
    let mut expect = |what: &str, r: Result<(), FormatError>, want: fn(&FormatError) -> bool| -> Result<(), String> {
        cases += 1;
        match r {
            Err(e) if want(&e) => Ok(()),
            other => Err(format!("{what}: got {other:?}")),
        }
    };
    let fta_read = |b: &[u8]| read_fta(b, &d).map(|_| ());
    expect("truncated", fta_read(&bytes[..bytes.len() - 7]), |e| matches!(e, FormatError::Checksum))?;
    expect("empty", fta_read(&[]), |e| matches!(e, FormatError::Checksum | FormatError::BadMagic { .. }))?;
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    expect("bit flip", fta_read(&flipped), |e| matches!(e, FormatError::Checksum))?;
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&9u32.to_le_bytes());
    expect("version", fta_read(&version), |e| matches!(e, FormatError::UnsupportedVersion { found: 9, .. }))?;
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"XXXX");
    expect("magic", fta_read(&magic), |e| matches!(e, FormatError::BadMagic { .. }))?;
    expect(
        "domain",
        read_fta(&bytes, &BitVecDomain::new(4, 3)).map(|_| ()),
        |e| matches!(e, FormatError::DomainMismatch { .. }),
    )?;
    let ob = write_oracle(&art.oracle, &art.index, &d);
    let other = presynthesize(&g, &BitVecDomain::new(4, 1));
    let other_fp = presyn::codec::fta_fingerprint(&other.fta, g.fingerprint(), &BitVecDomain::new(4, 1));
    expect(
        "oracle for another FTA",
        read_oracle(&ob, &d, other_fp).map(|_| ()),
        |e| matches!(e, FormatError::FingerprintMismatch { .. }),
    )?;
    expect("oracle read as FTA", fta_read(&ob), |e| matches!(e, FormatError::BadMagic { .. }))?;

    // The same faults through bundle loading.
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = |k| DomainConfig::Bitvec(BitVecConfig { width: 4, k });
    harness::presyn(&bitvec_s2_file(), &cfg(2), BuildLimits::default(), a.path()).unwrap();
    harness::presyn(&bitvec_s2_file(), &cfg(2), BuildLimits::default(), b.path()).unwrap();
    let mut other_grammar = bitvec_s2_file();
    other_grammar.productions.remove(0);
    let c = tempfile::tempdir().unwrap();
    harness::presyn(&other_grammar, &cfg(2), BuildLimits::default(), c.path()).unwrap();
    fs::copy(c.path().join(harness::ORACLE_FILE), b.path().join(harness::ORACLE_FILE)).unwrap();
    let r = harness::stats(b.path());
    cases += 1;
    ensure!(
        matches!(r, Err(HarnessError::Format { source: FormatError::FingerprintMismatch { .. }, .. })),
        "swapped oracle.bin: got {r:?}"
    );
    let mut fb = fs::read(a.path().join(harness::FTA_FILE)).unwrap();
    fb.truncate(fb.len() - 1);
    fs::write(a.path().join(harness::FTA_FILE), fb).unwrap();
    let r = harness::stats(a.path());
    cases += 1;
    ensure!(
        matches!(r, Err(HarnessError::Format { source: FormatError::Checksum, .. })),
        "truncated fta.bin: got {r:?}"
    );
    Ok(cases)
}

fn round_trip() -> Outcome {
    let mut artifacts = 0;
    let s2 = bitvec_s2_grammar();
    for k in 1..=4 {
        artifacts += round_trip_domain(&s2, &BitVecDomain::new(4, k), &[e1(), e2()])?;
    }
    for t in bitvec_tasks(0x77, 20) {
        artifacts += round_trip_domain(&t.grammar, &t.domain, &t.examples)?;
    }
    for t in string_tasks(0x78, 6) {
        artifacts += round_trip_domain(&t.grammar, &t.domain, &t.examples)?;
    }
    let cases = faults()?;
    Ok(format!("{artifacts} artifacts round-tripped byte-identically; {cases} fault cases fired"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("golden accepting-run counts and program space", golden_counts),
        ("golden synthesis in all three modes", golden_synthesis),
        ("golden oracle entries", golden_oracle),
        ("slice language equals brute force", slice_language),
        ("oracle preciseness against brute-force reachability", oracle_precision),
        ("transformer soundness", soundness),
        ("scaling direction", scaling),
        ("determinism", determinism),
        ("round trip and fault detection", round_trip),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {n} PASS {name} [{secs:.2}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name} [{secs:.2}s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
