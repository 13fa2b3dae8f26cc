//! Brute-force oracles, seeded generators and corpus helpers shared by the
//! integration tests (and pulled into the CLI acceptance target by path).
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use pageguide_core::index::{locate, MatchTier, DEFAULT_FUZZY_MIN};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Every snapshot bundle under `data/snapshots`, sorted by name.
pub fn corpus_dirs() -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data_dir().join("snapshots"))
        .expect("snapshot corpus")
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("page.html").is_file())
        .collect();
    dirs.sort();
    dirs
}

pub fn sequence_manifests() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(data_dir().join("sequences"))
        .expect("sequence corpus")
        .map(|e| e.unwrap().path().join("sequence.json"))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    out
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// ---- metric oracles ----

/// Precision, recall, F1 by counting membership one element at a time.
pub fn prf_oracle(pred: &[u32], gold: &[u32]) -> (f64, f64, f64) {
    let mut p_seen: Vec<u32> = Vec::new();
    for x in pred {
        if !p_seen.contains(x) {
            p_seen.push(*x);
        }
    }
    let mut g_seen: Vec<u32> = Vec::new();
    for x in gold {
        if !g_seen.contains(x) {
            g_seen.push(*x);
        }
    }
    let mut tp = 0usize;
    for x in &p_seen {
        if g_seen.contains(x) {
            tp += 1;
        }
    }
    let p = if p_seen.is_empty() { 0.0 } else { tp as f64 / p_seen.len() as f64 };
    let r = if g_seen.is_empty() { 0.0 } else { tp as f64 / g_seen.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Lowercase, keep letters, digits and whitespace, split on whitespace.
pub fn tokens_oracle(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.to_lowercase().chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c.is_alphanumeric() {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token-multiset F1 with the overlap found by greedy pairing of equal tokens.
pub fn token_f1_oracle(pred: &str, gold: &str) -> f64 {
    let p = tokens_oracle(pred);
    let g = tokens_oracle(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; g.len()];
    let mut common = 0usize;
    for t in &p {
        if let Some(k) = (0..g.len()).find(|&k| !used[k] && &g[k] == t) {
            used[k] = true;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

// ---- span ladder oracles ----

pub fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

pub fn slice(s: &str, start: usize, end: usize) -> String {
    s.chars().skip(start).take(end - start).collect()
}

/// Leftmost char offset of an exact occurrence.
pub fn exact_oracle(text: &str, phrase: &str) -> Option<usize> {
    let t = chars(text);
    let p = chars(phrase);
    if p.len() > t.len() {
        return None;
    }
    (0..=t.len() - p.len()).find(|&i| t[i..i + p.len()] == p[..])
}

fn lower_each(cs: &[char]) -> String {
    cs.iter().flat_map(|c| c.to_lowercase()).collect()
}

/// Leftmost char offset of a same-length window equal after per-char lowercasing.
pub fn ci_oracle(text: &str, phrase: &str) -> Option<usize> {
    let t = chars(text);
    let p = chars(phrase);
    if p.is_empty() || p.len() > t.len() {
        return None;
    }
    let target = lower_each(&p);
    (0..=t.len() - p.len()).find(|&i| {
        t[i..i + p.len()].iter().zip(&p).all(|(a, b)| a.to_lowercase().collect::<String>() == b.to_lowercase().collect::<String>())
            && lower_each(&t[i..i + p.len()]) == target
    })
}

pub fn collapse_oracle(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether `text[start..end]` is a whitespace-normalized, case-insensitive
/// rendering of `phrase` whose bounds sit on non-whitespace characters.
pub fn ws_equivalent(text: &str, start: usize, end: usize, phrase: &str) -> bool {
    let t = chars(text);
    if start >= end || end > t.len() || t[start].is_whitespace() || t[end - 1].is_whitespace() {
        return false;
    }
    let got = collapse_oracle(&slice(text, start, end));
    let want = collapse_oracle(phrase);
    got.chars().count() == want.chars().count()
        && got.chars().zip(want.chars()).all(|(a, b)| a.to_lowercase().eq(b.to_lowercase()))
}

/// Whether any window of `text` is whitespace/case equivalent to `phrase`.
pub fn ws_exists(text: &str, phrase: &str) -> bool {
    if collapse_oracle(phrase).is_empty() {
        return false;
    }
    let n = text.chars().count();
    (0..n).any(|s| (s + 1..=n).any(|e| ws_equivalent(text, s, e, phrase)))
}

pub fn token_keys(s: &str) -> Vec<(String, usize, usize)> {
    let cs = chars(s);
    let mut out = Vec::new();
    let mut i = 0;
    while i < cs.len() {
        if cs[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < cs.len() && !cs[i].is_whitespace() {
            i += 1;
        }
        let raw: String = cs[start..i].iter().collect();
        let key = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if !key.is_empty() {
            out.push((key, start, i));
        }
    }
    out
}

/// Best Jaccard score over every contiguous token window, no pruning.
pub fn best_window_oracle(text: &str, phrase: &str) -> f64 {
    let target: BTreeSet<String> = token_keys(phrase).into_iter().map(|t| t.0).collect();
    if target.is_empty() {
        return 0.0;
    }
    let toks = token_keys(text);
    let mut best = 0.0f64;
    for i in 0..toks.len() {
        for j in i..toks.len() {
            let window: BTreeSet<String> = toks[i..=j].iter().map(|t| t.0.clone()).collect();
            let inter = window.intersection(&target).count();
            let union = window.union(&target).count();
            best = best.max(inter as f64 / union as f64);
        }
    }
    best
}

/// Jaccard score of the tokens fully inside `text[start..end]`.
pub fn window_score(text: &str, start: usize, end: usize, phrase: &str) -> f64 {
    let target: BTreeSet<String> = token_keys(phrase).into_iter().map(|t| t.0).collect();
    let window: BTreeSet<String> =
        token_keys(text).into_iter().filter(|t| t.1 >= start && t.2 <= end).map(|t| t.0).collect();
    let inter = window.intersection(&target).count();
    let union = window.union(&target).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Checks one `locate` result against the brute-force oracles. Returns the tier hit.
pub fn check_span_case(text: &str, phrase: &str) -> Result<Option<MatchTier>, String> {
    let got = locate(text, phrase, DEFAULT_FUZZY_MIN).map_err(|e| e.to_string())?;
    let exact = exact_oracle(text, phrase);
    let ci = ci_oracle(text, phrase);
    let ws_first = (0..text.chars().count())
        .find(|&s| (s + 1..=text.chars().count()).any(|e| ws_equivalent(text, s, e, phrase)));
    let best = best_window_oracle(text, phrase);
    match got {
        Some((s, e, MatchTier::Exact, score)) => {
            if Some(s) != exact || slice(text, s, e) != phrase || score != 1.0 {
                return Err(format!("exact {s}..{e} vs oracle {exact:?}"));
            }
            Ok(Some(MatchTier::Exact))
        }
        Some((s, e, MatchTier::CaseInsensitive, _)) => {
            if exact.is_some() || Some(s) != ci || e - s != phrase.chars().count() {
                return Err(format!("ci {s}..{e} vs exact {exact:?} ci {ci:?}"));
            }
            Ok(Some(MatchTier::CaseInsensitive))
        }
        Some((s, e, MatchTier::WhitespaceNormalized, _)) => {
            if ci.is_some() || !ws_equivalent(text, s, e, phrase) || Some(s) != ws_first {
                return Err(format!("ws {s}..{e} vs ci {ci:?} ws_first {ws_first:?}"));
            }
            Ok(Some(MatchTier::WhitespaceNormalized))
        }
        Some((s, e, MatchTier::Fuzzy, score)) => {
            let direct = window_score(text, s, e, phrase);
            if ws_first.is_some() || score < DEFAULT_FUZZY_MIN || (score - best).abs() > 1e-12 || (direct - score).abs() > 1e-12 {
                return Err(format!("fuzzy {s}..{e} score {score} oracle best {best} direct {direct} ws {ws_first:?}"));
            }
            Ok(Some(MatchTier::Fuzzy))
        }
        None => {
            if exact.is_some() || ci.is_some() || ws_first.is_some() || best >= DEFAULT_FUZZY_MIN {
                return Err(format!("no match but exact {exact:?} ci {ci:?} ws {ws_first:?} best {best}"));
            }
            Ok(None)
        }
    }
}

// ---- generators ----

const WORDS: &[&str] = &[
    "the", "cast", "Tom", "Hardy", "Nolan", "dream", "heist", "price", "$19.99", "ships", "in", "two", "days",
    "ÉCOLE", "école", "naïve", "Straße", "report", "menu", "(video)", "·", "ok,", "Fixed-price", "a", "of",
];

pub fn random_text(rng: &mut StdRng, words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push_str(match rng.random_range(0..10) {
                0 => "  ",
                1 => "\n",
                2 => "\t ",
                _ => " ",
            });
        }
        out.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Verbatim,
    Recase,
    Respace,
    DropWord,
    SwapWords,
    ReplaceWord,
    Unrelated,
}

pub const MUTATIONS: [Mutation; 7] = [
    Mutation::Verbatim,
    Mutation::Recase,
    Mutation::Respace,
    Mutation::DropWord,
    Mutation::SwapWords,
    Mutation::ReplaceWord,
    Mutation::Unrelated,
];

/// Picks a word-aligned excerpt of `text` and mutates it.
pub fn mutated_phrase(rng: &mut StdRng, text: &str, m: Mutation) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let len = rng.random_range(1..=words.len().min(6));
    let from = rng.random_range(0..=words.len() - len);
    let mut picked: Vec<String> = words[from..from + len].iter().map(|w| w.to_string()).collect();
    match m {
        Mutation::Verbatim => {
            let spans: Vec<(usize, usize)> = text
                .char_indices()
                .filter(|(i, c)| !c.is_whitespace() && (*i == 0 || text[..*i].ends_with(char::is_whitespace)))
                .map(|(i, _)| (i, i + text[i..].find(char::is_whitespace).unwrap_or(text.len() - i)))
                .collect();
            return text[spans[from].0..spans[from + len - 1].1].to_string();
        }
        Mutation::Recase => {
            return picked
                .join(" ")
                .chars()
                .map(|c| if rng.random_bool(0.5) { c.to_uppercase().next().unwrap_or(c) } else { c.to_lowercase().next().unwrap_or(c) })
                .collect();
        }
        Mutation::Respace => return picked.join("   \n "),
        Mutation::DropWord if picked.len() > 1 => {
            let k = rng.random_range(0..picked.len());
            picked.remove(k);
        }
        Mutation::SwapWords if picked.len() > 1 => {
            let k = rng.random_range(0..picked.len() - 1);
            picked.swap(k, k + 1);
        }
        Mutation::ReplaceWord => {
            let k = rng.random_range(0..picked.len());
            picked[k] = "zebra".into();
        }
        Mutation::Unrelated => return "quantum zebra origami".into(),
        _ => {}
    }
    picked.join(" ")
}

// ---- citation grammar corpus ----

/// (raw answer, expected (id, phrase) citations in order).
pub fn citation_corpus() -> Vec<(&'static str, Vec<(u32, &'static str)>)> {
    vec![
        (r#"The main actors are Leonardo DiCaprio [23:"Leonardo DiCaprio"], Tom Hardy [27:"Tom Hardy"], and Ellen Page [31:"Ellen Page"]."#,
         vec![(23, "Leonardo DiCaprio"), (27, "Tom Hardy"), (31, "Ellen Page")]),
        (r#"The movie was directed by Christopher Nolan [45:"Christopher Nolan"]."#, vec![(45, "Christopher Nolan")]),
        ("No citations here.", vec![]),
        ("A footnote [1] only.", vec![]),
        ("Footnotes [1][2][3] in a row.", vec![]),
        (r#"[1:"start"] at the very start"#, vec![(1, "start")]),
        (r#"ends with [2:"end"]"#, vec![(2, "end")]),
        (r#"adjacent [1:"a"][2:"b"]"#, vec![(1, "a"), (2, "b")]),
        (r#"same id twice [4:"x"] and [4:"x"]"#, vec![(4, "x"), (4, "x")]),
        (r#"escaped [3:"say \"hi\""] quote"#, vec![(3, r#"say "hi""#)]),
        (r#"backslash [3:"a\\b"] pair"#, vec![(3, r"a\b")]),
        (r#"lone backslash [3:"a\b"] kept"#, vec![(3, r"a\b")]),
        (r#"zero id [0:"nope"] rejected"#, vec![]),
        (r#"empty phrase [5:""] rejected"#, vec![]),
        (r#"ten digits [1234567890:"x"] rejected"#, vec![]),
        (r#"nine digits [123456789:"x"] ok"#, vec![(123456789, "x")]),
        (r#"space after colon [5: "x"] rejected"#, vec![]),
        (r#"space before colon [5 :"x"] rejected"#, vec![]),
        (r#"negative [-5:"x"] rejected"#, vec![]),
        (r#"unterminated [5:"x"#, vec![]),
        (r#"missing bracket [5:"x" more"#, vec![]),
        (r#"nested [[7:"inner"]] ok"#, vec![(7, "inner")]),
        (r#"unicode [8:"café Straße ⋮"] fine"#, vec![(8, "café Straße ⋮")]),
        (r#"brackets inside [9:"a [b] c"] ok"#, vec![(9, "a [b] c")]),
        (r#"colon inside [9:"time: 10:30"] ok"#, vec![(9, "time: 10:30")]),
        (r#"leading zeros [007:"bond"] ok"#, vec![(7, "bond")]),
        ("markdown [link](https://example.test) is not a citation", vec![]),
        (r#"footnote then citation [1] and [2:"two"]"#, vec![(2, "two")]),
        (r#"single quotes [3:'x'] rejected"#, vec![]),
        (r#"multiline [4:"line one
line two"] ok"#, vec![(4, "line one\nline two")]),
        (r#"quote then bracket [4:"a"b"] rejected then [5:"c"]"#, vec![(5, "c")]),
        (r#"trailing escape [4:"a\\"] ok"#, vec![(4, r"a\")]),
        (r#"[10:"x"][11:"y"][12:"z"]"#, vec![(10, "x"), (11, "y"), (12, "z")]),
        ("[]", vec![]),
        ("[:\"x\"]", vec![]),
        (r#"letters [a1:"x"] rejected"#, vec![]),
        (r#"plus sign [+1:"x"] rejected"#, vec![]),
        (r#"whitespace phrase [6:" "] kept"#, vec![(6, " ")]),
        (r#"tab [6:"	tab"] kept"#, vec![(6, "\ttab")]),
        (r#"The price is $19.99 [7:"$19.99"] [8:"free shipping"]"#, vec![(7, "$19.99"), (8, "free shipping")]),
    ]
}

/// Runs the grammar corpus; returns the number of cases checked.
pub fn check_citation_corpus() -> Result<usize, String> {
    use pageguide_core::find::parse_citations;
    let corpus = citation_corpus();
    for (raw, want) in &corpus {
        let got: Vec<(u32, String)> = parse_citations(raw).into_iter().map(|c| (c.element_id, c.phrase)).collect();
        let want: Vec<(u32, String)> = want.iter().map(|(i, p)| (*i, p.to_string())).collect();
        if got != want {
            return Err(format!("{raw:?}: got {got:?}, want {want:?}"));
        }
    }
    Ok(corpus.len())
}

/// Each parsed token's character range re-parses, alone, to the same citation.
pub fn check_token_offsets(raw: &str) -> Result<(), String> {
    use pageguide_core::find::parse_citations;
    for c in parse_citations(raw) {
        let token = slice(raw, c.answer_offset, c.token_end());
        let again = parse_citations(&token);
        if again.len() != 1 || again[0].element_id != c.element_id || again[0].phrase != c.phrase || again[0].token_len != c.token_len {
            return Err(format!("token {token:?} re-parses to {again:?}"));
        }
    }
    Ok(())
}

/// Rendering then restoring gives back the raw answer.
pub fn check_conservation(raw: &str, index: &pageguide_core::ElementIndex) -> Result<(), String> {
    use pageguide_core::find::{ground, restore_raw_text};
    let r = ground(raw, index, DEFAULT_FUZZY_MIN);
    let back = restore_raw_text(&r.answer.display_text, &r.answer.anchors, raw);
    if back != raw {
        return Err(format!("restore mismatch:\n raw  {raw:?}\n back {back:?}"));
    }
    Ok(())
}

pub fn movie_index() -> pageguide_core::ElementIndex {
    let s = pageguide_core::load_snapshot(data_dir().join("snapshots/movie")).expect("movie snapshot");
    pageguide_core::build_index(&s, &pageguide_core::IndexConfig::default())
}

/// 1000 random set pairs for `set_prf` (exact) and 1000 string pairs for
/// `token_f1` (within 1e-12). Returns the worst token-F1 deviation.
pub fn check_metric_oracles(seed: u64) -> Result<f64, String> {
    use pageguide_core::eval::{set_prf, token_f1};
    let mut rng = rng(seed);
    for case in 0..1000 {
        let pred: Vec<u32> = (0..rng.random_range(0..8)).map(|_| rng.random_range(1..12)).collect();
        let gold: Vec<u32> = (0..rng.random_range(0..8)).map(|_| rng.random_range(1..12)).collect();
        let got = set_prf(&pred.iter().copied().collect(), &gold.iter().copied().collect());
        let want = prf_oracle(&pred, &gold);
        if (got.precision, got.recall, got.f1) != want {
            return Err(format!("set case {case}: {pred:?} vs {gold:?}: got {got:?}, want {want:?}"));
        }
    }
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let (na, nb) = (rng.random_range(0..8), rng.random_range(0..8));
        let a = random_text(&mut rng, na);
        let b = random_text(&mut rng, nb);
        let d = (token_f1(&a, &b) - token_f1_oracle(&a, &b)).abs();
        worst = worst.max(d);
        if d > 1e-12 {
            return Err(format!("token case {case}: {a:?} vs {b:?}: off by {d}"));
        }
    }
    Ok(worst)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HideTally {
    pub snapshots: usize,
    pub subsets: usize,
}

/// Applies `subsets` random confirmed sets to every corpus snapshot and checks
/// locality (only the chosen nodes' style changes), restore-all returning the
/// canonical page, and partial restore matching a smaller apply.
pub fn check_hide_involution(seed: u64, subsets: usize) -> Result<HideTally, String> {
    use pageguide_core::dom::NodeData;
    use pageguide_core::hide::{append_hide, apply, restore, HideDecision, HideError};
    use pageguide_core::{build_index, load_snapshot, IndexConfig, Snapshot};

    fn hide(snap: &Snapshot, index: &pageguide_core::ElementIndex, ids: &BTreeSet<u32>) -> Result<(Snapshot, pageguide_core::hide::MutationRecord), String> {
        let mut d = HideDecision { confirmed_ids: ids.clone(), proposal_ref: snap.digest(), applied: false };
        let out = apply(&mut d, snap, index).map_err(|e| e.to_string())?;
        if !matches!(apply(&mut d, snap, index), Err(HideError::AlreadyApplied)) {
            return Err("second apply was not rejected".into());
        }
        Ok(out)
    }

    let mut rng = rng(seed);
    let mut tally = HideTally::default();
    for dir in corpus_dirs() {
        let snap = load_snapshot(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let index = build_index(&snap, &IndexConfig::default());
        let canonical = snap.canonical_html();
        let before = snap.dom();
        let order_before = before.preorder();
        let ids: Vec<u32> = index.elements.iter().map(|e| e.id).collect();
        tally.snapshots += 1;
        for round in 0..subsets {
            let chosen: BTreeSet<u32> = ids.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            let ctx = |m: String| format!("{} round {round} {chosen:?}: {m}", dir.display());
            let (mutated, record) = hide(&snap, &index, &chosen).map_err(ctx)?;
            let after = mutated.dom();
            let order_after = after.preorder();
            if order_before.len() != order_after.len() {
                return Err(ctx(format!("node count {} -> {}", order_before.len(), order_after.len())));
            }
            let hidden: BTreeSet<_> =
                chosen.iter().filter_map(|id| before.resolve(&index.resolve(*id).unwrap().node_path)).collect();
            for (&a, &b) in order_before.iter().zip(&order_after) {
                let (na, nb) = (&before.node(a).data, &after.node(b).data);
                let targeted = hidden.contains(&a);
                match (na, nb) {
                    (NodeData::Element { name: x, attrs: xa }, NodeData::Element { name: y, attrs: ya }) if targeted => {
                        let style_before = xa.iter().find(|(k, _)| k == "style").map(|(_, v)| v.as_str());
                        let style_after = ya.iter().find(|(k, _)| k == "style").map(|(_, v)| v.as_str());
                        let rest = |v: &Vec<(String, String)>| v.iter().filter(|(k, _)| k != "style").cloned().collect::<Vec<_>>();
                        if x != y || rest(xa) != rest(ya) || style_after != Some(append_hide(style_before).as_str()) {
                            return Err(ctx(format!("target {x} style {style_before:?} -> {style_after:?}")));
                        }
                    }
                    _ if na != nb => return Err(ctx(format!("untouched node changed: {na:?} -> {nb:?}"))),
                    _ => {}
                }
            }
            let restored = restore(&mutated, &record, &chosen).map_err(|e| ctx(e.to_string()))?;
            if restored.canonical_html() != canonical {
                return Err(ctx("full restore differs from the original".into()));
            }
            let back: BTreeSet<u32> = chosen.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            let partial = restore(&mutated, &record, &back).map_err(|e| ctx(e.to_string()))?;
            let rest: BTreeSet<u32> = chosen.difference(&back).copied().collect();
            let (direct, _) = hide(&snap, &index, &rest).map_err(ctx)?;
            if partial.canonical_html() != direct.canonical_html() {
                return Err(ctx(format!("restoring {back:?} differs from hiding only {rest:?}")));
            }
            tally.subsets += 1;
        }
    }
    Ok(tally)
}

// ---- guide state machine ----

#[derive(Debug, Default, Clone, Copy)]
pub struct GuideTally {
    pub runs: usize,
    pub transitions: usize,
    pub diverged: usize,
    pub completed: usize,
    pub stopped: usize,
    pub exhausted: usize,
}

fn pool_page(k: usize) -> pageguide_core::Snapshot {
    let (url, extra) = match k {
        0 => ("https://a.test/start", "Alpha"),
        1 => ("https://a.test/next", "Beta"),
        _ => ("https://a.test/start", "Gamma"),
    };
    let html = format!("<body><button>Go</button><p>{extra}</p></body>");
    pageguide_core::Snapshot::new(html, url, "Page", None, None).unwrap().0
}

/// A model that always highlights element 1 with a click and ends at `plan_len`.
fn scripted_planner(plan_len: u32) -> pageguide_core::gateway::Gateway {
    use pageguide_core::gateway::{FnTransport, Gateway, GatewayConfig, StoreMode, TranscriptStore};
    use std::sync::Arc;
    let transport = FnTransport(move |r: &pageguide_core::gateway::ChatRequest| {
        let user = &r.messages[1].content;
        let n: u32 = user
            .split("STEP NUMBER: ")
            .nth(1)
            .and_then(|s| s.lines().next())
            .and_then(|s| s.trim().parse().ok())
            .expect("step number in prompt");
        Ok(format!(
            r#"{{"step":{n},"instruction":"Press Go","highlight":{{"index":1,"text":"Go"}},"waitFor":"click","isLastStep":{},"nextStepHint":""}}"#,
            n == plan_len
        ))
    });
    Gateway::new(Arc::new(TranscriptStore::in_memory(StoreMode::Passthrough)), Some(Arc::new(transport)), GatewayConfig::default())
}

/// Every sequence of up to `max_seq` pages drawn from a three-page pool, every
/// plan of up to `max_plan` steps, every Next/Stop interleaving.
pub fn check_guide_model(max_seq: usize, max_plan: u32) -> Result<GuideTally, String> {
    use pageguide_core::guide::{start_session, GuideConfig, GuideError, SessionState, Verdict};
    use pageguide_core::{build_index, IndexConfig};

    let mut tally = GuideTally::default();
    let mut sequences: Vec<Vec<usize>> = vec![vec![]];
    let mut all = Vec::new();
    for _ in 0..max_seq {
        sequences = sequences.iter().flat_map(|s| (0..3).map(move |k| [s.clone(), vec![k]].concat())).collect();
        all.extend(sequences.clone());
    }
    for seq in &all {
        let pages: Vec<_> = seq.iter().map(|&k| pool_page(k)).collect();
        for plan_len in 1..=max_plan {
            let gw = scripted_planner(plan_len);
            for pattern in 0..(1u32 << plan_len) {
                let ctx = |m: String| format!("seq {seq:?} plan {plan_len} pattern {pattern:b}: {m}");
                let mut s = start_session("How do I go?", pages.clone(), GuideConfig::default()).map_err(|e| ctx(e.to_string()))?;
                let mut choice = 0;
                loop {
                    tally.transitions += 1;
                    let state = s.state();
                    if (state == SessionState::AwaitingUser) != s.current_step().is_some() {
                        return Err(ctx(format!("staged step present={} in {state}", s.current_step().is_some())));
                    }
                    match state {
                        SessionState::AwaitingStep | SessionState::Replanning => {
                            if !matches!(s.confirm_step(), Err(GuideError::InvalidState { .. })) || s.state() != state {
                                return Err(ctx("confirm allowed with no staged step".into()));
                            }
                            let step = s.next_step(&gw).map_err(|e| ctx(e.to_string()))?;
                            if step.step as usize != s.history().len() + 1 {
                                return Err(ctx(format!("step {} after {} confirmed", step.step, s.history().len())));
                            }
                        }
                        SessionState::AwaitingUser => {
                            if !matches!(s.next_step(&gw), Err(GuideError::InvalidState { .. })) || s.state() != state {
                                return Err(ctx("second step allowed while one is in flight".into()));
                            }
                            let next = pattern >> choice & 1 == 0;
                            choice += 1;
                            if !next {
                                s.stop().map_err(|e| ctx(e.to_string()))?;
                                continue;
                            }
                            let (gen, cursor) = (s.index_generation(), s.cursor());
                            let is_last = s.current_step().unwrap().is_last;
                            match s.confirm_step() {
                                Ok(out) if is_last => {
                                    if out.state != SessionState::Completed || out.divergence.is_some() || s.index_generation() != gen {
                                        return Err(ctx(format!("last step confirm gave {out:?}")));
                                    }
                                }
                                Ok(out) => {
                                    let report = out.divergence.ok_or_else(|| ctx("no divergence report".into()))?;
                                    let fresh = build_index(&pages[cursor + 1], &IndexConfig::default());
                                    if s.index_generation() != gen + 1 || s.cursor() != cursor + 1 || !s.index().same_elements(&fresh) || s.index().snapshot_ref != fresh.snapshot_ref {
                                        return Err(ctx("confirm did not re-read the next page".into()));
                                    }
                                    let identical = seq[cursor] == seq[cursor + 1];
                                    if (report.verdict == Verdict::Diverged) != identical {
                                        return Err(ctx(format!("verdict {:?} for pages {} -> {}", report.verdict, seq[cursor], seq[cursor + 1])));
                                    }
                                    let want = if identical { SessionState::Replanning } else { SessionState::AwaitingStep };
                                    if out.state != want || s.state() != want {
                                        return Err(ctx(format!("state {} after confirm, want {want}", s.state())));
                                    }
                                    tally.diverged += identical as usize;
                                }
                                Err(GuideError::SequenceExhausted { .. }) if cursor + 1 == pages.len() => {
                                    if s.state() != SessionState::Failed {
                                        return Err(ctx("exhausted sequence did not fail".into()));
                                    }
                                    tally.exhausted += 1;
                                }
                                Err(e) => return Err(ctx(e.to_string())),
                            }
                        }
                        SessionState::Completed | SessionState::Stopped | SessionState::Failed => break,
                    }
                }
                let numbers: Vec<u32> = s.history().iter().map(|c| c.step.step).collect();
                if numbers != (1..=numbers.len() as u32).collect::<Vec<_>>() {
                    return Err(ctx(format!("history numbers {numbers:?}")));
                }
                let ended_on_last = s.history().last().is_some_and(|c| c.step.is_last);
                if (s.state() == SessionState::Completed) != ended_on_last {
                    return Err(ctx(format!("state {} but last confirmed is_last={ended_on_last}", s.state())));
                }
                if s.stop().is_ok() {
                    return Err(ctx("stop accepted in a terminal state".into()));
                }
                match s.state() {
                    SessionState::Completed => tally.completed += 1,
                    SessionState::Stopped => tally.stopped += 1,
                    _ => {}
                }
                tally.runs += 1;
            }
        }
    }
    Ok(tally)
}

/// Replays each corpus guide case's gold actions through the divergence check
/// and returns the (case id, step) pairs judged diverged.
pub fn corpus_divergences() -> Result<Vec<(String, usize)>, String> {
    use pageguide_core::eval::{gold_wait_for, load_dataset, Dataset, DatasetKind};
    use pageguide_core::guide::{divergence, GuideStep, StepHighlight, Verdict};
    use pageguide_core::{build_index, load_sequence, IndexConfig};

    let Dataset::Guide(cases) = load_dataset(DatasetKind::Guide, data_dir().join("datasets/guide.jsonl")).map_err(|e| e.to_string())? else {
        return Err("not a guide dataset".into());
    };
    let mut out = Vec::new();
    for case in cases {
        let pages = load_sequence(&case.sequence).map_err(|e| e.to_string())?;
        for (k, gold) in case.gold_trace.iter().enumerate().take(pages.len().saturating_sub(1)) {
            let old = build_index(&pages[k], &IndexConfig::default());
            let new = build_index(&pages[k + 1], &IndexConfig::default());
            let target = gold.target.as_ref().and_then(|p| old.by_path(p));
            let step = GuideStep {
                step: k as u32 + 1,
                instruction: gold.action.clone(),
                highlight: target.map(|e| StepHighlight { element_id: e.id, text: e.text.clone() }),
                wait_for: gold_wait_for(&gold.action).ok_or("unknown gold action")?,
                is_last: false,
                next_hint: String::new(),
            };
            let report = divergence(&step, gold.target.as_ref(), &old, &new, pages[k].url != pages[k + 1].url);
            if report.verdict == Verdict::Diverged {
                out.push((case.id.clone(), k + 1));
            }
        }
    }
    Ok(out)
}

// ---- router fallback ----

/// `n` router replies that must all be rejected by the parser.
pub fn malformed_router_outputs(seed: u64, n: usize) -> Vec<String> {
    let valid = r#"{"handler": "hide", "confidence": 0.92, "reason": "User wants to remove content"}"#;
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = match k % 8 {
            0 => valid[..rng.random_range(0..valid.len() - 1)].to_string(),
            1 => valid.replace("hide", ["hides", "remove", "image-find", "", "findd", "none"][rng.random_range(0..6)]),
            2 => valid.replace("0.92", ["\"0.92\"", "null", "true", "[0.9]", "high"][rng.random_range(0..5)]),
            3 => {
                let drop = ["\"handler\": \"hide\", ", "\"confidence\": 0.92, ", ", \"reason\": \"User wants to remove content\""][rng.random_range(0..3)];
                valid.replace(drop, "")
            }
            4 => valid.replace("\"User wants to remove content\"", ["42", "null", "{}", "[\"x\"]"][rng.random_range(0..4)]),
            5 => ["", "   ", "I think this is a hide request.", "handler: hide", "```json\n```", "[]", "null", "\"hide\""][rng.random_range(0..8)].to_string(),
            6 => (0..rng.random_range(1..40)).map(|_| ['{', '}', '"', ':', 'a', ' ', ',', '[', ']'][rng.random_range(0..9)]).collect::<String>().replace('{', "(").replace('}', ")"),
            _ => format!("{{\"handler\": {}, \"confidence\": 0.5, \"reason\": \"r\"}}", rng.random_range(0..5)),
        };
        out.push(s);
    }
    out
}

/// Every malformed reply falls back to find with zero confidence.
pub fn check_router_fallback(seed: u64, n: usize) -> Result<usize, String> {
    use pageguide_core::router::{decide, parse_route_response, Handler};
    for raw in malformed_router_outputs(seed, n) {
        if let Ok(d) = parse_route_response(&raw) {
            return Err(format!("{raw:?} parsed as {d:?}"));
        }
        let d = decide(&raw);
        if d.handler != Handler::Find || d.confidence != 0.0 || !d.fallback_applied {
            return Err(format!("{raw:?} gave {d:?}"));
        }
    }
    Ok(n)
}

// ---- index ----

#[derive(Debug, Default, Clone, Copy)]
pub struct IndexTally {
    pub snapshots: usize,
    pub elements: usize,
}

/// Builds every corpus index twice and from the canonical re-serialization,
/// checking equality, dense 1..=m ids, unique resolvable paths and one prompt
/// line per element.
pub fn check_index_corpus() -> Result<IndexTally, String> {
    use pageguide_core::index::serialize_index;
    use pageguide_core::{build_index, load_snapshot, IndexConfig, Snapshot};
    let mut tally = IndexTally::default();
    for dir in corpus_dirs() {
        let name = dir.file_name().unwrap().to_string_lossy().to_string();
        let snap = load_snapshot(&dir).map_err(|e| format!("{name}: {e}"))?;
        let cfg = IndexConfig::default();
        let a = build_index(&snap, &cfg);
        let b = build_index(&load_snapshot(&dir).unwrap(), &cfg);
        if a != b || serialize_index(&a, usize::MAX, 120) != serialize_index(&b, usize::MAX, 120) {
            return Err(format!("{name}: two builds differ"));
        }
        let canon = Snapshot { html: snap.canonical_html(), ..snap.clone() };
        if !build_index(&canon, &cfg).same_elements(&a) {
            return Err(format!("{name}: canonical re-parse indexes differently"));
        }
        let ids: Vec<u32> = a.elements.iter().map(|e| e.id).collect();
        if ids != (1..=a.m() as u32).collect::<Vec<_>>() {
            return Err(format!("{name}: ids not dense: {ids:?}"));
        }
        let dom = snap.dom();
        let mut paths = BTreeSet::new();
        for e in &a.elements {
            if !paths.insert(e.node_path.to_string()) {
                return Err(format!("{name}: duplicate path {}", e.node_path));
            }
            let node = dom.resolve(&e.node_path).ok_or_else(|| format!("{name}: {} does not resolve", e.node_path))?;
            if dom.tag(node).map(str::to_ascii_lowercase).as_deref() != Some(e.tag.as_str()) {
                return Err(format!("{name}: tag mismatch at {}", e.node_path));
            }
            if a.resolve(e.id).map(|x| &x.node_path) != Ok(&e.node_path) {
                return Err(format!("{name}: resolve({}) is wrong", e.id));
            }
        }
        if a.resolve(0).is_ok() || a.resolve(a.m() as u32 + 1).is_ok() {
            return Err(format!("{name}: out-of-range id resolved"));
        }
        let prompt = serialize_index(&a, usize::MAX, 120);
        let lines: Vec<&str> = if prompt.is_empty() { vec![] } else { prompt.split('\n').collect() };
        if lines.len() != a.m() || lines.iter().zip(&a.elements).any(|(l, e)| {
            let full = format!("[{}] ({}) {}", e.id, e.tag, e.text);
            if e.text.chars().count() <= 120 { *l != full.trim_end() } else { !l.starts_with(&full.chars().take(full.chars().count() - e.text.chars().count() + 120).collect::<String>()) || !l.ends_with('…') }
        }) {
            return Err(format!("{name}: prompt lines do not follow the index"));
        }
        tally.snapshots += 1;
        tally.elements += a.m();
    }
    Ok(tally)
}
