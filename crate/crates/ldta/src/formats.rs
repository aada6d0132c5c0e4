//! Text formats: UCI bag-of-words corpora, vocabularies and tree specs.
//!
//! UCI corpora start with three header lines (`M`, `V`, `NNZ`) followed by
//! `docID wordID count` triples, 1-indexed, grouped by ascending `docID`.
//! Tree specs list one `child parent [xi=<float>]` edge per line; `#` starts a
//! comment and blank lines are skipped.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ldta_core::{Corpus, DTParams, Document, TreeTopology};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, path: &Path, line: usize) -> CliResult<T> {
    let tok = tok.ok_or_else(|| CliError::format(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| CliError::format(path, line, format!("{what} `{tok}` is not a valid number")))
}

/// Parses a UCI corpus. `path` only labels error messages.
pub fn parse_uci(text: &str, path: &Path) -> CliResult<Corpus> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["document count", "vocabulary size", "nonzero count"]) {
        let (no, line) = lines
            .next()
            .ok_or_else(|| CliError::format(path, 0, format!("truncated header: missing {what}")))?;
        let mut toks = line.split_whitespace();
        *slot = parse_field(toks.next(), what, path, no)?;
        if toks.next().is_some() {
            return Err(CliError::format(path, no, format!("header line for {what} has extra fields")));
        }
    }
    let [m, v, nnz] = header;

    let mut docs: Vec<Vec<(usize, u32)>> = vec![Vec::new(); m];
    let mut seen = 0usize;
    let mut last_doc = 0usize;
    let mut pairs = BTreeSet::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let doc: usize = parse_field(toks.next(), "docID", path, no)?;
        let word: usize = parse_field(toks.next(), "wordID", path, no)?;
        let count: u32 = parse_field(toks.next(), "count", path, no)?;
        if toks.next().is_some() {
            return Err(CliError::format(path, no, "expected exactly three fields"));
        }
        if doc == 0 || doc > m {
            return Err(CliError::format(path, no, format!("docID {doc} outside 1..={m}")));
        }
        if word == 0 || word > v {
            return Err(CliError::format(path, no, format!("wordID {word} outside 1..={v}")));
        }
        if count == 0 {
            return Err(CliError::format(path, no, "count must be positive"));
        }
        if doc < last_doc {
            return Err(CliError::format(path, no, format!("docID {doc} after {last_doc}; docIDs must ascend")));
        }
        if !pairs.insert((doc, word)) {
            return Err(CliError::format(path, no, format!("duplicate entry for document {doc}, word {word}")));
        }
        last_doc = doc;
        docs[doc - 1].push((word - 1, count));
        seen += 1;
    }
    if seen != nnz {
        return Err(CliError::format(path, 3, format!("header announces {nnz} entries, found {seen}")));
    }
    if let Some(empty) = docs.iter().position(Vec::is_empty) {
        return Err(CliError::Input(format!("{}: document {} has no words", path.display(), empty + 1)));
    }
    let docs = docs.into_iter().map(Document::from_pairs).collect();
    Corpus::new(v, docs).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_uci(path: &Path) -> CliResult<Corpus> {
    parse_uci(&read_text(path)?, path)
}

pub fn format_uci(corpus: &Corpus) -> String {
    let nnz: usize = corpus.docs().iter().map(Document::len).sum();
    let mut out = format!("{}\n{}\n{}\n", corpus.len(), corpus.vocab_size(), nnz);
    for (m, doc) in corpus.docs().iter().enumerate() {
        for (w, n) in doc.iter() {
            writeln!(out, "{} {} {}", m + 1, w + 1, n).expect("writing to a String");
        }
    }
    out
}

/// One token per line; line `i` names word `i`.
pub fn parse_vocab(text: &str, expected: usize, path: &Path) -> CliResult<Vec<String>> {
    let vocab: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    if let Some(i) = vocab.iter().position(String::is_empty) {
        return Err(CliError::format(path, i + 1, "empty vocabulary entry"));
    }
    if vocab.len() != expected {
        return Err(CliError::Input(format!(
            "{}: vocabulary has {} entries but the corpus declares {expected} words",
            path.display(),
            vocab.len()
        )));
    }
    Ok(vocab)
}

pub fn read_corpus(path: &Path, vocab: Option<&Path>) -> CliResult<Corpus> {
    let corpus = read_uci(path)?;
    match vocab {
        Some(vp) => {
            let words = parse_vocab(&read_text(vp)?, corpus.vocab_size(), vp)?;
            corpus
                .with_vocab(words)
                .map_err(|e| CliError::Input(format!("{}: {e}", vp.display())))
        }
        None => Ok(corpus),
    }
}

/// Hex SHA-256 over the tokens, each followed by a newline.
pub fn vocab_checksum(vocab: &[String]) -> String {
    let mut h = Sha256::new();
    for w in vocab {
        h.update(w.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Parses a tree spec into a prior. Branches without `xi=` start at 1.0.
pub fn parse_tree_spec(text: &str, path: &Path) -> CliResult<DTParams> {
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut given: Vec<(String, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (child, parent, rest) = match toks.as_slice() {
            [c, p, rest @ ..] if rest.len() <= 1 => (*c, *p, rest.first()),
            _ => return Err(CliError::format(path, no, "expected `child parent [xi=<float>]`")),
        };
        if let Some(opt) = rest {
            let value = opt
                .strip_prefix("xi=")
                .ok_or_else(|| CliError::format(path, no, format!("unknown option `{opt}`")))?;
            let xi: f64 = parse_field(Some(value), "xi", path, no)?;
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(CliError::format(path, no, format!("xi must be positive, got {xi}")));
            }
            given.push((child.to_string(), xi));
        }
        edges.push((child.to_string(), parent.to_string()));
    }
    let topo = TreeTopology::from_edges(&edges).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut xi = vec![1.0; topo.branch_count()];
    for (child, value) in given {
        let node = topo.node_by_name(&child).expect("every child is a node");
        xi[topo.node_branch(node)] = value;
    }
    DTParams::new(Arc::new(topo), xi).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_tree_spec(path: &Path) -> CliResult<DTParams> {
    parse_tree_spec(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn uci_example() {
        let c = parse_uci("2\n3\n3\n1 1 2\n1 3 1\n2 2 5\n", p()).unwrap();
        assert_eq!((c.len(), c.vocab_size()), (2, 3));
        assert_eq!(c.docs()[0].words(), [0, 2]);
        assert_eq!(c.docs()[0].counts(), [2, 1]);
        assert_eq!(c.docs()[1].words(), [1]);
        assert_eq!(format_uci(&c), "2\n3\n3\n1 1 2\n1 3 1\n2 2 5\n");
    }

    #[test]
    fn uci_rejections() {
        let bad = [
            ("1\n3\n1\n1 0 2\n", "wordID 0"),
            ("1\n3\n1\n1 4 2\n", "wordID 4"),
            ("2\n3\n1\n1 1 2\n", "document 2 has no words"),
            ("1\n3\n2\n1 1 2\n", "announces 2"),
            ("1\n3\n2\n1 1 2\n1 1 3\n", "duplicate"),
            ("2\n3\n2\n2 1 2\n1 1 3\n", "must ascend"),
            ("1\n3\n1\n1 1 x\n", "not a valid number"),
            ("1\n3\n", "truncated"),
            ("1\n3\n1\n1 1 0\n", "positive"),
        ];
        for (text, needle) in bad {
            let err = parse_uci(text, p()).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn vocab_length_must_match() {
        assert!(parse_vocab("a\nb\n", 3, p()).is_err());
        assert_eq!(parse_vocab("a\nb\nc\n", 3, p()).unwrap(), ["a", "b", "c"]);
        assert_ne!(vocab_checksum(&["a".into(), "b".into()]), vocab_checksum(&["ab".into()]));
    }

    #[test]
    fn tree_spec_with_parameters_and_comments() {
        let text = "# two-level tree\nl1 root\nl2 root xi=2.5\n\nx l1 xi=0.5  # leaf\ny l1\n";
        let prior = parse_tree_spec(text, p()).unwrap();
        let topo = prior.topology();
        assert_eq!(topo.leaf_count(), 3);
        let at = |n: &str| prior.xi()[topo.node_branch(topo.node_by_name(n).unwrap())];
        assert_eq!((at("l1"), at("l2"), at("x"), at("y")), (1.0, 2.5, 0.5, 1.0));
    }

    #[test]
    fn tree_spec_rejections() {
        for (text, needle) in [
            ("a r\n", "at least 2"),
            ("a r\nb r xi=-1\n", "positive"),
            ("a r\nb r foo=1\n", "unknown option"),
            ("a\n", "expected"),
            ("a r\nb q\n", "more than one root"),
        ] {
            let err = parse_tree_spec(text, p()).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }
}
