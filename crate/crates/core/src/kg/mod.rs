//! Knowledge-graph data model: IRI/literal terms, statements and graphs.
//!
//! Blank nodes and named graphs are not representable. N-Triples input that
//! mentions a blank node is dropped line by line and tallied instead.

mod stats;

pub use stats::{compute_statistics, GraphStatistics, STATISTIC_NAMES};

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use oxrdf::{Subject, Term as OxTerm};
use oxttl::NTriplesParser;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";
const RDF_LANG_STRING: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#langString";
pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("empty IRI")]
    EmptyIri,
    #[error("IRI contains whitespace: {0:?}")]
    WhitespaceInIri(String),
    #[error("empty language tag")]
    EmptyLanguage,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: u64, message: String },
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An absolute IRI, stored without angle brackets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Iri(String);

impl Iri {
    pub fn new(iri: impl Into<String>) -> Result<Self, TermError> {
        let iri = iri.into();
        if iri.is_empty() {
            return Err(TermError::EmptyIri);
        }
        if iri.chars().any(char::is_whitespace) {
            return Err(TermError::WhitespaceInIri(iri));
        }
        Ok(Self(iri))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Namespace prefix: everything up to and including the last `/` or `#`.
    pub fn namespace(&self) -> &str {
        match self.0.rfind(['/', '#']) {
            Some(i) => &self.0[..=i],
            None => &self.0,
        }
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0)
    }
}

/// A literal value. Plain `xsd:string` literals carry neither datatype nor
/// language; language-tagged literals carry only the (lower-cased) tag.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    value: String,
    language: Option<String>,
    datatype: Option<Iri>,
}

impl Literal {
    pub fn plain(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            language: None,
            datatype: None,
        }
    }

    pub fn lang(value: impl Into<String>, language: &str) -> Result<Self, TermError> {
        if language.is_empty() {
            return Err(TermError::EmptyLanguage);
        }
        Ok(Self {
            value: value.into(),
            language: Some(language.to_ascii_lowercase()),
            datatype: None,
        })
    }

    pub fn typed(value: impl Into<String>, datatype: Iri) -> Self {
        if datatype.as_str() == XSD_STRING {
            return Self::plain(value);
        }
        Self {
            value: value.into(),
            language: None,
            datatype: Some(datatype),
        }
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }

    pub fn datatype(&self) -> Option<&Iri> {
        self.datatype.as_ref()
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('"')?;
        for c in self.value.chars() {
            match c {
                '\u{08}' => f.write_str("\\b")?,
                '\t' => f.write_str("\\t")?,
                '\n' => f.write_str("\\n")?,
                '\u{0C}' => f.write_str("\\f")?,
                '\r' => f.write_str("\\r")?,
                '"' => f.write_str("\\\"")?,
                '\\' => f.write_str("\\\\")?,
                '\0'..='\u{1F}' | '\u{7F}' => write!(f, "\\u{:04X}", u32::from(c))?,
                _ => f.write_char(c)?,
            }
        }
        f.write_char('"')?;
        if let Some(lang) = &self.language {
            write!(f, "@{lang}")?;
        } else if let Some(dt) = &self.datatype {
            write!(f, "^^{dt}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    Iri,
    Literal,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Iri(Iri),
    Literal(Literal),
}

impl Term {
    pub fn iri(iri: impl Into<String>) -> Result<Self, TermError> {
        Iri::new(iri).map(Term::Iri)
    }

    pub fn kind(&self) -> TermKind {
        match self {
            Term::Iri(_) => TermKind::Iri,
            Term::Literal(_) => TermKind::Literal,
        }
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(iri) => Some(iri),
            Term::Literal(_) => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(l) => Some(l),
            Term::Iri(_) => None,
        }
    }

    /// N-Triples term syntax, the canonical form used for identity.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(iri) => iri.fmt(f),
            Term::Literal(l) => l.fmt(f),
        }
    }
}

impl From<Iri> for Term {
    fn from(iri: Iri) -> Self {
        Term::Iri(iri)
    }
}

impl From<Literal> for Term {
    fn from(l: Literal) -> Self {
        Term::Literal(l)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Term,
}

impl Statement {
    pub fn new(subject: Iri, predicate: Iri, object: impl Into<Term>) -> Self {
        Self {
            subject,
            predicate,
            object: object.into(),
        }
    }

    /// Convenience constructor for fixtures: all three positions are IRIs.
    pub fn iris(s: &str, p: &str, o: &str) -> Result<Self, TermError> {
        Ok(Self::new(Iri::new(s)?, Iri::new(p)?, Iri::new(o)?))
    }

    /// Stable byte encoding: `<s> <p> o` with single spaces and no final dot.
    /// Injective because every term is self-delimiting in N-Triples syntax.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.to_string().into_bytes()
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

/// Set of statements. Iteration order is the canonical statement order, so
/// every derived artifact is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    statements: BTreeSet<Statement>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn insert(&mut self, s: Statement) -> bool {
        self.statements.insert(s)
    }

    pub fn remove(&mut self, s: &Statement) -> bool {
        self.statements.remove(s)
    }

    pub fn contains(&self, s: &Statement) -> bool {
        self.statements.contains(s)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Statement> + DoubleEndedIterator + Clone {
        self.statements.iter()
    }

    /// `self \ other`.
    pub fn difference(&self, other: &KnowledgeGraph) -> KnowledgeGraph {
        self.statements.difference(&other.statements).cloned().collect()
    }

    pub fn intersection(&self, other: &KnowledgeGraph) -> KnowledgeGraph {
        self.statements.intersection(&other.statements).cloned().collect()
    }

    pub fn union(&self, other: &KnowledgeGraph) -> KnowledgeGraph {
        self.statements.union(&other.statements).cloned().collect()
    }

    pub fn is_subset(&self, other: &KnowledgeGraph) -> bool {
        self.statements.is_subset(&other.statements)
    }

    /// Drops every statement whose predicate is in `predicates`.
    pub fn without_predicates(&self, predicates: &[Iri]) -> KnowledgeGraph {
        if predicates.is_empty() {
            return self.clone();
        }
        self.iter()
            .filter(|s| !predicates.contains(&s.predicate))
            .cloned()
            .collect()
    }

    /// N-Triples document, one canonical statement per line.
    pub fn to_ntriples(&self) -> String {
        let mut out = String::new();
        for s in &self.statements {
            writeln!(out, "{s} .").expect("writing to a String cannot fail");
        }
        out
    }
}

impl FromIterator<Statement> for KnowledgeGraph {
    fn from_iter<I: IntoIterator<Item = Statement>>(iter: I) -> Self {
        Self {
            statements: iter.into_iter().collect(),
        }
    }
}

impl Extend<Statement> for KnowledgeGraph {
    fn extend<I: IntoIterator<Item = Statement>>(&mut self, iter: I) {
        self.statements.extend(iter)
    }
}

impl<'a> IntoIterator for &'a KnowledgeGraph {
    type Item = &'a Statement;
    type IntoIter = std::collections::btree_set::Iter<'a, Statement>;

    fn into_iter(self) -> Self::IntoIter {
        self.statements.iter()
    }
}

impl IntoIterator for KnowledgeGraph {
    type Item = Statement;
    type IntoIter = std::collections::btree_set::IntoIter<Statement>;

    fn into_iter(self) -> Self::IntoIter {
        self.statements.into_iter()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedGraph {
    pub graph: KnowledgeGraph,
    /// Lines dropped because they mention a blank node.
    pub blank_node_lines: usize,
}

/// Parses an N-Triples document.
pub fn parse_ntriples(text: &str) -> Result<ParsedGraph, ParseError> {
    let mut parsed = ParsedGraph::default();
    for result in NTriplesParser::new().for_slice(text.as_bytes()) {
        let triple = result.map_err(|e| ParseError::Syntax {
            line: e.location().start.line + 1,
            message: e.message().to_owned(),
        })?;
        match convert_triple(triple)? {
            Some(s) => {
                parsed.graph.insert(s);
            }
            None => parsed.blank_node_lines += 1,
        }
    }
    Ok(parsed)
}

pub fn read_ntriples_file(path: impl AsRef<std::path::Path>) -> Result<ParsedGraph, ParseError> {
    let text = std::fs::read_to_string(path)?;
    parse_ntriples(&text)
}

fn convert_triple(t: oxrdf::Triple) -> Result<Option<Statement>, TermError> {
    let subject = match t.subject {
        Subject::NamedNode(n) => Iri::new(n.into_string())?,
        Subject::BlankNode(_) => return Ok(None),
    };
    let predicate = Iri::new(t.predicate.into_string())?;
    let object = match t.object {
        OxTerm::NamedNode(n) => Term::Iri(Iri::new(n.into_string())?),
        OxTerm::BlankNode(_) => return Ok(None),
        OxTerm::Literal(l) => {
            let (value, datatype, language) = l.destruct();
            let lit = match (language, datatype) {
                (Some(lang), _) => Literal::lang(value, &lang)?,
                (None, Some(dt)) if dt.as_str() != RDF_LANG_STRING => {
                    Literal::typed(value, Iri::new(dt.into_string())?)
                }
                (None, _) => Literal::plain(value),
            };
            Term::Literal(lit)
        }
    };
    Ok(Some(Statement::new(subject, predicate, object)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str, p: &str, o: &str) -> Statement {
        Statement::iris(s, p, o).unwrap()
    }

    #[test]
    fn empty_document_is_empty_graph() {
        let parsed = parse_ntriples("").unwrap();
        assert!(parsed.graph.is_empty());
        assert_eq!(parsed.blank_node_lines, 0);
    }

    #[test]
    fn duplicate_lines_collapse() {
        let doc = "<http://a> <http://p> <http://b> .\n<http://a> <http://p> <http://b> .\n";
        assert_eq!(parse_ntriples(doc).unwrap().graph.len(), 1);
    }

    #[test]
    fn blank_node_lines_are_dropped_and_counted() {
        let doc = "\
<http://ex/a> <http://ex/p> <http://ex/b> .
<http://ex/a> <http://ex/p> \"x\" .
_:b1 <http://ex/p> <http://ex/c> .
<http://ex/c> <http://ex/q> \"y\"@en .
<http://ex/d> <http://ex/q> \"5\"^^<http://www.w3.org/2001/XMLSchema#integer> .
";
        let parsed = parse_ntriples(doc).unwrap();
        assert_eq!(doc.lines().count(), 5);
        assert_eq!(parsed.graph.len(), 4);
        assert_eq!(parsed.blank_node_lines, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let doc = "<http://a> <http://p> <http://b> .\n<http://a> <http://p> .\n";
        match parse_ntriples(doc) {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let doc = "# header\n\n<http://a> <http://p> <http://b> . # trailing\n";
        assert_eq!(parse_ntriples(doc).unwrap().graph.len(), 1);
    }

    #[test]
    fn canonical_bytes_are_deterministic_and_injective() {
        let a = Statement::new(
            Iri::new("http://a").unwrap(),
            Iri::new("http://p").unwrap(),
            Literal::lang("chat", "en").unwrap(),
        );
        let b = Statement::new(
            Iri::new("http://a").unwrap(),
            Iri::new("http://p").unwrap(),
            Literal::lang("chat", "fr").unwrap(),
        );
        assert_eq!(a.canonical_bytes(), a.clone().canonical_bytes());
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
        assert_eq!(a.canonical_bytes(), b"<http://a> <http://p> \"chat\"@en");
    }

    #[test]
    fn xsd_string_is_the_plain_literal() {
        let doc = "<http://a> <http://p> \"v\"^^<http://www.w3.org/2001/XMLSchema#string> .\n\
                   <http://a> <http://p> \"v\" .\n";
        assert_eq!(parse_ntriples(doc).unwrap().graph.len(), 1);
    }

    #[test]
    fn escapes_survive_canonical_round_trip() {
        let s = Statement::new(
            Iri::new("http://a").unwrap(),
            Iri::new("http://p").unwrap(),
            Literal::plain("line\nbreak \"quoted\" back\\slash \u{1}"),
        );
        let doc = format!("{} .", String::from_utf8(s.canonical_bytes()).unwrap());
        let parsed = parse_ntriples(&doc).unwrap().graph;
        assert_eq!(parsed.iter().collect::<Vec<_>>(), vec![&s]);
    }

    #[test]
    fn iri_validation() {
        assert_eq!(Iri::new(""), Err(TermError::EmptyIri));
        assert!(matches!(Iri::new("http://a b"), Err(TermError::WhitespaceInIri(_))));
    }

    #[test]
    fn difference_set_algebra() {
        let x = st("http://x", "http://p", "http://o");
        let y = st("http://y", "http://p", "http://o");
        let z = st("http://z", "http://p", "http://o");
        let a: KnowledgeGraph = [x.clone(), y.clone()].into_iter().collect();
        let b: KnowledgeGraph = [y, z].into_iter().collect();
        assert!(a.difference(&a).is_empty());
        assert_eq!(a.difference(&KnowledgeGraph::new()), a);
        assert_eq!(a.difference(&b), [x].into_iter().collect());
    }

    #[test]
    fn namespace_prefix() {
        assert_eq!(Iri::new("http://ex.org/a/b").unwrap().namespace(), "http://ex.org/a/");
        assert_eq!(Iri::new("http://ex.org/o#T").unwrap().namespace(), "http://ex.org/o#");
        assert_eq!(Iri::new("urn:x").unwrap().namespace(), "urn:x");
    }
}
