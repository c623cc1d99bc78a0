//! A small SPARQL subset over the topology triple view.
//!
//! Grammar (keywords are case-insensitive):
//!
//! ```text
//! Query    := Prefix* "SELECT" Var+ "WHERE" Group
//! Prefix   := "PREFIX" PNAME_NS IRIREF
//! Group    := "{" ( Triple "."? | Filter "."? | Group )* "}"
//! Triple   := Term Verb Term
//! Verb     := Term | "a"
//! Filter   := "FILTER" "(" Var "=" Value ")"
//! Term     := Var | Value
//! Value    := PrefixedName | String
//! Var      := ("?" | "$") [A-Za-z0-9_]+
//! ```
//!
//! Nested groups are flattened into one basic graph pattern. Results are the
//! natural join of all patterns, filtered, projected on the selected
//! variables, de-duplicated and sorted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::topology::{Term, TopologyGraph, Triple, BOT_PREFIX, RDF_TYPE};

pub const BOT_IRI: &str = "https://w3id.org/bot#";
pub const RDF_IRI: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at {position}: found {found}, expected one of {}", expected.join(", "))]
    Syntax {
        position: Position,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("variable ?{0} does not appear in any triple pattern")]
    UnusedVariable(String),
    #[error("prefix `{prefix}` declared twice")]
    DuplicatePrefix { prefix: String },
    #[error("prefix `{0}` is not bound in this graph")]
    UnboundPrefix(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternTerm {
    Var(String),
    Const(Term),
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => write!(f, "?{v}"),
            PatternTerm::Const(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    fn positions(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EqFilter {
    pub var: String,
    pub value: Term,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub select_vars: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<EqFilter>,
    pub prefixes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Term>>,
}

impl ResultTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with the selected variable names as header and bare term values.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Term::value))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Var(String),
    PName(String, String),
    PNameNs(String),
    IriRef(String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Eq,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Var(v) => format!("?{v}"),
            Tok::PName(p, l) => format!("`{p}:{l}`"),
            Tok::PNameNs(p) => format!("`{p}:`"),
            Tok::IriRef(i) => format!("<{i}>"),
            Tok::Str(s) => format!("\"{s}\""),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

fn name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn here(&self) -> Position {
        Position {
            offset: self.pos,
            line: self.line,
            column: self.col,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek().filter(|c| f(*c)) {
            out.push(c);
            self.bump();
        }
        out
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    self.take_while(|c| c != '\n');
                }
                _ => return,
            }
        }
    }

    fn error(&self, at: Position, found: String, expected: &[&'static str]) -> QueryError {
        QueryError::Syntax {
            position: at,
            found,
            expected: expected.to_vec(),
        }
    }

    fn next(&mut self) -> Result<(Tok, Position), QueryError> {
        self.skip_trivia();
        let at = self.here();
        let Some(c) = self.peek() else {
            return Ok((Tok::Eof, at));
        };
        let tok = match c {
            '{' | '}' | '(' | ')' | '.' | '=' => {
                self.bump();
                match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '.' => Tok::Dot,
                    _ => Tok::Eq,
                }
            }
            '?' | '$' => {
                self.bump();
                let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                if name.is_empty() {
                    return Err(self.error(at, format!("`{c}`"), &["variable name"]));
                }
                Tok::Var(name)
            }
            '"' | '\'' => Tok::Str(self.string(c, at)?),
            '<' => {
                self.bump();
                let iri = self.take_while(|c| c != '>' && !c.is_whitespace());
                if self.bump() != Some('>') {
                    return Err(self.error(at, "unterminated IRI".into(), &["`>`"]));
                }
                Tok::IriRef(iri)
            }
            c if c.is_ascii_alphabetic() => {
                let word = self.take_while(name_char);
                if self.peek() == Some(':') {
                    self.bump();
                    let local = self.local_name();
                    if local.is_empty() {
                        Tok::PNameNs(word)
                    } else {
                        Tok::PName(word, local)
                    }
                } else {
                    Tok::Word(word)
                }
            }
            other => {
                return Err(self.error(
                    at,
                    format!("`{}`", other.escape_debug()),
                    &["a query token"],
                ))
            }
        };
        Ok((tok, at))
    }

    // Local names may contain dots, but not at the end; a trailing dot is
    // the triple separator.
    fn local_name(&mut self) -> String {
        let mut out = String::new();
        loop {
            match self.peek() {
                Some(c) if name_char(c) => {
                    out.push(c);
                    self.bump();
                }
                Some('.') if !out.is_empty() && self.peek2().is_some_and(name_char) => {
                    out.push('.');
                    self.bump();
                }
                _ => return out,
            }
        }
    }

    fn string(&mut self, quote: char, at: Position) -> Result<String, QueryError> {
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => {
                    return Err(self.error(at, "unterminated string".into(), &["closing quote"]))
                }
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c @ ('"' | '\'' | '\\')) => out.push(c),
                    _ => {
                        return Err(self.error(
                            self.here(),
                            "bad escape".into(),
                            &["\\n", "\\t", "\\\"", "\\\\"],
                        ))
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: Position,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, QueryError> {
        let mut lexer = Lexer::new(src);
        let (tok, at) = lexer.next()?;
        Ok(Parser { lexer, tok, at })
    }

    fn advance(&mut self) -> Result<Tok, QueryError> {
        let (tok, at) = self.lexer.next()?;
        self.at = at;
        Ok(std::mem::replace(&mut self.tok, tok))
    }

    fn unexpected<T>(&self, expected: &[&'static str]) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            position: self.at,
            found: self.tok.describe(),
            expected: expected.to_vec(),
        })
    }

    fn is_word(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_word(&mut self, kw: &'static str) -> Result<(), QueryError> {
        if self.is_word(kw) {
            self.advance()?;
            Ok(())
        } else {
            self.unexpected(&[kw])
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), QueryError> {
        if self.tok == tok {
            self.advance()?;
            Ok(())
        } else {
            self.unexpected(&[name])
        }
    }

    fn query(&mut self) -> Result<QueryAst, QueryError> {
        let mut prefixes = BTreeMap::new();
        while self.is_word("PREFIX") {
            self.advance()?;
            let Tok::PNameNs(p) = self.tok.clone() else {
                return self.unexpected(&["prefix name ending in `:`"]);
            };
            self.advance()?;
            let Tok::IriRef(iri) = self.tok.clone() else {
                return self.unexpected(&["<IRI>"]);
            };
            self.advance()?;
            if prefixes.insert(p.clone(), iri).is_some() {
                return Err(QueryError::DuplicatePrefix { prefix: p });
            }
        }
        self.expect_word("SELECT")?;
        let mut select_vars = Vec::new();
        while let Tok::Var(v) = &self.tok {
            select_vars.push(v.clone());
            self.advance()?;
        }
        if select_vars.is_empty() {
            return self.unexpected(&["variable"]);
        }
        self.expect_word("WHERE")?;
        let mut patterns = Vec::new();
        let mut filters = Vec::new();
        self.group(&mut patterns, &mut filters)?;
        if patterns.is_empty() {
            return Err(QueryError::Syntax {
                position: self.at,
                found: "an empty graph pattern".into(),
                expected: vec!["at least one triple pattern"],
            });
        }
        if self.tok != Tok::Eof {
            return self.unexpected(&["end of input"]);
        }
        let used: BTreeSet<&str> = patterns
            .iter()
            .flat_map(|p| p.positions())
            .filter_map(|t| match t {
                PatternTerm::Var(v) => Some(v.as_str()),
                PatternTerm::Const(_) => None,
            })
            .collect();
        for v in select_vars.iter().chain(filters.iter().map(|f| &f.var)) {
            if !used.contains(v.as_str()) {
                return Err(QueryError::UnusedVariable(v.clone()));
            }
        }
        Ok(QueryAst {
            select_vars,
            patterns,
            filters,
            prefixes,
        })
    }

    fn group(
        &mut self,
        patterns: &mut Vec<TriplePattern>,
        filters: &mut Vec<EqFilter>,
    ) -> Result<(), QueryError> {
        self.expect(Tok::LBrace, "`{`")?;
        loop {
            match &self.tok {
                Tok::RBrace => {
                    self.advance()?;
                    return Ok(());
                }
                Tok::LBrace => self.group(patterns, filters)?,
                Tok::Word(_) if self.is_word("FILTER") => {
                    self.advance()?;
                    filters.push(self.filter()?);
                    self.optional_dot()?;
                }
                Tok::Var(_) | Tok::PName(..) | Tok::Str(_) => {
                    let subject = self.term()?;
                    let predicate = if matches!(&self.tok, Tok::Word(w) if w == "a") {
                        self.advance()?;
                        PatternTerm::Const(Term::iri(RDF_TYPE))
                    } else {
                        self.term()?
                    };
                    let object = self.term()?;
                    patterns.push(TriplePattern {
                        subject,
                        predicate,
                        object,
                    });
                    self.optional_dot()?;
                }
                _ => return self.unexpected(&["triple pattern", "FILTER", "`{`", "`}`"]),
            }
        }
    }

    fn optional_dot(&mut self) -> Result<(), QueryError> {
        if self.tok == Tok::Dot {
            self.advance()?;
        }
        Ok(())
    }

    fn term(&mut self) -> Result<PatternTerm, QueryError> {
        let t = match &self.tok {
            Tok::Var(v) => PatternTerm::Var(v.clone()),
            Tok::PName(p, l) => PatternTerm::Const(Term::Iri(format!("{p}:{l}"))),
            Tok::Str(s) => PatternTerm::Const(Term::Literal(s.clone())),
            _ => return self.unexpected(&["variable", "prefixed name", "string literal"]),
        };
        self.advance()?;
        Ok(t)
    }

    fn filter(&mut self) -> Result<EqFilter, QueryError> {
        self.expect(Tok::LParen, "`(`")?;
        let Tok::Var(var) = self.tok.clone() else {
            return self.unexpected(&["variable"]);
        };
        self.advance()?;
        self.expect(Tok::Eq, "`=`")?;
        let value = match self.term()? {
            PatternTerm::Const(t) => t,
            PatternTerm::Var(_) => {
                return Err(QueryError::Syntax {
                    position: self.at,
                    found: "a variable".into(),
                    expected: vec!["prefixed name", "string literal"],
                })
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(EqFilter { var, value })
    }
}

/// Parses query text into an AST.
pub fn parse_query(text: &str) -> Result<QueryAst, QueryError> {
    Parser::new(text)?.query()
}

// ---------------------------------------------------------------------------
// Execution

fn resolve(ast: &QueryAst, g: &TopologyGraph, term: &Term) -> Result<Term, QueryError> {
    let Term::Iri(name) = term else {
        return Ok(term.clone());
    };
    let (prefix, local) = name
        .split_once(':')
        .expect("prefixed names contain a colon");
    let graph_prefix = match ast.prefixes.get(prefix).map(String::as_str) {
        Some(BOT_IRI) => BOT_PREFIX,
        Some(RDF_IRI) => "rdf",
        _ if prefix == BOT_PREFIX || prefix == "rdf" || prefix == g.namespace() => prefix,
        _ => return Err(QueryError::UnboundPrefix(prefix.to_owned())),
    };
    Ok(Term::Iri(format!("{graph_prefix}:{local}")))
}

type Binding = BTreeMap<String, Term>;

fn bind(pattern: &PatternTerm, value: &Term, row: &mut Binding) -> bool {
    match pattern {
        PatternTerm::Const(c) => c == value,
        PatternTerm::Var(v) => match row.get(v) {
            Some(bound) => bound == value,
            None => {
                row.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

/// Runs a parsed query against the triple view of `g`.
pub fn execute(ast: &QueryAst, g: &TopologyGraph) -> Result<ResultTable, QueryError> {
    execute_on(ast, g, &g.as_triples())
}

/// Like [`execute`], with the triple view supplied by the caller.
pub fn execute_on(
    ast: &QueryAst,
    g: &TopologyGraph,
    triples: &[Triple],
) -> Result<ResultTable, QueryError> {
    let resolve_pt = |p: &PatternTerm| -> Result<PatternTerm, QueryError> {
        Ok(match p {
            PatternTerm::Const(t) => PatternTerm::Const(resolve(ast, g, t)?),
            v => v.clone(),
        })
    };
    let patterns = ast
        .patterns
        .iter()
        .map(|p| {
            Ok(TriplePattern {
                subject: resolve_pt(&p.subject)?,
                predicate: resolve_pt(&p.predicate)?,
                object: resolve_pt(&p.object)?,
            })
        })
        .collect::<Result<Vec<_>, QueryError>>()?;
    let filters = ast
        .filters
        .iter()
        .map(|f| {
            Ok(EqFilter {
                var: f.var.clone(),
                value: resolve(ast, g, &f.value)?,
            })
        })
        .collect::<Result<Vec<_>, QueryError>>()?;

    let mut rows: Vec<Binding> = vec![Binding::new()];
    for pattern in &patterns {
        let mut next = Vec::new();
        for row in &rows {
            for t in triples {
                let mut extended = row.clone();
                if bind(&pattern.subject, &t.subject, &mut extended)
                    && bind(&pattern.predicate, &t.predicate, &mut extended)
                    && bind(&pattern.object, &t.object, &mut extended)
                    && filters
                        .iter()
                        .all(|f| extended.get(&f.var).is_none_or(|v| *v == f.value))
                {
                    next.push(extended);
                }
            }
        }
        rows = next;
        if rows.is_empty() {
            break;
        }
    }

    let projected: BTreeSet<Vec<Term>> = rows
        .iter()
        .map(|row| ast.select_vars.iter().map(|v| row[v].clone()).collect())
        .collect();
    Ok(ResultTable {
        columns: ast.select_vars.clone(),
        rows: projected.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_query() {
        let ast = parse_query("SELECT ?x WHERE { ?x a ?y }").unwrap();
        assert_eq!(ast.select_vars, vec!["x"]);
        assert_eq!(ast.patterns.len(), 1);
        assert_eq!(
            ast.patterns[0].predicate,
            PatternTerm::Const(Term::iri(RDF_TYPE))
        );
    }

    #[test]
    fn empty_group_is_a_syntax_error() {
        let err = parse_query("SELECT ?x WHERE { }").unwrap_err();
        assert!(matches!(err, QueryError::Syntax { .. }), "{err}");
    }

    #[test]
    fn positions_are_reported() {
        let err = parse_query("SELECT ?x\nWHERE { ?x ?p }").unwrap_err();
        let QueryError::Syntax {
            position, expected, ..
        } = err
        else {
            panic!("expected syntax error");
        };
        assert_eq!((position.line, position.column), (2, 15));
        assert!(expected.contains(&"variable"));
    }

    #[test]
    fn unused_select_variable() {
        assert_eq!(
            parse_query("SELECT ?z WHERE { ?x ?p ?o }"),
            Err(QueryError::UnusedVariable("z".into()))
        );
        assert_eq!(
            parse_query("SELECT ?x WHERE { ?x ?p ?o FILTER(?q = bot:Space) }"),
            Err(QueryError::UnusedVariable("q".into()))
        );
    }

    #[test]
    fn dotted_local_names_and_comments() {
        let ast =
            parse_query("# hi\nSELECT ?x WHERE { ?x ex:a.b ?y. ?y ex:c \"it's\" . }").unwrap();
        assert_eq!(
            ast.patterns[0].predicate,
            PatternTerm::Const(Term::iri("ex:a.b"))
        );
        assert_eq!(
            ast.patterns[1].object,
            PatternTerm::Const(Term::literal("it's"))
        );
    }

    #[test]
    fn prefix_declarations() {
        let ast = parse_query(&format!(
            "PREFIX b: <{BOT_IRI}> SELECT ?s WHERE {{ ?s a b:Space }}"
        ))
        .unwrap();
        assert_eq!(ast.prefixes["b"], BOT_IRI);
        assert!(matches!(
            parse_query("PREFIX b: <x> PREFIX b: <y> SELECT ?s WHERE { ?s ?p ?o }"),
            Err(QueryError::DuplicatePrefix { .. })
        ));
    }

    #[test]
    fn unbound_prefix_at_execute() {
        let ast = parse_query("SELECT ?s WHERE { ?s a nope:Thing }").unwrap();
        let g = TopologyGraph::empty();
        assert_eq!(
            execute(&ast, &g),
            Err(QueryError::UnboundPrefix("nope".into()))
        );
    }
}
