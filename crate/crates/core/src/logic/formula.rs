//! Propositional formulas over named Boolean variables.
//!
//! Concrete syntax, loosest binding last:
//!
//! ```text
//! iff     := implies ( "<->" implies )*      left-associative
//! implies := or ( "->" implies )?            right-associative
//! or      := and ( "|" and )*
//! and     := unary ( "&" unary )*
//! unary   := "!" unary | atom
//! atom    := ident | "true" | "false" | "(" iff ")"
//! ident   := [a-zA-Z_][a-zA-Z0-9_]*
//! ```

use std::fmt;

use super::world::World;
use super::LogicError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Iff(Box<Expr>, Box<Expr>),
    True,
    False,
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Expr::Not(Box::new(self))
    }

    pub fn and(self, rhs: Expr) -> Self {
        Expr::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Expr) -> Self {
        Expr::Or(Box::new(self), Box::new(rhs))
    }

    pub fn implies(self, rhs: Expr) -> Self {
        Expr::Implies(Box::new(self), Box::new(rhs))
    }

    pub fn iff(self, rhs: Expr) -> Self {
        Expr::Iff(Box::new(self), Box::new(rhs))
    }

    /// Folds `items` with `Or`; an empty disjunction is `False`.
    pub fn any(items: impl IntoIterator<Item = Expr>) -> Self {
        items
            .into_iter()
            .reduce(|acc, e| acc.or(e))
            .unwrap_or(Expr::False)
    }

    /// Folds `items` with `And`; an empty conjunction is `True`.
    pub fn all(items: impl IntoIterator<Item = Expr>) -> Self {
        items
            .into_iter()
            .reduce(|acc, e| acc.and(e))
            .unwrap_or(Expr::True)
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(name) => {
                if !out.iter().any(|v| v == name) {
                    out.push(name.clone());
                }
            }
            Expr::Not(e) => e.collect_vars(out),
            Expr::And(a, b)
            | Expr::Or(a, b)
            | Expr::Implies(a, b)
            | Expr::Iff(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::True | Expr::False => {}
        }
    }
}

/// A formula with its canonical variable order (first occurrence, left to
/// right).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    root: Expr,
    vars: Vec<String>,
}

impl Formula {
    pub fn new(root: Expr) -> Self {
        let mut vars = Vec::new();
        root.collect_vars(&mut vars);
        Formula { root, vars }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn negate(&self) -> Formula {
        Formula {
            root: self.root.clone().not(),
            vars: self.vars.clone(),
        }
    }

    pub fn evaluate(&self, world: &World) -> Result<bool, LogicError> {
        if world.len() != self.vars.len() {
            return Err(LogicError::ArityMismatch {
                expected: self.vars.len(),
                got: world.len(),
            });
        }
        Ok(self.bind(&self.vars)?.eval(|i| world.get(i)))
    }

    /// Resolves variable names against `order`, producing an evaluator that
    /// reads variable `i` of that order.
    pub fn bind(&self, order: &[String]) -> Result<Bound, LogicError> {
        Ok(Bound(lower(&self.root, order)?))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Not(e) => write!(f, "!{e}"),
            Expr::And(a, b) => write!(f, "({a} & {b})"),
            Expr::Or(a, b) => write!(f, "({a} | {b})"),
            Expr::Implies(a, b) => write!(f, "({a} -> {b})"),
            Expr::Iff(a, b) => write!(f, "({a} <-> {b})"),
            Expr::True => write!(f, "true"),
            Expr::False => write!(f, "false"),
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// A formula lowered onto variable indices of a fixed order.
#[derive(Debug, Clone)]
pub struct Bound(Node);

#[derive(Debug, Clone)]
enum Node {
    Var(usize),
    Not(Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Implies(Box<Node>, Box<Node>),
    Iff(Box<Node>, Box<Node>),
    Const(bool),
}

fn lower(e: &Expr, order: &[String]) -> Result<Node, LogicError> {
    let pair = |a: &Expr, b: &Expr| -> Result<(Box<Node>, Box<Node>), LogicError> {
        Ok((Box::new(lower(a, order)?), Box::new(lower(b, order)?)))
    };
    Ok(match e {
        Expr::Var(name) => Node::Var(
            order
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| LogicError::UnknownVariable(name.clone()))?,
        ),
        Expr::Not(a) => Node::Not(Box::new(lower(a, order)?)),
        Expr::And(a, b) => {
            let (a, b) = pair(a, b)?;
            Node::And(a, b)
        }
        Expr::Or(a, b) => {
            let (a, b) = pair(a, b)?;
            Node::Or(a, b)
        }
        Expr::Implies(a, b) => {
            let (a, b) = pair(a, b)?;
            Node::Implies(a, b)
        }
        Expr::Iff(a, b) => {
            let (a, b) = pair(a, b)?;
            Node::Iff(a, b)
        }
        Expr::True => Node::Const(true),
        Expr::False => Node::Const(false),
    })
}

impl Bound {
    pub fn eval(&self, value: impl Fn(usize) -> bool + Copy) -> bool {
        eval_node(&self.0, value)
    }
}

fn eval_node(n: &Node, value: impl Fn(usize) -> bool + Copy) -> bool {
    match n {
        Node::Var(i) => value(*i),
        Node::Not(a) => !eval_node(a, value),
        Node::And(a, b) => eval_node(a, value) && eval_node(b, value),
        Node::Or(a, b) => eval_node(a, value) || eval_node(b, value),
        Node::Implies(a, b) => !eval_node(a, value) || eval_node(b, value),
        Node::Iff(a, b) => eval_node(a, value) == eval_node(b, value),
        Node::Const(c) => *c,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    Iff,
    LParen,
    RParen,
}

fn describe(tok: Option<&Tok>) -> String {
    match tok {
        None => "end of input".to_string(),
        Some(Tok::Ident(s)) => format!("identifier `{s}`"),
        Some(Tok::True) => "`true`".into(),
        Some(Tok::False) => "`false`".into(),
        Some(Tok::Not) => "`!`".into(),
        Some(Tok::And) => "`&`".into(),
        Some(Tok::Or) => "`|`".into(),
        Some(Tok::Implies) => "`->`".into(),
        Some(Tok::Iff) => "`<->`".into(),
        Some(Tok::LParen) => "`(`".into(),
        Some(Tok::RParen) => "`)`".into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, LogicError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'!' => {
                i += 1;
                Tok::Not
            }
            b'&' => {
                i += 1;
                Tok::And
            }
            b'|' => {
                i += 1;
                Tok::Or
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 2;
                Tok::Implies
            }
            b'<' if bytes.get(i + 1) == Some(&b'-') && bytes.get(i + 2) == Some(&b'>') => {
                i += 3;
                Tok::Iff
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                match &text[start..i] {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    ident => Tok::Ident(ident.to_string()),
                }
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(LogicError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((start, tok));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, expected: &str) -> LogicError {
        LogicError::Syntax {
            pos: self.pos(),
            msg: format!("expected {expected}, found {}", describe(self.peek())),
        }
    }

    fn iff(&mut self) -> Result<Expr, LogicError> {
        let mut lhs = self.implies()?;
        while self.eat(&Tok::Iff) {
            lhs = lhs.iff(self.implies()?);
        }
        Ok(lhs)
    }

    fn implies(&mut self) -> Result<Expr, LogicError> {
        let lhs = self.or()?;
        if self.eat(&Tok::Implies) {
            return Ok(lhs.implies(self.implies()?));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, LogicError> {
        let mut lhs = self.and()?;
        while self.eat(&Tok::Or) {
            lhs = lhs.or(self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, LogicError> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::And) {
            lhs = lhs.and(self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, LogicError> {
        if self.eat(&Tok::Not) {
            return Ok(self.unary()?.not());
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, LogicError> {
        let expr = match self.peek() {
            Some(Tok::Ident(name)) => Expr::Var(name.clone()),
            Some(Tok::True) => Expr::True,
            Some(Tok::False) => Expr::False,
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.iff()?;
                if !self.eat(&Tok::RParen) {
                    return Err(self.err("`)`"));
                }
                return Ok(inner);
            }
            _ => return Err(self.err("a variable, literal or `(`")),
        };
        self.at += 1;
        Ok(expr)
    }
}

/// Parses a formula. Error positions are byte offsets into `text`.
pub fn parse(text: &str) -> Result<Formula, LogicError> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(LogicError::Empty);
    }
    let mut parser = Parser {
        toks,
        at: 0,
        end: text.len(),
    };
    let root = parser.iff()?;
    if parser.peek().is_some() {
        return Err(parser.err("an operator or end of input"));
    }
    Ok(Formula::new(root))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(name: &str) -> Expr {
        Expr::var(name)
    }

    #[test]
    fn parses_conjunction_with_negation() {
        let f = parse("!red & green").unwrap();
        assert_eq!(f.root(), &v("red").not().and(v("green")));
        assert_eq!(f.vars(), ["red", "green"]);
    }

    #[test]
    fn parses_traffic_light_body() {
        let f = parse("(!red & green) | (red & !green) | (!red & !green)").unwrap();
        let expected = v("red")
            .not()
            .and(v("green"))
            .or(v("red").and(v("green").not()))
            .or(v("red").not().and(v("green").not()));
        assert_eq!(f.root(), &expected);
        assert_eq!(f.vars(), ["red", "green"]);
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        match parse("a & (b") {
            Err(LogicError::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(LogicError::Empty)));
        assert!(matches!(parse("  \t"), Err(LogicError::Empty)));
    }

    #[test]
    fn stray_characters_are_rejected() {
        assert!(matches!(parse("a $ b"), Err(LogicError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("a b"), Err(LogicError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("a -"), Err(LogicError::Syntax { pos: 2, .. })));
        assert!(matches!(parse("a &"), Err(LogicError::Syntax { pos: 3, .. })));
        assert!(matches!(parse(")"), Err(LogicError::Syntax { pos: 0, .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        // `!` > `&` > `|` > `->` > `<->`
        let f = parse("a | b & !c -> d <-> e").unwrap();
        let expected = v("a")
            .or(v("b").and(v("c").not()))
            .implies(v("d"))
            .iff(v("e"));
        assert_eq!(f.root(), &expected);

        let f = parse("a -> b -> c").unwrap();
        assert_eq!(f.root(), &v("a").implies(v("b").implies(v("c"))));

        let f = parse("a <-> b <-> c").unwrap();
        assert_eq!(f.root(), &v("a").iff(v("b")).iff(v("c")));

        let f = parse("a & b & c").unwrap();
        assert_eq!(f.root(), &v("a").and(v("b")).and(v("c")));
    }

    #[test]
    fn literals_and_identifiers() {
        let f = parse("true | _x1 & false").unwrap();
        assert_eq!(f.root(), &Expr::True.or(v("_x1").and(Expr::False)));
        assert_eq!(f.vars(), ["_x1"]);
        // keywords only match whole identifiers
        assert_eq!(parse("trueish").unwrap().vars(), ["trueish"]);
    }

    #[test]
    fn variable_order_is_first_occurrence() {
        let f = parse("c & (a | c) -> b & a").unwrap();
        assert_eq!(f.vars(), ["c", "a", "b"]);
    }

    #[test]
    fn evaluates_traffic_light_body() {
        let f = parse("(!red & green) | (red & !green) | (!red & !green)").unwrap();
        assert!(f.evaluate(&World::new(vec![false, false])).unwrap());
        assert!(f.evaluate(&World::new(vec![false, true])).unwrap());
        assert!(f.evaluate(&World::new(vec![true, false])).unwrap());
        assert!(!f.evaluate(&World::new(vec![true, true])).unwrap());
    }

    #[test]
    fn constant_true_holds_everywhere() {
        let f = parse("true").unwrap();
        assert!(f.evaluate(&World::new(vec![])).unwrap());
        let f = Formula::new(Expr::True);
        assert_eq!(f.n_vars(), 0);
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let f = parse("a & b").unwrap();
        assert!(matches!(
            f.evaluate(&World::new(vec![true])),
            Err(LogicError::ArityMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn bind_rejects_unknown_variable() {
        let f = parse("a & z").unwrap();
        let order = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(f.bind(&order), Err(LogicError::UnknownVariable(z)) if z == "z"));
    }

    #[test]
    fn display_round_trips() {
        for text in ["a -> b -> c", "!(a <-> b) | c & true", "(!red & green) | false"] {
            let f = parse(text).unwrap();
            assert_eq!(parse(&f.to_string()).unwrap(), f);
        }
    }
}
