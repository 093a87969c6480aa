//! Concrete syntax for the formula fragment.
//!
//! ```text
//! formula  := item ('&' item)*
//! item     := 'G' interval '(' body ')'
//!           | 'F' interval '(' body ')'
//!           | operand 'U' interval operand
//!           | operand
//! operand  := '(' formula ')' | '!' operand | atom
//! interval := '[' number ',' number ']'
//! atom     := 'true'
//!           | 'norm_inf' '(' vexpr ')' '<=' number     -- 2·dim affine literals
//!           | 'ball2' '(' vexpr ',' number ')'          -- e - |v|² with e = r²
//!           | vexpr ('>=' | '<=') vexpr                 -- scalar affine comparison
//! vexpr    := term (('+' | '-') term)*
//! term     := '-' term | number '*' term | factor ('*' number)?
//! factor   := number | '[' number (',' number)* ']' | xN | xN '[' k ']'
//!           | 'dot' '(' vexpr ',' vexpr ')' | '(' vexpr ')'
//! ```
//!
//! `xN` is the state block of agent `N`; `xN[k]` its `k`-th component
//! (zero based). Bodies of temporal operators and until operands may only
//! contain conjunctions of literals.

use super::formula::{Conj, Formula, Interval};
use super::predicate::{Predicate, StateLayout};
use super::StlError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Amp,
    Bang,
    Plus,
    Minus,
    Star,
    Ge,
    Le,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
    end: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, StlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'[' => Some(Tok::LBrack),
            b']' => Some(Tok::RBrack),
            b',' => Some(Tok::Comma),
            b'&' => Some(Tok::Amp),
            b'!' => Some(Tok::Bang),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(tok) = simple {
            i += 1;
            out.push(Token { tok, pos: start, end: i });
            continue;
        }
        if c == b'>' || c == b'<' {
            if bytes.get(i + 1) != Some(&b'=') {
                return Err(StlError::Syntax {
                    pos: i,
                    msg: "strict comparison is not supported, use >= or <=".into(),
                });
            }
            i += 2;
            let tok = if c == b'>' { Tok::Ge } else { Tok::Le };
            out.push(Token { tok, pos: start, end: i });
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| StlError::Syntax {
                pos: start,
                msg: format!("malformed number '{text}'"),
            })?;
            out.push(Token {
                tok: Tok::Num(v),
                pos: start,
                end: i,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                pos: start,
                end: i,
            });
            continue;
        }
        let ch = src[i..].chars().next().unwrap_or('?');
        return Err(StlError::Syntax {
            pos: i,
            msg: format!("unexpected character '{ch}'"),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: src.len(),
        end: src.len(),
    });
    Ok(out)
}

/// Affine vector expression: one `(coeffs, offset)` row per component.
#[derive(Debug, Clone)]
struct LinExpr {
    rows: Vec<(Vec<f64>, f64)>,
}

impl LinExpr {
    fn constant(values: Vec<f64>, n: usize) -> Self {
        Self {
            rows: values.into_iter().map(|v| (vec![0.0; n], v)).collect(),
        }
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn is_constant(&self) -> bool {
        self.rows.iter().all(|(c, _)| c.iter().all(|&v| v == 0.0))
    }

    fn scale(mut self, s: f64) -> Self {
        for (c, d) in &mut self.rows {
            c.iter_mut().for_each(|v| *v *= s);
            *d *= s;
        }
        self
    }

    fn combine(mut self, other: LinExpr, sign: f64) -> Option<Self> {
        if self.dim() != other.dim() {
            return None;
        }
        for ((c, d), (oc, od)) in self.rows.iter_mut().zip(other.rows) {
            c.iter_mut().zip(oc).for_each(|(a, b)| *a += sign * b);
            *d += sign * od;
        }
        Some(self)
    }
}

/// One parsed conjunct: either a temporal formula or a conjunction of literals.
enum Item {
    Temporal(Formula, usize),
    Lits(Vec<Predicate>),
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    layout: &'a StateLayout,
}

/// Parses formula text against the stacked-state layout the predicates refer to.
pub fn parse(text: &str, layout: &StateLayout) -> Result<Formula, StlError> {
    let toks = lex(text)?;
    let mut p = Parser {
        src: text,
        toks,
        pos: 0,
        layout,
    };
    let items = p.conj()?;
    p.expect(Tok::Eof, "end of formula")?;
    Ok(assemble(items))
}

fn assemble(items: Vec<Item>) -> Formula {
    let mut args = Vec::new();
    let mut state = Vec::new();
    for item in items {
        match item {
            Item::Temporal(f, _) => match f {
                Formula::And { args: inner } => args.extend(inner),
                other => args.push(other),
            },
            Item::Lits(l) => state.extend(l),
        }
    }
    if !state.is_empty() || args.is_empty() {
        args.insert(
            0,
            Formula::State {
                body: Conj::new(state),
            },
        );
    }
    if args.len() == 1 {
        args.pop().unwrap()
    } else {
        Formula::And { args }
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> usize {
        self.toks[self.pos].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, StlError> {
        Err(StlError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, StlError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            self.syntax(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == name)
    }

    fn conj(&mut self) -> Result<Vec<Item>, StlError> {
        let mut items = self.item()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            items.extend(self.item()?);
        }
        Ok(items)
    }

    fn item(&mut self) -> Result<Vec<Item>, StlError> {
        let start = self.here();
        if (self.is_ident("G") || self.is_ident("F")) && *self.peek_at(1) == Tok::LBrack {
            let always = self.is_ident("G");
            self.bump();
            let interval = self.interval()?;
            self.expect(Tok::LParen, "'(' after interval")?;
            let body_pos = self.here();
            let body = self.conj()?;
            self.expect(Tok::RParen, "')'")?;
            let body = Conj::new(self.literals_only(body, body_pos)?);
            let f = if always {
                Formula::Always { interval, body }
            } else {
                Formula::Eventually { interval, body }
            };
            return Ok(vec![Item::Temporal(f, start)]);
        }
        let left = self.operand()?;
        if self.is_ident("U") {
            self.bump();
            let interval = self.interval()?;
            let right_pos = self.here();
            let right = self.operand()?;
            let left = Conj::new(self.literals_only(left, start)?);
            let right = Conj::new(self.literals_only(right, right_pos)?);
            return Ok(vec![Item::Temporal(Formula::Until { interval, left, right }, start)]);
        }
        Ok(left)
    }

    fn literals_only(&self, items: Vec<Item>, pos: usize) -> Result<Vec<Predicate>, StlError> {
        let mut out = Vec::new();
        for item in items {
            match item {
                Item::Lits(l) => out.extend(l),
                Item::Temporal(_, p) => {
                    return Err(StlError::Semantic {
                        pos: p.max(pos),
                        msg: "temporal nesting not in fragment".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn operand(&mut self) -> Result<Vec<Item>, StlError> {
        match self.peek() {
            Tok::Bang => {
                let pos = self.here();
                self.bump();
                let inner = self.operand()?;
                let lits = self.literals_only(inner, pos)?;
                if lits.len() != 1 {
                    return Err(StlError::Semantic {
                        pos,
                        msg: "negation is only allowed on a single predicate".into(),
                    });
                }
                let neg = lits[0].negated().map_err(|e| match e {
                    StlError::Semantic { msg, .. } => StlError::Semantic { pos, msg },
                    other => other,
                })?;
                Ok(vec![Item::Lits(vec![neg])])
            }
            Tok::LParen => {
                let save = self.pos;
                self.bump();
                let grouped = self.conj().and_then(|items| {
                    self.expect(Tok::RParen, "')'")?;
                    Ok(items)
                });
                match grouped {
                    Ok(items) => Ok(items),
                    Err(first) => {
                        // might be an arithmetic group such as `(x1[0] + x2[0]) >= 1`
                        let reached = self.here();
                        self.pos = save;
                        match self.atom() {
                            Ok(lits) => Ok(vec![Item::Lits(lits)]),
                            Err(second) => {
                                if error_pos(&second) > reached {
                                    Err(second)
                                } else {
                                    Err(first)
                                }
                            }
                        }
                    }
                }
            }
            _ => Ok(vec![Item::Lits(self.atom()?)]),
        }
    }

    fn interval(&mut self) -> Result<Interval, StlError> {
        let pos = self.here();
        self.expect(Tok::LBrack, "'['")?;
        let a = self.signed_number()?;
        self.expect(Tok::Comma, "','")?;
        let b = self.signed_number()?;
        self.expect(Tok::RBrack, "']'")?;
        if a > b {
            return Err(StlError::Semantic {
                pos,
                msg: "interval a > b".into(),
            });
        }
        if a < 0.0 {
            return Err(StlError::Semantic {
                pos,
                msg: "interval must start at a >= 0".into(),
            });
        }
        Interval::new(a, b).ok_or(StlError::Semantic {
            pos,
            msg: "interval bounds must be finite".into(),
        })
    }

    fn signed_number(&mut self) -> Result<f64, StlError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.syntax(format!("expected number, found {}", describe(self.peek()))),
        }
    }

    fn atom(&mut self) -> Result<Vec<Predicate>, StlError> {
        let start = self.here();
        let n = self.layout.total_dim();
        if self.is_ident("true") {
            self.bump();
            return Ok(Vec::new());
        }
        if self.is_ident("norm_inf") && *self.peek_at(1) == Tok::LParen {
            self.bump();
            self.bump();
            let v = self.vexpr()?;
            self.expect(Tok::RParen, "')'")?;
            self.expect(Tok::Le, "'<=' after norm_inf(...)")?;
            let r = self.signed_number()?;
            let label = self.span_from(start);
            let mut lits = Vec::with_capacity(2 * v.dim());
            for (k, (c, d)) in v.rows.into_iter().enumerate() {
                // r - v_k >= 0 and r + v_k >= 0
                let upper = Predicate::affine(c.iter().map(|x| -x).collect(), r - d, self.layout)
                    .with_label(format!("{label} [{k}] upper"));
                let lower = Predicate::affine(c, r + d, self.layout).with_label(format!("{label} [{k}] lower"));
                lits.push(upper);
                lits.push(lower);
            }
            return Ok(lits);
        }
        if self.is_ident("ball2") && *self.peek_at(1) == Tok::LParen {
            self.bump();
            self.bump();
            let v = self.vexpr()?;
            self.expect(Tok::Comma, "','")?;
            let r = self.signed_number()?;
            self.expect(Tok::RParen, "')'")?;
            if r < 0.0 {
                return Err(StlError::Semantic {
                    pos: start,
                    msg: "ball2 radius must be nonnegative".into(),
                });
            }
            let label = self.span_from(start);
            let (map, shift): (Vec<_>, Vec<_>) = v.rows.into_iter().unzip();
            return Ok(vec![Predicate::quad_ball(map, shift, r * r, self.layout).with_label(label)]);
        }
        let lhs = self.vexpr()?;
        let ge = match self.peek() {
            Tok::Ge => true,
            Tok::Le => false,
            other => return self.syntax(format!("expected '>=' or '<=', found {}", describe(other))),
        };
        self.bump();
        let rhs = self.vexpr()?;
        if lhs.dim() != 1 || rhs.dim() != 1 {
            return Err(StlError::Semantic {
                pos: start,
                msg: "comparison operands must be scalar; use norm_inf or ball2 for vectors".into(),
            });
        }
        let (big, small) = if ge { (lhs, rhs) } else { (rhs, lhs) };
        let diff = big.combine(small, -1.0).expect("scalar dims match");
        let (c, d) = diff.rows.into_iter().next().unwrap();
        debug_assert_eq!(c.len(), n);
        let label = self.span_from(start);
        Ok(vec![Predicate::affine(c, d, self.layout).with_label(label)])
    }

    fn span_from(&self, start: usize) -> String {
        let end = self.toks[self.pos.saturating_sub(1)].end;
        self.src[start..end.max(start)].trim().to_string()
    }

    fn vexpr(&mut self) -> Result<LinExpr, StlError> {
        let mut acc = self.term()?;
        loop {
            let sign = match self.peek() {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => return Ok(acc),
            };
            let pos = self.here();
            self.bump();
            let rhs = self.term()?;
            let (da, db) = (acc.dim(), rhs.dim());
            acc = acc.combine(rhs, sign).ok_or(StlError::Semantic {
                pos,
                msg: format!("dimension mismatch: {da} vs {db}"),
            })?;
        }
    }

    fn term(&mut self) -> Result<LinExpr, StlError> {
        match *self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(self.term()?.scale(-1.0))
            }
            Tok::Num(v) if *self.peek_at(1) == Tok::Star => {
                self.bump();
                self.bump();
                Ok(self.term()?.scale(v))
            }
            _ => {
                let f = self.factor()?;
                if *self.peek() == Tok::Star {
                    self.bump();
                    let s = self.signed_number()?;
                    Ok(f.scale(s))
                } else {
                    Ok(f)
                }
            }
        }
    }

    fn factor(&mut self) -> Result<LinExpr, StlError> {
        let n = self.layout.total_dim();
        let pos = self.here();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(LinExpr::constant(vec![v], n))
            }
            Tok::LBrack => {
                self.bump();
                let mut vals = vec![self.signed_number()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    vals.push(self.signed_number()?);
                }
                self.expect(Tok::RBrack, "']'")?;
                Ok(LinExpr::constant(vals, n))
            }
            Tok::LParen => {
                self.bump();
                let e = self.vexpr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "dot" => {
                self.bump();
                self.expect(Tok::LParen, "'(' after dot")?;
                let a = self.vexpr()?;
                self.expect(Tok::Comma, "','")?;
                let b = self.vexpr()?;
                self.expect(Tok::RParen, "')'")?;
                if a.dim() != b.dim() {
                    return Err(StlError::Semantic {
                        pos,
                        msg: format!("dot of vectors with dims {} and {}", a.dim(), b.dim()),
                    });
                }
                let (cst, var) = if a.is_constant() {
                    (a, b)
                } else if b.is_constant() {
                    (b, a)
                } else {
                    return Err(StlError::Semantic {
                        pos,
                        msg: "dot needs one constant operand to stay affine".into(),
                    });
                };
                let mut coeffs = vec![0.0; n];
                let mut offset = 0.0;
                for ((_, w), (c, d)) in cst.rows.iter().zip(var.rows) {
                    coeffs.iter_mut().zip(c).for_each(|(o, v)| *o += w * v);
                    offset += w * d;
                }
                Ok(LinExpr {
                    rows: vec![(coeffs, offset)],
                })
            }
            Tok::Ident(name) => {
                let agent = name
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or(StlError::Syntax {
                        pos,
                        msg: format!("unknown identifier '{name}'"),
                    })?;
                let block = *self.layout.block(agent).ok_or(StlError::Semantic {
                    pos,
                    msg: format!("agent x{agent} is not part of this team"),
                })?;
                self.bump();
                let unit_row = |k: usize| {
                    let mut c = vec![0.0; n];
                    c[block.offset + k] = 1.0;
                    (c, 0.0)
                };
                if *self.peek() == Tok::LBrack {
                    self.bump();
                    let kpos = self.here();
                    let k = match *self.peek() {
                        Tok::Num(v) if v.fract() == 0.0 && v >= 0.0 => v as usize,
                        _ => return self.syntax("expected component index"),
                    };
                    self.bump();
                    self.expect(Tok::RBrack, "']'")?;
                    if k >= block.dim {
                        return Err(StlError::Semantic {
                            pos: kpos,
                            msg: format!("x{agent}[{k}] out of range (dim {})", block.dim),
                        });
                    }
                    Ok(LinExpr {
                        rows: vec![unit_row(k)],
                    })
                } else {
                    Ok(LinExpr {
                        rows: (0..block.dim).map(unit_row).collect(),
                    })
                }
            }
            other => self.syntax(format!("expected expression, found {}", describe(&other))),
        }
    }
}

fn error_pos(e: &StlError) -> usize {
    match e {
        StlError::Syntax { pos, .. } | StlError::Semantic { pos, .. } => *pos,
        _ => 0,
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Num(v) => format!("number {v}"),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::LBrack => "'['".into(),
        Tok::RBrack => "']'".into(),
        Tok::Comma => "','".into(),
        Tok::Amp => "'&'".into(),
        Tok::Bang => "'!'".into(),
        Tok::Plus => "'+'".into(),
        Tok::Minus => "'-'".into(),
        Tok::Star => "'*'".into(),
        Tok::Ge => "'>='".into(),
        Tok::Le => "'<='".into(),
        Tok::Eof => "end of input".into(),
    }
}
