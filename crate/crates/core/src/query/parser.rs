use super::lexer::{syntax, tokenize, Tok, Token};
use super::{
    Comparator, Literal, LogicalPlan, OpKind, OpParams, Predicate, ProjectionItem, SemanticOp,
    DEFAULT_RANK_CUTOFF,
};
use crate::error::{Error, Result};

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

enum Arg {
    Str(String),
    Ident(String),
    List(Vec<String>),
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        let t = self.peek();
        syntax(t.line, t.column, msg)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.is_keyword(kw) {
            self.next();
            Ok(())
        } else {
            Err(self.err_here(format!("expected {kw}")))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.err_here(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    /// Parses `NS.NAME(args)` after the namespace identifier was seen.
    fn call(&mut self) -> Result<(OpKind, Vec<Arg>, Token)> {
        let start = self.next();
        let ns = match &start.tok {
            Tok::Ident(s) => s.clone(),
            _ => unreachable!("call() only invoked on identifiers"),
        };
        self.expect(Tok::Dot, "`.`")?;
        let name = match self.next().tok {
            Tok::Ident(s) => s,
            _ => return Err(syntax(start.line, start.column, "expected function name")),
        };
        let full = format!("{ns}.{name}");
        let kind = match (ns.to_ascii_uppercase().as_str(), name.to_ascii_uppercase().as_str()) {
            ("AI", "IF") => OpKind::If,
            ("AI", "RANK") => OpKind::Rank,
            ("AI", "CLASSIFY") => OpKind::Classify,
            _ => return Err(Error::UnknownFunction(full)),
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                args.push(self.arg()?);
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok((kind, args, start))
    }

    fn arg(&mut self) -> Result<Arg> {
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.next();
                Ok(Arg::Str(s))
            }
            Tok::Ident(_) => Ok(Arg::Ident(self.ident("column name")?)),
            Tok::LBracket => {
                self.next();
                let mut items = Vec::new();
                if self.peek().tok != Tok::RBracket {
                    loop {
                        match self.next().tok {
                            Tok::Str(s) => items.push(s),
                            _ => {
                                self.pos -= 1;
                                return Err(self.err_here("expected string in category list"));
                            }
                        }
                        if self.peek().tok == Tok::Comma {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Arg::List(items))
            }
            _ => Err(self.err_here("expected string, column or category list")),
        }
    }

    fn semantic_op(&mut self) -> Result<SemanticOp> {
        let (kind, args, start) = self.call()?;
        let expected = match kind {
            OpKind::If | OpKind::Rank => 2,
            OpKind::Classify => 3,
        };
        if args.len() != expected {
            return Err(Error::Arity {
                function: kind.function_name().to_string(),
                expected: expected.to_string(),
                found: args.len(),
            });
        }
        let mut args = args.into_iter();
        let prompt = match args.next() {
            Some(Arg::Str(s)) => s,
            _ => {
                return Err(syntax(
                    start.line,
                    start.column,
                    format!("{kind}: first argument must be a prompt string"),
                ))
            }
        };
        if prompt.trim().is_empty() {
            return Err(syntax(start.line, start.column, format!("{kind}: prompt is empty")));
        }
        let column = match args.next() {
            Some(Arg::Ident(c)) => c,
            _ => {
                return Err(syntax(
                    start.line,
                    start.column,
                    format!("{kind}: second argument must be a column"),
                ))
            }
        };
        let mut params = OpParams::default();
        if kind == OpKind::Classify {
            match args.next() {
                Some(Arg::List(cats)) => {
                    let distinct: std::collections::BTreeSet<&String> = cats.iter().collect();
                    if distinct.len() < 2 || distinct.len() != cats.len() {
                        return Err(syntax(
                            start.line,
                            start.column,
                            "AI.CLASSIFY: categories must be at least two distinct strings",
                        ));
                    }
                    params.categories = Some(cats)
                }
                _ => {
                    return Err(syntax(
                        start.line,
                        start.column,
                        "AI.CLASSIFY: third argument must be a category list",
                    ))
                }
            }
        }
        Ok(SemanticOp {
            kind,
            prompt,
            column,
            params,
        })
    }

    fn starts_call(&self) -> bool {
        matches!(self.peek().tok, Tok::Ident(_)) && self.toks[self.pos + 1].tok == Tok::Dot
    }

    fn literal(&mut self) -> Result<Literal> {
        let neg = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        let lit = match (t.tok, neg) {
            (Tok::Int(v), false) => Literal::Int(v),
            (Tok::Int(v), true) => Literal::Int(-v),
            (Tok::Float(v), false) => Literal::Float(v),
            (Tok::Float(v), true) => Literal::Float(-v),
            (Tok::Str(s), false) => Literal::Str(s),
            (Tok::Ident(s), false) if s.eq_ignore_ascii_case("true") => Literal::Bool(true),
            (Tok::Ident(s), false) if s.eq_ignore_ascii_case("false") => Literal::Bool(false),
            (Tok::Ident(s), false) if s.eq_ignore_ascii_case("null") => Literal::Null,
            _ => return Err(syntax(t.line, t.column, "expected literal")),
        };
        Ok(lit)
    }

    fn comparison(&mut self) -> Result<Predicate> {
        let column = self.ident("column name")?;
        let t = self.next();
        let op = match t.tok {
            Tok::Eq => Comparator::Eq,
            Tok::Ne => Comparator::Ne,
            Tok::Lt => Comparator::Lt,
            Tok::Le => Comparator::Le,
            Tok::Gt => Comparator::Gt,
            Tok::Ge => Comparator::Ge,
            _ => return Err(syntax(t.line, t.column, "expected comparison operator")),
        };
        let literal = self.literal()?;
        Ok(Predicate {
            column,
            op,
            literal,
        })
    }

    fn conjunction(&mut self, ops: &mut Vec<SemanticOp>) -> Result<Vec<Predicate>> {
        let mut preds = Vec::new();
        loop {
            if self.starts_call() {
                let op = self.semantic_op()?;
                if op.kind != OpKind::If {
                    return Err(Error::invalid(format!(
                        "{} is only valid in the select list",
                        op.kind
                    )));
                }
                ops.push(op);
            } else {
                preds.push(self.comparison()?);
            }
            if self.is_keyword("AND") {
                self.next();
            } else {
                return Ok(preds);
            }
        }
    }

    fn query(&mut self) -> Result<LogicalPlan> {
        self.expect_keyword("SELECT")?;
        let mut ops = Vec::new();
        let mut projection = Vec::new();
        loop {
            if self.peek().tok == Tok::Star {
                self.next();
                projection.push(ProjectionItem::Star);
            } else if self.starts_call() {
                let op = self.semantic_op()?;
                if op.kind == OpKind::If {
                    return Err(Error::invalid("AI.IF is only valid in the WHERE clause"));
                }
                projection.push(ProjectionItem::Semantic(ops.len()));
                ops.push(op);
            } else {
                projection.push(ProjectionItem::Column(self.ident("select item")?));
            }
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect_keyword("FROM")?;
        let source = self.ident("table name")?;
        let relational_predicates = if self.is_keyword("WHERE") {
            self.next();
            self.conjunction(&mut ops)?
        } else {
            Vec::new()
        };
        let limit = if self.is_keyword("LIMIT") {
            self.next();
            let t = self.next();
            match t.tok {
                Tok::Int(v) if v > 0 => Some(v as usize),
                _ => return Err(syntax(t.line, t.column, "LIMIT expects a positive integer")),
            }
        } else {
            None
        };
        if self.peek().tok == Tok::Semi {
            self.next();
        }
        if self.peek().tok != Tok::Eof {
            return Err(self.err_here("unexpected trailing input"));
        }
        for op in ops.iter_mut().filter(|op| op.kind == OpKind::Rank) {
            op.params.top_k = Some(limit.unwrap_or(DEFAULT_RANK_CUTOFF));
        }
        Ok(LogicalPlan {
            source,
            relational_predicates,
            semantic_ops: ops,
            projection,
            limit,
        })
    }
}

fn is_reserved(s: &str) -> bool {
    ["SELECT", "FROM", "WHERE", "AND", "LIMIT", "TRUE", "FALSE", "NULL"]
        .iter()
        .any(|kw| s.eq_ignore_ascii_case(kw))
}

/// Parse one SELECT statement into a logical plan.
pub fn parse_query(sql_text: &str) -> Result<LogicalPlan> {
    let toks = tokenize(sql_text)?;
    Parser { toks, pos: 0 }.query()
}

/// Parse a bare conjunction of relational predicates (`a = 1 AND b > 2`).
///
/// Used for slice definitions; semantic operators are rejected.
pub fn parse_predicates(text: &str) -> Result<Vec<Predicate>> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    if p.peek().tok == Tok::Eof {
        return Ok(Vec::new());
    }
    let mut ops = Vec::new();
    let preds = p.conjunction(&mut ops)?;
    if !ops.is_empty() {
        return Err(Error::invalid("semantic operators are not allowed here"));
    }
    if p.peek().tok != Tok::Eof {
        return Err(p.err_here("unexpected trailing input"));
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_if_operator() {
        let plan =
            parse_query(r#"SELECT review FROM reviews WHERE AI.IF("The review is positive: ", review)"#)
                .unwrap();
        assert_eq!(plan.source, "reviews");
        assert!(plan.relational_predicates.is_empty());
        assert_eq!(
            plan.semantic_ops,
            vec![SemanticOp {
                kind: OpKind::If,
                prompt: "The review is positive: ".into(),
                column: "review".into(),
                params: OpParams::default(),
            }]
        );
    }

    #[test]
    fn plain_relational_query() {
        let plan = parse_query("SELECT a FROM t WHERE a > 5").unwrap();
        assert!(plan.semantic_ops.is_empty());
        assert_eq!(
            plan.relational_predicates,
            vec![Predicate {
                column: "a".into(),
                op: Comparator::Gt,
                literal: Literal::Int(5)
            }]
        );
    }

    #[test]
    fn rank_takes_limit_as_cutoff() {
        let plan =
            parse_query(r#"SELECT AI.RANK("relevance to: heart disease", abstract) FROM docs LIMIT 10"#)
                .unwrap();
        assert_eq!(plan.semantic_ops[0].kind, OpKind::Rank);
        assert_eq!(plan.semantic_ops[0].params.top_k, Some(10));
        let plan = parse_query(r#"SELECT id, AI.RANK('q', abstract) FROM docs LIMIT 3"#).unwrap();
        assert_eq!(plan.semantic_ops[0].params.top_k, Some(3));
    }

    #[test]
    fn rank_defaults_to_ten() {
        let plan = parse_query(r#"SELECT AI.RANK("q", body) FROM docs"#).unwrap();
        assert_eq!(plan.semantic_ops[0].params.top_k, Some(DEFAULT_RANK_CUTOFF));
    }

    #[test]
    fn classify_categories() {
        let plan =
            parse_query(r#"SELECT id, AI.CLASSIFY("topic", body, ['sport', "tech"]) FROM news"#)
                .unwrap();
        assert_eq!(
            plan.semantic_ops[0].params.categories,
            Some(vec!["sport".to_string(), "tech".to_string()])
        );
    }

    #[test]
    fn ops_keep_textual_order() {
        let plan = parse_query(
            r#"SELECT * FROM t WHERE AI.IF("first", a) AND x = 1 AND AI.IF("second", b)"#,
        )
        .unwrap();
        let prompts: Vec<_> = plan.semantic_ops.iter().map(|o| o.prompt.as_str()).collect();
        assert_eq!(prompts, ["first", "second"]);
        assert_eq!(plan.relational_predicates.len(), 1);
    }

    #[test]
    fn unknown_function() {
        let err = parse_query(r#"SELECT a FROM t WHERE AI.MAYBE("x", a)"#).unwrap_err();
        assert!(matches!(err, Error::UnknownFunction(ref f) if f == "AI.MAYBE"));
    }

    #[test]
    fn wrong_arity() {
        let err = parse_query(r#"SELECT a FROM t WHERE AI.IF("x")"#).unwrap_err();
        assert!(matches!(err, Error::Arity { found: 1, .. }), "{err}");
        let err = parse_query(r#"SELECT AI.CLASSIFY("x", a) FROM t"#).unwrap_err();
        assert!(matches!(err, Error::Arity { found: 2, .. }), "{err}");
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_query("SELECT a\nFROM t WHERE a >").unwrap_err();
        match err {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (2, 17)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(parse_query(r#"SELECT a FROM t WHERE AI.IF("   ", a)"#).is_err());
    }

    #[test]
    fn negative_and_float_literals() {
        let plan = parse_query("SELECT a FROM t WHERE x >= -1.5 AND y != -3 AND z = 'q'").unwrap();
        let lits: Vec<_> = plan
            .relational_predicates
            .iter()
            .map(|p| p.literal.clone())
            .collect();
        assert_eq!(
            lits,
            vec![
                Literal::Float(-1.5),
                Literal::Int(-3),
                Literal::Str("q".into())
            ]
        );
    }

    #[test]
    fn predicate_list() {
        let preds = parse_predicates("a = 1 AND b > 0").unwrap();
        assert_eq!(preds.len(), 2);
        assert!(parse_predicates("").unwrap().is_empty());
        assert!(parse_predicates(r#"AI.IF("x", a)"#).is_err());
    }
}
