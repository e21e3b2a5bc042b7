use std::fmt::Write;

use super::{Literal, LogicalPlan, OpKind, Predicate, ProjectionItem, SemanticOp, DEFAULT_RANK_CUTOFF};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn literal(lit: &Literal) -> String {
    match lit {
        Literal::Null => "NULL".into(),
        Literal::Bool(b) => if *b { "TRUE" } else { "FALSE" }.into(),
        Literal::Int(v) => v.to_string(),
        // Debug keeps a decimal point and round-trips exactly.
        Literal::Float(v) => format!("{v:?}"),
        Literal::Str(s) => quote(s),
    }
}

fn op(op: &SemanticOp) -> String {
    let mut s = format!("{}({}, {}", op.kind.function_name(), quote(&op.prompt), op.column);
    if op.kind == OpKind::Classify {
        let cats: Vec<String> = op
            .params
            .categories
            .iter()
            .flatten()
            .map(|c| quote(c))
            .collect();
        write!(s, ", [{}]", cats.join(", ")).unwrap();
    }
    s.push(')');
    s
}

/// Render one relational predicate as SQL.
pub fn format_predicate(p: &Predicate) -> String {
    format!("{} {} {}", p.column, p.op.symbol(), literal(&p.literal))
}

/// Render a plan back to the canonical SQL text accepted by `parse_query`.
pub fn pretty_print(plan: &LogicalPlan) -> String {
    let items: Vec<String> = plan
        .projection
        .iter()
        .map(|item| match item {
            ProjectionItem::Star => "*".to_string(),
            ProjectionItem::Column(c) => c.clone(),
            ProjectionItem::Semantic(i) => op(&plan.semantic_ops[*i]),
        })
        .collect();
    let mut sql = format!("SELECT {} FROM {}", items.join(", "), plan.source);

    let mut conj: Vec<String> = plan
        .semantic_ops
        .iter()
        .filter(|o| o.kind == OpKind::If)
        .map(op)
        .collect();
    conj.extend(plan.relational_predicates.iter().map(format_predicate));
    if !conj.is_empty() {
        write!(sql, " WHERE {}", conj.join(" AND ")).unwrap();
    }

    let limit = plan.limit.or_else(|| {
        plan.ops_of(OpKind::Rank)
            .filter_map(|o| o.params.top_k)
            .find(|&k| k != DEFAULT_RANK_CUTOFF)
    });
    if let Some(n) = limit {
        write!(sql, " LIMIT {n}").unwrap();
    }
    sql
}
