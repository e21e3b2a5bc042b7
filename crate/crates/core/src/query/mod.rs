//! Query frontend: a small SQL subset with semantic operators.
//!
//! Supported shape:
//!
//! ```text
//! SELECT item[, item]* FROM table
//!     [WHERE pred [AND pred]*]
//!     [LIMIT n]
//! ```
//!
//! where `item` is `*`, a column, `AI.RANK("prompt", col)` or
//! `AI.CLASSIFY("prompt", col, ['a', 'b', ...])`, and `pred` is either a
//! comparison `col <op> literal` or `AI.IF("prompt", col)`.

mod lexer;
mod parser;
mod printer;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnType, Schema};
use crate::error::{Error, Result};

pub use parser::{parse_predicates, parse_query};
pub use printer::{format_predicate, pretty_print};

/// Cutoff used by `AI.RANK` when the query has no `LIMIT`.
pub const DEFAULT_RANK_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OpKind {
    If,
    Rank,
    Classify,
}

impl OpKind {
    pub fn function_name(self) -> &'static str {
        match self {
            OpKind::If => "AI.IF",
            OpKind::Rank => "AI.RANK",
            OpKind::Classify => "AI.CLASSIFY",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.function_name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// One semantic operator call: kind, prompt and the unstructured column it reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticOp {
    pub kind: OpKind,
    pub prompt: String,
    pub column: String,
    #[serde(default)]
    pub params: OpParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Comparator::Eq => ord == Equal,
            Comparator::Ne => ord != Equal,
            Comparator::Lt => ord == Less,
            Comparator::Le => ord != Greater,
            Comparator::Gt => ord == Greater,
            Comparator::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

/// Relational predicate `column <cmp> literal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: Comparator,
    pub literal: Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionItem {
    Star,
    Column(String),
    /// Index into `LogicalPlan::semantic_ops`.
    Semantic(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalPlan {
    pub source: String,
    pub relational_predicates: Vec<Predicate>,
    pub semantic_ops: Vec<SemanticOp>,
    pub projection: Vec<ProjectionItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl LogicalPlan {
    pub fn ops_of(&self, kind: OpKind) -> impl Iterator<Item = &SemanticOp> {
        self.semantic_ops.iter().filter(move |op| op.kind == kind)
    }

    /// Column names referenced anywhere in the plan.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = Vec::new();
        for item in &self.projection {
            if let ProjectionItem::Column(c) = item {
                cols.push(c);
            }
        }
        cols.extend(self.relational_predicates.iter().map(|p| p.column.as_str()));
        cols.extend(self.semantic_ops.iter().map(|op| op.column.as_str()));
        cols
    }
}

fn resolve<'s>(schema: &'s Schema, column: &str) -> Result<(&'s str, ColumnType)> {
    schema
        .lookup(column)
        .or_else(|| {
            schema
                .columns()
                .find(|(name, _)| name.eq_ignore_ascii_case(column))
        })
        .ok_or_else(|| Error::UnknownColumn(column.to_string()))
}

fn literal_fits(ty: ColumnType, lit: &Literal) -> bool {
    match (ty, lit) {
        (_, Literal::Null) => true,
        (ColumnType::Int | ColumnType::Float, Literal::Int(_) | Literal::Float(_)) => true,
        (ColumnType::Text, Literal::Str(_)) => true,
        (ColumnType::Bool, Literal::Bool(_)) => true,
        _ => false,
    }
}

/// Resolve every column reference against `schema` and reject type mismatches.
///
/// Column names are matched exactly first, then case-insensitively; the bound
/// plan carries the schema's spelling.
pub fn bind_plan(plan: &LogicalPlan, schema: &Schema) -> Result<LogicalPlan> {
    let mut bound = plan.clone();
    for item in &mut bound.projection {
        if let ProjectionItem::Column(c) = item {
            *c = resolve(schema, c)?.0.to_string();
        }
    }
    for pred in &mut bound.relational_predicates {
        let (name, ty) = resolve(schema, &pred.column)?;
        if !literal_fits(ty, &pred.literal) {
            return Err(Error::TypeMismatch(format!(
                "cannot compare {ty} column `{name}` with {:?}",
                pred.literal
            )));
        }
        if matches!(pred.literal, Literal::Null) && !matches!(pred.op, Comparator::Eq | Comparator::Ne)
        {
            return Err(Error::TypeMismatch(format!(
                "NULL only supports = and != (column `{name}`)"
            )));
        }
        pred.column = name.to_string();
    }
    for op in &mut bound.semantic_ops {
        let (name, ty) = resolve(schema, &op.column)?;
        if ty != ColumnType::Text {
            return Err(Error::NonTextColumn {
                column: name.to_string(),
                found: ty.to_string(),
            });
        }
        op.column = name.to_string();
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![
            ("id".into(), ColumnType::Int),
            ("review".into(), ColumnType::Text),
            ("stars".into(), ColumnType::Int),
        ])
    }

    #[test]
    fn binds_known_columns() {
        let plan = parse_query(r#"SELECT review FROM reviews WHERE AI.IF("positive: ", review)"#)
            .unwrap();
        let bound = bind_plan(&plan, &schema()).unwrap();
        assert_eq!(bound, plan);
    }

    #[test]
    fn bind_resolves_case() {
        let plan = parse_query("SELECT Review FROM reviews WHERE STARS > 3").unwrap();
        let bound = bind_plan(&plan, &schema()).unwrap();
        assert_eq!(bound.projection, vec![ProjectionItem::Column("review".into())]);
        assert_eq!(bound.relational_predicates[0].column, "stars");
    }

    #[test]
    fn bind_rejects_unknown_column() {
        let plan = parse_query("SELECT missing_col FROM reviews").unwrap();
        let err = bind_plan(&plan, &schema()).unwrap_err();
        assert!(err.to_string().contains("unknown column"), "{err}");
    }

    #[test]
    fn bind_rejects_semantic_op_on_integer() {
        let plan = parse_query(r#"SELECT id FROM reviews WHERE AI.IF("x", stars)"#).unwrap();
        let err = bind_plan(&plan, &schema()).unwrap_err();
        assert!(
            err.to_string()
                .contains("semantic operator requires text column"),
            "{err}"
        );
    }

    #[test]
    fn bind_rejects_literal_type_mismatch() {
        let plan = parse_query("SELECT id FROM reviews WHERE stars = 'five'").unwrap();
        assert!(matches!(
            bind_plan(&plan, &schema()),
            Err(Error::TypeMismatch(_))
        ));
    }
}
