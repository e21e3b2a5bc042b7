use proptest::prelude::*;
use proxyq_core::query::{parse_query, pretty_print};

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}".prop_filter("keyword", |s| {
        !matches!(
            s.to_ascii_uppercase().as_str(),
            "SELECT" | "FROM" | "WHERE" | "AND" | "LIMIT" | "NULL" | "TRUE" | "FALSE" | "AI"
        )
    })
}

fn prompt() -> impl Strategy<Value = String> {
    "[ -~\t\n]{0,10}[!-~][ -~\t\n]{0,10}"
}

fn literal() -> impl Strategy<Value = String> {
    prop_oneof![
        (-1000i64..1000).prop_map(|v| v.to_string()),
        (-1e6f64..1e6).prop_map(|v| format!("{v:?}")),
        "[a-z ]{0,6}".prop_map(|s| format!("'{s}'")),
        Just("NULL".to_string()),
        Just("TRUE".to_string()),
    ]
}

fn predicate() -> impl Strategy<Value = String> {
    (ident(), prop::sample::select(vec!["=", "!=", "<", "<=", ">", ">="]), literal())
        .prop_map(|(c, op, l)| format!("{c} {op} {l}"))
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

fn query() -> impl Strategy<Value = String> {
    let filter = (ident(), prompt(), ident(), prop::collection::vec(predicate(), 0..3), prop::option::of(1usize..100))
        .prop_map(|(table, p, col, preds, limit)| {
            let mut conj = vec![format!("AI.IF({}, {col})", quoted(&p))];
            conj.extend(preds);
            let mut sql = format!("SELECT * FROM {table} WHERE {}", conj.join(" AND "));
            if let Some(n) = limit {
                sql.push_str(&format!(" LIMIT {n}"));
            }
            sql
        });
    let classify = (ident(), prompt(), ident(), prop::collection::btree_set("[a-z]{1,6}", 2..5))
        .prop_map(|(table, p, col, cats)| {
            let cats: Vec<String> = cats.iter().map(|c| format!("'{c}'")).collect();
            format!("SELECT id, AI.CLASSIFY({}, {col}, [{}]) FROM {table}", quoted(&p), cats.join(", "))
        });
    let rank = (ident(), prompt(), ident(), 1usize..50)
        .prop_map(|(table, p, col, k)| format!("SELECT AI.RANK({}, {col}) FROM {table} LIMIT {k}", quoted(&p)));
    prop_oneof![filter, classify, rank]
}

proptest! {
    #[test]
    fn printing_a_parsed_query_round_trips(sql in query()) {
        let plan = parse_query(&sql).unwrap();
        let printed = pretty_print(&plan);
        let again = parse_query(&printed).unwrap();
        prop_assert_eq!(&plan, &again);
        prop_assert_eq!(printed.clone(), pretty_print(&again));
    }
}

#[test]
fn malformed_queries_are_rejected() {
    for sql in [
        "",
        "SELECT FROM t",
        "SELECT * FROM t WHERE",
        r#"SELECT * FROM t WHERE AI.IF("p")"#,
        r#"SELECT AI.CLASSIFY("p", text, []) FROM t"#,
        r#"SELECT AI.CLASSIFY("p", text, ['a', 'a']) FROM t"#,
        r#"SELECT * FROM t WHERE AI.IF("  ", text)"#,
        "SELECT * FROM t LIMIT 0",
        r#"SELECT * FROM t WHERE AI.IF("unterminated, text)"#,
    ] {
        assert!(parse_query(sql).is_err(), "accepted {sql:?}");
    }
}
