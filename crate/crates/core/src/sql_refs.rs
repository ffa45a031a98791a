//! Static analysis of candidate SQL: which base tables and columns a query
//! touches, and which columns feed aggregates or ORDER BY.
//!
//! References are resolved per SELECT scope through table aliases. A column
//! that does not resolve in its own scope is retried in the enclosing scope
//! (correlated subqueries); references into derived tables or CTEs are dropped
//! since they do not name a base column.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use sqlparser::ast::{
    visit_expressions, Expr, ObjectName, OrderByExpr, Query, Select, SelectItem,
    SelectItemQualifiedWildcardKind, TableFactor, Visit, Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::schema::{ident_eq, ColumnRef, SchemaGraph};

const AGGREGATES: &[&str] = &["count", "sum", "avg", "min", "max"];

/// Everything a single query references.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryRefs {
    pub tables: BTreeSet<String>,
    /// All referenced base columns, including `*` expansions.
    pub columns: BTreeSet<ColumnRef>,
    /// Columns appearing inside an aggregate call or an ORDER BY expression.
    pub targets: BTreeSet<ColumnRef>,
}

impl QueryRefs {
    pub fn merge(&mut self, other: QueryRefs) {
        self.tables.extend(other.tables);
        self.columns.extend(other.columns);
        self.targets.extend(other.targets);
    }
}

/// Parses `sql` and collects its references against `schema`.
pub fn analyze(schema: &SchemaGraph, sql: &str) -> Result<QueryRefs, String> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| e.to_string())?;
    if statements.is_empty() {
        return Err("no statement".into());
    }
    let mut collector = Collector {
        schema,
        stack: Vec::new(),
        agg_depth: 0,
        order_depth: 0,
        out: QueryRefs::default(),
    };
    for stmt in &statements {
        let _ = stmt.visit(&mut collector);
    }
    Ok(collector.out)
}

#[derive(Debug, Clone)]
struct RawRef {
    qualifier: Option<String>,
    column: String,
    target: bool,
}

#[derive(Debug)]
struct Binding {
    name: String,
    base: Option<usize>,
}

#[derive(Debug, Default)]
struct SelectScope {
    bindings: Vec<Binding>,
    refs: Vec<RawRef>,
    /// `None` for `*`, `Some(q)` for `q.*`.
    stars: Vec<Option<String>>,
    aliases: Vec<(String, Vec<RawRef>)>,
}

#[derive(Debug, Default)]
struct QueryFrame {
    ctes: Vec<String>,
    selects: Vec<SelectScope>,
    order_refs: Vec<RawRef>,
}

enum Frame {
    Query(QueryFrame),
    Select(SelectScope),
}

struct Collector<'a> {
    schema: &'a SchemaGraph,
    stack: Vec<Frame>,
    agg_depth: usize,
    order_depth: usize,
    out: QueryRefs,
}

enum Resolution {
    Base(ColumnRef),
    Opaque,
    Unresolved,
}

fn last_name_part(name: &ObjectName) -> String {
    let text = name.to_string();
    let last = text.rsplit('.').next().unwrap_or(&text);
    last.trim_matches(|c| c == '"' || c == '`' || c == '[' || c == ']')
        .to_string()
}

fn is_aggregate(expr: &Expr) -> bool {
    match expr {
        Expr::Function(f) => {
            let name = last_name_part(&f.name).to_ascii_lowercase();
            AGGREGATES.contains(&name.as_str())
        }
        _ => false,
    }
}

fn raw_ref(expr: &Expr, target: bool) -> Option<RawRef> {
    match expr {
        Expr::Identifier(id) => Some(RawRef {
            qualifier: None,
            column: id.value.clone(),
            target,
        }),
        Expr::CompoundIdentifier(ids) if ids.len() >= 2 => Some(RawRef {
            qualifier: Some(ids[ids.len() - 2].value.clone()),
            column: ids[ids.len() - 1].value.clone(),
            target,
        }),
        _ => None,
    }
}

fn refs_in(expr: &Expr) -> Vec<RawRef> {
    let mut refs = Vec::new();
    let _ = visit_expressions(expr, |e| {
        if let Some(r) = raw_ref(e, false) {
            refs.push(r);
        }
        ControlFlow::<()>::Continue(())
    });
    refs
}

impl Collector<'_> {
    fn cte_visible(&self, name: &str) -> bool {
        self.stack.iter().any(|f| match f {
            Frame::Query(q) => q.ctes.iter().any(|c| ident_eq(c, name)),
            Frame::Select(_) => false,
        })
    }

    fn push_ref(&mut self, r: RawRef) {
        match self.stack.last_mut() {
            Some(Frame::Select(s)) => s.refs.push(r),
            Some(Frame::Query(q)) => q.order_refs.push(r),
            None => {}
        }
    }

    fn enclosing_select(&mut self) -> Option<&mut SelectScope> {
        self.stack.iter_mut().rev().find_map(|f| match f {
            Frame::Select(s) => Some(s),
            Frame::Query(_) => None,
        })
    }

    fn resolve(&self, scope: &SelectScope, r: &RawRef) -> Resolution {
        let column_of = |table: usize| {
            let def = &self.schema.tables()[table];
            def.column(&r.column)
                .map(|c| ColumnRef::new(def.name.clone(), c.name.clone()))
        };
        match &r.qualifier {
            Some(q) => match scope.bindings.iter().find(|b| ident_eq(&b.name, q)) {
                Some(Binding { base: Some(t), .. }) => {
                    column_of(*t).map_or(Resolution::Opaque, Resolution::Base)
                }
                Some(_) => Resolution::Opaque,
                None => Resolution::Unresolved,
            },
            None => {
                if let Some(found) = scope
                    .bindings
                    .iter()
                    .filter_map(|b| b.base)
                    .find_map(column_of)
                {
                    Resolution::Base(found)
                } else if scope.bindings.iter().any(|b| b.base.is_none()) {
                    Resolution::Opaque
                } else {
                    Resolution::Unresolved
                }
            }
        }
    }

    fn finish_select(&mut self, scope: SelectScope) {
        for star in &scope.stars {
            for b in &scope.bindings {
                let Some(t) = b.base else { continue };
                if star.as_ref().is_some_and(|q| !ident_eq(q, &b.name)) {
                    continue;
                }
                let def = &self.schema.tables()[t];
                for c in &def.columns {
                    self.out
                        .columns
                        .insert(ColumnRef::new(def.name.clone(), c.name.clone()));
                }
            }
        }
        let mut bubbled = Vec::new();
        for r in &scope.refs {
            match self.resolve(&scope, r) {
                Resolution::Base(col) => {
                    if r.target {
                        self.out.targets.insert(col.clone());
                    }
                    self.out.columns.insert(col);
                }
                Resolution::Opaque => {}
                Resolution::Unresolved => bubbled.push(r.clone()),
            }
        }
        if let Some(outer) = self.enclosing_select() {
            outer.refs.extend(bubbled);
        }
    }
}

impl Visitor for Collector<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        let ctes = query
            .with
            .as_ref()
            .map(|w| w.cte_tables.iter().map(|c| c.alias.name.value.clone()).collect())
            .unwrap_or_default();
        self.stack.push(Frame::Query(QueryFrame {
            ctes,
            ..Default::default()
        }));
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        let Some(Frame::Query(mut frame)) = self.stack.pop() else {
            return ControlFlow::Continue(());
        };
        // query-level ORDER BY resolves against the first SELECT, output aliases first
        if let Some(first) = frame.selects.first_mut() {
            for r in frame.order_refs.drain(..) {
                let alias = match &r.qualifier {
                    None => first.aliases.iter().find(|(a, _)| ident_eq(a, &r.column)),
                    Some(_) => None,
                };
                match alias {
                    Some((_, inner)) => {
                        let inner: Vec<RawRef> = inner
                            .iter()
                            .map(|i| RawRef {
                                target: r.target,
                                ..i.clone()
                            })
                            .collect();
                        first.refs.extend(inner);
                    }
                    None => first.refs.push(r),
                }
            }
        }
        for scope in frame.selects {
            self.finish_select(scope);
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        let mut scope = SelectScope::default();
        for item in &select.projection {
            match item {
                SelectItem::Wildcard(_) => scope.stars.push(None),
                SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(n), _) => {
                    scope.stars.push(Some(last_name_part(n)))
                }
                SelectItem::ExprWithAlias { expr, alias } => {
                    scope.aliases.push((alias.value.clone(), refs_in(expr)))
                }
                _ => {}
            }
        }
        self.stack.push(Frame::Select(scope));
        ControlFlow::Continue(())
    }

    fn post_visit_select(&mut self, _select: &Select) -> ControlFlow<()> {
        if let Some(Frame::Select(scope)) = self.stack.pop() {
            match self.stack.last_mut() {
                Some(Frame::Query(q)) => q.selects.push(scope),
                _ => self.finish_select(scope),
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        let binding = match factor {
            TableFactor::Table {
                name, alias, args, ..
            } => {
                let table_name = last_name_part(name);
                let base = if args.is_some() || self.cte_visible(&table_name) {
                    None
                } else {
                    self.schema.table_index(&table_name)
                };
                if let Some(t) = base {
                    self.out.tables.insert(self.schema.tables()[t].name.clone());
                }
                Some(Binding {
                    name: alias
                        .as_ref()
                        .map(|a| a.name.value.clone())
                        .unwrap_or(table_name),
                    base,
                })
            }
            TableFactor::Derived { alias, .. } => Some(Binding {
                name: alias.as_ref().map(|a| a.name.value.clone()).unwrap_or_default(),
                base: None,
            }),
            _ => None,
        };
        if let (Some(b), Some(Frame::Select(s))) = (binding, self.stack.last_mut()) {
            s.bindings.push(b);
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if is_aggregate(expr) {
            self.agg_depth += 1;
        }
        let target = self.agg_depth > 0 || self.order_depth > 0;
        if let Some(r) = raw_ref(expr, target) {
            self.push_ref(r);
        }
        ControlFlow::Continue(())
    }

    fn post_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        if is_aggregate(expr) {
            self.agg_depth -= 1;
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_order_by_expr(&mut self, _e: &OrderByExpr) -> ControlFlow<()> {
        self.order_depth += 1;
        ControlFlow::Continue(())
    }

    fn post_visit_order_by_expr(&mut self, _e: &OrderByExpr) -> ControlFlow<()> {
        self.order_depth -= 1;
        ControlFlow::Continue(())
    }
}

/// Whether the outermost statement of `sql` carries an ORDER BY.
///
/// Lexical scan: string literals, quoted identifiers and comments are skipped
/// and only keywords at parenthesis depth zero count, so ORDER BY inside
/// subqueries, CTEs or window specifications is ignored.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let bytes = sql.as_bytes();
    let mut depth = 0i32;
    let mut i = 0;
    let mut last_word_was_order = false;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\'' | b'"' | b'`' => {
                let close = b;
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == close {
                        if i + 1 < bytes.len() && bytes[i + 1] == close {
                            i += 2;
                            continue;
                        }
                        break;
                    }
                    i += 1;
                }
                i += 1;
                last_word_was_order = false;
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
                i += 1;
                last_word_was_order = false;
            }
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 2;
            }
            b'(' => {
                depth += 1;
                i += 1;
                last_word_was_order = false;
            }
            b')' => {
                depth -= 1;
                i += 1;
                last_word_was_order = false;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &sql[start..i];
                if depth == 0 {
                    if last_word_was_order && word.eq_ignore_ascii_case("by") {
                        return true;
                    }
                    last_word_was_order = word.eq_ignore_ascii_case("order");
                } else {
                    last_word_was_order = false;
                }
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                i += 1;
                last_word_was_order = false;
            }
        }
    }
    false
}
