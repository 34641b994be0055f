// SPDX-License-Identifier: Apache-2.0

//! Canonical source rendering. Output always reparses to the same AST.

use std::fmt::{self, Display, Formatter, Write};

use super::ast::*;

impl Display for TableName {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match &self.schema {
            Some(s) => write!(f, "{s}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

impl Display for Projection {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Projection::Star => f.write_str("*"),
            Projection::Expr { expr, alias: None } => write!(f, "{expr}"),
            Projection::Expr { expr, alias: Some(a) } => write!(f, "{expr} AS {a}"),
        }
    }
}

fn comma_list<T: Display>(f: &mut Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

fn fmt_select(f: &mut Formatter<'_>, q: &SelectQuery, into: &[String]) -> fmt::Result {
    f.write_str("SELECT ")?;
    comma_list(f, &q.projections)?;
    if !into.is_empty() {
        f.write_str(" INTO ")?;
        comma_list(f, into)?;
    }
    write!(f, " FROM {}", q.from)?;
    if let Some(a) = &q.alias {
        write!(f, " AS {a}")?;
    }
    if let Some(j) = &q.join {
        write!(f, " JOIN {}", j.table)?;
        if let Some(a) = &j.alias {
            write!(f, " AS {a}")?;
        }
        write!(f, " ON {} = {}", j.left, j.right)?;
    }
    if let Some(w) = &q.filter {
        write!(f, " WHERE {w}")?;
    }
    if !q.group_by.is_empty() {
        f.write_str(" GROUP BY ")?;
        comma_list(f, &q.group_by)?;
    }
    Ok(())
}

impl Display for SelectQuery {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        fmt_select(f, self, &[])
    }
}

impl Display for InsertStmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "INSERT INTO {} (", self.table)?;
        comma_list(f, &self.columns)?;
        f.write_str(") VALUES (")?;
        comma_list(f, &self.values)?;
        f.write_str(")")
    }
}

impl Display for UpdateStmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "UPDATE {} SET ", self.table)?;
        for (i, (col, e)) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{col} = {e}")?;
        }
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        Ok(())
    }
}

impl Display for DeleteStmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "DELETE FROM {}", self.table)?;
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        Ok(())
    }
}

impl Display for SqlStatement {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            SqlStatement::Select(q) => write!(f, "{q}"),
            SqlStatement::Insert(s) => write!(f, "{s}"),
            SqlStatement::Update(s) => write!(f, "{s}"),
            SqlStatement::Delete(s) => write!(f, "{s}"),
        }
    }
}

struct Indented<'a>(&'a [Stmt], usize);

impl Display for Indented<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for stmt in self.0 {
            write_stmt(f, stmt, self.1)?;
        }
        Ok(())
    }
}

fn write_stmt(f: &mut Formatter<'_>, stmt: &Stmt, depth: usize) -> fmt::Result {
    let pad = "  ".repeat(depth);
    f.write_str(&pad)?;
    match stmt {
        Stmt::Declare { name, kind } => writeln!(f, "DECLARE {name}: {kind};"),
        Stmt::Set { name, value } => writeln!(f, "SET {name} = {value};"),
        Stmt::If { branches, otherwise } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                if i == 0 {
                    writeln!(f, "IF {cond} THEN")?;
                } else {
                    writeln!(f, "{pad}ELSIF {cond} THEN")?;
                }
                write!(f, "{}", Indented(body, depth + 1))?;
            }
            if let Some(body) = otherwise {
                writeln!(f, "{pad}ELSE")?;
                write!(f, "{}", Indented(body, depth + 1))?;
            }
            writeln!(f, "{pad}END IF;")
        }
        Stmt::For { var, query, body } => {
            writeln!(f, "FOR {var} IN ({query}) LOOP")?;
            write!(f, "{}", Indented(body, depth + 1))?;
            writeln!(f, "{pad}END LOOP;")
        }
        Stmt::Insert(s) => writeln!(f, "{s};"),
        Stmt::Update(s) => writeln!(f, "{s};"),
        Stmt::Delete(s) => writeln!(f, "{s};"),
        Stmt::SelectInto { query, targets } => {
            let mut line = String::new();
            let _ = write!(line, "{}", SelectInto(query, targets));
            writeln!(f, "{line};")
        }
        Stmt::Call { name, args } => {
            write!(f, "CALL {name}(")?;
            comma_list(f, args)?;
            writeln!(f, ");")
        }
        Stmt::External { name, args, into } => {
            write!(f, "EXTERNAL {name}(")?;
            comma_list(f, args)?;
            f.write_str(")")?;
            if let Some(v) = into {
                write!(f, " INTO {v}")?;
            }
            writeln!(f, ";")
        }
        Stmt::Return(values) => {
            f.write_str("RETURN")?;
            if !values.is_empty() {
                f.write_str(" ")?;
                comma_list(f, values)?;
            }
            writeln!(f, ";")
        }
        Stmt::Raise(msg) => writeln!(f, "RAISE '{}';", msg.replace('\'', "''")),
    }
}

struct SelectInto<'a>(&'a SelectQuery, &'a [String]);

impl Display for SelectInto<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        fmt_select(f, self.0, self.1)
    }
}

impl Display for ProcedureAst {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "PROC {}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", p.name, p.kind)?;
        }
        writeln!(f, ") BEGIN")?;
        write!(f, "{}", Indented(&self.body, 1))?;
        f.write_str("END")
    }
}

#[cfg(test)]
mod tests {
    use crate::syntax::parser::{parse_procedure, parse_statement};

    #[test]
    fn procedure_round_trips() {
        let src = "PROC p(a: INT) BEGIN
            DECLARE x: FLOAT;
            SELECT AVG(v) INTO x FROM s.t AS q WHERE q.k = a GROUP BY k;
            IF x > -1.5 THEN RAISE 'it''s'; ELSIF NOT (x = 2) THEN RETURN; ELSE RETURN x, 'a'; END IF;
            FOR r IN (SELECT * FROM t JOIN u ON t.a = u.b) LOOP CALL q(r.a); END LOOP;
            EXTERNAL create_node(a) INTO x;
        END";
        let ast = parse_procedure(src).unwrap();
        let printed = ast.to_string();
        assert_eq!(parse_procedure(&printed).unwrap(), ast, "{printed}");
    }

    #[test]
    fn statements_round_trip() {
        for src in [
            "UPDATE t SET a = 1, b = (b + 1) WHERE c != NULL",
            "INSERT INTO x.y (a, b) VALUES (1, 'z')",
            "DELETE FROM t",
            "SELECT COUNT(*) FROM t GROUP BY a, t.b",
        ] {
            let stmt = parse_statement(src).unwrap();
            assert_eq!(parse_statement(&stmt.to_string()).unwrap(), stmt);
        }
    }
}
