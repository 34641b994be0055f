// SPDX-License-Identifier: Apache-2.0

//! Recursive-descent parser for the query subset and the procedure DSL.

use crate::error::ParseError;
use crate::expr::{AggFunc, BinaryOp, Expr, UnaryOp};
use crate::value::{Value, ValueKind};

use super::ast::*;
use super::lexer::{is_reserved, tokenize, Token, TokenKind};

type PResult<T> = Result<T, ParseError>;

const KINDS: &[&str] = &["INT", "FLOAT", "TEXT", "BOOL", "TS"];

/// Deepest expression tree accepted.
pub const MAX_EXPR_DEPTH: usize = 64;
/// Deepest parser recursion through parentheses and prefix operators.
pub const MAX_NESTING: usize = 2 * MAX_EXPR_DEPTH + 2;
/// Deepest nesting of IF and FOR blocks.
pub const MAX_BLOCK_NESTING: usize = 32;

/// An expression with the height of its tree.
type Tree = (Expr, usize);

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    nesting: usize,
    blocks: usize,
}

impl Parser {
    pub fn new(src: &str) -> PResult<Self> {
        Ok(Parser {
            tokens: tokenize(src)?,
            pos: 0,
            nesting: 0,
            blocks: 0,
        })
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &TokenKind {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        let t = self.peek();
        Err(ParseError {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| (*s).to_owned()).collect(),
            found: t.describe(),
        })
    }

    fn too_deep<T>(&self) -> PResult<T> {
        self.error(&["shallower nesting"])
    }

    fn nested<T>(&mut self, f: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<T> {
        if self.nesting >= MAX_NESTING {
            return self.too_deep();
        }
        self.nesting += 1;
        let r = f(self);
        self.nesting -= 1;
        r
    }

    fn join(&self, op: BinaryOp, (l, ld): Tree, (r, rd): Tree) -> PResult<Tree> {
        let d = ld.max(rd) + 1;
        if d > MAX_EXPR_DEPTH {
            return self.too_deep();
        }
        Ok((Expr::binary(op, l, r), d))
    }

    fn wrap(&self, op: UnaryOp, (e, d): Tree) -> PResult<Tree> {
        if d + 1 > MAX_EXPR_DEPTH {
            return self.too_deep();
        }
        Ok((Expr::Unary { op, expr: Box::new(e) }, d + 1))
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn at_sym(&self, sym: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Sym(s) if *s == sym)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.at_sym(sym) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.error(&[kw])
        }
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.error(&[&format!("'{sym}'")])
        }
    }

    fn at_ident(&self) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s) if !is_reserved(s))
    }

    fn ident(&mut self) -> PResult<String> {
        self.ident_or(&["identifier"])
    }

    fn ident_or(&mut self, expected: &[&str]) -> PResult<String> {
        if self.at_ident() {
            match self.advance().kind {
                TokenKind::Ident(s) => Ok(s),
                _ => unreachable!(),
            }
        } else {
            self.error(expected)
        }
    }

    pub fn expect_eof(&mut self) -> PResult<()> {
        if matches!(self.peek().kind, TokenKind::Eof) {
            Ok(())
        } else {
            self.error(&["end of input"])
        }
    }

    fn kind(&mut self) -> PResult<ValueKind> {
        if let TokenKind::Ident(s) = &self.peek().kind {
            if let Some(k) = ValueKind::from_keyword(s) {
                self.advance();
                return Ok(k);
            }
        }
        self.error(KINDS)
    }

    fn table_name(&mut self) -> PResult<TableName> {
        let first = self.ident_or(&["table name"])?;
        if self.eat_sym(".") {
            let name = self.ident_or(&["table name"])?;
            Ok(TableName {
                schema: Some(first),
                name,
            })
        } else {
            Ok(TableName {
                schema: None,
                name: first,
            })
        }
    }

    // ---- procedures -------------------------------------------------------

    pub fn procedure(&mut self) -> PResult<ProcedureAst> {
        self.expect_kw("PROC")?;
        let name = self.ident_or(&["procedure name"])?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.eat_sym(")") {
            loop {
                let pname = self.ident_or(&["parameter name", "')'"])?;
                self.expect_sym(":")?;
                let kind = self.kind()?;
                params.push(Param { name: pname, kind });
                if self.eat_sym(")") {
                    break;
                }
                if !self.eat_sym(",") {
                    return self.error(&["','", "')'"]);
                }
            }
        }
        self.expect_kw("BEGIN")?;
        let body = self.block(&["END"])?;
        self.expect_kw("END")?;
        self.eat_sym(";");
        Ok(ProcedureAst { name, params, body })
    }

    /// Statements up to (not including) one of the terminator keywords.
    fn block(&mut self, terminators: &[&str]) -> PResult<Vec<Stmt>> {
        let mut stmts = Vec::new();
        while !terminators.iter().any(|t| self.at_kw(t)) {
            if matches!(self.peek().kind, TokenKind::Eof) {
                let mut expected: Vec<&str> = terminators.to_vec();
                expected.push("statement");
                return self.error(&expected);
            }
            stmts.push(self.statement()?);
        }
        Ok(stmts)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        if self.blocks >= MAX_BLOCK_NESTING {
            return self.too_deep();
        }
        self.blocks += 1;
        let r = self.statement_inner();
        self.blocks -= 1;
        r
    }

    fn statement_inner(&mut self) -> PResult<Stmt> {
        let stmt = if self.eat_kw("DECLARE") {
            let name = self.ident()?;
            self.expect_sym(":")?;
            let kind = self.kind()?;
            Stmt::Declare { name, kind }
        } else if self.eat_kw("SET") {
            let name = self.ident()?;
            self.expect_sym("=")?;
            Stmt::Set {
                name,
                value: self.expr()?,
            }
        } else if self.eat_kw("IF") {
            let mut branches = Vec::new();
            let cond = self.expr()?;
            self.expect_kw("THEN")?;
            branches.push((cond, self.block(&["ELSIF", "ELSE", "END"])?));
            let mut otherwise = None;
            loop {
                if self.eat_kw("ELSIF") {
                    let cond = self.expr()?;
                    self.expect_kw("THEN")?;
                    branches.push((cond, self.block(&["ELSIF", "ELSE", "END"])?));
                } else if self.eat_kw("ELSE") {
                    otherwise = Some(self.block(&["END"])?);
                    break;
                } else {
                    break;
                }
            }
            self.expect_kw("END")?;
            self.expect_kw("IF")?;
            Stmt::If { branches, otherwise }
        } else if self.eat_kw("FOR") {
            let var = self.ident()?;
            self.expect_kw("IN")?;
            self.expect_sym("(")?;
            let (query, into) = self.select()?;
            if !into.is_empty() {
                return self.error(&["')'"]);
            }
            self.expect_sym(")")?;
            self.expect_kw("LOOP")?;
            let body = self.block(&["END"])?;
            self.expect_kw("END")?;
            self.expect_kw("LOOP")?;
            Stmt::For { var, query, body }
        } else if self.at_kw("SELECT") {
            let (query, targets) = self.select()?;
            if targets.is_empty() {
                return self.error(&["INTO"]);
            }
            Stmt::SelectInto { query, targets }
        } else if self.at_kw("INSERT") {
            Stmt::Insert(self.insert()?)
        } else if self.at_kw("UPDATE") {
            Stmt::Update(self.update()?)
        } else if self.at_kw("DELETE") {
            Stmt::Delete(self.delete()?)
        } else if self.eat_kw("CALL") {
            let name = self.ident_or(&["procedure name"])?;
            let args = self.arg_list()?;
            Stmt::Call { name, args }
        } else if self.eat_kw("EXTERNAL") {
            let name = self.ident_or(&["external call name"])?;
            let args = self.arg_list()?;
            let into = if self.eat_kw("INTO") { Some(self.ident()?) } else { None };
            Stmt::External { name, args, into }
        } else if self.eat_kw("RETURN") {
            let mut values = Vec::new();
            if !self.at_sym(";") {
                values.push(self.expr()?);
                while self.eat_sym(",") {
                    values.push(self.expr()?);
                }
            }
            Stmt::Return(values)
        } else if self.eat_kw("RAISE") {
            match self.advance().kind {
                TokenKind::Str(s) => Stmt::Raise(s),
                _ => {
                    self.pos -= 1;
                    return self.error(&["string literal"]);
                }
            }
        } else {
            return self.error(&[
                "DECLARE", "SET", "IF", "FOR", "INSERT", "UPDATE", "DELETE", "SELECT", "CALL", "EXTERNAL", "RETURN",
                "RAISE",
            ]);
        };
        self.expect_sym(";")?;
        Ok(stmt)
    }

    fn arg_list(&mut self) -> PResult<Vec<Expr>> {
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if self.eat_sym(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_sym(")") {
                return Ok(args);
            }
            if !self.eat_sym(",") {
                return self.error(&["','", "')'"]);
            }
        }
    }

    // ---- SQL statements ---------------------------------------------------

    pub fn sql_statement(&mut self) -> PResult<SqlStatement> {
        let stmt = if self.at_kw("SELECT") {
            let (q, into) = self.select()?;
            if !into.is_empty() {
                return self.error(&["FROM"]);
            }
            SqlStatement::Select(q)
        } else if self.at_kw("INSERT") {
            SqlStatement::Insert(self.insert()?)
        } else if self.at_kw("UPDATE") {
            SqlStatement::Update(self.update()?)
        } else if self.at_kw("DELETE") {
            SqlStatement::Delete(self.delete()?)
        } else {
            return self.error(&["SELECT", "INSERT", "UPDATE", "DELETE"]);
        };
        self.eat_sym(";");
        Ok(stmt)
    }

    /// Parses a SELECT, returning any `INTO` targets separately.
    pub fn select(&mut self) -> PResult<(SelectQuery, Vec<String>)> {
        self.expect_kw("SELECT")?;
        let mut projections = Vec::new();
        loop {
            if self.eat_sym("*") {
                projections.push(Projection::Star);
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_kw("AS") { Some(self.ident()?) } else { None };
                projections.push(Projection::Expr { expr, alias });
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        let mut into = Vec::new();
        if self.eat_kw("INTO") {
            into.push(self.ident()?);
            while self.eat_sym(",") {
                into.push(self.ident()?);
            }
        }
        self.expect_kw("FROM")?;
        let from = self.table_name()?;
        let alias = self.alias()?;
        let join = if self.at_kw("JOIN") || self.at_kw("INNER") {
            if self.eat_kw("INNER") && !self.at_kw("JOIN") {
                return self.error(&["JOIN"]);
            }
            self.expect_kw("JOIN")?;
            let table = self.table_name()?;
            let alias = self.alias()?;
            self.expect_kw("ON")?;
            let left = self.column_ref()?;
            self.expect_sym("=")?;
            let right = self.column_ref()?;
            Some(JoinClause {
                table,
                alias,
                left,
                right,
            })
        } else {
            None
        };
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group_by.push(self.column_ref()?);
            while self.eat_sym(",") {
                group_by.push(self.column_ref()?);
            }
        }
        Ok((
            SelectQuery {
                projections,
                from,
                alias,
                join,
                filter,
                group_by,
            },
            into,
        ))
    }

    fn alias(&mut self) -> PResult<Option<String>> {
        if self.eat_kw("AS") {
            return Ok(Some(self.ident()?));
        }
        if self.at_ident() {
            return Ok(Some(self.ident()?));
        }
        Ok(None)
    }

    fn column_ref(&mut self) -> PResult<Expr> {
        let first = self.ident_or(&["column name"])?;
        if self.eat_sym(".") {
            let name = self.ident_or(&["column name"])?;
            Ok(Expr::Column {
                qualifier: Some(first),
                name,
            })
        } else {
            Ok(Expr::Column {
                qualifier: None,
                name: first,
            })
        }
    }

    fn insert(&mut self) -> PResult<InsertStmt> {
        self.expect_kw("INSERT")?;
        self.expect_kw("INTO")?;
        let table = self.table_name()?;
        self.expect_sym("(")?;
        let mut columns = vec![self.ident_or(&["column name"])?];
        while self.eat_sym(",") {
            columns.push(self.ident_or(&["column name"])?);
        }
        self.expect_sym(")")?;
        self.expect_kw("VALUES")?;
        let values = self.arg_list()?;
        Ok(InsertStmt { table, columns, values })
    }

    fn update(&mut self) -> PResult<UpdateStmt> {
        self.expect_kw("UPDATE")?;
        let table = self.table_name()?;
        self.expect_kw("SET")?;
        let mut assignments = Vec::new();
        loop {
            let col = self.ident_or(&["column name"])?;
            self.expect_sym("=")?;
            assignments.push((col, self.expr()?));
            if !self.eat_sym(",") {
                break;
            }
        }
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        Ok(UpdateStmt {
            table,
            assignments,
            filter,
        })
    }

    fn delete(&mut self) -> PResult<DeleteStmt> {
        self.expect_kw("DELETE")?;
        self.expect_kw("FROM")?;
        let table = self.table_name()?;
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        Ok(DeleteStmt { table, filter })
    }

    // ---- expressions ------------------------------------------------------

    pub fn expr(&mut self) -> PResult<Expr> {
        Ok(self.tree_expr()?.0)
    }

    fn tree_expr(&mut self) -> PResult<Tree> {
        self.nested(|p| {
            let mut left = p.and_expr()?;
            while p.eat_kw("OR") {
                let right = p.and_expr()?;
                left = p.join(BinaryOp::Or, left, right)?;
            }
            Ok(left)
        })
    }

    fn and_expr(&mut self) -> PResult<Tree> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = self.join(BinaryOp::And, left, right)?;
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Tree> {
        if self.eat_kw("NOT") {
            let inner = self.nested(Self::not_expr)?;
            return self.wrap(UnaryOp::Not, inner);
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Tree> {
        let left = self.additive()?;
        let op = match &self.peek().kind {
            TokenKind::Sym("=") => BinaryOp::Eq,
            TokenKind::Sym("!=") => BinaryOp::Ne,
            TokenKind::Sym("<") => BinaryOp::Lt,
            TokenKind::Sym("<=") => BinaryOp::Le,
            TokenKind::Sym(">") => BinaryOp::Gt,
            TokenKind::Sym(">=") => BinaryOp::Ge,
            _ => return Ok(left),
        };
        self.advance();
        let right = self.additive()?;
        self.join(op, left, right)
    }

    fn additive(&mut self) -> PResult<Tree> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match &self.peek().kind {
                TokenKind::Sym("+") => BinaryOp::Add,
                TokenKind::Sym("-") => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.multiplicative()?;
            left = self.join(op, left, right)?;
        }
    }

    fn multiplicative(&mut self) -> PResult<Tree> {
        let mut left = self.unary()?;
        loop {
            let op = match &self.peek().kind {
                TokenKind::Sym("*") => BinaryOp::Mul,
                TokenKind::Sym("/") => BinaryOp::Div,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.unary()?;
            left = self.join(op, left, right)?;
        }
    }

    fn unary(&mut self) -> PResult<Tree> {
        if self.eat_sym("-") {
            let inner = self.nested(Self::unary)?;
            return self.wrap(UnaryOp::Neg, inner);
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Tree> {
        let expected = ["expression"];
        let leaf = |e| Ok((e, 1));
        match self.peek().kind.clone() {
            TokenKind::Int(i) => {
                self.advance();
                leaf(Expr::Literal(Value::Int(i)))
            }
            TokenKind::Float(f) => {
                self.advance();
                leaf(Expr::Literal(Value::Float(f)))
            }
            TokenKind::Str(s) => {
                self.advance();
                leaf(Expr::Literal(Value::Text(s)))
            }
            TokenKind::Sym("(") => {
                self.advance();
                let e = self.tree_expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            TokenKind::Ident(word) => {
                if word.eq_ignore_ascii_case("TRUE") {
                    self.advance();
                    return leaf(Expr::Literal(Value::Bool(true)));
                }
                if word.eq_ignore_ascii_case("FALSE") {
                    self.advance();
                    return leaf(Expr::Literal(Value::Bool(false)));
                }
                if word.eq_ignore_ascii_case("NULL") {
                    self.advance();
                    return leaf(Expr::Literal(Value::Null));
                }
                if is_reserved(&word) {
                    return self.error(&expected);
                }
                if matches!(self.peek_at(1), TokenKind::Sym("(")) {
                    let Some(func) = AggFunc::from_name(&word) else {
                        return self.error(&["AVG", "SUM", "COUNT", "MIN", "MAX"]);
                    };
                    self.advance();
                    self.advance();
                    if func == AggFunc::Count && self.eat_sym("*") {
                        self.expect_sym(")")?;
                        return leaf(Expr::Aggregate { func, arg: None });
                    }
                    let (arg, d) = self.tree_expr()?;
                    self.expect_sym(")")?;
                    if d + 1 > MAX_EXPR_DEPTH {
                        return self.too_deep();
                    }
                    return Ok((
                        Expr::Aggregate {
                            func,
                            arg: Some(Box::new(arg)),
                        },
                        d + 1,
                    ));
                }
                Ok((self.column_ref()?, 1))
            }
            _ => self.error(&expected),
        }
    }
}

pub fn parse_procedure(src: &str) -> PResult<ProcedureAst> {
    let mut p = Parser::new(src)?;
    let proc = p.procedure()?;
    p.expect_eof()?;
    Ok(proc)
}

pub fn parse_statement(src: &str) -> PResult<SqlStatement> {
    let mut p = Parser::new(src)?;
    let stmt = p.sql_statement()?;
    p.expect_eof()?;
    Ok(stmt)
}

pub fn parse_select(src: &str) -> PResult<SelectQuery> {
    match parse_statement(src)? {
        SqlStatement::Select(q) => Ok(q),
        _ => Err(ParseError {
            line: 1,
            column: 1,
            expected: vec!["SELECT".into()],
            found: "a data-modifying statement".into(),
        }),
    }
}

pub fn parse_expr(src: &str) -> PResult<Expr> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}
