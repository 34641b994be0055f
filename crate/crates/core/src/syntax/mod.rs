// SPDX-License-Identifier: Apache-2.0

//! Source language: the query subset and the stored-procedure DSL.
//!
//! ```text
//! proc      := "PROC" ident "(" [param {"," param}] ")" "BEGIN" {stmt} "END"
//! param     := ident ":" kind
//! kind      := "INT" | "FLOAT" | "TEXT" | "BOOL" | "TS"
//! stmt      := declare | set | if | forloop | dml | selectinto | call | external | return | raise
//! declare   := "DECLARE" ident ":" kind ";"
//! set       := "SET" ident "=" expr ";"
//! if        := "IF" expr "THEN" {stmt} {"ELSIF" expr "THEN" {stmt}} ["ELSE" {stmt}] "END IF" ";"
//! forloop   := "FOR" ident "IN" "(" select ")" "LOOP" {stmt} "END LOOP" ";"
//! external  := "EXTERNAL" ident "(" [expr {"," expr}] ")" ["INTO" ident] ";"
//! call      := "CALL" ident "(" [expr {"," expr}] ")" ";"
//! return    := "RETURN" [expr {"," expr}] ";"
//! raise     := "RAISE" string ";"
//! select    := "SELECT" proj {"," proj} ["INTO" ident {"," ident}] "FROM" table [alias]
//!              ["JOIN" table [alias] "ON" colref "=" colref] ["WHERE" expr]
//!              ["GROUP" "BY" colref {"," colref}]
//! insert    := "INSERT" "INTO" table "(" ident {"," ident} ")" "VALUES" "(" expr {"," expr} ")"
//! update    := "UPDATE" table "SET" ident "=" expr {"," ident "=" expr} ["WHERE" expr]
//! delete    := "DELETE" "FROM" table ["WHERE" expr]
//! ```
//!
//! Keywords are case-insensitive; identifiers are case-sensitive.

pub mod ast;
pub mod lexer;
pub mod parser;
mod print;

pub use ast::*;
pub use parser::{parse_expr, parse_procedure, parse_select, parse_statement};
