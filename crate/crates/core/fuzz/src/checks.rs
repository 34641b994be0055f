// SPDX-License-Identifier: Apache-2.0

//! Properties checked for every fuzz input. Shared between the fuzz
//! targets and the corpus replay test in the main workspace.

use dbnet_core::syntax::{parse_expr, parse_procedure, parse_statement};
use dbnet_core::{api, journal, telemetry};

/// Fuzz target names; each has a corpus directory of the same name.
pub const TARGETS: [&str; 6] = [
    "parse_procedure",
    "parse_statement",
    "parse_expr",
    "decode_spans",
    "decode_journal",
    "decode_request",
];

pub fn run(target: &str, data: &[u8]) {
    match target {
        "parse_procedure" => parse_procedure_roundtrip(data),
        "parse_statement" => parse_statement_roundtrip(data),
        "parse_expr" => parse_expr_roundtrip(data),
        "decode_spans" => decode_spans(data),
        "decode_journal" => decode_journal(data),
        "decode_request" => decode_request(data),
        other => panic!("unknown fuzz target {other}"),
    }
}

/// Accepted programs print to source that parses back to the same tree.
pub fn parse_procedure_roundtrip(data: &[u8]) {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(ast) = parse_procedure(src) {
        let printed = ast.to_string();
        let again = parse_procedure(&printed).unwrap_or_else(|e| panic!("reparse of {printed:?}: {e}"));
        assert_eq!(ast, again, "{printed}");
    }
}

pub fn parse_statement_roundtrip(data: &[u8]) {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(ast) = parse_statement(src) {
        let printed = ast.to_string();
        let again = parse_statement(&printed).unwrap_or_else(|e| panic!("reparse of {printed:?}: {e}"));
        assert_eq!(ast, again, "{printed}");
    }
}

pub fn parse_expr_roundtrip(data: &[u8]) {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Ok(e) = parse_expr(src) {
        let printed = e.to_string();
        let again = parse_expr(&printed).unwrap_or_else(|err| panic!("reparse of {printed:?}: {err}"));
        assert_eq!(e, again, "{printed}");
    }
}

pub fn decode_spans(data: &[u8]) {
    if let Ok(spans) = telemetry::decode_spans(data) {
        let json: Vec<_> = spans.iter().map(telemetry::Span::to_json).collect();
        let bytes = serde_json::to_vec(&json).unwrap();
        let again = telemetry::decode_spans(&bytes).expect("re-encoded spans decode");
        assert_eq!(spans, again);
    }
}

/// The well-formed prefix decodes to the same batches on its own.
pub fn decode_journal(data: &[u8]) {
    if let Ok(d) = journal::decode(data) {
        assert!(d.valid_len <= data.len());
        let prefix = journal::decode(&data[..d.valid_len]).expect("valid prefix decodes");
        assert_eq!(prefix.batches, d.batches);
        let mut encoded = journal::MAGIC.to_vec();
        for b in &d.batches {
            encoded.extend(journal::encode_record(b));
        }
        let again = journal::decode(&encoded).expect("re-encoded journal decodes");
        assert_eq!(again.batches, d.batches);
    }
}

/// Input layout: `<METHOD> <path>\n<body>`.
pub fn decode_request(data: &[u8]) {
    let split = data.iter().position(|b| *b == b'\n').unwrap_or(data.len());
    let Ok(head) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let body = data.get(split + 1..).unwrap_or_default();
    let (method, target) = head.split_once(' ').unwrap_or((head, "/"));
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let query: Vec<(String, String)> = query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (k.to_owned(), v.to_owned())
        })
        .collect();
    let _ = api::decode_request(method, path, &query, body);
    let _ = api::decode_txn(body);
}
