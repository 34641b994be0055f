// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dbnet_bench::report::reference;
use dbnet_bench::{
    BenchReport, Harness, LoadReport, ScenarioConfig, ScenarioReport, Transport, EXAMPLE1_CHAIN, SETUP_COUNTS,
};
use dbnet_core::api::Service;
use dbnet_core::expr::Expr;
use dbnet_core::policy::{TriggerDef, TriggerEvent};
use dbnet_core::provenance::{verify_log_replay, Cause, LogKind};
use dbnet_core::proxy::SimFleet;
use dbnet_core::store::{ColumnDef, TableDef, TableRef};
use dbnet_core::syntax::parse_expr;
use dbnet_core::{Cells, Command, CommandResult, Error, Kernel, Origin, Value, ValueKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;
type Criterion = fn(&Runs) -> Outcome;
type PodValues = BTreeMap<i64, f64>;

const SUITE_BUDGET: Duration = Duration::from_secs(60);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kernel() -> Kernel {
    let k = Kernel::new(Arc::new(SimFleet::new(Duration::ZERO)));
    k.init_provenance().unwrap();
    k
}

fn admin(k: &Kernel) -> Origin {
    Origin::new("admin", Cause::request(k.next_request_id()))
}

fn cells(pairs: &[(&str, Value)]) -> Cells {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect()
}

fn expr(src: &str) -> Expr {
    parse_expr(src).unwrap()
}

fn rows_of(k: &Kernel, t: &TableRef) -> Vec<Cells> {
    k.snapshot().table(t).unwrap().rows().map(|(_, c)| c.clone()).collect()
}

fn mutation_entries(k: &Kernel, t: &TableRef) -> BTreeMap<LogKind, usize> {
    let mut out = BTreeMap::new();
    for e in k.log().unwrap() {
        if e.kind.is_mutation() && e.table.as_ref() == Some(t) {
            *out.entry(e.kind).or_default() += 1;
        }
    }
    out
}

// ---- scenario runs shared by criteria 1 to 6 --------------------------------

struct Runs {
    seeded: Result<(PodValues, PodValues), String>,
    setup: Result<(dbnet_bench::SetupReport, Duration), String>,
    ex1: Result<ScenarioReport, String>,
    ex2: Result<ScenarioReport, String>,
    load: Result<LoadReport, String>,
    provisioning_delay: Duration,
    /// (scenario, replay + convergence outcome) for every harness used.
    quiescence: Vec<(&'static str, Result<(), String>)>,
}

fn prepared(cfg: &ScenarioConfig) -> Result<Harness, String> {
    let h = Harness::new(cfg.clone(), Transport::Http).map_err(|e| e.to_string())?;
    h.setup_example1().map_err(|e| e.to_string())?;
    h.seed_nodes().map_err(|e| e.to_string())?;
    Ok(h)
}

fn scenario_runs() -> Runs {
    let cfg = ScenarioConfig::default();
    let mut quiescence = Vec::new();

    let started = Instant::now();
    let h1 = Harness::new(cfg.clone(), Transport::Http);
    let setup = h1
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|h| h.setup_example1().map_err(|e| e.to_string()))
        .map(|s| (s, started.elapsed()));
    let mut seeded = Err("setup failed".to_owned());
    let mut ex1 = Err("setup failed".to_owned());
    if let (Ok(h), Ok(_)) = (&h1, &setup) {
        seeded = h.seed_nodes().map_err(|e| e.to_string()).and_then(|()| {
            let (auto, lb) = h.pod_aggregates().map_err(|e| e.to_string())?;
            let pick = |m: BTreeMap<i64, (Option<f64>, i64)>| {
                m.into_iter().map(|(k, (v, _))| (k, v.unwrap_or(f64::NAN))).collect()
            };
            Ok((pick(auto), pick(lb)))
        });
        ex1 = h.run_example1().map_err(|e| e.to_string());
        quiescence.push(("ex1", h.check_quiescent().map_err(|e| e.to_string())));
    }

    let ex2 = prepared(&cfg).and_then(|h| {
        let r = h.run_example2().map_err(|e| e.to_string());
        quiescence.push(("ex2", h.check_quiescent().map_err(|e| e.to_string())));
        r
    });

    let load = prepared(&cfg).and_then(|mut h| {
        let r = h
            .load_test(cfg.clients, cfg.spans_per_client)
            .map_err(|e| e.to_string());
        quiescence.push(("load", h.check_quiescent().map_err(|e| e.to_string())));
        r
    });

    Runs {
        seeded,
        setup,
        ex1,
        ex2,
        load,
        provisioning_delay: cfg.provisioning_delay,
        quiescence,
    }
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn criterion1(r: &Runs) -> Outcome {
    let (auto, lb) = r.seeded.clone()?;
    let want_auto = [(1, 0.595), (2, 0.14)];
    let want_lb = [(1, 301.5), (2, 67.0)];
    for (got, want, name) in [(&auto, &want_auto, "auto-scalers"), (&lb, &want_lb, "load-balancers")] {
        check(got.len() == want.len(), || format!("{name}: {got:?}"))?;
        for (pod, v) in want {
            let g = got.get(pod).copied().unwrap_or(f64::NAN);
            check((g - v).abs() <= 1e-9, || format!("{name} pod {pod}: {g} != {v}"))?;
        }
    }
    Ok(format!("auto-scalers {auto:?}, load-balancers {lb:?}"))
}

fn criterion2(r: &Runs) -> Outcome {
    let (s, total) = r.setup.clone()?;
    check(s.counts == SETUP_COUNTS, || format!("counts {:?}", s.counts))?;
    check(s.latency < reference::SETUP, || format!("setup took {}", ms(s.latency)))?;
    check(total < Duration::from_secs(1), || {
        format!("total runtime {}", ms(total))
    })?;
    let c = s.counts;
    Ok(format!(
        "({}, {}, {}, {}) in {} (total {})",
        c.schemas,
        c.tables,
        c.procedures,
        c.triggers,
        ms(s.latency),
        ms(total)
    ))
}

fn criterion3(r: &Runs) -> Outcome {
    let (a, b) = (r.ex1.clone()?, r.ex2.clone()?);
    for x in [&a, &b] {
        check(x.kernel < reference::KERNEL_BOUND, || {
            format!("{} kernel {}", x.name, ms(x.kernel))
        })?;
    }
    Ok(format!("ex1 kernel {}, ex2 kernel {}", ms(a.kernel), ms(b.kernel)))
}

fn criterion4(r: &Runs) -> Outcome {
    let report = BenchReport::new(r.provisioning_delay);
    let mut parts = Vec::new();
    for x in [r.ex1.clone()?, r.ex2.clone()?] {
        let share = BenchReport::device_share(&x);
        check(report.device_split_ok(&x), || {
            format!(
                "{}: e2e {} - kernel {} = {}",
                x.name,
                ms(x.e2e),
                ms(x.kernel),
                ms(share)
            )
        })?;
        parts.push(format!("{} e2e-kernel {}", x.name, ms(share)));
    }
    Ok(format!("{} vs delay {}", parts.join(", "), ms(r.provisioning_delay)))
}

fn criterion5(r: &Runs) -> Outcome {
    let l = r.load.clone()?;
    check(l.spans_stored == 2000, || format!("{} spans stored", l.spans_stored))?;
    check(l.latency < reference::LOAD, || format!("wall clock {}", ms(l.latency)))?;
    Ok(format!(
        "{} x {} spans in {} requests, {} stored, metrics consistent, {}",
        l.clients,
        l.spans_per_client,
        l.requests,
        l.spans_stored,
        ms(l.latency)
    ))
}

fn criterion6(r: &Runs) -> Outcome {
    let x = r.ex1.clone()?;
    check(x.chain == EXAMPLE1_CHAIN, || format!("chain {:?}", x.chain))?;
    Ok(x.chain.join(" <- "))
}

// ---- property suites ----------------------------------------------------------

fn accounts_def() -> TableDef {
    TableDef::new(
        "p",
        "acct",
        vec![
            ColumnDef::new("id", ValueKind::Int).primary_key(),
            ColumnDef::new("v", ValueKind::Int).not_null().check("v >= 0"),
            ColumnDef::new("tag", ValueKind::Text).unique(),
        ],
    )
}

enum ModelOp {
    Insert(i64, i64),
    Bump(i64),
    Delete(i64),
}

/// Random batches; a fault at a random index must leave the pre-state.
fn atomicity(cases: usize) -> Outcome {
    let k = kernel();
    let o = admin(&k);
    k.create_schema("p", &o, None).unwrap();
    k.create_table(accounts_def(), &o, None).unwrap();
    k.register_procedure(
        "PROC boom(p_id: INT) BEGIN INSERT INTO p.acct (id, v, tag) VALUES (p_id, 1, 'boom'); RAISE 'boom'; END",
        &o,
        None,
    )
    .unwrap();
    let t = TableRef::new("p", "acct");
    let mut rng = ChaCha8Rng::seed_from_u64(0xA70);
    let mut model: BTreeMap<i64, (i64, String)> = BTreeMap::new();
    let mut next = 1i64;
    let mut faulted = 0;
    for case in 0..cases {
        let ids: Vec<i64> = model.keys().copied().collect();
        let pick = |rng: &mut ChaCha8Rng| {
            if ids.is_empty() {
                0
            } else {
                ids[rng.gen_range(0..ids.len())]
            }
        };
        let mut cmds = Vec::new();
        let mut ops = Vec::new();
        for _ in 0..rng.gen_range(1..=8) {
            match rng.gen_range(0..3) {
                0 => {
                    let v = rng.gen_range(0..100);
                    ops.push(ModelOp::Insert(next, v));
                    cmds.push(Command::Insert {
                        table: "p.acct".into(),
                        cells: cells(&[
                            ("id", Value::Int(next)),
                            ("v", Value::Int(v)),
                            ("tag", Value::Text(format!("t{next}"))),
                        ]),
                    });
                    next += 1;
                }
                1 => {
                    let id = pick(&mut rng);
                    ops.push(ModelOp::Bump(id));
                    cmds.push(Command::Update {
                        table: "p.acct".into(),
                        set: vec![("v".into(), expr("v + 1"))],
                        filter: Some(expr(&format!("id = {id}"))),
                    });
                }
                _ => {
                    let id = pick(&mut rng);
                    ops.push(ModelOp::Delete(id));
                    cmds.push(Command::Delete {
                        table: "p.acct".into(),
                        filter: Some(expr(&format!("id = {id}"))),
                    });
                }
            }
        }
        let fault = rng.gen_bool(0.75);
        if fault {
            let bad = match rng.gen_range(0..4) {
                0 => Command::Insert {
                    table: "p.acct".into(),
                    cells: cells(&[("id", Value::Int(next + 1_000_000)), ("v", Value::Int(-1))]),
                },
                1 => Command::Insert {
                    table: "p.nope".into(),
                    cells: cells(&[("id", Value::Int(1))]),
                },
                2 => Command::Call {
                    name: "boom".into(),
                    args: vec![Value::Int(next + 2_000_000)],
                },
                _ => {
                    // Same key twice within the batch.
                    let id = next + 3_000_000;
                    let row = cells(&[("id", Value::Int(id)), ("v", Value::Int(0))]);
                    cmds.push(Command::Insert {
                        table: "p.acct".into(),
                        cells: row.clone(),
                    });
                    Command::Insert {
                        table: "p.acct".into(),
                        cells: row,
                    }
                }
            };
            let at = rng.gen_range(0..=cmds.len());
            cmds.insert(at, bad);
        }
        let before = rows_of(&k, &t);
        let log_before = mutation_entries(&k, &t);
        let result = k.execute_atomic(cmds, &admin(&k));
        if fault {
            faulted += 1;
            check(result.is_err(), || format!("case {case}: faulty batch committed"))?;
            check(rows_of(&k, &t) == before, || {
                format!("case {case}: pre-state not preserved")
            })?;
            check(mutation_entries(&k, &t) == log_before, || {
                format!("case {case}: log changed")
            })?;
        } else {
            result.map_err(|e| format!("case {case}: clean batch failed: {e}"))?;
            for op in ops {
                match op {
                    ModelOp::Insert(id, v) => {
                        model.insert(id, (v, format!("t{id}")));
                    }
                    ModelOp::Bump(id) => {
                        if let Some(e) = model.get_mut(&id) {
                            e.0 += 1;
                        }
                    }
                    ModelOp::Delete(id) => {
                        model.remove(&id);
                    }
                }
            }
            let got: BTreeMap<i64, (i64, String)> = rows_of(&k, &t)
                .iter()
                .map(|c| {
                    let tag = match &c["tag"] {
                        Value::Text(s) => s.clone(),
                        _ => String::new(),
                    };
                    (c["id"].as_i64().unwrap(), (c["v"].as_i64().unwrap(), tag))
                })
                .collect();
            check(got == model, || format!("case {case}: state diverges from model"))?;
        }
    }
    verify_log_replay(&k.snapshot()).map_err(|e| e.to_string())?;
    Ok(format!("atomicity {cases} cases ({faulted} faulted)"))
}

/// Committed mutations and their log entries must match one for one.
fn cdc_completeness(target: usize) -> Outcome {
    let k = kernel();
    let o = admin(&k);
    k.create_schema("c", &o, None).unwrap();
    let def = TableDef::new(
        "c",
        "items",
        vec![
            ColumnDef::new("id", ValueKind::Int).primary_key(),
            ColumnDef::new("v", ValueKind::Int),
        ],
    );
    let t = k.create_table(def, &o, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xCDC);
    let (mut ins, mut upd, mut del) = (0usize, 0usize, 0usize);
    let mut attempted = 0usize;
    let mut next = 1i64;
    while ins + upd + del < target {
        let txn = k.begin(&admin(&k)).map_err(|e| e.to_string())?;
        let (mut i, mut u, mut d) = (0, 0, 0);
        for _ in 0..rng.gen_range(1..=10) {
            match rng.gen_range(0..4) {
                0 | 1 => {
                    k.insert(txn, "c.items", cells(&[("id", Value::Int(next)), ("v", Value::Int(0))]))
                        .map_err(|e| e.to_string())?;
                    next += 1;
                    i += 1;
                }
                2 => {
                    let lo = rng.gen_range(0..next);
                    let hi = lo + rng.gen_range(1..6);
                    let f = expr(&format!("id >= {lo} AND id < {hi}"));
                    u += k
                        .update(txn, "c.items", &[("v".into(), expr("v + 1"))], Some(&f))
                        .map_err(|e| e.to_string())? as usize;
                }
                _ => {
                    let f = expr(&format!("id = {}", rng.gen_range(0..next)));
                    d += k.delete(txn, "c.items", Some(&f)).map_err(|e| e.to_string())? as usize;
                }
            }
        }
        attempted += i + u + d;
        if rng.gen_bool(0.15) {
            k.rollback(txn, "random abort").map_err(|e| e.to_string())?;
        } else {
            k.commit(txn).map_err(|e| e.to_string())?;
            ins += i;
            upd += u;
            del += d;
        }
    }
    let counts = mutation_entries(&k, &t);
    let get = |kind| counts.get(&kind).copied().unwrap_or(0);
    check(get(LogKind::Insert) == ins, || {
        format!("{} Insert entries for {ins} inserts", get(LogKind::Insert))
    })?;
    check(get(LogKind::Update) == upd, || {
        format!("{} Update entries for {upd} updates", get(LogKind::Update))
    })?;
    check(get(LogKind::Delete) == del, || {
        format!("{} Delete entries for {del} deletes", get(LogKind::Delete))
    })?;
    let rows = k.snapshot().table(&t).unwrap().len();
    check(rows == ins - del, || {
        format!("{rows} rows after {ins} inserts and {del} deletes")
    })?;
    for e in k.log().unwrap().iter().filter(|e| e.table.as_ref() == Some(&t)) {
        let images = (e.old_cells.is_some(), e.new_cells.is_some());
        let want = match e.kind {
            LogKind::Insert => (false, true),
            LogKind::Update => (true, true),
            LogKind::Delete => (true, false),
            _ => continue,
        };
        check(images == want, || format!("entry {} has images {images:?}", e.log_id))?;
    }
    verify_log_replay(&k.snapshot()).map_err(|e| e.to_string())?;
    Ok(format!(
        "cdc {} committed of {attempted} attempted mutations",
        ins + upd + del
    ))
}

#[derive(Clone)]
struct Row {
    g: i64,
    x: Option<i64>,
    y: Option<f64>,
}

fn sum_i(v: &[i64]) -> Value {
    if v.is_empty() {
        Value::Null
    } else {
        Value::Int(v.iter().sum())
    }
}

fn sum_f(v: &[f64]) -> Value {
    if v.is_empty() {
        Value::Null
    } else {
        Value::Float(v.iter().sum())
    }
}

fn avg_f(v: &[f64]) -> Value {
    if v.is_empty() {
        Value::Null
    } else {
        Value::Float(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

/// Grouped and ungrouped aggregate queries checked against direct
/// computation over the generated rows.
fn aggregate_oracle(tables: usize, per_table: usize) -> Outcome {
    let k = kernel();
    let o = admin(&k);
    k.create_schema("q", &o, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA66);
    let mut queries = 0;
    for i in 0..tables {
        let name = format!("r{i}");
        let def = TableDef::new(
            "q",
            &name,
            vec![
                ColumnDef::new("id", ValueKind::Int).primary_key(),
                ColumnDef::new("g", ValueKind::Int).not_null(),
                ColumnDef::new("x", ValueKind::Int),
                ColumnDef::new("y", ValueKind::Float),
            ],
        );
        k.create_table(def, &o, None).unwrap();
        let n = rng.gen_range(0..=100);
        let rows: Vec<Row> = (0..n)
            .map(|_| Row {
                g: rng.gen_range(0..5),
                x: rng.gen_bool(0.8).then(|| rng.gen_range(-50..50)),
                y: rng.gen_bool(0.8).then(|| rng.gen_range(-100.0..100.0)),
            })
            .collect();
        if !rows.is_empty() {
            let cmds = rows
                .iter()
                .enumerate()
                .map(|(id, r)| Command::Insert {
                    table: format!("q.{name}"),
                    cells: cells(&[
                        ("id", Value::Int(id as i64)),
                        ("g", Value::Int(r.g)),
                        ("x", r.x.map_or(Value::Null, Value::Int)),
                        ("y", r.y.map_or(Value::Null, Value::Float)),
                    ]),
                })
                .collect();
            k.execute_atomic(cmds, &admin(&k)).map_err(|e| e.to_string())?;
        }
        for j in 0..per_table {
            let c = rng.gen_range(-60..60);
            let grouped = j % 2 == 0;
            let kept: Vec<&Row> = if grouped {
                rows.iter().filter(|r| r.x.is_some_and(|x| x > c)).collect()
            } else {
                rows.iter().filter(|r| r.y.is_some_and(|y| y < c as f64)).collect()
            };
            let (sql, expected): (String, Vec<Vec<Value>>) = if grouped {
                let mut groups: BTreeMap<i64, Vec<&Row>> = BTreeMap::new();
                for r in &kept {
                    groups.entry(r.g).or_default().push(r);
                }
                let exp = groups
                    .iter()
                    .map(|(g, m)| {
                        let xs: Vec<i64> = m.iter().filter_map(|r| r.x).collect();
                        let ys: Vec<f64> = m.iter().filter_map(|r| r.y).collect();
                        vec![
                            Value::Int(*g),
                            Value::Int(m.len() as i64),
                            Value::Int(xs.len() as i64),
                            sum_i(&xs),
                            avg_f(&ys),
                            xs.iter().min().map_or(Value::Null, |v| Value::Int(*v)),
                            ys.iter().copied().reduce(f64::max).map_or(Value::Null, Value::Float),
                        ]
                    })
                    .collect();
                (
                    format!("SELECT g, COUNT(*), COUNT(x), SUM(x), AVG(y), MIN(x), MAX(y) FROM q.{name} WHERE x > {c} GROUP BY g"),
                    exp,
                )
            } else {
                let xs: Vec<i64> = kept.iter().filter_map(|r| r.x).collect();
                let ys: Vec<f64> = kept.iter().filter_map(|r| r.y).collect();
                let xf: Vec<f64> = xs.iter().map(|v| *v as f64).collect();
                (
                    format!("SELECT COUNT(*), SUM(x), AVG(x), MIN(y), MAX(x), SUM(y) FROM q.{name} WHERE y < {c}"),
                    vec![vec![
                        Value::Int(kept.len() as i64),
                        sum_i(&xs),
                        avg_f(&xf),
                        ys.iter().copied().reduce(f64::min).map_or(Value::Null, Value::Float),
                        xs.iter().max().map_or(Value::Null, |v| Value::Int(*v)),
                        sum_f(&ys),
                    ]],
                )
            };
            let got = match k.execute_sql(&sql, &admin(&k), None) {
                Ok(CommandResult::Rows(rs)) => rs.rows,
                Ok(other) => return Err(format!("{sql}: unexpected result {other:?}")),
                Err(e) => return Err(format!("{sql}: {e}")),
            };
            let ok = got.len() == expected.len()
                && got
                    .iter()
                    .zip(&expected)
                    .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same(x, y)));
            check(ok, || format!("{sql}: got {got:?}, expected {expected:?}"))?;
            queries += 1;
        }
    }
    Ok(format!("aggregates {queries} queries over {tables} tables"))
}

/// A trigger chain 16 deep commits; an unbounded one aborts at depth 17
/// and leaves nothing behind.
fn cascade_depth() -> Outcome {
    let build = |limit: i64| {
        let k = kernel();
        let o = admin(&k);
        k.create_schema("app", &o, None).unwrap();
        k.create_table(
            TableDef::new("app", "chain", vec![ColumnDef::new("n", ValueKind::Int).primary_key()]),
            &o,
            None,
        )
        .unwrap();
        k.register_procedure(
            "PROC bump(p_n: INT) BEGIN INSERT INTO app.chain (n) VALUES (p_n + 1); END",
            &o,
            None,
        )
        .unwrap();
        k.register_trigger(
            TriggerDef {
                name: "chain_ins".into(),
                table: "app.chain".into(),
                event: TriggerEvent::AfterInsert,
                when: Some(format!("NEW.n < {limit}")),
                procedure: "bump".into(),
                args: vec!["NEW.n".into()],
                order_key: 0,
            },
            &o,
            None,
        )
        .unwrap();
        k
    };
    let t = TableRef::new("app", "chain");
    let first = || cells(&[("n", Value::Int(0))]);

    let k = build(16);
    k.execute_atomic(
        vec![Command::Insert {
            table: "app.chain".into(),
            cells: first(),
        }],
        &admin(&k),
    )
    .map_err(|e| format!("depth 16 chain failed: {e}"))?;
    let depth16 = k.snapshot().table(&t).unwrap().len();
    check(depth16 == 17, || format!("depth 16 chain left {depth16} rows"))?;

    let k = build(i64::MAX);
    let strip = |mut d: serde_json::Value| {
        if let Some(t) = d["tables"].as_object_mut() {
            t.remove("sys.log");
        }
        d
    };
    let before = strip(k.snapshot().dump());
    let mutations_before = mutation_entries(&k, &t);
    let err = k
        .execute_atomic(
            vec![Command::Insert {
                table: "app.chain".into(),
                cells: first(),
            }],
            &admin(&k),
        )
        .unwrap_err();
    check(matches!(err, Error::CascadeDepthExceeded(17)), || {
        format!("unbounded chain gave {err}")
    })?;
    check(strip(k.snapshot().dump()) == before, || {
        "residual state after abort".into()
    })?;
    check(mutation_entries(&k, &t) == mutations_before, || {
        "residual log entries after abort".into()
    })?;
    check(k.outbox().is_empty(), || "residual device commands after abort".into())?;
    Ok("cascade 16 ok, 17 aborted clean".into())
}

/// Users without grants are refused everywhere, and each refusal is logged.
fn default_deny() -> Outcome {
    let k = Arc::new(kernel());
    let svc = Service::new(k.clone()).with_inline_drain();
    let call = |user: &str, method: &str, path: &str, body: serde_json::Value| {
        let text = if body.is_null() {
            String::new()
        } else {
            body.to_string()
        };
        svc.handle(method, path, &[], Some(&format!("Bearer {user}")), text.as_bytes())
            .status
    };
    let denies = || k.log().unwrap().iter().filter(|e| e.kind == LogKind::AuthDeny).count();
    check(
        call("admin", "POST", "/v1/schema", json!({"name": "app"})) == 200,
        || "admin refused".into(),
    )?;
    let table = json!({"schema": "app", "name": "t", "columns": [
        {"name": "id", "value_kind": "Int", "constraints": [{"kind": "PrimaryKey"}]}]});
    check(call("admin", "POST", "/v1/table", table) == 200, || {
        "admin refused table".into()
    })?;
    let proc_src = json!({"source": "PROC p() BEGIN RETURN 1; END"});
    check(call("admin", "POST", "/v1/procedure", proc_src) == 200, || {
        "admin refused procedure".into()
    })?;
    for (u, r) in [("nobody", "guest"), ("reader", "ro")] {
        let body = json!({"user_id": u, "roles": [r]});
        check(call("admin", "POST", "/v1/users", body) == 200, || {
            "user creation failed".into()
        })?;
    }
    let grant = json!({"role": "ro", "object": "app.t", "action": "Read"});
    check(call("admin", "POST", "/v1/grants", grant) == 200, || {
        "grant failed".into()
    })?;

    let attempts: Vec<(&str, &str, serde_json::Value)> = vec![
        ("POST", "/v1/schema", json!({"name": "x"})),
        (
            "POST",
            "/v1/table",
            json!({"schema": "app", "name": "u", "columns": [{"name": "id", "value_kind": "Int"}]}),
        ),
        (
            "POST",
            "/v1/procedure",
            json!({"source": "PROC q() BEGIN RETURN 2; END"}),
        ),
        (
            "POST",
            "/v1/trigger",
            json!({"name": "tr", "table": "app.t", "event": "AfterInsert", "procedure": "p"}),
        ),
        ("POST", "/v1/procedure/p/call", json!({"args": []})),
        (
            "POST",
            "/v1/txn",
            json!({"ops": [{"op": "insert", "table": "app.t", "cells": {"id": 1}}]}),
        ),
        ("POST", "/v1/query", json!({"sql": "SELECT id FROM app.t"})),
        ("POST", "/v1/telemetry/spans", json!([])),
        ("GET", "/v1/log", serde_json::Value::Null),
        ("GET", "/v1/provenance/trace/1", serde_json::Value::Null),
        ("GET", "/v1/metrics/1", serde_json::Value::Null),
        ("POST", "/v1/users", json!({"user_id": "eve", "roles": ["admin"]})),
        (
            "POST",
            "/v1/grants",
            json!({"role": "guest", "object": "*", "action": "Admin"}),
        ),
    ];
    let mut refused = 0;
    for (m, p, b) in &attempts {
        let before = denies();
        let status = call("nobody", m, p, b.clone());
        check(status == 403, || format!("nobody {m} {p} got {status}"))?;
        check(denies() == before + 1, || format!("nobody {m} {p} not logged"))?;
        refused += 1;
    }
    let before = denies();
    check(
        call("reader", "POST", "/v1/query", json!({"sql": "SELECT id FROM app.t"})) == 200,
        || "read refused".into(),
    )?;
    let write = json!({"ops": [{"op": "insert", "table": "app.t", "cells": {"id": 1}}]});
    check(call("reader", "POST", "/v1/txn", write) == 403, || {
        "reader could write".into()
    })?;
    check(call("ghost", "GET", "/v1/log", serde_json::Value::Null) == 401, || {
        "unknown user admitted".into()
    })?;
    check(denies() == before + 2, || "reader/ghost refusals not logged".into())?;
    let last = k.log().unwrap().pop().unwrap();
    check(last.kind == LogKind::AuthDeny && last.user == "ghost", || {
        "last denial not attributed".into()
    })?;
    Ok(format!("default deny {refused} endpoints refused and logged"))
}

fn timed_suite(name: &str, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let r = r.map_err(|e| format!("{name}: {e}"))?;
    check(took < SUITE_BUDGET, || format!("{name} took {took:?}"))?;
    Ok(format!("{r} [{:.1} s]", took.as_secs_f64()))
}

fn criterion7(r: &Runs) -> Outcome {
    let mut parts = vec![
        timed_suite("atomicity", || atomicity(1000))?,
        timed_suite("cdc", || cdc_completeness(1000))?,
        timed_suite("aggregates", || aggregate_oracle(50, 10))?,
    ];
    let mut replayed = 0;
    for (name, q) in &r.quiescence {
        q.clone().map_err(|e| format!("{name}: {e}"))?;
        replayed += 1;
    }
    check(replayed == 3, || {
        format!("only {replayed} of 3 scenario runs completed")
    })?;
    parts.push(format!("log replay and convergence after {replayed} scenario runs"));
    parts.push(timed_suite("cascade", cascade_depth)?);
    parts.push(timed_suite("acl", default_deny)?);
    Ok(parts.join("; "))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let runs = scenario_runs();
    let criteria: [(&str, Criterion); 7] = [
        ("seeded pod aggregates", criterion1),
        ("setup benchmark", criterion2),
        ("kernel latency bound", criterion3),
        ("device-dominated split", criterion4),
        ("load test", criterion5),
        ("provenance chain", criterion6),
        ("property suites", criterion7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&runs))).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
