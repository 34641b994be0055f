// SPDX-License-Identifier: Apache-2.0

//! Northbound device synchronization.
//!
//! Two paths reach devices. `EXTERNAL` statements call a [`DeviceClient`]
//! synchronously from inside a transaction. Committed changes to
//! device-backed tables become [`DeviceCommand`]s in the [`Outbox`], which
//! are applied in order by [`crate::txn::Kernel::drain_outbox`].

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Database, DeviceKind, RowId, TableRef};
use crate::value::{Cells, Value};

/// Calls available to `EXTERNAL`.
pub const EXTERNAL_CALLS: &[&str] = &["create_node", "kill_node", "set_weights"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceAction {
    Create,
    Delete,
    SetState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCommand {
    pub command_id: u64,
    pub device_kind: DeviceKind,
    pub device_id: i64,
    pub action: DeviceAction,
    pub payload: Cells,
    pub table: TableRef,
    pub row_id: RowId,
    pub origin_log_id: u64,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncState {
    Pending,
    InSync,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncStatus {
    pub table: TableRef,
    pub row_id: RowId,
    pub state: SyncState,
    pub attempts: u32,
    pub last_error: Option<String>,
}

pub trait DeviceClient: Send + Sync {
    /// Synchronous device API used by `EXTERNAL`.
    fn call(&self, name: &str, args: &[Value]) -> Result<Vec<Value>>;
    /// Pushes one outbox command.
    fn apply(&self, cmd: &DeviceCommand) -> Result<()>;
    fn state(&self, kind: DeviceKind, id: i64) -> Result<Cells>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRule {
    /// `create_node`, `kill_node`, `set_weights`, `apply_command` or `*`.
    pub action: String,
    pub count: u32,
}

#[derive(Debug, Clone)]
struct Device {
    cells: Cells,
    alive: bool,
}

#[derive(Debug, Default)]
struct FleetState {
    devices: BTreeMap<(DeviceKind, i64), Device>,
    lb_weights: BTreeMap<i64, Vec<f64>>,
    failures: HashMap<String, u32>,
}

/// In-process simulated device fleet.
#[derive(Debug)]
pub struct SimFleet {
    state: Mutex<FleetState>,
    provisioning_delay: Duration,
}

pub const DEFAULT_PROVISIONING_DELAY: Duration = Duration::from_millis(100);

impl Default for SimFleet {
    fn default() -> Self {
        SimFleet::new(DEFAULT_PROVISIONING_DELAY)
    }
}

fn int_arg(name: &str, args: &[Value], i: usize) -> Result<i64> {
    args.get(i)
        .and_then(Value::as_i64)
        .ok_or_else(|| Error::DeviceError(format!("{name}: argument {} must be an integer", i + 1)))
}

impl SimFleet {
    pub fn new(provisioning_delay: Duration) -> Self {
        SimFleet {
            state: Mutex::new(FleetState::default()),
            provisioning_delay,
        }
    }

    pub fn provisioning_delay(&self) -> Duration {
        self.provisioning_delay
    }

    /// The next `count` calls matching `rule.action` fail. Rules accumulate.
    pub fn inject_failure(&self, rule: FailureRule) {
        if rule.count == 0 {
            return;
        }
        *self.state.lock().failures.entry(rule.action).or_default() += rule.count;
    }

    pub fn pending_failures(&self) -> u32 {
        self.state.lock().failures.values().sum()
    }

    fn take_failure(state: &mut FleetState, action: &str) -> bool {
        for key in [action, "*"] {
            if let Some(n) = state.failures.get_mut(key) {
                if *n > 0 {
                    *n -= 1;
                    return true;
                }
            }
        }
        false
    }

    pub fn lb_weights(&self, pod_id: i64) -> Option<Vec<f64>> {
        self.state.lock().lb_weights.get(&pod_id).cloned()
    }

    /// Node ids with their liveness, in id order.
    pub fn nodes(&self) -> Vec<(i64, bool)> {
        self.state
            .lock()
            .devices
            .iter()
            .filter(|((k, _), _)| *k == DeviceKind::Node)
            .map(|((_, id), d)| (*id, d.alive))
            .collect()
    }

    fn create_node(&self, args: &[Value]) -> Result<Vec<Value>> {
        let pod = int_arg("create_node", args, 0)?;
        if self.provisioning_delay > Duration::ZERO {
            std::thread::sleep(self.provisioning_delay);
        }
        let mut st = self.state.lock();
        if Self::take_failure(&mut st, "create_node") {
            return Err(Error::DeviceError("create_node: injected failure".into()));
        }
        let id = st
            .devices
            .keys()
            .filter(|(k, _)| *k == DeviceKind::Node)
            .map(|(_, id)| *id)
            .max()
            .unwrap_or(0)
            + 1;
        let mut cells = Cells::new();
        cells.insert("nodeId".into(), Value::Int(id));
        cells.insert("podId".into(), Value::Int(pod));
        cells.insert("cpuUtil".into(), Value::Float(0.0));
        cells.insert("ingressTraff".into(), Value::Float(0.0));
        st.devices.insert((DeviceKind::Node, id), Device { cells, alive: true });
        Ok(vec![Value::Int(id)])
    }

    fn kill_node(&self, args: &[Value]) -> Result<Vec<Value>> {
        let id = int_arg("kill_node", args, 0)?;
        let mut st = self.state.lock();
        if Self::take_failure(&mut st, "kill_node") {
            return Err(Error::DeviceError("kill_node: injected failure".into()));
        }
        match st.devices.get_mut(&(DeviceKind::Node, id)) {
            Some(d) if d.alive => {
                d.alive = false;
                Ok(vec![Value::Bool(true)])
            }
            Some(_) => Err(Error::DeviceError(format!("kill_node: node {id} already dead"))),
            None => Err(Error::DeviceError(format!("kill_node: unknown node {id}"))),
        }
    }

    fn set_weights(&self, args: &[Value]) -> Result<Vec<Value>> {
        let pod = int_arg("set_weights", args, 0)?;
        let weights = args[1..]
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::DeviceError("set_weights: weights must be numeric".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut st = self.state.lock();
        if Self::take_failure(&mut st, "set_weights") {
            return Err(Error::DeviceError("set_weights: injected failure".into()));
        }
        let n = weights.len() as i64;
        st.lb_weights.insert(pod, weights);
        Ok(vec![Value::Int(n)])
    }
}

/// Even split across `backends` targets.
fn even_weights(cells: &Cells) -> Option<Vec<f64>> {
    let n = cells.get("backends").and_then(Value::as_i64)?;
    let n = usize::try_from(n).ok()?;
    Some(vec![1.0 / n.max(1) as f64; n])
}

impl DeviceClient for SimFleet {
    fn call(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        match name {
            "create_node" => self.create_node(args),
            "kill_node" => self.kill_node(args),
            "set_weights" => self.set_weights(args),
            other => Err(Error::UnknownExternal(other.to_owned())),
        }
    }

    fn apply(&self, cmd: &DeviceCommand) -> Result<()> {
        let mut st = self.state.lock();
        if Self::take_failure(&mut st, "apply_command") {
            return Err(Error::DeviceError("apply_command: injected failure".into()));
        }
        let key = (cmd.device_kind, cmd.device_id);
        match cmd.action {
            DeviceAction::Create | DeviceAction::SetState => match st.devices.get_mut(&key) {
                Some(d) if !d.alive => {
                    return Err(Error::DeviceError(format!(
                        "{:?} {} was killed and cannot be revived",
                        cmd.device_kind, cmd.device_id
                    )))
                }
                Some(d) => d.cells = cmd.payload.clone(),
                None if cmd.action == DeviceAction::Create => {
                    st.devices.insert(
                        key,
                        Device {
                            cells: cmd.payload.clone(),
                            alive: true,
                        },
                    );
                }
                None => return Err(Error::UnknownDevice(format!("{:?} {}", cmd.device_kind, cmd.device_id))),
            },
            DeviceAction::Delete => {
                if let Some(d) = st.devices.get_mut(&key) {
                    d.alive = false;
                }
            }
        }
        if cmd.device_kind == DeviceKind::LoadBalancer && cmd.action != DeviceAction::Delete {
            if let Some(w) = even_weights(&cmd.payload) {
                st.lb_weights.insert(cmd.device_id, w);
            }
        }
        Ok(())
    }

    fn state(&self, kind: DeviceKind, id: i64) -> Result<Cells> {
        let st = self.state.lock();
        let d = st
            .devices
            .get(&(kind, id))
            .ok_or_else(|| Error::UnknownDevice(format!("{kind:?} {id}")))?;
        let mut cells = d.cells.clone();
        cells.insert("alive".into(), Value::Bool(d.alive));
        Ok(cells)
    }
}

/// Wraps a client and accumulates the wall time spent inside it.
pub struct TimedDevices {
    inner: Arc<dyn DeviceClient>,
    spent: Mutex<Duration>,
}

impl TimedDevices {
    pub fn new(inner: Arc<dyn DeviceClient>) -> Self {
        TimedDevices {
            inner,
            spent: Mutex::new(Duration::ZERO),
        }
    }

    pub fn spent(&self) -> Duration {
        *self.spent.lock()
    }

    pub fn reset(&self) -> Duration {
        std::mem::take(&mut *self.spent.lock())
    }

    fn timed<T>(&self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.spent.lock() += start.elapsed();
        out
    }
}

impl DeviceClient for TimedDevices {
    fn call(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        self.timed(|| self.inner.call(name, args))
    }

    fn apply(&self, cmd: &DeviceCommand) -> Result<()> {
        self.timed(|| self.inner.apply(cmd))
    }

    fn state(&self, kind: DeviceKind, id: i64) -> Result<Cells> {
        self.inner.state(kind, id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(50),
            factor: 2,
            max_retries: 3,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry.saturating_sub(1))
    }
}

/// Commands released by committed transactions, awaiting delivery.
#[derive(Default)]
pub struct Outbox {
    queue: Mutex<VecDeque<DeviceCommand>>,
    status: Mutex<BTreeMap<(TableRef, RowId), SyncStatus>>,
    next_id: Mutex<u64>,
    ready: Condvar,
    pub(crate) drain_lock: Mutex<()>,
}

impl Outbox {
    /// Assigns command ids and enqueues, marking each row Pending.
    pub(crate) fn release(&self, commands: Vec<DeviceCommand>) {
        if commands.is_empty() {
            return;
        }
        let mut q = self.queue.lock();
        let mut status = self.status.lock();
        let mut next = self.next_id.lock();
        for mut c in commands {
            *next += 1;
            c.command_id = *next;
            status.insert(
                (c.table.clone(), c.row_id),
                SyncStatus {
                    table: c.table.clone(),
                    row_id: c.row_id,
                    state: SyncState::Pending,
                    attempts: 0,
                    last_error: None,
                },
            );
            q.push_back(c);
        }
        self.ready.notify_all();
    }

    pub(crate) fn pop(&self) -> Option<DeviceCommand> {
        self.queue.lock().pop_front()
    }

    /// Blocks until a command is queued or `timeout` passes.
    pub(crate) fn wait(&self, timeout: Duration) {
        let mut q = self.queue.lock();
        if q.is_empty() {
            self.ready.wait_for(&mut q, timeout);
        }
    }

    pub(crate) fn record(&self, cmd: &DeviceCommand, state: SyncState, attempts: u32, err: Option<String>) {
        self.status.lock().insert(
            (cmd.table.clone(), cmd.row_id),
            SyncStatus {
                table: cmd.table.clone(),
                row_id: cmd.row_id,
                state,
                attempts,
                last_error: err,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pending(&self) -> Vec<DeviceCommand> {
        self.queue.lock().iter().cloned().collect()
    }

    pub fn status(&self, table: &TableRef, row_id: RowId) -> Option<SyncStatus> {
        self.status.lock().get(&(table.clone(), row_id)).cloned()
    }

    pub fn statuses(&self) -> Vec<SyncStatus> {
        self.status.lock().values().cloned().collect()
    }
}

fn values_match(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) if !matches!(a, Value::Text(_)) => (x - y).abs() < 1e-9,
        _ => a == b,
    }
}

/// Checks that every row of every device-backed table matches a live
/// device with the same cells. Returns the list of mismatches.
pub fn convergence_gaps(db: &Database, devices: &dyn DeviceClient) -> Vec<String> {
    let mut gaps = Vec::new();
    for (r, t) in db.tables() {
        let (Some(kind), Some(pk)) = (t.def().device_kind, t.def().primary_key()) else {
            continue;
        };
        if !t.def().device_backed {
            continue;
        }
        for (row_id, cells) in t.rows() {
            let Some(id) = cells.get(&pk.name).and_then(Value::as_i64) else {
                gaps.push(format!("{r} row {row_id}: non-integer device key"));
                continue;
            };
            match devices.state(kind, id) {
                Err(e) => gaps.push(format!("{r} row {row_id}: {e}")),
                Ok(state) => {
                    if state.get("alive") == Some(&Value::Bool(false)) {
                        gaps.push(format!("{r} row {row_id}: device {id} is dead"));
                    }
                    for (col, v) in cells {
                        let dv = state.get(col).unwrap_or(&Value::Null);
                        if !values_match(v, dv) {
                            gaps.push(format!("{r} row {row_id}: {col} is {v} in table, {dv} on device"));
                        }
                    }
                }
            }
        }
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_cmd(id: i64, action: DeviceAction, cpu: f64) -> DeviceCommand {
        let mut payload = Cells::new();
        payload.insert("nodeId".into(), Value::Int(id));
        payload.insert("podId".into(), Value::Int(1));
        payload.insert("cpuUtil".into(), Value::Float(cpu));
        DeviceCommand {
            command_id: 0,
            device_kind: DeviceKind::Node,
            device_id: id,
            action,
            payload,
            table: TableRef::new("compute", "Nodes"),
            row_id: id as u64,
            origin_log_id: 1,
            user: "admin".into(),
        }
    }

    #[test]
    fn create_node_assigns_next_id_after_seed() {
        let fleet = SimFleet::new(Duration::ZERO);
        for id in 1..=3 {
            fleet.apply(&node_cmd(id, DeviceAction::Create, 0.1)).unwrap();
        }
        assert_eq!(
            fleet.call("create_node", &[Value::Int(1)]).unwrap(),
            vec![Value::Int(4)]
        );
        let st = fleet.state(DeviceKind::Node, 4).unwrap();
        assert_eq!(st["alive"], Value::Bool(true));
        assert_eq!(st["podId"], Value::Int(1));
    }

    #[test]
    fn kill_and_unknown_devices() {
        let fleet = SimFleet::new(Duration::ZERO);
        fleet.apply(&node_cmd(1, DeviceAction::Create, 0.1)).unwrap();
        fleet.call("kill_node", &[Value::Int(1)]).unwrap();
        assert_eq!(fleet.state(DeviceKind::Node, 1).unwrap()["alive"], Value::Bool(false));
        assert!(matches!(
            fleet.call("kill_node", &[Value::Int(99)]),
            Err(Error::DeviceError(_))
        ));
        assert!(matches!(
            fleet.state(DeviceKind::Node, 99),
            Err(Error::UnknownDevice(_))
        ));
        assert!(
            fleet.apply(&node_cmd(1, DeviceAction::Create, 0.1)).is_err(),
            "no revival"
        );
        assert!(matches!(fleet.call("reboot", &[]), Err(Error::UnknownExternal(_))));
    }

    #[test]
    fn injected_failures_are_counted_and_cumulative() {
        let fleet = SimFleet::new(Duration::ZERO);
        fleet.inject_failure(FailureRule {
            action: "*".into(),
            count: 0,
        });
        assert_eq!(fleet.pending_failures(), 0);
        fleet.inject_failure(FailureRule {
            action: "create_node".into(),
            count: 1,
        });
        fleet.inject_failure(FailureRule {
            action: "create_node".into(),
            count: 1,
        });
        assert!(fleet.call("create_node", &[Value::Int(1)]).is_err());
        assert!(fleet.call("create_node", &[Value::Int(1)]).is_err());
        assert!(fleet.call("create_node", &[Value::Int(1)]).is_ok());
    }

    #[test]
    fn load_balancer_state_sets_weights() {
        let fleet = SimFleet::new(Duration::ZERO);
        let mut payload = Cells::new();
        payload.insert("podId".into(), Value::Int(1));
        payload.insert("backends".into(), Value::Int(4));
        let cmd = DeviceCommand {
            command_id: 1,
            device_kind: DeviceKind::LoadBalancer,
            device_id: 1,
            action: DeviceAction::Create,
            payload,
            table: TableRef::new("lb", "LoadBalancers"),
            row_id: 1,
            origin_log_id: 1,
            user: "admin".into(),
        };
        fleet.apply(&cmd).unwrap();
        assert_eq!(fleet.lb_weights(1).unwrap(), vec![0.25; 4]);
        fleet
            .call("set_weights", &[Value::Int(1), Value::Float(0.5), Value::Float(0.5)])
            .unwrap();
        assert_eq!(fleet.lb_weights(1).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(50));
        assert_eq!(p.backoff(2), Duration::from_millis(100));
        assert_eq!(p.backoff(3), Duration::from_millis(200));
    }
}
