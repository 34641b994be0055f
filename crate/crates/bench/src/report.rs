// SPDX-License-Identifier: Apache-2.0

//! Latency breakdown as CSV plus a plain-text comparison with the
//! published reference numbers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::harness::{BenchResult, LoadReport, ScenarioReport, SetupReport};

/// Reference figures, used as upper bounds or targets.
pub mod reference {
    use std::time::Duration;

    pub const SETUP: Duration = Duration::from_millis(350);
    pub const EX1_TOTAL: Duration = Duration::from_millis(1800);
    pub const EX1_KERNEL: Duration = Duration::from_millis(27);
    pub const EX2_TOTAL: Duration = Duration::from_millis(1900);
    pub const EX2_KERNEL: Duration = Duration::from_millis(45);
    pub const LOAD: Duration = Duration::from_millis(3200);
    /// Relaxed kernel bound used for pass/fail, since hardware differs.
    pub const KERNEL_BOUND: Duration = Duration::from_millis(100);
    /// Allowed relative deviation of the device share from the
    /// configured provisioning delay.
    pub const DEVICE_SPLIT_TOLERANCE: f64 = 0.20;
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub provisioning_delay: Duration,
    pub setup: Option<SetupReport>,
    pub ex1: Option<ScenarioReport>,
    pub ex2: Option<ScenarioReport>,
    pub load: Option<LoadReport>,
}

/// One bound evaluated against a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub measured: Duration,
    pub limit: String,
    pub ok: bool,
}

impl BenchReport {
    pub fn new(provisioning_delay: Duration) -> Self {
        BenchReport {
            provisioning_delay,
            ..Default::default()
        }
    }

    /// `(phase, duration)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, Duration)> {
        let mut rows = Vec::new();
        if let Some(s) = &self.setup {
            rows.push(("setup".to_owned(), s.latency));
        }
        for r in [&self.ex1, &self.ex2].into_iter().flatten() {
            rows.push((format!("{}_e2e", r.name), r.e2e));
            rows.push((format!("{}_kernel", r.name), r.kernel));
            rows.push((format!("{}_device", r.name), r.device));
        }
        if let Some(l) = &self.load {
            rows.push(("load".to_owned(), l.latency));
        }
        rows
    }

    /// Device share of a run: e2e minus kernel time.
    pub fn device_share(r: &ScenarioReport) -> Duration {
        r.e2e.saturating_sub(r.kernel)
    }

    pub fn device_split_ok(&self, r: &ScenarioReport) -> bool {
        let want = self.provisioning_delay.as_secs_f64();
        let got = Self::device_share(r).as_secs_f64();
        (got - want).abs() <= reference::DEVICE_SPLIT_TOLERANCE * want
    }

    pub fn checks(&self) -> Vec<BoundCheck> {
        let mut out = Vec::new();
        let under = |name: &str, measured: Duration, limit: Duration| BoundCheck {
            name: name.to_owned(),
            measured,
            limit: format!("< {} ms", limit.as_millis()),
            ok: measured < limit,
        };
        if let Some(s) = &self.setup {
            out.push(under("setup", s.latency, reference::SETUP));
        }
        for r in [&self.ex1, &self.ex2].into_iter().flatten() {
            out.push(under(&format!("{}_kernel", r.name), r.kernel, reference::KERNEL_BOUND));
            out.push(BoundCheck {
                name: format!("{}_device_share", r.name),
                measured: Self::device_share(r),
                limit: format!(
                    "{} ms +/- {:.0}%",
                    self.provisioning_delay.as_millis(),
                    reference::DEVICE_SPLIT_TOLERANCE * 100.0
                ),
                ok: self.device_split_ok(r),
            });
        }
        if let Some(l) = &self.load {
            out.push(under("load", l.latency, reference::LOAD));
        }
        out
    }

    pub fn all_ok(&self) -> bool {
        self.checks().iter().all(|c| c.ok)
    }

    pub fn csv(&self) -> BenchResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["phase", "duration_us"])?;
        for (phase, d) in self.rows() {
            w.write_record([phase, d.as_micros().to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn summary(&self) -> String {
        let ms = |d: Duration| format!("{:.3} ms", d.as_secs_f64() * 1e3);
        let mut s = String::new();
        let _ = writeln!(s, "dbnet bench report");
        let _ = writeln!(
            s,
            "provisioning delay (simulated device): {}",
            ms(self.provisioning_delay)
        );
        let _ = writeln!(
            s,
            "thresholds are synthetic: ingress 300, error rate 0.5, latency 250 ms"
        );
        if let Some(st) = &self.setup {
            let c = st.counts;
            let _ = writeln!(
                s,
                "setup: {} for {} schemas, {} tables, {} procedures, {} triggers (reference 350 ms)",
                ms(st.latency),
                c.schemas,
                c.tables,
                c.procedures,
                c.triggers
            );
        }
        for (r, total, kernel) in [
            (&self.ex1, reference::EX1_TOTAL, reference::EX1_KERNEL),
            (&self.ex2, reference::EX2_TOTAL, reference::EX2_KERNEL),
        ] {
            if let Some(r) = r {
                let _ = writeln!(
                    s,
                    "{}: e2e {}, kernel {}, device {} (reference {} total, {} kernel); chain {}",
                    r.name,
                    ms(r.e2e),
                    ms(r.kernel),
                    ms(r.device),
                    ms(total),
                    ms(kernel),
                    r.chain.join(" <- ")
                );
            }
        }
        if let Some(l) = &self.load {
            let _ = writeln!(
                s,
                "load: {} clients x {} spans, {} requests, {} stored in {} (reference 3200 ms)",
                l.clients,
                l.spans_per_client,
                l.requests,
                l.spans_stored,
                ms(l.latency)
            );
        }
        for c in self.checks() {
            let flag = if c.ok { "ok" } else { "VIOLATION" };
            let _ = writeln!(s, "[{flag}] {}: {} (bound {})", c.name, ms(c.measured), c.limit);
        }
        s
    }

    /// Writes the CSV to `out` and the summary next to it with a `.txt`
    /// extension. Returns the summary path.
    pub fn write(&self, out: &Path) -> BenchResult<PathBuf> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, self.csv()?)?;
        let summary = out.with_extension("txt");
        std::fs::write(&summary, self.summary())?;
        Ok(summary)
    }
}
