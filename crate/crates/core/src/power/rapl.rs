//! Per-process power estimated from RAPL package counters.
//!
//! Package energy is read from `<powercap>/intel-rapl:N/energy_uj` (summed over
//! packages, sub-zones excluded). The process share is its `utime + stime`
//! delta from `/proc/<pid>/stat` over the aggregate CPU-time delta from
//! `/proc/stat`. Estimated power is
//!
//! ```text
//! package_delta_uJ / window_s * process_ticks_delta / total_ticks_delta
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use regex::Regex;

use super::{PowerError, PowerSource, Scope};

#[derive(Debug, Clone)]
pub struct ProcessSelector {
    regex: Regex,
}

impl ProcessSelector {
    pub fn new(pattern: &str) -> Result<Self, PowerError> {
        Ok(ProcessSelector { regex: Regex::new(pattern)? })
    }

    pub fn pattern(&self) -> &str {
        self.regex.as_str()
    }

    pub fn matches(&self, process_name: &str) -> bool {
        self.regex.is_match(process_name)
    }
}

impl Default for ProcessSelector {
    fn default() -> Self {
        ProcessSelector::new(super::DEFAULT_PROCESS_PATTERN).expect("default pattern compiles")
    }
}

/// Estimated process power in microwatts, clamped to `>= 0` with the CPU
/// share capped at 1.
pub fn attribute_power(package_delta_uj: f64, window_s: f64, process_ticks: f64, total_ticks: f64) -> f64 {
    if window_s <= 0.0 || total_ticks <= 0.0 {
        return 0.0;
    }
    let share = (process_ticks / total_ticks).clamp(0.0, 1.0);
    (package_delta_uj / window_s * share).max(0.0)
}

/// CPU-time shares for a set of processes over one window. If the per-process
/// deltas add up to more than the aggregate delta (non-atomic reads), the
/// shares are scaled down so they sum to at most 1.
pub fn cpu_shares(process_ticks: &[u64], total_ticks: u64) -> Vec<f64> {
    if total_ticks == 0 {
        return vec![0.0; process_ticks.len()];
    }
    let sum: u64 = process_ticks.iter().sum();
    let denom = total_ticks.max(sum) as f64;
    process_ticks.iter().map(|&t| t as f64 / denom).collect()
}

/// Sum of `energy_uj` over top-level RAPL package zones.
pub fn read_package_energy_uj(powercap_root: &Path) -> Result<u64, PowerError> {
    let entries = fs::read_dir(powercap_root)
        .map_err(|e| PowerError::CounterUnavailable(format!("{}: {e}", powercap_root.display())))?;
    let mut zones: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("intel-rapl:"))
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        })
        .collect();
    zones.sort();
    if zones.is_empty() {
        return Err(PowerError::CounterUnavailable(format!(
            "no intel-rapl package zones under {}",
            powercap_root.display()
        )));
    }
    let mut total = 0u64;
    for zone in zones {
        let path = zone.join("energy_uj");
        let text = fs::read_to_string(&path)
            .map_err(|e| PowerError::CounterUnavailable(format!("{}: {e}", path.display())))?;
        let value: u64 = text
            .trim()
            .parse()
            .map_err(|_| PowerError::CounterUnavailable(format!("{}: not an integer", path.display())))?;
        total = total.saturating_add(value);
    }
    Ok(total)
}

/// Aggregate CPU time in clock ticks from the first line of `/proc/stat`.
///
/// Sums user, nice, system, idle, iowait, irq, softirq and steal. Guest time
/// is already included in user time and is left out.
pub fn read_total_cpu_ticks(proc_root: &Path) -> Result<u64, PowerError> {
    let path = proc_root.join("stat");
    let text = fs::read_to_string(&path)
        .map_err(|e| PowerError::CounterUnavailable(format!("{}: {e}", path.display())))?;
    parse_proc_stat_total(&text)
        .ok_or_else(|| PowerError::CounterUnavailable(format!("{}: unexpected format", path.display())))
}

pub fn parse_proc_stat_total(text: &str) -> Option<u64> {
    let line = text.lines().find(|l| l.starts_with("cpu "))?;
    let fields: Vec<u64> = line
        .split_whitespace()
        .skip(1)
        .take(8)
        .map(|f| f.parse().ok())
        .collect::<Option<_>>()?;
    (fields.len() >= 4).then(|| fields.iter().sum())
}

/// `utime + stime` from the contents of `/proc/<pid>/stat`.
pub fn parse_pid_stat_ticks(text: &str) -> Option<u64> {
    // comm may contain spaces and parentheses; fields resume after the last ')'.
    let rest = &text[text.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    // rest starts at field 3 (state); utime and stime are fields 14 and 15.
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

pub fn read_pid_ticks(proc_root: &Path, pid: u32) -> Option<u64> {
    let text = fs::read_to_string(proc_root.join(pid.to_string()).join("stat")).ok()?;
    parse_pid_stat_ticks(&text)
}

/// All pids under `proc_root` whose `comm` matches `selector`.
pub fn matching_pids(proc_root: &Path, selector: &ProcessSelector) -> Vec<u32> {
    all_pids(proc_root)
        .into_iter()
        .filter(|&pid| {
            fs::read_to_string(proc_root.join(pid.to_string()).join("comm"))
                .is_ok_and(|comm| selector.matches(comm.trim_end_matches('\n')))
        })
        .collect()
}

pub fn all_pids(proc_root: &Path) -> Vec<u32> {
    let mut pids: Vec<u32> = fs::read_dir(proc_root)
        .map(|entries| {
            entries
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().and_then(|n| n.parse().ok()))
                .collect()
        })
        .unwrap_or_default();
    pids.sort_unstable();
    pids
}

pub(crate) fn probe(powercap_root: &Path, proc_root: &Path) -> Result<String, PowerError> {
    let energy = read_package_energy_uj(powercap_root)?;
    read_total_cpu_ticks(proc_root)?;
    Ok(format!("package counter at {energy} uJ"))
}

#[derive(Debug, Clone)]
enum Target {
    Selector(ProcessSelector),
    Pid(u32),
}

#[derive(Debug, Clone)]
struct Snapshot {
    at: Instant,
    energy_uj: u64,
    total_ticks: u64,
    process_ticks: BTreeMap<u32, u64>,
}

/// Process-scope RAPL source. The first poll primes the counters and reports
/// nothing; each later poll reports the mean power over the elapsed window.
#[derive(Debug, Clone)]
pub struct RaplProcessSource {
    target: Target,
    powercap_root: PathBuf,
    proc_root: PathBuf,
    previous: Option<Snapshot>,
}

impl RaplProcessSource {
    pub fn new(selector: ProcessSelector, powercap_root: &Path, proc_root: &Path) -> Result<Self, PowerError> {
        read_package_energy_uj(powercap_root)?;
        Ok(RaplProcessSource {
            target: Target::Selector(selector),
            powercap_root: powercap_root.to_path_buf(),
            proc_root: proc_root.to_path_buf(),
            previous: None,
        })
    }

    /// Source tracking one pid, used for the sampler's own overhead.
    pub fn for_pid(pid: u32, powercap_root: &Path, proc_root: &Path) -> Result<Self, PowerError> {
        read_package_energy_uj(powercap_root)?;
        Ok(RaplProcessSource {
            target: Target::Pid(pid),
            powercap_root: powercap_root.to_path_buf(),
            proc_root: proc_root.to_path_buf(),
            previous: None,
        })
    }

    /// The monitor-self companion of this source: same counters, own pid.
    pub fn monitor_self(&self) -> Result<Self, PowerError> {
        Self::for_pid(std::process::id(), &self.powercap_root, &self.proc_root)
    }

    fn snapshot(&self) -> Result<Snapshot, PowerError> {
        let pids = match &self.target {
            Target::Selector(sel) => {
                let pids = matching_pids(&self.proc_root, sel);
                if pids.is_empty() {
                    return Err(PowerError::NoMatchingProcess(sel.pattern().to_string()));
                }
                pids
            }
            Target::Pid(pid) => vec![*pid],
        };
        let process_ticks: BTreeMap<u32, u64> = pids
            .into_iter()
            .filter_map(|pid| read_pid_ticks(&self.proc_root, pid).map(|t| (pid, t)))
            .collect();
        if process_ticks.is_empty() {
            return Err(PowerError::NoMatchingProcess(self.label()));
        }
        Ok(Snapshot {
            at: Instant::now(),
            energy_uj: read_package_energy_uj(&self.powercap_root)?,
            total_ticks: read_total_cpu_ticks(&self.proc_root)?,
            process_ticks,
        })
    }

    fn label(&self) -> String {
        match &self.target {
            Target::Selector(sel) => sel.pattern().to_string(),
            Target::Pid(pid) => format!("pid {pid}"),
        }
    }

    /// Power estimate between two snapshots.
    fn estimate(previous: &Snapshot, current: &Snapshot) -> Result<f64, PowerError> {
        if current.energy_uj < previous.energy_uj {
            return Err(PowerError::CounterWrap {
                previous: previous.energy_uj,
                current: current.energy_uj,
            });
        }
        let process_delta: u64 = current
            .process_ticks
            .iter()
            .map(|(pid, &now)| now.saturating_sub(previous.process_ticks.get(pid).copied().unwrap_or(0)))
            .sum();
        let total_delta = current.total_ticks.saturating_sub(previous.total_ticks);
        let window_s = current.at.duration_since(previous.at).as_secs_f64();
        Ok(attribute_power(
            (current.energy_uj - previous.energy_uj) as f64,
            window_s,
            process_delta as f64,
            total_delta as f64,
        ))
    }

    /// Polls once and returns the estimate since the previous poll, or `None`
    /// on the first call.
    pub fn sample_process_power(&mut self) -> Result<Option<f64>, PowerError> {
        let current = self.snapshot()?;
        let result = match &self.previous {
            Some(previous) => Self::estimate(previous, &current).map(Some),
            None => Ok(None),
        };
        // A wrapped reading still becomes the new baseline.
        self.previous = Some(current);
        result
    }
}

impl PowerSource for RaplProcessSource {
    fn source_id(&self) -> String {
        match &self.target {
            Target::Selector(sel) => format!("rapl-process:{}", sel.pattern()),
            Target::Pid(pid) => format!("monitor-self:{pid}"),
        }
    }

    fn scope(&self) -> Scope {
        match self.target {
            Target::Selector(_) => Scope::Process,
            Target::Pid(_) => Scope::MonitorSelf,
        }
    }

    fn sample(&mut self, _t_mono: f64) -> Result<Option<f64>, PowerError> {
        self.sample_process_power()
    }

    fn reset(&mut self) {
        self.previous = None;
    }

    fn monitor_companion(&self) -> Option<Result<Box<dyn PowerSource>, PowerError>> {
        match self.target {
            Target::Selector(_) => Some(self.monitor_self().map(|s| Box::new(s) as Box<dyn PowerSource>)),
            Target::Pid(_) => None,
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fake::FakeHost;
    use super::*;

    #[test]
    fn attribution_formula_hand_computed() {
        // 2 000 000 uJ over 1 s at a 50 % CPU share.
        assert_eq!(attribute_power(2_000_000.0, 1.0, 50.0, 100.0), 1_000_000.0);
    }

    #[test]
    fn zero_cpu_share_gives_zero_power() {
        assert_eq!(attribute_power(2_000_000.0, 1.0, 0.0, 100.0), 0.0);
    }

    #[test]
    fn shares_never_sum_above_one() {
        let shares = cpu_shares(&[60, 50, 10], 100);
        assert!(shares.iter().sum::<f64>() <= 1.0 + 1e-12);
        let shares = cpu_shares(&[20, 30], 100);
        assert_eq!(shares, vec![0.2, 0.3]);
    }

    #[test]
    fn pid_stat_with_spaces_and_parens_in_comm() {
        let stat = "4242 (my (weird) proc) R 1 1 1 0 -1 0 0 0 0 0 120 30 0 0 20 0 4 0 1 0 0";
        assert_eq!(parse_pid_stat_ticks(stat), Some(150));
    }

    #[test]
    fn proc_stat_total_skips_guest_columns() {
        let text = "cpu  10 20 30 40 50 60 70 80 90 100\ncpu0 1 1 1 1 1 1 1 1 1 1\n";
        assert_eq!(parse_proc_stat_total(text), Some(360));
    }

    #[test]
    fn sub_zones_are_not_summed() {
        let host = FakeHost::new();
        host.set_energy(1234);
        assert_eq!(read_package_energy_uj(&host.powercap()).unwrap(), 1234);
    }

    #[test]
    fn no_matching_process_is_an_error() {
        let host = FakeHost::new();
        host.set_process(10, "bash", 5);
        let sel = ProcessSelector::new("no_such_process_xyz").unwrap();
        let mut src = RaplProcessSource::new(sel, &host.powercap(), &host.proc_root()).unwrap();
        assert!(matches!(src.sample_process_power(), Err(PowerError::NoMatchingProcess(_))));
    }

    #[test]
    fn missing_counters_are_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let err = RaplProcessSource::new(ProcessSelector::default(), dir.path(), dir.path()).unwrap_err();
        assert!(matches!(err, PowerError::CounterUnavailable(_)));
    }

    #[test]
    fn fake_host_end_to_end_attribution() {
        let host = FakeHost::new();
        host.set_energy(5_000_000);
        host.set_total(1_000);
        host.set_process(77, "ollama", 100);
        host.set_process(78, "ollama_llama_se", 40);
        host.set_process(90, "bash", 500);
        let mut src =
            RaplProcessSource::new(ProcessSelector::default(), &host.powercap(), &host.proc_root()).unwrap();
        assert_eq!(src.sample_process_power().unwrap(), None);
        std::thread::sleep(std::time::Duration::from_millis(20));
        host.set_energy(5_000_000 + 1_000_000);
        host.set_total(1_000 + 200);
        host.set_process(77, "ollama", 100 + 40);
        host.set_process(78, "ollama_llama_se", 40 + 10);
        let power = src.sample_process_power().unwrap().unwrap();
        // share = 50 / 200 and the window is at least 20 ms.
        assert!(power > 0.0);
        assert!(power <= 1_000_000.0 / 0.020 * 0.25 + 1e-6);
    }

    #[test]
    fn counter_decrease_is_a_wrap_and_rebaselines() {
        let host = FakeHost::new();
        host.set_energy(9_000);
        host.set_process(5, "ollama", 0);
        let mut src =
            RaplProcessSource::new(ProcessSelector::default(), &host.powercap(), &host.proc_root()).unwrap();
        src.sample_process_power().unwrap();
        host.set_energy(100);
        assert!(matches!(src.sample_process_power(), Err(PowerError::CounterWrap { .. })));
        host.set_energy(200);
        assert!(src.sample_process_power().unwrap().is_some());
    }
}
