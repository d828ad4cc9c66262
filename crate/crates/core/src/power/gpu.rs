//! Whole-GPU power from the NVIDIA management CLI, one invocation per sample.
//!
//! The tool cannot attribute power to individual processes; callers must make
//! sure the LLM inference is the only workload on the device.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{PowerError, PowerSource, Scope};

#[derive(Debug, Clone)]
pub struct GpuSource {
    tool: PathBuf,
    index: u32,
}

impl GpuSource {
    /// Checks that the tool runs and that `index` names an installed device.
    pub fn new(tool: &Path, index: u32) -> Result<Self, PowerError> {
        let count = device_count(tool)?;
        if index >= count {
            return Err(PowerError::GpuIndexOutOfRange { index, count });
        }
        Ok(GpuSource { tool: tool.to_path_buf(), index })
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// One `power.draw` reading in microwatts.
    pub fn sample_gpu_power(&self) -> Result<f64, PowerError> {
        let index = self.index.to_string();
        let stdout = run_tool(
            &self.tool,
            &["--query-gpu=power.draw", "--format=csv,noheader,nounits", "-i", &index],
        )?;
        parse_power_draw(&stdout)
    }
}

impl PowerSource for GpuSource {
    fn source_id(&self) -> String {
        format!("nvidia-gpu:{}", self.index)
    }

    fn scope(&self) -> Scope {
        Scope::Device
    }

    fn sample(&mut self, _t_mono: f64) -> Result<Option<f64>, PowerError> {
        self.sample_gpu_power().map(Some)
    }
}

/// Parses the first line of `power.draw` output (watts, no units) into
/// microwatts. Non-numeric sentinels such as `N/A` or `[Not Supported]` are
/// parse failures.
pub fn parse_power_draw(stdout: &str) -> Result<f64, PowerError> {
    let line = stdout
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| PowerError::ParseFailure("empty output".into()))?;
    let watts: f64 = line
        .parse()
        .map_err(|_| PowerError::ParseFailure(format!("`{line}` is not a number")))?;
    if !watts.is_finite() || watts < 0.0 {
        return Err(PowerError::ParseFailure(format!("`{line}` is not a valid power")));
    }
    Ok(watts * 1e6)
}

fn device_count(tool: &Path) -> Result<u32, PowerError> {
    let stdout = run_tool(tool, &["--query-gpu=index", "--format=csv,noheader,nounits"])?;
    let count = stdout.lines().filter(|l| !l.trim().is_empty()).count();
    Ok(count as u32)
}

fn run_tool(tool: &Path, args: &[&str]) -> Result<String, PowerError> {
    let output = Command::new(tool).args(args).output().map_err(|e| match e.kind() {
        ErrorKind::NotFound | ErrorKind::PermissionDenied => {
            PowerError::ToolUnavailable(format!("{}: {e}", tool.display()))
        }
        _ => PowerError::Io(e),
    })?;
    if !output.status.success() {
        return Err(PowerError::ToolUnavailable(format!(
            "{} exited with {}: {}",
            tool.display(),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&output.stdout).into_owned())
}

pub(crate) fn probe(tool: &Path) -> Result<String, PowerError> {
    match device_count(tool)? {
        0 => Err(PowerError::ToolUnavailable("no GPUs reported".into())),
        n => Ok(format!("{n} GPU(s)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn watts_to_microwatts() {
        let uw = parse_power_draw("87.45\n").unwrap();
        assert_eq!(uw, 87.45 * 1e6);
        assert!((uw - 87_450_000.0).abs() < 1e-6);
    }

    #[test]
    fn not_available_sentinel_fails() {
        assert!(matches!(parse_power_draw("N/A\n"), Err(PowerError::ParseFailure(_))));
        assert!(matches!(parse_power_draw("[Not Supported]"), Err(PowerError::ParseFailure(_))));
        assert!(matches!(parse_power_draw(""), Err(PowerError::ParseFailure(_))));
    }

    #[test]
    fn missing_tool_is_unavailable() {
        let err = GpuSource::new(Path::new("/nonexistent/nvidia-smi"), 0).unwrap_err();
        assert!(matches!(err, PowerError::ToolUnavailable(_)));
    }

    #[cfg(unix)]
    fn fake_tool(dir: &Path, power: &str) -> PathBuf {
        use std::os::unix::fs::PermissionsExt;
        let path = dir.join("nvidia-smi");
        let script = format!(
            "#!/bin/sh\ncase \"$1\" in\n  --query-gpu=index) echo 0 ;;\n  --query-gpu=power.draw) echo '{power}' ;;\nesac\n"
        );
        std::fs::write(&path, script).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    }

    #[cfg(unix)]
    #[test]
    fn index_out_of_range_on_single_gpu_host() {
        let dir = tempfile::tempdir().unwrap();
        let tool = fake_tool(dir.path(), "87.45");
        let err = GpuSource::new(&tool, 7).unwrap_err();
        assert!(matches!(err, PowerError::GpuIndexOutOfRange { index: 7, count: 1 }));
    }

    #[cfg(unix)]
    #[test]
    fn polls_fake_tool() {
        let dir = tempfile::tempdir().unwrap();
        let tool = fake_tool(dir.path(), "87.45");
        let mut src = GpuSource::new(&tool, 0).unwrap();
        assert_eq!(src.sample(0.0).unwrap(), Some(87.45 * 1e6));
        assert_eq!(src.scope(), Scope::Device);
        assert!(probe(&tool).is_ok());

        let na = fake_tool(dir.path(), "N/A");
        let mut src = GpuSource::new(&na, 0).unwrap();
        assert!(matches!(src.sample(0.0), Err(PowerError::ParseFailure(_))));
    }
}
