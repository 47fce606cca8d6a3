//! Child-process simulator bridge.
//!
//! Each call spawns the plugin executable, writes one JSON line
//! `{"x": [..], "seed": n}` to its stdin and reads one JSON line
//! `{"t": [..], "outputs": {"name": [..], ..}}` from its stdout.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Provenance, Simulator, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRequest {
    pub x: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginResponse {
    pub t: Vec<i64>,
    pub outputs: BTreeMap<String, Vec<f64>>,
}

impl PluginResponse {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            t: traj.times.clone(),
            outputs: traj.outputs.clone(),
        }
    }
}

/// Location and limits of an external simulator executable.
#[derive(Debug, Clone)]
pub struct PluginHandle {
    pub path: PathBuf,
    pub timeout: Duration,
}

impl PluginHandle {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            timeout: Duration::from_secs(300),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Runs one plugin invocation and parses its response into a trajectory.
pub fn external_simulate(plugin: &PluginHandle, x: &[f64], seed: u64) -> Result<Trajectory> {
    let request = serde_json::to_string(&PluginRequest {
        x: x.to_vec(),
        seed,
    })
    .map_err(|e| Error::simulator(format!("encoding request: {e}"), ""))?;

    let mut child = Command::new(&plugin.path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| Error::simulator(format!("spawning {}: {e}", plugin.path.display()), ""))?;

    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // A plugin that exits without reading its input yields EPIPE here;
        // the exit status below is the better diagnostic.
        let _ = writeln!(stdin, "{request}");
    }

    let mut stdout = child.stdout.take().expect("stdout is piped");
    let reader = thread::spawn(move || {
        let mut buf = String::new();
        stdout.read_to_string(&mut buf).map(|_| buf)
    });

    let deadline = Instant::now() + plugin.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::simulator(
                    format!("plugin timed out after {:?}", plugin.timeout),
                    "",
                ));
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(Error::simulator(format!("waiting on plugin: {e}"), "")),
        }
    };

    let raw = reader
        .join()
        .map_err(|_| Error::simulator("plugin reader thread panicked", ""))?
        .map_err(|e| Error::simulator(format!("reading plugin output: {e}"), ""))?;

    if !status.success() {
        return Err(Error::simulator(format!("plugin exited with {status}"), raw));
    }
    parse_response(&raw, x, seed)
}

fn parse_response(raw: &str, x: &[f64], seed: u64) -> Result<Trajectory> {
    let line = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let response: PluginResponse = serde_json::from_str(line)
        .map_err(|e| Error::simulator(format!("malformed plugin response: {e}"), raw))?;
    for (name, series) in &response.outputs {
        if series.len() != response.t.len() {
            return Err(Error::simulator(
                format!(
                    "series {name:?} has {} values for {} time points",
                    series.len(),
                    response.t.len()
                ),
                raw,
            ));
        }
    }
    Ok(Trajectory {
        times: response.t,
        outputs: response.outputs,
        provenance: Some(Provenance {
            params: x.to_vec(),
            seed,
        }),
    })
}

/// [`Simulator`] backed by an external executable.
#[derive(Debug, Clone)]
pub struct PluginSimulator {
    pub handle: PluginHandle,
    pub dim: usize,
}

impl PluginSimulator {
    pub fn new(handle: PluginHandle, dim: usize) -> Self {
        Self { handle, dim }
    }
}

impl Simulator for PluginSimulator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn simulate(&self, params: &[f64], seed: u64) -> Result<Trajectory> {
        external_simulate(&self.handle, params, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn script(dir: &tempfile::TempDir, body: &str) -> PluginHandle {
        let path = dir.path().join("plugin.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        PluginHandle::new(path).with_timeout(Duration::from_secs(10))
    }

    #[test]
    fn parses_constant_series() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = script(
            &dir,
            r#"read line; echo '{"t":[0,1,2],"outputs":{"I":[1.0,2.5,3.0]}}'"#,
        );
        let traj = external_simulate(&plugin, &[0.3, 0.1], 9).unwrap();
        assert_eq!(traj.times, vec![0, 1, 2]);
        assert_eq!(traj.series("I").unwrap(), &[1.0, 2.5, 3.0]);
        assert_eq!(traj.provenance.unwrap().seed, 9);
    }

    #[test]
    fn non_numeric_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = script(&dir, r#"read line; echo '{"t":[0],"outputs":{"I":["abc"]}}'"#);
        match external_simulate(&plugin, &[0.3], 1) {
            Err(Error::Simulator { payload, .. }) => assert!(payload.contains("abc")),
            other => panic!("expected simulator error, got {other:?}"),
        }
    }

    #[test]
    fn nonzero_exit_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = script(&dir, "read line; echo partial; exit 3");
        match external_simulate(&plugin, &[0.3], 1) {
            Err(Error::Simulator { payload, .. }) => assert!(payload.contains("partial")),
            other => panic!("expected simulator error, got {other:?}"),
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = script(&dir, r#"read line; echo '{"t":[0,1],"outputs":{"I":[1]}}'"#);
        assert!(external_simulate(&plugin, &[0.3], 1).is_err());
    }

    #[test]
    fn hung_plugin_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let plugin = script(&dir, "sleep 5").with_timeout(Duration::from_millis(100));
        let err = external_simulate(&plugin, &[0.3], 1).unwrap_err();
        assert!(err.to_string().contains("timed out"));
    }
}
