use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Settings for running the harness inside a container image instead of a
/// bare child process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerConfig {
    pub image: String,
    /// Container client binary, `docker` unless overridden (e.g. `podman`).
    #[serde(default = "default_runtime")]
    pub runtime: PathBuf,
    /// Harness path as seen inside the image.
    pub harness_in_image: String,
    /// Extra read-only bind mounts, `host:container`.
    #[serde(default)]
    pub mounts: Vec<String>,
    /// Host environment variables passed through to the container.
    #[serde(default)]
    pub env_allowlist: Vec<String>,
}

fn default_runtime() -> PathBuf {
    PathBuf::from("docker")
}

pub(crate) const WORK_MOUNT: &str = "/work";
pub(crate) const DATA_MOUNT: &str = "/data";

impl ContainerConfig {
    /// Arguments for the container client that run the harness against the
    /// artifact in `scratch` and the task data in `data_dir`.
    pub fn run_args(
        &self,
        scratch: &Path,
        data_dir: &Path,
        artifact_name: &str,
        memory_bytes: u64,
        mode_env: &str,
        host_env: impl Fn(&str) -> Option<String>,
    ) -> Vec<OsString> {
        let mut args: Vec<OsString> = vec![
            "run".into(),
            "--rm".into(),
            "--network".into(),
            "none".into(),
            "--memory".into(),
            format!("{memory_bytes}b").into(),
            "--memory-swap".into(),
            format!("{memory_bytes}b").into(),
            "-v".into(),
            format!("{}:{WORK_MOUNT}", scratch.display()).into(),
            "-v".into(),
            format!("{}:{DATA_MOUNT}:ro", data_dir.display()).into(),
        ];
        for mount in &self.mounts {
            args.push("-v".into());
            args.push(format!("{mount}:ro").into());
        }
        args.push("-e".into());
        args.push(mode_env.into());
        for name in &self.env_allowlist {
            if let Some(value) = host_env(name) {
                args.push("-e".into());
                args.push(format!("{name}={value}").into());
            }
        }
        args.push(self.image.clone().into());
        args.push(self.harness_in_image.clone().into());
        args.push(format!("{WORK_MOUNT}/{artifact_name}").into());
        args.push(DATA_MOUNT.into());
        args
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_args_follow_harness_protocol() {
        let cfg = ContainerConfig {
            image: "bench:latest".into(),
            runtime: default_runtime(),
            harness_in_image: "/opt/harness".into(),
            mounts: vec!["/cache:/cache".into()],
            env_allowlist: vec!["CUDA_VISIBLE_DEVICES".into(), "UNSET".into()],
        };
        let args = cfg.run_args(
            Path::new("/tmp/s"),
            Path::new("/tasks/q"),
            "candidate",
            1 << 20,
            "PHYLO_EVAL_MODE=full",
            |k| (k == "CUDA_VISIBLE_DEVICES").then(|| "0".to_string()),
        );
        let args: Vec<String> = args.into_iter().map(|a| a.into_string().unwrap()).collect();
        let tail = &args[args.len() - 4..];
        assert_eq!(tail, ["bench:latest", "/opt/harness", "/work/candidate", "/data"]);
        assert!(args.windows(2).any(|w| w == ["--memory", "1048576b"]));
        assert!(args.windows(2).any(|w| w == ["-v", "/tasks/q:/data:ro"]));
        assert!(args.windows(2).any(|w| w == ["-e", "CUDA_VISIBLE_DEVICES=0"]));
        assert!(!args.iter().any(|a| a.starts_with("UNSET")));
    }
}
