use std::io::Write;
use std::path::Path;
use std::time::Duration;

use super::{Program, SyntheticTask};
use crate::testbed::Directive;

/// Task definition file inside each task's data directory.
pub const TASK_FILE: &str = "task.json";

const MIB: usize = 1024 * 1024;
const PAGE: usize = 4096;

fn load(artifact: &Path, data_dir: &Path) -> Result<(SyntheticTask, Program, Vec<f64>), String> {
    let raw = std::fs::read_to_string(data_dir.join(TASK_FILE))
        .map_err(|e| format!("cannot read task definition: {e}"))?;
    let task: SyntheticTask = serde_json::from_str(&raw).map_err(|e| format!("bad task definition: {e}"))?;
    let source = std::fs::read_to_string(artifact).map_err(|e| format!("cannot read artifact: {e}"))?;
    let program = Program::parse(&source)?;
    let params = task.decode_program(&program)?;
    Ok((task, program, params))
}

/// Entry point of the testbed harness binary: `harness <artifact> <data dir>`.
/// Returns the process exit status.
pub fn harness_main(args: &[String], mode: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let [artifact, data_dir] = args else {
        let _ = writeln!(err, "usage: phylo-harness <artifact> <data dir>");
        return 64;
    };
    let (task, program, params) = match load(Path::new(artifact), Path::new(data_dir)) {
        Ok(loaded) => loaded,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    if mode == "dry-run" {
        return 0;
    }

    let mut held: Vec<Vec<u8>> = Vec::new();
    let mut trailers = Vec::new();
    for directive in &program.directives {
        match directive {
            Directive::Sleep(secs) => std::thread::sleep(Duration::from_secs_f64(*secs)),
            Directive::Alloc(mb) => {
                let mut block = vec![0u8; *mb as usize * MIB];
                for i in (0..block.len()).step_by(PAGE) {
                    block[i] = 1;
                }
                held.push(block);
            }
            Directive::Emit(text) => {
                let _ = writeln!(out, "{text}");
            }
            Directive::Exit(code) => {
                let _ = out.flush();
                return *code;
            }
            Directive::Trailer(text) => trailers.push(text.as_str()),
        }
    }
    let _ = writeln!(out, "SCORE {}", task.score(&params));
    for t in trailers {
        let _ = writeln!(out, "{t}");
    }
    let _ = out.flush();
    drop(held);
    0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{builtin_task, QUADRATIC_1D};

    fn run(code: &str, mode: &str) -> (i32, String, String) {
        let dir = tempfile::tempdir().unwrap();
        let task = builtin_task(QUADRATIC_1D).unwrap();
        let data = task.write_data(dir.path()).unwrap();
        let artifact = dir.path().join("candidate.prog");
        std::fs::write(&artifact, code).unwrap();
        let args = [artifact.display().to_string(), data.display().to_string()];
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let status = harness_main(&args, mode, &mut out, &mut err);
        (status, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn prints_closed_form_score() {
        let (status, out, _) = run("task quadratic-1d\nparam x 0\n", "full");
        assert_eq!(status, 0);
        assert_eq!(out, "SCORE 1\n");
    }

    #[test]
    fn dry_run_skips_directives() {
        let (status, out, _) = run("task quadratic-1d\nparam x 0\nexit 9\n", "dry-run");
        assert_eq!((status, out.as_str()), (0, ""));
        let (status, _, _) = run("task quadratic-1d\nparam x 0\nexit 9\n", "full");
        assert_eq!(status, 9);
    }

    #[test]
    fn malformed_artifacts_fail_before_scoring() {
        let (status, out, err) = run("task quadratic-1d\nparam x nope\n", "dry-run");
        assert_eq!(status, 2);
        assert!(out.is_empty());
        assert!(err.contains("line 2"));
    }

    #[test]
    fn trailers_follow_the_score() {
        let (_, out, _) = run("task quadratic-1d\nparam x 3\nemit warming\ntrailer done\n", "full");
        assert_eq!(out, "warming\nSCORE 10\ndone\n");
    }
}
