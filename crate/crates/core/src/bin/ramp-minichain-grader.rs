//! Grader for the bundled mini-chain workload.
//!
//! Usage: `ramp-minichain-grader --task <id> --workspace <root>`. Prints a
//! short log followed by `SCORE: <0..100>` on the final line.

use std::path::PathBuf;
use std::process::ExitCode;

use ramp_core::minichain::{grade_workspace, ARTIFACT_KEYS};

fn parse_args() -> Result<(usize, PathBuf), String> {
    let mut task = None;
    let mut workspace = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--task" => {
                let value = args.next().ok_or("--task needs a value")?;
                task = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| format!("bad task id: {e}"))?,
                );
            }
            "--workspace" => {
                workspace = Some(PathBuf::from(
                    args.next().ok_or("--workspace needs a value")?,
                ));
            }
            other => return Err(format!("unexpected argument {other}")),
        }
    }
    Ok((
        task.ok_or("missing --task")?,
        workspace.ok_or("missing --workspace")?,
    ))
}

fn main() -> ExitCode {
    let (task, workspace) = match parse_args() {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("ramp-minichain-grader: {e}");
            return ExitCode::from(2);
        }
    };
    match grade_workspace(task, &workspace) {
        Ok(grade) => {
            println!("stage {task} ({})", ARTIFACT_KEYS[task]);
            println!("{} of {} lines match", grade.matched, grade.expected);
            println!("SCORE: {}", grade.score);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ramp-minichain-grader: {e}");
            ExitCode::from(1)
        }
    }
}
