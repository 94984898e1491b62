//! Hand-built traces with a known primary failure each.

use ramp_core::agent::{
    CommandEvent, ExecutionTrace, MarkerEvent, MarkerKind, ResourceUsage, TraceFragment, TurnRecord,
};
use ramp_core::failure::FailureCategory;
use ramp_core::orchestrator::{Mode, RunRecord, TaskResult};

pub const TURNS_PER_TASK: usize = 10;
pub const TASKS: usize = 6;

pub struct Fixture {
    pub name: String,
    pub trace: ExecutionTrace,
    pub expected: FailureCategory,
    pub expected_task: usize,
}

fn turn(cmd: String) -> TurnRecord {
    TurnRecord {
        commands: vec![CommandEvent {
            command_line: cmd,
            exit_code: 0,
            duration: 0.5,
        }],
        ..TurnRecord::empty(0)
    }
}

/// Six tasks of ten turns each, every turn running a distinct command.
pub fn plain_trace() -> ExecutionTrace {
    let mut trace = ExecutionTrace::new("fixture", "compiler-six");
    for task in 0..TASKS {
        let mut fragment = TraceFragment::new(task);
        fragment.turns = (0..TURNS_PER_TASK)
            .map(|i| turn(format!("t{task}-step{i}")))
            .collect();
        trace.append(fragment).unwrap();
    }
    trace
}

pub fn global_turn(task: usize, offset: usize) -> usize {
    task * TURNS_PER_TASK + offset
}

pub fn mark(trace: &mut ExecutionTrace, kind: MarkerKind, task: usize, offset: usize) {
    let t = global_turn(task, offset);
    trace.turns[t]
        .markers
        .push(MarkerEvent::new(kind, task, format!("{kind:?}")));
}

/// Makes turns `offset..offset + 6` of `task` alternate build/test, which
/// confirms a period-2 loop on the sixth of them.
pub fn make_loop(trace: &mut ExecutionTrace, task: usize, offset: usize) -> usize {
    for i in 0..6 {
        let t = global_turn(task, offset + i);
        trace.turns[t].commands[0].command_line = if i % 2 == 0 {
            "make".into()
        } else {
            "ctest".into()
        };
    }
    global_turn(task, offset + 5)
}

fn fixture(
    name: String,
    trace: ExecutionTrace,
    expected: FailureCategory,
    expected_task: usize,
) -> Fixture {
    Fixture {
        name,
        trace,
        expected,
        expected_task,
    }
}

/// 30 traces: 9 Context, 6 Planning, 5 Reasoning, 5 Tooling & Integration,
/// 5 Infrastructure, including same-turn ties and later distractors.
pub fn corpus() -> Vec<Fixture> {
    use FailureCategory::*;
    use MarkerKind::*;
    let mut out = Vec::new();

    for i in 0..9 {
        let task = 2 + i % 2;
        let mut t = plain_trace();
        mark(&mut t, ContextOverflow, task, i % 5);
        if i % 3 == 0 {
            mark(&mut t, ToolError, task + 1, 2);
        }
        if i % 3 == 1 {
            mark(&mut t, SkipDecision, 4, 0);
        }
        out.push(fixture(format!("context-{i}"), t, Context, task));
    }

    for i in 0..6 {
        let task = 1 + i % 3;
        let mut t = plain_trace();
        if i < 2 {
            // Skip on the turn that confirms a loop: Planning outranks Reasoning.
            let confirm = make_loop(&mut t, task, 0);
            let offset = confirm - global_turn(task, 0);
            mark(&mut t, SkipDecision, task, offset);
        } else {
            mark(&mut t, SkipDecision, task, 3);
            mark(&mut t, SkipDecision, 5, 1);
        }
        out.push(fixture(format!("planning-{i}"), t, Planning, task));
    }

    for i in 0..5 {
        let task = i % 4;
        let mut t = plain_trace();
        make_loop(&mut t, task, i % 3);
        if i == 0 {
            mark(&mut t, FrameworkError, 5, 9);
        }
        out.push(fixture(format!("reasoning-{i}"), t, Reasoning, task));
    }

    for i in 0..5 {
        let task = 1 + i % 4;
        let mut t = plain_trace();
        mark(&mut t, ToolError, task, 4);
        if i < 2 {
            mark(&mut t, ContextOverflow, task, 4);
        }
        out.push(fixture(format!("tooling-{i}"), t, ToolingIntegration, task));
    }

    for i in 0..5 {
        let task = i;
        let mut t = plain_trace();
        mark(&mut t, FrameworkError, task, 7);
        if i < 2 {
            mark(&mut t, ToolError, task, 7);
            mark(&mut t, ContextOverflow, task, 7);
        }
        out.push(fixture(
            format!("infrastructure-{i}"),
            t,
            Infrastructure,
            task,
        ));
    }
    out
}

/// A cascade-mode record around a trace in which the last task failed.
pub fn failed_record(trace: ExecutionTrace) -> RunRecord {
    let results = (0..TASKS)
        .map(|task_id| {
            let score = if task_id + 1 == TASKS { 0.0 } else { 100.0 };
            TaskResult {
                task_id,
                score,
                passed: score >= 60.0,
                resurrected_before_next: false,
                usage: ResourceUsage::default(),
            }
        })
        .collect();
    RunRecord {
        run_id: format!("fixture-{}", trace.turns.len()),
        model_id: trace.model_id.clone(),
        mode: Mode::SerialCascade,
        chain_id: trace.chain_id.clone(),
        weights: vec![0.05, 0.20, 0.20, 0.15, 0.30, 0.10],
        pass_threshold: 60.0,
        results,
        trace,
        trace_file: None,
        usage: ResourceUsage::default(),
        resurrections: Vec::new(),
        metrics: None,
        failure: None,
        published: None,
    }
}
