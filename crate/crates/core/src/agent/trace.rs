use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    SkipDecision,
    ContextOverflow,
    ToolError,
    FrameworkError,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerEvent {
    pub kind: MarkerKind,
    pub task_id: usize,
    pub detail: String,
}

impl MarkerEvent {
    pub fn new(kind: MarkerKind, task_id: usize, detail: impl Into<String>) -> Self {
        Self {
            kind,
            task_id,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEvent {
    pub command_line: String,
    pub exit_code: i32,
    pub duration: f64,
}

/// One dialogue turn. `observed_score` carries a test score the agent saw
/// during the turn, when the backend reports one; loop detection treats a
/// change in it as progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    #[serde(default)]
    pub commands: Vec<CommandEvent>,
    #[serde(default)]
    pub markers: Vec<MarkerEvent>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_score: Option<f64>,
}

impl TurnRecord {
    /// A turn that consumed nothing; used to anchor markers raised outside
    /// any agent turn.
    pub fn empty(index: usize) -> Self {
        Self {
            index,
            tokens_in: 0,
            tokens_out: 0,
            commands: Vec::new(),
            markers: Vec::new(),
            wall_time: 0.0,
            observed_score: None,
        }
    }

    pub fn tokens(&self) -> u64 {
        self.tokens_in + self.tokens_out
    }
}

/// Turns produced by a backend for one task. Indices are local (from 0)
/// until the fragment is appended to an [`ExecutionTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFragment {
    pub task_id: usize,
    pub turns: Vec<TurnRecord>,
    /// The backend stopped because it ran out of turns, not because it was done.
    pub truncated: bool,
}

impl TraceFragment {
    pub fn new(task_id: usize) -> Self {
        Self {
            task_id,
            turns: Vec::new(),
            truncated: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("turn at position {position} has index {index}")]
    BadIndex { position: usize, index: usize },
    #[error("turn {index} has a negative or non-finite duration")]
    BadDuration { index: usize },
    #[error("span for task {task_id} overlaps or precedes the previous span")]
    SpanOrder { task_id: usize },
    #[error("span for task {task_id} runs past the last turn")]
    SpanBounds { task_id: usize },
    #[error("task {task_id} was appended after task {last}")]
    OutOfOrder { task_id: usize, last: usize },
}

/// Ordered turns for one run, with the turn range each task occupied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub model_id: String,
    pub chain_id: String,
    pub turns: Vec<TurnRecord>,
    pub per_task_spans: BTreeMap<usize, Range<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    model_id: String,
    chain_id: String,
    per_task_spans: BTreeMap<usize, Range<usize>>,
}

impl ExecutionTrace {
    pub fn new(model_id: impl Into<String>, chain_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            chain_id: chain_id.into(),
            ..Self::default()
        }
    }

    pub fn turns_used(&self) -> usize {
        self.turns.len()
    }

    /// Appends a fragment's turns, renumbering them to follow the existing
    /// trace, and extends the task's span.
    pub fn append(&mut self, fragment: TraceFragment) -> Result<Range<usize>, TraceError> {
        let task_id = fragment.task_id;
        if let Some((&last, _)) = self.per_task_spans.iter().next_back() {
            if last > task_id {
                return Err(TraceError::OutOfOrder { task_id, last });
            }
        }
        let start = self.turns.len();
        for (offset, mut turn) in fragment.turns.into_iter().enumerate() {
            turn.index = start + offset;
            self.turns.push(turn);
        }
        let end = self.turns.len();
        let span = self.per_task_spans.entry(task_id).or_insert(start..start);
        span.end = end;
        Ok(span.clone())
    }

    /// Attaches a marker to the last turn of the task's span, or to a fresh
    /// empty turn when the task has no turns of its own.
    pub fn attach_marker(&mut self, marker: MarkerEvent) -> usize {
        let task_id = marker.task_id;
        let span = self.per_task_spans.get(&task_id).cloned();
        match span {
            Some(span) if !span.is_empty() && span.end == self.turns.len() => {
                let index = span.end - 1;
                self.turns[index].markers.push(marker);
                index
            }
            _ => {
                let index = self.turns.len();
                let mut turn = TurnRecord::empty(index);
                turn.markers.push(marker);
                let mut fragment = TraceFragment::new(task_id);
                fragment.turns.push(turn);
                // Appending in task order cannot fail here: markers are only
                // attached for the task currently being executed.
                let _ = self.append(fragment);
                index
            }
        }
    }

    /// Task whose span contains `turn`.
    pub fn task_of_turn(&self, turn: usize) -> Option<usize> {
        self.per_task_spans
            .iter()
            .find(|(_, span)| span.contains(&turn))
            .map(|(&task, _)| task)
    }

    pub fn task_turns(&self, task_id: usize) -> &[TurnRecord] {
        match self.per_task_spans.get(&task_id) {
            Some(span) => &self.turns[span.clone()],
            None => &[],
        }
    }

    /// All markers in trace order as `(turn index, position in turn, marker)`.
    pub fn markers(&self) -> impl Iterator<Item = (usize, usize, &MarkerEvent)> {
        self.turns.iter().flat_map(|turn| {
            turn.markers
                .iter()
                .enumerate()
                .map(move |(pos, m)| (turn.index, pos, m))
        })
    }

    pub fn check_invariants(&self) -> Result<(), TraceError> {
        for (position, turn) in self.turns.iter().enumerate() {
            if turn.index != position {
                return Err(TraceError::BadIndex {
                    position,
                    index: turn.index,
                });
            }
            if !(turn.wall_time >= 0.0 && turn.wall_time.is_finite())
                || turn
                    .commands
                    .iter()
                    .any(|c| !(c.duration >= 0.0 && c.duration.is_finite()))
            {
                return Err(TraceError::BadDuration { index: turn.index });
            }
        }
        let mut prev_end = 0;
        for (&task_id, span) in &self.per_task_spans {
            if span.start < prev_end || span.end < span.start {
                return Err(TraceError::SpanOrder { task_id });
            }
            if span.end > self.turns.len() {
                return Err(TraceError::SpanBounds { task_id });
            }
            prev_end = span.end;
        }
        Ok(())
    }

    /// Newline-delimited JSON: a header object, then one turn per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = TraceHeader {
            model_id: self.model_id.clone(),
            chain_id: self.chain_id.clone(),
            per_task_spans: self.per_task_spans.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for turn in &self.turns {
            serde_json::to_writer(&mut out, turn)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "empty trace file"))??;
        let header: TraceHeader = serde_json::from_str(&header_line)?;
        let mut turns = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            turns.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            model_id: header.model_id,
            chain_id: header.chain_id,
            turns,
            per_task_spans: header.per_task_spans,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fragment(task_id: usize, n: usize) -> TraceFragment {
        TraceFragment {
            task_id,
            turns: (0..n)
                .map(|i| TurnRecord {
                    tokens_in: 10,
                    tokens_out: 5,
                    ..TurnRecord::empty(i)
                })
                .collect(),
            truncated: false,
        }
    }

    #[test]
    fn append_renumbers_and_tracks_spans() {
        let mut trace = ExecutionTrace::new("m", "c");
        assert_eq!(trace.append(fragment(0, 3)).unwrap(), 0..3);
        assert_eq!(trace.append(fragment(1, 2)).unwrap(), 3..5);
        assert_eq!(trace.turns[4].index, 4);
        assert_eq!(trace.task_of_turn(3), Some(1));
        trace.check_invariants().unwrap();
        assert!(matches!(
            trace.append(fragment(0, 1)),
            Err(TraceError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn marker_on_empty_task_gets_its_own_turn() {
        let mut trace = ExecutionTrace::new("m", "c");
        trace.append(fragment(0, 2)).unwrap();
        let at = trace.attach_marker(MarkerEvent::new(MarkerKind::ToolError, 1, "down"));
        assert_eq!(at, 2);
        assert_eq!(trace.per_task_spans[&1], 2..3);
        let at = trace.attach_marker(MarkerEvent::new(MarkerKind::FrameworkError, 1, "crash"));
        assert_eq!(at, 2);
        assert_eq!(trace.turns[2].markers.len(), 2);
        trace.check_invariants().unwrap();
    }

    #[test]
    fn jsonl_round_trip() {
        let mut trace = ExecutionTrace::new("model-x", "mini-chain");
        trace.append(fragment(0, 2)).unwrap();
        trace.attach_marker(MarkerEvent::new(MarkerKind::SkipDecision, 0, "skip"));
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"model_id\":\"model-x\""));
        let back = ExecutionTrace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }
}
