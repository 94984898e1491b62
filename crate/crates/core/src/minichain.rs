//! The bundled three-stage toy workload: tokenize, parse, and evaluate
//! integer arithmetic expressions.
//!
//! Each stage writes one line per program line into its artifact. Graders
//! score the fraction of lines that match the reference pipeline's output.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::agent::ArtifactSynthesizer;
use crate::workload::WorkspaceLayout;

/// Program source, relative to the workspace root.
pub const PROGRAM_PATH: &str = "input/program.txt";

/// Output artifact key for each stage, in task order.
pub const ARTIFACT_KEYS: [&str; 3] = ["tokens", "ast", "values"];

/// Line written for expressions the reference pipeline rejects.
const ERROR_LINE: &str = "ERR";

/// Filler for lines a simulated agent gets wrong.
const WRONG_LINE: &str = "?";

#[derive(Debug, Error, PartialEq)]
pub enum MiniChainError {
    #[error("unexpected character {0:?}")]
    BadChar(char),
    #[error("integer literal out of range")]
    Overflow,
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token {0}")]
    UnexpectedToken(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("no stage {0}")]
    UnknownStage(usize),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Num(i64),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(n) => write!(f, "NUM({n})"),
            Token::Plus => f.write_str("PLUS"),
            Token::Minus => f.write_str("MINUS"),
            Token::Star => f.write_str("STAR"),
            Token::Slash => f.write_str("SLASH"),
            Token::LParen => f.write_str("LPAREN"),
            Token::RParen => f.write_str("RPAREN"),
        }
    }
}

pub fn tokenize(line: &str) -> Result<Vec<Token>, MiniChainError> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '0'..='9' => {
                let mut value: i64 = 0;
                while let Some(d) = chars.peek().and_then(|c| c.to_digit(10)) {
                    value = value
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(i64::from(d)))
                        .ok_or(MiniChainError::Overflow)?;
                    chars.next();
                }
                tokens.push(Token::Num(value));
            }
            _ => {
                tokens.push(match c {
                    '+' => Token::Plus,
                    '-' => Token::Minus,
                    '*' => Token::Star,
                    '/' => Token::Slash,
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    other => return Err(MiniChainError::BadChar(other)),
                });
                chars.next();
            }
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(i64),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Prefix S-expression, e.g. `(+ 1 (* 2 3))`.
    pub fn to_sexpr(&self) -> String {
        match self {
            Expr::Num(n) => n.to_string(),
            Expr::Neg(inner) => format!("(neg {})", inner.to_sexpr()),
            Expr::Binary(op, l, r) => {
                format!("({} {} {})", op.symbol(), l.to_sexpr(), r.to_sexpr())
            }
        }
    }
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, MiniChainError> {
        let mut lhs = self.term()?;
        while let Some(op) = match self.peek() {
            Some(Token::Plus) => Some(BinOp::Add),
            Some(Token::Minus) => Some(BinOp::Sub),
            _ => None,
        } {
            self.bump();
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, MiniChainError> {
        let mut lhs = self.factor()?;
        while let Some(op) = match self.peek() {
            Some(Token::Star) => Some(BinOp::Mul),
            Some(Token::Slash) => Some(BinOp::Div),
            _ => None,
        } {
            self.bump();
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, MiniChainError> {
        match self.bump() {
            Some(Token::Num(n)) => Ok(Expr::Num(n)),
            Some(Token::Minus) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    Some(t) => Err(MiniChainError::UnexpectedToken(t.to_string())),
                    None => Err(MiniChainError::UnexpectedEnd),
                }
            }
            Some(t) => Err(MiniChainError::UnexpectedToken(t.to_string())),
            None => Err(MiniChainError::UnexpectedEnd),
        }
    }
}

pub fn parse(tokens: &[Token]) -> Result<Expr, MiniChainError> {
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    match parser.peek() {
        None => Ok(expr),
        Some(t) => Err(MiniChainError::UnexpectedToken(t.to_string())),
    }
}

/// Evaluates with checked integer arithmetic; division truncates toward zero.
pub fn evaluate(expr: &Expr) -> Result<i64, MiniChainError> {
    match expr {
        Expr::Num(n) => Ok(*n),
        Expr::Neg(inner) => evaluate(inner)?
            .checked_neg()
            .ok_or(MiniChainError::Overflow),
        Expr::Binary(op, l, r) => {
            let (a, b) = (evaluate(l)?, evaluate(r)?);
            match op {
                BinOp::Add => a.checked_add(b).ok_or(MiniChainError::Overflow),
                BinOp::Sub => a.checked_sub(b).ok_or(MiniChainError::Overflow),
                BinOp::Mul => a.checked_mul(b).ok_or(MiniChainError::Overflow),
                BinOp::Div if b == 0 => Err(MiniChainError::DivisionByZero),
                BinOp::Div => a.checked_div(b).ok_or(MiniChainError::Overflow),
            }
        }
    }
}

fn stage_line(stage: usize, source: &str) -> Result<String, MiniChainError> {
    let tokens = tokenize(source)?;
    match stage {
        0 => Ok(tokens
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ")),
        1 => Ok(parse(&tokens)?.to_sexpr()),
        2 => Ok(evaluate(&parse(&tokens)?)?.to_string()),
        other => Err(MiniChainError::UnknownStage(other)),
    }
}

/// Program lines that carry an expression; blank lines and `#` comments are
/// skipped.
pub fn program_lines(program: &str) -> Vec<&str> {
    program
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Reference output for a stage, one line per expression.
pub fn reference_output(stage: usize, program: &str) -> Result<Vec<String>, MiniChainError> {
    if stage >= ARTIFACT_KEYS.len() {
        return Err(MiniChainError::UnknownStage(stage));
    }
    Ok(program_lines(program)
        .into_iter()
        .map(|line| stage_line(stage, line).unwrap_or_else(|_| ERROR_LINE.to_string()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageGrade {
    pub expected: usize,
    pub matched: usize,
    pub score: f64,
}

/// Line-by-line comparison of `produced` against `expected`.
pub fn score_lines(expected: &[String], produced: &str) -> StageGrade {
    let matched = expected
        .iter()
        .zip(produced.lines())
        .filter(|(want, got)| want.as_str() == got.trim_end())
        .count();
    let score = if expected.is_empty() {
        100.0
    } else {
        100.0 * matched as f64 / expected.len() as f64
    };
    StageGrade {
        expected: expected.len(),
        matched,
        score,
    }
}

fn read_program(root: &Path) -> Result<String, MiniChainError> {
    let path = root.join(PROGRAM_PATH);
    fs::read_to_string(&path).map_err(|e| MiniChainError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Grades one stage of a workspace. A missing output artifact scores zero; a
/// missing program is an error.
pub fn grade_workspace(stage: usize, root: &Path) -> Result<StageGrade, MiniChainError> {
    let program = read_program(root)?;
    let expected = reference_output(stage, &program)?;
    let layout = WorkspaceLayout::default();
    let produced = fs::read_to_string(root.join(layout.artifact_path(ARTIFACT_KEYS[stage])))
        .unwrap_or_default();
    Ok(score_lines(&expected, &produced))
}

/// Writes stage output in which the first `round(target / 100 * lines)` lines
/// are correct and the rest are wrong, so the grader awards the target score
/// up to one line of granularity.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiniChainSynthesizer;

impl ArtifactSynthesizer for MiniChainSynthesizer {
    fn write_output(&self, workspace: &Path, task_id: usize, target_score: f64) -> io::Result<()> {
        let program = read_program(workspace).map_err(io::Error::other)?;
        let reference = reference_output(task_id, &program).map_err(io::Error::other)?;
        let correct = ((target_score / 100.0) * reference.len() as f64).round() as usize;
        let mut text = String::new();
        for (i, line) in reference.iter().enumerate() {
            text.push_str(if i < correct { line } else { WRONG_LINE });
            text.push('\n');
        }
        let path = workspace.join(WorkspaceLayout::default().artifact_path(ARTIFACT_KEYS[task_id]));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_and_parses_with_precedence() {
        let tokens = tokenize("3 + 4 * (2 - 1)").unwrap();
        let rendered: Vec<String> = tokens.iter().map(ToString::to_string).collect();
        assert_eq!(
            rendered.join(" "),
            "NUM(3) PLUS NUM(4) STAR LPAREN NUM(2) MINUS NUM(1) RPAREN"
        );
        let expr = parse(&tokens).unwrap();
        assert_eq!(expr.to_sexpr(), "(+ 3 (* 4 (- 2 1)))");
        assert_eq!(evaluate(&expr).unwrap(), 7);
    }

    #[test]
    fn left_associative_and_unary() {
        let expr = parse(&tokenize("10 - 4 - 3").unwrap()).unwrap();
        assert_eq!(expr.to_sexpr(), "(- (- 10 4) 3)");
        assert_eq!(evaluate(&expr).unwrap(), 3);
        let expr = parse(&tokenize("-7 / 2").unwrap()).unwrap();
        assert_eq!(expr.to_sexpr(), "(/ (neg 7) 2)");
        assert_eq!(evaluate(&expr).unwrap(), -3);
    }

    #[test]
    fn errors() {
        assert_eq!(tokenize("1 $ 2"), Err(MiniChainError::BadChar('$')));
        assert_eq!(
            parse(&tokenize("(1 + 2").unwrap()),
            Err(MiniChainError::UnexpectedEnd)
        );
        assert!(parse(&tokenize("1 2").unwrap()).is_err());
        assert_eq!(
            evaluate(&parse(&tokenize("1 / 0").unwrap()).unwrap()),
            Err(MiniChainError::DivisionByZero)
        );
        assert_eq!(reference_output(1, "1 +\n").unwrap(), vec!["ERR"]);
    }

    #[test]
    fn scoring_counts_matching_lines() {
        let expected: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let grade = score_lines(&expected, "a\nx\nc\n");
        assert_eq!(grade.matched, 2);
        assert_eq!(grade.score, 50.0);
        assert_eq!(score_lines(&expected, "").score, 0.0);
    }

    #[test]
    fn synthesizer_hits_target_on_twenty_lines() {
        let dir = tempfile::TempDir::new().unwrap();
        let program: String = (1..=20).map(|i| format!("{i} + {i}\n")).collect();
        fs::create_dir_all(dir.path().join("input")).unwrap();
        fs::write(dir.path().join(PROGRAM_PATH), program).unwrap();
        for (stage, target) in [(0, 80.0), (1, 30.0), (2, 100.0), (2, 0.0)] {
            MiniChainSynthesizer
                .write_output(dir.path(), stage, target)
                .unwrap();
            assert_eq!(grade_workspace(stage, dir.path()).unwrap().score, target);
        }
    }
}
