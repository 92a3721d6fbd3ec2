//! Text format for pulse programs.
//!
//! One event per line; `#` starts a comment. A comment of the form
//! `# label: <text>` sets the program label.
//!
//! ```text
//! pulse <flip_deg> <x|y|-x|-y|phase_deg>
//! delay <seconds>
//! cpmg tau=<s> n=<int> [composite]
//! grad area=<T*s/m> [bipolar]
//! lock mode=<ideal|waltz16> t=<s>
//! store t=<s> [lock=<mode>]
//! acquire
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::program::{Event, LockMode, PulseProgram};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event {event_index}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct SemanticError {
    pub event_index: usize,
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("invalid program: {0}")]
    Semantic(#[from] SemanticError),
}

impl ProgramError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ProgramError::Syntax(e) => Some(e.line),
            ProgramError::Semantic(e) => e.line,
        }
    }
}

const LABEL_PREFIX: &str = "label:";

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: s + 1,
        });
    }
    out
}

fn number(tok: &Token<'_>, text: &str, column: usize, line: usize) -> Result<f64, SyntaxError> {
    let valid = !text.is_empty()
        && text
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'));
    match text.parse::<f64>() {
        Ok(v) if valid && v.is_finite() => Ok(v),
        _ => Err(SyntaxError {
            line,
            column,
            message: format!("expected a decimal number in `{}`", tok.text),
        }),
    }
}

fn phase(tok: &Token<'_>, line: usize) -> Result<f64, SyntaxError> {
    match tok.text {
        "x" => Ok(0.0),
        "y" => Ok(90.0),
        "-x" => Ok(180.0),
        "-y" => Ok(270.0),
        other => number(tok, other, tok.column, line),
    }
}

struct KeyValues<'a> {
    pairs: Vec<(&'a str, &'a str, usize, usize)>,
    flags: Vec<(&'a str, usize)>,
}

fn key_values<'a>(toks: &'a [Token<'a>]) -> KeyValues<'a> {
    let mut pairs = Vec::new();
    let mut flags = Vec::new();
    for t in toks {
        match t.text.split_once('=') {
            Some((k, v)) => pairs.push((k, v, t.column, t.column + k.len() + 1)),
            None => flags.push((t.text, t.column)),
        }
    }
    KeyValues { pairs, flags }
}

fn parse_line(toks: &[Token<'_>], line: usize) -> Result<Event, SyntaxError> {
    let head = &toks[0];
    let args = &toks[1..];
    let err = |column: usize, message: String| SyntaxError {
        line,
        column,
        message,
    };
    let end_column = head.column + head.text.len();
    match head.text {
        "pulse" => {
            if args.len() != 2 {
                return Err(err(
                    end_column,
                    "pulse takes <flip_deg> <phase>".to_string(),
                ));
            }
            let flip_deg = number(&args[0], args[0].text, args[0].column, line)?;
            let phase_deg = phase(&args[1], line)?;
            Ok(Event::Pulse {
                flip_deg,
                phase_deg,
            })
        }
        "delay" => {
            if args.len() != 1 {
                return Err(err(end_column, "delay takes <seconds>".to_string()));
            }
            let t = number(&args[0], args[0].text, args[0].column, line)?;
            Ok(Event::Delay { t })
        }
        "acquire" => {
            if let Some(extra) = args.first() {
                return Err(err(extra.column, "acquire takes no arguments".to_string()));
            }
            Ok(Event::Acquire)
        }
        "cpmg" | "grad" | "lock" | "store" => {
            let kv = key_values(args);
            let allowed_flags: &[&str] = match head.text {
                "cpmg" => &["composite"],
                "grad" => &["bipolar"],
                _ => &[],
            };
            for (f, col) in &kv.flags {
                if !allowed_flags.contains(f) {
                    return Err(err(*col, format!("unknown flag `{f}` for {}", head.text)));
                }
            }
            let allowed_keys: &[&str] = match head.text {
                "cpmg" => &["tau", "n"],
                "grad" => &["area"],
                "lock" => &["mode", "t"],
                _ => &["t", "lock"],
            };
            let mut seen: Vec<&str> = Vec::new();
            for (k, _, col, _) in &kv.pairs {
                if !allowed_keys.contains(k) {
                    return Err(err(*col, format!("unknown key `{k}` for {}", head.text)));
                }
                if seen.contains(k) {
                    return Err(err(*col, format!("key `{k}` given twice")));
                }
                seen.push(k);
            }
            let get = |key: &str| kv.pairs.iter().find(|(k, ..)| *k == key);
            let require = |key: &str| {
                get(key).ok_or_else(|| err(end_column, format!("{} needs {key}=", head.text)))
            };
            let num = |key: &str| -> Result<f64, SyntaxError> {
                let (_, v, tcol, vcol) = require(key)?;
                let tok = args.iter().find(|t| t.column == *tcol).expect("token exists");
                number(tok, v, *vcol, line)
            };
            let mode = |raw: &str, col: usize| {
                LockMode::from_keyword(raw)
                    .ok_or_else(|| err(col, format!("unknown lock mode `{raw}`")))
            };
            let has_flag = |f: &str| kv.flags.iter().any(|(g, _)| *g == f);
            match head.text {
                "cpmg" => {
                    let tau = num("tau")?;
                    let (_, raw, _, vcol) = require("n")?;
                    let n = raw
                        .parse::<u32>()
                        .map_err(|_| err(*vcol, format!("expected a non-negative integer, got `{raw}`")))?;
                    Ok(Event::Cpmg {
                        tau,
                        n,
                        composite: has_flag("composite"),
                    })
                }
                "grad" => Ok(Event::Gradient {
                    area: num("area")?,
                    bipolar: has_flag("bipolar"),
                }),
                "lock" => {
                    let (_, raw, _, vcol) = require("mode")?;
                    let mode = mode(raw, *vcol)?;
                    Ok(Event::Lock { mode, t: num("t")? })
                }
                _ => {
                    let t = num("t")?;
                    let lock = match get("lock") {
                        Some((_, raw, _, vcol)) => Some(mode(raw, *vcol)?),
                        None => None,
                    };
                    Ok(Event::Store { t, lock })
                }
            }
        }
        other => Err(err(head.column, format!("unknown event `{other}`"))),
    }
}

/// Parses the pulse-program text format.
pub fn parse_program(text: &str) -> Result<PulseProgram, ProgramError> {
    let mut events = Vec::new();
    let mut lines = Vec::new();
    let mut label = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let (body, comment) = match raw.find('#') {
            Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
            None => (raw, None),
        };
        if let Some(c) = comment {
            if body.trim().is_empty() {
                if let Some(rest) = c.trim_start().strip_prefix(LABEL_PREFIX) {
                    label = rest.trim().to_string();
                }
            }
        }
        let toks = tokens(body);
        if toks.is_empty() {
            continue;
        }
        events.push(parse_line(&toks, line_no)?);
        lines.push(line_no);
    }
    PulseProgram::new_with_lines(label, events, &lines)
}

/// Shortest text that parses back to exactly `v`.
fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e9).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn fmt_phase(deg: f64) -> String {
    match deg {
        d if d == 0.0 => "x".into(),
        d if d == 90.0 => "y".into(),
        d if d == 180.0 => "-x".into(),
        d if d == 270.0 => "-y".into(),
        d => fmt_num(d),
    }
}

/// Canonical text form; `parse_program(serialize(p)) == p`.
pub fn serialize(program: &PulseProgram) -> String {
    let mut out = String::new();
    if !program.label().is_empty() {
        let _ = writeln!(out, "# {LABEL_PREFIX} {}", program.label().replace('\n', " "));
    }
    for e in program.events() {
        let _ = match e {
            Event::Pulse {
                flip_deg,
                phase_deg,
            } => writeln!(out, "pulse {} {}", fmt_num(*flip_deg), fmt_phase(*phase_deg)),
            Event::Delay { t } => writeln!(out, "delay {}", fmt_num(*t)),
            Event::Cpmg { tau, n, composite } => writeln!(
                out,
                "cpmg tau={} n={}{}",
                fmt_num(*tau),
                n,
                if *composite { " composite" } else { "" }
            ),
            Event::Gradient { area, bipolar } => writeln!(
                out,
                "grad area={}{}",
                fmt_num(*area),
                if *bipolar { " bipolar" } else { "" }
            ),
            Event::Lock { mode, t } => {
                writeln!(out, "lock mode={} t={}", mode.keyword(), fmt_num(*t))
            }
            Event::Store { t, lock } => match lock {
                Some(m) => writeln!(out, "store t={} lock={}", fmt_num(*t), m.keyword()),
                None => writeln!(out, "store t={}", fmt_num(*t)),
            },
            Event::Acquire => writeln!(out, "acquire"),
        };
    }
    out
}
