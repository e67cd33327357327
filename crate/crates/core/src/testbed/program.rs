//! The line-oriented artifact format understood by the testbed harness.
//!
//! ```text
//! # comment
//! task quadratic-1d
//! param x 2.5
//! text the quick brown fox
//! sleep 0.5        # seconds, before scoring
//! alloc 64         # MiB touched before scoring
//! emit some chatter
//! exit 3           # stop here with this status, no score
//! trailer noise    # printed after the score line
//! ```
//!
//! Directives run in file order before the score line is printed; trailers
//! are printed after it.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Sleep(f64),
    Alloc(u64),
    Emit(String),
    Exit(i32),
    Trailer(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub task: String,
    pub params: Vec<(String, f64)>,
    pub text: Option<String>,
    pub directives: Vec<Directive>,
}

fn number<T: std::str::FromStr>(line_no: usize, what: &str, raw: &str) -> Result<T, String> {
    raw.trim()
        .parse()
        .map_err(|_| format!("line {line_no}: {what} expects a number, got {raw:?}"))
}

impl Program {
    pub fn parse(source: &str) -> Result<Program, String> {
        let mut program = Program::default();
        let mut task = None;
        for (idx, raw_line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match word {
                "task" => {
                    if task.is_some() {
                        return Err(format!("line {line_no}: task declared twice"));
                    }
                    if rest.is_empty() {
                        return Err(format!("line {line_no}: task needs an id"));
                    }
                    task = Some(rest.to_string());
                }
                "param" => {
                    let (name, value) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| format!("line {line_no}: param needs a name and a value"))?;
                    if program.params.iter().any(|(n, _)| n == name) {
                        return Err(format!("line {line_no}: param {name} set twice"));
                    }
                    let value: f64 = number(line_no, "param", value)?;
                    if !value.is_finite() {
                        return Err(format!("line {line_no}: param {name} is not finite"));
                    }
                    program.params.push((name.to_string(), value));
                }
                "text" => {
                    if program.text.is_some() {
                        return Err(format!("line {line_no}: text set twice"));
                    }
                    program.text = Some(rest.to_string());
                }
                "sleep" => {
                    let secs: f64 = number(line_no, "sleep", rest)?;
                    if !(secs >= 0.0 && secs.is_finite()) {
                        return Err(format!("line {line_no}: sleep must be non-negative"));
                    }
                    program.directives.push(Directive::Sleep(secs));
                }
                "alloc" => program.directives.push(Directive::Alloc(number(line_no, "alloc", rest)?)),
                "emit" => program.directives.push(Directive::Emit(rest.to_string())),
                "exit" => program.directives.push(Directive::Exit(number(line_no, "exit", rest)?)),
                "trailer" => program.directives.push(Directive::Trailer(rest.to_string())),
                other => return Err(format!("line {line_no}: unknown directive {other:?}")),
            }
        }
        program.task = task.ok_or("missing task line")?;
        Ok(program)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn render(&self) -> String {
        let mut out = format!("task {}\n", self.task);
        for (name, value) in &self.params {
            let _ = writeln!(out, "param {name} {value}");
        }
        if let Some(text) = &self.text {
            let _ = writeln!(out, "text {text}");
        }
        for d in &self.directives {
            let _ = match d {
                Directive::Sleep(s) => writeln!(out, "sleep {s}"),
                Directive::Alloc(mb) => writeln!(out, "alloc {mb}"),
                Directive::Emit(t) => writeln!(out, "emit {t}"),
                Directive::Exit(c) => writeln!(out, "exit {c}"),
                Directive::Trailer(t) => writeln!(out, "trailer {t}"),
            };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let src = "# seed\ntask quadratic-1d\nparam x 2.5\nsleep 0.25\nemit hello there\ntrailer junk\n";
        let p = Program::parse(src).unwrap();
        assert_eq!(p.task, "quadratic-1d");
        assert_eq!(p.param("x"), Some(2.5));
        assert_eq!(p.directives.len(), 3);
        assert_eq!(Program::parse(&p.render()).unwrap(), p);
    }

    #[test]
    fn rejects_malformed_programs() {
        assert!(Program::parse("param x 1\n").unwrap_err().contains("missing task"));
        assert!(Program::parse("task a\nparam x one\n").unwrap_err().contains("line 2"));
        assert!(Program::parse("task a\nparam x 1\nparam x 2\n").unwrap_err().contains("twice"));
        assert!(Program::parse("task a\nfrobnicate\n").unwrap_err().contains("unknown directive"));
        assert!(Program::parse("task a\nparam x inf\n").is_err());
    }

    #[test]
    fn float_params_render_exactly() {
        let x = 0.1 + 0.2;
        let p = Program { task: "t".into(), params: vec![("x".into(), x)], ..Default::default() };
        assert_eq!(Program::parse(&p.render()).unwrap().param("x"), Some(x));
    }
}
