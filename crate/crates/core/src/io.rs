//! Text formats: `GFN1` grid functions and Carleson coefficient files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DyadicCube, GridFunction};
use crate::sparse::CarlesonSequence;
use crate::weights::WEIGHT_FLOOR;

/// Whitespace-separated tokens of one line with their 1-based columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
        .map(move |(byte, tok)| (line[..byte].chars().count() + 1, tok))
}

fn parse_err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        column,
        message: message.into(),
    })
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, col: usize, what: &str) -> Result<T> {
    tok.parse()
        .or_else(|_| parse_err(line, col, format!("expected {what}, found '{tok}'")))
}

/// Parses `GFN1 <n> <L>` followed by `2^{nL}` values in row-major order.
pub fn parse_grid(text: &str) -> Result<GridFunction> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)));
    let Some((hline, header)) = lines.by_ref().find(|(_, l)| !l.trim().is_empty()) else {
        return parse_err(1, 1, "empty file; expected 'GFN1 <n> <L>'");
    };
    let head: Vec<(usize, &str)> = tokens(header).collect();
    if head.first().map(|t| t.1) != Some("GFN1") {
        let col = head.first().map_or(1, |t| t.0);
        return parse_err(hline, col, "expected header 'GFN1 <n> <L>'");
    }
    if head.len() != 3 {
        let col = head.get(3).map_or(header.chars().count() + 1, |t| t.0);
        return parse_err(hline, col, "header must be exactly 'GFN1 <n> <L>'");
    }
    let n: usize = parse_num(head[1].1, hline, head[1].0, "dimension")?;
    let level: u32 = parse_num(head[2].1, hline, head[2].0, "level")?;
    if !(1..=2).contains(&n) {
        return parse_err(
            hline,
            head[1].0,
            format!("dimension must be 1 or 2, got {n}"),
        );
    }
    let max = if n == 1 {
        crate::grid::MAX_LEVEL_1D
    } else {
        crate::grid::MAX_LEVEL_2D
    };
    if level > max {
        return parse_err(
            hline,
            head[2].0,
            format!("level {level} exceeds {max} for n = {n}"),
        );
    }
    let expected = 1usize << (n * level as usize);
    let mut values = Vec::with_capacity(expected);
    let mut last = (hline, header.chars().count() + 1);
    for (i, l) in lines {
        for (col, tok) in tokens(l) {
            if values.len() == expected {
                return parse_err(i, col, format!("too many values; expected {expected}"));
            }
            let v: f64 = parse_num(tok, i, col, "a decimal value")?;
            if !v.is_finite() {
                return parse_err(i, col, format!("value '{tok}' is not finite"));
            }
            values.push(v);
            last = (i, col + tok.chars().count());
        }
    }
    if values.len() != expected {
        return parse_err(
            last.0,
            last.1,
            format!("expected {expected} values, found {}", values.len()),
        );
    }
    GridFunction::new(n, level, values)
}

pub fn read_grid(path: &Path) -> Result<GridFunction> {
    parse_grid(&std::fs::read_to_string(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse {
            line,
            column,
            message,
        } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// A grid read as a weight: nonpositive cells are raised to [`WEIGHT_FLOOR`] with a warning.
pub fn read_weight(path: &Path) -> Result<GridFunction> {
    let w = read_grid(path)?;
    Ok(clamp_weight(w))
}

pub fn clamp_weight(w: GridFunction) -> GridFunction {
    let low = w.values().iter().filter(|&&v| v < WEIGHT_FLOOR).count();
    if low == 0 {
        return w;
    }
    log::warn!("{low} weight cells below {WEIGHT_FLOOR:e} were clamped");
    w.map(|v| v.max(WEIGHT_FLOOR))
}

/// `GFN1` text; rows of `2^L` values in two dimensions, 16 per line in one.
pub fn format_grid(f: &GridFunction) -> String {
    let mut out = format!("GFN1 {} {}\n", f.dim(), f.resolution());
    let per_line = if f.dim() == 2 { f.side() } else { 16 };
    for chunk in f.values().chunks(per_line) {
        let row: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_grid(f: &GridFunction, path: &Path) -> Result<()> {
    std::fs::write(path, format_grid(f))?;
    Ok(())
}

/// Carleson coefficients: an optional `CSQ1 <n> <root level> <root index…>`
/// header, then lines `level index… alpha`. Without a header the root is the
/// unit cube and `n` is the field count of the first entry minus two.
pub fn parse_carleson(text: &str) -> Result<CarlesonSequence> {
    let mut root: Option<DyadicCube> = None;
    let mut dim: Option<usize> = None;
    let mut terms = Vec::new();
    let mut seen_entry = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<(usize, &str)> = tokens(strip_comment(raw)).collect();
        if toks.is_empty() {
            continue;
        }
        if toks[0].1 == "CSQ1" {
            if seen_entry || root.is_some() {
                return parse_err(line, toks[0].0, "the CSQ1 header must come first");
            }
            if toks.len() < 3 {
                return parse_err(
                    line,
                    toks[0].0,
                    "expected 'CSQ1 <n> <root level> <root index…>'",
                );
            }
            let n: usize = parse_num(toks[1].1, line, toks[1].0, "dimension")?;
            if !(1..=2).contains(&n) || toks.len() != 3 + n {
                return parse_err(
                    line,
                    toks[1].0,
                    format!(
                        "header needs n in 1..=2 and n root indices, got {}",
                        toks.len() - 3
                    ),
                );
            }
            let level: u32 = parse_num(toks[2].1, line, toks[2].0, "root level")?;
            let index = toks[3..]
                .iter()
                .map(|&(c, t)| parse_num::<u32>(t, line, c, "root index"))
                .collect::<Result<Vec<_>>>()?;
            root = Some(
                DyadicCube::new(n, level, &index)
                    .or_else(|e| parse_err(line, toks[2].0, e.to_string()))?,
            );
            dim = Some(n);
            continue;
        }
        seen_entry = true;
        let n = *dim.get_or_insert(toks.len().saturating_sub(2));
        if !(1..=2).contains(&n) || toks.len() != n + 2 {
            let col = toks.last().map_or(1, |t| t.0);
            return parse_err(
                line,
                col,
                format!("expected 'level index… alpha' with {} fields", n + 2),
            );
        }
        let level: u32 = parse_num(toks[0].1, line, toks[0].0, "level")?;
        let index = toks[1..=n]
            .iter()
            .map(|&(c, t)| parse_num::<u32>(t, line, c, "index"))
            .collect::<Result<Vec<_>>>()?;
        let (acol, atok) = toks[n + 1];
        let alpha: f64 = parse_num(atok, line, acol, "a coefficient")?;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return parse_err(
                line,
                acol,
                format!("coefficient must be finite and nonnegative, got {atok}"),
            );
        }
        let q = DyadicCube::new(n, level, &index)
            .or_else(|e| parse_err(line, toks[0].0, e.to_string()))?;
        if let Some(r) = root {
            if !r.contains(&q) {
                return parse_err(
                    line,
                    toks[0].0,
                    format!("cube {q} lies outside the root {r}"),
                );
            }
        }
        terms.push((q, alpha));
    }
    let root = root.unwrap_or_else(|| DyadicCube::unit(dim.unwrap_or(1)));
    CarlesonSequence::new(root, terms)
}

pub fn read_carleson(path: &Path) -> Result<CarlesonSequence> {
    parse_carleson(&std::fs::read_to_string(path)?).map_err(|e| with_path(e, path))
}

pub fn format_carleson(a: &CarlesonSequence) -> String {
    let r = a.root();
    let mut out = format!("CSQ1 {} {}", r.dim(), r.level());
    for i in r.index() {
        let _ = write!(out, " {i}");
    }
    out.push('\n');
    for (q, alpha) in a.iter() {
        let _ = write!(out, "{}", q.level());
        for i in q.index() {
            let _ = write!(out, " {i}");
        }
        let _ = writeln!(out, " {alpha:?}");
    }
    out
}

pub fn write_carleson(a: &CarlesonSequence, path: &Path) -> Result<()> {
    std::fs::write(path, format_carleson(a))?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
