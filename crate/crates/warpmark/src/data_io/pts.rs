//! The 300W-style `.pts` annotation format.
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! 30.2 40.5
//! ...
//! }
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::warpfield::LandmarkSet;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_pts(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pts(&text, path)
}

pub fn parse_pts(text: &str, path: &Path) -> Result<LandmarkSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next_meaningful = || lines.by_ref().find(|(_, l)| !l.is_empty());

    let (ln, version) = next_meaningful().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if version != "version: 1" {
        return Err(parse_err(path, ln, format!("expected 'version: 1', got '{version}'")));
    }
    let (ln, npts) = next_meaningful().ok_or_else(|| parse_err(path, ln, "missing n_points"))?;
    let count: usize = npts
        .strip_prefix("n_points:")
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(path, ln, format!("expected 'n_points: <K>', got '{npts}'")))?;
    let (ln, brace) = next_meaningful().ok_or_else(|| parse_err(path, ln, "missing '{'"))?;
    if brace != "{" {
        return Err(parse_err(path, ln, format!("expected '{{', got '{brace}'")));
    }

    let mut points = Vec::with_capacity(count);
    loop {
        let (ln, line) = next_meaningful().ok_or_else(|| parse_err(path, ln, "missing '}'"))?;
        if line == "}" {
            if points.len() != count {
                return Err(parse_err(
                    path,
                    ln,
                    format!("n_points says {count} but {} points listed", points.len()),
                ));
            }
            return LandmarkSet::new(points);
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Option<f64> { tok.and_then(|t| t.parse().ok()) };
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(u), Some(v), None) => points.push([u, v]),
            _ => return Err(parse_err(path, ln, format!("expected 'u v', got '{line}'"))),
        }
        if points.len() > count {
            return Err(parse_err(path, ln, format!("more than n_points = {count} points")));
        }
    }
}

pub fn format_pts(lms: &LandmarkSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version: 1");
    let _ = writeln!(out, "n_points: {}", lms.len());
    let _ = writeln!(out, "{{");
    for p in lms.points() {
        let _ = writeln!(out, "{:.6} {:.6}", p[0], p[1]);
    }
    let _ = writeln!(out, "}}");
    out
}

pub fn save_pts(lms: &LandmarkSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_pts(lms)).map_err(|e| Error::io(path, e))
}
