//! Line-oriented dataset files.
//!
//! ```text
//! #aogp-dataset v1 state_dim=2 action_dim=2 provenance=offline
//! # log collect 10 episodes ...
//! episode_id,step,s0,s1,a0,a1,r,s2_0,s2_1,done,timeout
//! 0,0,0.1,0.2,0.08,0,0,0.18,0.2,0,0
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, Provenance, Transition};
use crate::error::{Error, Result};

const MAGIC: &str = "#aogp-dataset v1";
const LOG_PREFIX: &str = "# log ";

fn column_header(sd: usize, ad: usize) -> String {
    let mut cols = vec!["episode_id".to_string(), "step".to_string()];
    cols.extend((0..sd).map(|i| format!("s{i}")));
    cols.extend((0..ad).map(|i| format!("a{i}")));
    cols.push("r".into());
    cols.extend((0..sd).map(|i| format!("s2_{i}")));
    cols.push("done".into());
    cols.push("timeout".into());
    cols.join(",")
}

pub fn to_text(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} state_dim={} action_dim={} provenance={}",
        ds.state_dim, ds.action_dim, ds.provenance
    );
    for line in &ds.log {
        let _ = writeln!(out, "{LOG_PREFIX}{}", line.replace('\n', " "));
    }
    out.push_str(&column_header(ds.state_dim, ds.action_dim));
    out.push('\n');
    for (e, ep) in ds.episodes.iter().enumerate() {
        for (t, tr) in ep.iter().enumerate() {
            let _ = write!(out, "{e},{t}");
            for x in tr.s.iter().chain(&tr.a).chain(std::iter::once(&tr.r)).chain(&tr.s2) {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{},{}", tr.done as u8, tr.timeout as u8);
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, Provenance), String> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| format!("expected header starting with `{MAGIC}`"))?;
    let (mut sd, mut ad, mut prov) = (None, None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| format!("malformed header field `{field}`"))?;
        match k {
            "state_dim" => sd = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
            "action_dim" => ad = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
            "provenance" => prov = Some(v.parse::<Provenance>()?),
            other => return Err(format!("unknown header field `{other}`")),
        }
    }
    match (sd, ad, prov) {
        (Some(sd), Some(ad), Some(p)) => Ok((sd, ad, p)),
        _ => Err("header must declare state_dim, action_dim and provenance".into()),
    }
}

fn parse_flag(field: &str) -> std::result::Result<bool, String> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("flag must be 0 or 1, got `{other}`")),
    }
}

pub fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (sd, ad, provenance) = parse_header(header).map_err(|m| parse_err(hline, m))?;
    let mut ds = Dataset::new(sd, ad, provenance);
    let expected_cols = column_header(sd, ad);
    let width = 2 + sd + ad + 1 + sd + 2;
    let mut seen_columns = false;
    // (file episode id, index in ds.episodes)
    let mut current: Option<u64> = None;
    for (no, line) in lines {
        if let Some(entry) = line.strip_prefix(LOG_PREFIX) {
            if seen_columns {
                return Err(parse_err(no, "log lines must precede the column header"));
            }
            ds.log.push(entry.to_string());
            continue;
        }
        if !seen_columns {
            if line != expected_cols {
                return Err(parse_err(no, format!("expected column header `{expected_cols}`")));
            }
            seen_columns = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_err(no, format!("expected {width} fields, found {}", fields.len())));
        }
        let episode: u64 = fields[0].parse().map_err(|_| parse_err(no, "bad episode_id"))?;
        let step: usize = fields[1].parse().map_err(|_| parse_err(no, "bad step"))?;
        let mut nums = Vec::with_capacity(width - 4);
        for f in &fields[2..width - 2] {
            nums.push(f.parse::<f64>().map_err(|_| parse_err(no, format!("bad number `{f}`")))?);
        }
        let done = parse_flag(fields[width - 2]).map_err(|m| parse_err(no, m))?;
        let timeout = parse_flag(fields[width - 1]).map_err(|m| parse_err(no, m))?;
        if done && timeout {
            return Err(parse_err(no, "done and timeout cannot both be set"));
        }
        let tr = Transition {
            s: nums[..sd].to_vec(),
            a: nums[sd..sd + ad].to_vec(),
            r: nums[sd + ad],
            s2: nums[sd + ad + 1..].to_vec(),
            done,
            timeout,
        };
        if current != Some(episode) {
            if current.is_some_and(|c| episode <= c) {
                return Err(parse_err(no, "episode ids must increase"));
            }
            current = Some(episode);
            ds.episodes.push(Vec::new());
        }
        let ep = ds.episodes.last_mut().expect("episode pushed above");
        if step != ep.len() {
            return Err(parse_err(no, format!("expected step {}, found {step}", ep.len())));
        }
        if let Some(prev) = ep.last() {
            if prev.done || prev.timeout {
                return Err(parse_err(no, "record follows the end of its episode"));
            }
            if prev.s2 != tr.s {
                return Err(parse_err(no, "state does not continue the previous record"));
            }
        }
        ep.push(tr);
    }
    if !seen_columns {
        return Err(parse_err(text.lines().count().max(1), "missing column header"));
    }
    Ok(ds)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_text(ds)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_offline, Behavior, StartMode};
    use crate::env::{EnvModel, Maze2d};
    use crate::rng::{SeedTree, DATA};

    fn sample() -> Dataset {
        let env = EnvModel::Maze2d(Maze2d::default());
        let mut rng = SeedTree::new(3).stream(DATA);
        collect_offline(&env, Behavior::UniformRandom, 15, StartMode::Uniform, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = sample();
        assert!(ds.n_transitions() >= 1000);
        let back = from_text(&to_text(&ds)).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.transitions().zip(ds.transitions()) {
            for (x, y) in a.s.iter().zip(&b.s) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_done_and_timeout() {
        let text = to_text(&sample());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let idx = lines.len() - 1;
        let row = lines[idx].clone();
        let cut = row.rfind(',').unwrap();
        let cut2 = row[..cut].rfind(',').unwrap();
        lines[idx] = format!("{},1,1", &row[..cut2]);
        let err = from_text(&lines.join("\n")).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, idx + 1);
                assert!(message.contains("done and timeout"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn truncated_file_names_line() {
        let text = to_text(&sample());
        let cut = &text[..text.len() - 9];
        let last_line = cut.lines().count();
        match from_text(cut).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, last_line),
            other => panic!("{other}"),
        }
        assert!(from_text("").is_err());
        assert!(from_text("hello\n").is_err());
    }
}
