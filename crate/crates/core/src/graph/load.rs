use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// One timestamped interaction, with endpoints already mapped to dense ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEvent {
    pub src: usize,
    pub dst: usize,
    pub timestamp: i64,
    pub weight: Option<f64>,
}

/// Bijection between external node ids and dense indices `0..N`, assigned
/// in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_external(ids: Vec<i64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            if index.insert(id, k).is_some() {
                return Err(Error::Format(format!("duplicate external node id {id}")));
            }
        }
        Ok(IdMap {
            external: ids,
            index,
        })
    }

    pub fn intern(&mut self, id: i64) -> usize {
        let next = self.external.len();
        *self.index.entry(id).or_insert_with(|| {
            self.external.push(id);
            next
        })
    }

    pub fn dense(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn external(&self, dense: usize) -> Option<i64> {
        self.external.get(dense).copied()
    }

    pub fn external_ids(&self) -> &[i64] {
        &self.external
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub events: Vec<EdgeEvent>,
    pub id_map: IdMap,
}

impl EdgeList {
    pub fn num_nodes(&self) -> usize {
        self.id_map.len()
    }
}

/// Reads `src dst timestamp [weight]` records separated by whitespace
/// and/or commas. Lines starting with `#` and blank lines are skipped.
/// Fractional timestamps are floored to whole seconds.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<EdgeList> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(BufReader::new(file), path)
}

pub fn parse_edge_list(reader: impl BufRead, path: &Path) -> Result<EdgeList> {
    let mut id_map = IdMap::new();
    let mut events = Vec::new();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(perr(
                lineno,
                format!(
                    "expected `src dst timestamp [weight]`, found {} fields",
                    fields.len()
                ),
            ));
        }
        let node = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| perr(lineno, format!("invalid node id `{s}`")))
        };
        let src = node(fields[0])?;
        let dst = node(fields[1])?;
        let timestamp = parse_timestamp(fields[2])
            .ok_or_else(|| perr(lineno, format!("invalid timestamp `{}`", fields[2])))?;
        let weight = match fields.get(3) {
            Some(w) => Some(
                w.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(lineno, format!("invalid weight `{w}`")))?,
            ),
            None => None,
        };
        let src = id_map.intern(src);
        let dst = id_map.intern(dst);
        events.push(EdgeEvent {
            src,
            dst,
            timestamp,
            weight,
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no edges",
            path.display()
        )));
    }
    Ok(EdgeList { events, id_map })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f = s.parse::<f64>().ok()?;
    if f.is_finite() && f.abs() < 9.0e18 {
        Some(f.floor() as i64)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<EdgeList> {
        parse_edge_list(text.as_bytes(), Path::new("mem.txt"))
    }

    #[test]
    fn two_line_file() {
        let el = parse("0 1 5\n1 2 9\n").unwrap();
        assert_eq!(el.events.len(), 2);
        assert_eq!(el.num_nodes(), 3);
    }

    #[test]
    fn ids_remapped_by_first_appearance() {
        let el = parse("# header\n40,7,100,-2\n\n7 99 101\n").unwrap();
        assert_eq!(el.id_map.external_ids(), &[40, 7, 99]);
        assert_eq!(el.events[1].src, 1);
        assert_eq!(el.events[0].weight, Some(-2.0));
        assert_eq!(el.events[1].weight, None);
    }

    #[test]
    fn fractional_timestamps_floor() {
        let el = parse("1 2 1289241911.72836\n").unwrap();
        assert_eq!(el.events[0].timestamp, 1289241911);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("0 1 5\n# c\n0 x 3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("0 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse("# nothing\n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_edge_list("/definitely/not/here.txt").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.txt"));
    }

    #[test]
    fn id_map_round_trip() {
        let el = parse("5 9 1\n9 3 2\n3 5 3\n").unwrap();
        for d in 0..el.num_nodes() {
            let ext = el.id_map.external(d).unwrap();
            assert_eq!(el.id_map.dense(ext), Some(d));
        }
    }
}
