//! Episode index CSV: header `episode_id,split`, UTF-8, LF line endings,
//! split tokens `train` and `eval`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Eval,
}

impl DataSplit {
    fn token(&self) -> &'static str {
        match self {
            DataSplit::Train => "train",
            DataSplit::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub episode_id: String,
    pub split: DataSplit,
}

pub fn save_episode_index(entries: &[IndexEntry], path: &Path) -> Result<()> {
    let mut out = String::from("episode_id,split\n");
    for e in entries {
        out.push_str(&e.episode_id);
        out.push(',');
        out.push_str(e.split.token());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_episode_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "episode_id,split")) => {}
        Some((_, other)) => {
            return Err(Error::Data(format!(
                "bad episode index header {other:?}, expected \"episode_id,split\""
            )))
        }
        None => return Err(Error::Data("episode index is empty".into())),
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (id, split_token) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("line {}: expected `episode_id,split`, got {line:?}", lineno + 1))
        })?;
        if id.is_empty() {
            return Err(Error::Data(format!("line {}: empty episode_id", lineno + 1)));
        }
        let split = match split_token {
            "train" => DataSplit::Train,
            "eval" => DataSplit::Eval,
            other => {
                return Err(Error::Data(format!(
                    "line {}: unknown split token {other:?}",
                    lineno + 1
                )))
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(Error::Data(format!("duplicate episode_id {id:?}")));
        }
        entries.push(IndexEntry { episode_id: id.to_string(), split });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_assignments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        std::fs::write(&path, "episode_id,split\ne1,train\ne2,eval\n").unwrap();
        let entries = load_episode_index(&path).unwrap();
        assert_eq!(
            entries,
            vec![
                IndexEntry { episode_id: "e1".into(), split: DataSplit::Train },
                IndexEntry { episode_id: "e2".into(), split: DataSplit::Eval },
            ]
        );
    }

    #[test]
    fn duplicate_id_error_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        std::fs::write(&path, "episode_id,split\ne1,train\ne1,eval\n").unwrap();
        match load_episode_index(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("e1"), "message: {msg}"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_split_token_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        std::fs::write(&path, "episode_id,split\ne1,validation\n").unwrap();
        match load_episode_index(&path) {
            Err(Error::Data(msg)) => {
                assert!(msg.contains("line 2") && msg.contains("validation"), "message: {msg}")
            }
            other => panic!("expected token error, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        std::fs::write(&path, "e1,train\n").unwrap();
        assert!(matches!(load_episode_index(&path), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip_preserves_rows_and_order() {
        let entries = vec![
            IndexEntry { episode_id: "b".into(), split: DataSplit::Eval },
            IndexEntry { episode_id: "a".into(), split: DataSplit::Train },
            IndexEntry { episode_id: "c".into(), split: DataSplit::Train },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.csv");
        save_episode_index(&entries, &path).unwrap();
        assert_eq!(load_episode_index(&path).unwrap(), entries);
        // LF endings, no CR.
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(!raw.contains('\r'));
    }
}
