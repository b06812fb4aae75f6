//! Readers and writers for the dataset files.
//!
//! * entities: `id<TAB>kind<TAB>label`
//! * triples: `head_id<TAB>relation<TAB>tail_id`
//! * interactions: JSON lines `{"user", "ad", "label", "ts"}`
//! * ad texts: JSON lines `{"ad_id", "text"}`
//! * user tags: JSON lines `{"user_id", "tags": [..]}`
//!
//! Blank lines are skipped; any other malformed line is an error carrying
//! its 1-based line number.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Entity, EntityKind, NamedTriple, RelationKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub ad: String,
    pub label: u8,
    pub ts: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdText {
    pub ad_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTags {
    pub user_id: String,
    pub tags: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn tsv3<'a>(path: &Path, no: usize, line: &'a str) -> Result<[&'a str; 3]> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.as_slice() {
        [a, b, c] if !a.is_empty() && !b.is_empty() && !c.is_empty() => Ok([a, b, c]),
        _ => Err(parse_err(path, no, format!("expected 3 tab-separated fields, got {}", fields.len()))),
    }
}

pub fn parse_entities(path: &Path, text: &str) -> Result<Vec<Entity>> {
    lines(text)
        .map(|(no, line)| {
            let [id, kind, label] = tsv3(path, no, line)?;
            let kind: EntityKind = kind
                .parse()
                .map_err(|_| parse_err(path, no, format!("unknown entity kind `{kind}`")))?;
            Ok(Entity::new(id, kind, label))
        })
        .collect()
}

pub fn parse_triples(path: &Path, text: &str) -> Result<Vec<NamedTriple>> {
    lines(text)
        .map(|(no, line)| {
            let [head, rel, tail] = tsv3(path, no, line)?;
            let relation: RelationKind = rel
                .parse()
                .map_err(|_| parse_err(path, no, format!("unknown relation `{rel}`")))?;
            Ok(NamedTriple::new(head, relation, tail))
        })
        .collect()
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    lines(text)
        .map(|(no, line)| serde_json::from_str(line).map_err(|e| parse_err(path, no, e.to_string())))
        .collect()
}

pub fn read_entities(path: &Path) -> Result<Vec<Entity>> {
    parse_entities(path, &read(path)?)
}

pub fn read_triples(path: &Path) -> Result<Vec<NamedTriple>> {
    parse_triples(path, &read(path)?)
}

pub fn read_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let records: Vec<RawInteraction> = parse_jsonl(path, &read(path)?)?;
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.label > 1) {
        return Err(parse_err(path, i + 1, format!("label {} not in {{0,1}}", r.label)));
    }
    Ok(records)
}

pub fn read_ad_texts(path: &Path) -> Result<Vec<AdText>> {
    parse_jsonl(path, &read(path)?)
}

pub fn read_user_tags(path: &Path) -> Result<Vec<UserTags>> {
    parse_jsonl(path, &read(path)?)
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_entities(path: &Path, entities: &[Entity]) -> Result<()> {
    write_with(path, |w| {
        for e in entities {
            writeln!(w, "{}\t{}\t{}", e.id, e.kind, e.label)?;
        }
        Ok(())
    })
}

pub fn write_triples(path: &Path, triples: &[NamedTriple]) -> Result<()> {
    write_with(path, |w| {
        for t in triples {
            writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        Ok(())
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_with(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}
