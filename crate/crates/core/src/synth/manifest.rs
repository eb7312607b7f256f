use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Vector(Vec<f64>),
    /// Relative to the manifest's directory.
    Path(String),
}

impl Payload {
    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Payload::Vector(v) => Some(v),
            Payload::Path(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    pub domain: String,
    pub prompt: String,
    pub backend_id: String,
    pub seed: u64,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
}

impl ManifestEntry {
    pub fn new(class: &str, domain: &str, prompt: &str, seed: u64, backend_id: &str, payload: Payload) -> Self {
        ManifestEntry {
            id: entry_id(class, domain, prompt, seed, backend_id),
            class: class.to_string(),
            domain: domain.to_string(),
            prompt: prompt.to_string(),
            backend_id: backend_id.to_string(),
            seed,
            payload,
            filter_score: None,
            kept: None,
        }
    }

    /// Unfiltered entries count as kept.
    pub fn is_kept(&self) -> bool {
        self.kept.unwrap_or(true)
    }
}

/// Content hash of the fields that determine an entry.
pub fn entry_id(class: &str, domain: &str, prompt: &str, seed: u64, backend_id: &str) -> String {
    let mut h = Sha256::new();
    for field in [class, domain, prompt, backend_id] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub task_name: String,
    pub created_at: String,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(header: ManifestHeader) -> Self {
        Manifest {
            header,
            entries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(format!("duplicate manifest id {}", e.id)));
            }
            if let Some(s) = e.filter_score {
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&s) {
                    return Err(Error::validation(format!("filter score {s} outside [-1, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn kept_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.is_kept())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::validation("manifest has no header line"))?;
        let header: ManifestHeader = serde_json::from_str(header_line)?;
        let entries = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let m = Manifest { header, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}

/// Single writer for an append-only manifest file.
#[derive(Debug)]
pub struct ManifestWriter {
    file: File,
    ids: HashSet<String>,
    existing: Vec<ManifestEntry>,
}

impl ManifestWriter {
    /// Starts a fresh file with `header`.
    pub fn create(path: &Path, header: &ManifestHeader) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", serde_json::to_string(header)?)?;
        file.flush()?;
        Ok(ManifestWriter {
            file,
            ids: HashSet::new(),
            existing: Vec::new(),
        })
    }

    /// Reopens an existing file for appending. The stored header must match
    /// `header` on task name and config digest.
    pub fn resume(path: &Path, header: &ManifestHeader) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, header);
        }
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let stored: ManifestHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Self::create(path, header),
        };
        if stored.task_name != header.task_name || stored.config_digest != header.config_digest {
            return Err(Error::validation(format!(
                "{} was written for a different configuration",
                path.display()
            )));
        }
        let mut existing = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestEntry>(&line) {
                Ok(e) => existing.push(e),
                // a torn final line from an interrupted write is dropped
                Err(_) => break,
            }
        }
        let text = std::iter::once(serde_json::to_string(&stored)?)
            .chain(
                existing
                    .iter()
                    .map(|e| serde_json::to_string(e).expect("entries serialize")),
            )
            .map(|l| l + "\n")
            .collect::<String>();
        std::fs::write(path, text)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(ManifestWriter {
            file,
            ids: existing.iter().map(|e| e.id.clone()).collect(),
            existing,
        })
    }

    pub fn existing(&self) -> &[ManifestEntry] {
        &self.existing
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn append(&mut self, entry: &ManifestEntry) -> Result<()> {
        if !self.ids.insert(entry.id.clone()) {
            return Err(Error::validation(format!("duplicate manifest id {}", entry.id)));
        }
        writeln!(self.file, "{}", serde_json::to_string(entry)?)?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> ManifestHeader {
        ManifestHeader {
            task_name: "t".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
            config_digest: "abc".into(),
        }
    }

    fn entry(i: u64) -> ManifestEntry {
        ManifestEntry::new(
            "dog",
            "snow",
            "An image of dog in the domain of snow",
            i,
            "mock",
            Payload::Vector(vec![i as f64, 0.5]),
        )
    }

    #[test]
    fn ids_are_content_hashes() {
        assert_eq!(entry(1).id, entry(1).id);
        assert_ne!(entry(1).id, entry(2).id);
        assert_ne!(entry_id("ab", "c", "p", 0, "m"), entry_id("a", "bc", "p", 0, "m"));
        assert_eq!(entry(1).id.len(), 32);
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let mut m = Manifest::new(header());
        m.entries.push(entry(0));
        let mut e = entry(1);
        e.payload = Payload::Path("images/x.png".into());
        e.filter_score = Some(0.5);
        e.kept = Some(true);
        m.entries.push(e);
        let text = m.to_jsonl().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            r#"{"task_name":"t","created_at":"1970-01-01T00:00:00Z","config_digest":"abc"}"#
        );
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["id", "class", "domain", "prompt", "backend_id", "seed", "payload"] {
            assert!(keys.contains(&k), "{k}");
        }
        assert!(v["payload"]["vector"].is_array());
        let v2: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(v2["payload"]["path"], "images/x.png");
        assert_eq!(v2["kept"], true);
        assert_eq!(Manifest::from_jsonl(&text).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = Manifest::new(header());
        m.entries.push(entry(0));
        m.entries.push(entry(0));
        assert!(m.validate().is_err());
    }

    #[test]
    fn resume_keeps_prefix_and_drops_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        {
            let mut w = ManifestWriter::create(&path, &header()).unwrap();
            w.append(&entry(0)).unwrap();
            w.append(&entry(1)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"id\":\"trunc").unwrap();
        drop(f);
        let mut w = ManifestWriter::resume(&path, &header()).unwrap();
        assert_eq!(w.existing().len(), 2);
        assert!(w.contains(&entry(1).id));
        assert!(w.append(&entry(1)).is_err());
        w.append(&entry(2)).unwrap();
        drop(w);
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.entries, vec![entry(0), entry(1), entry(2)]);

        let mut other = header();
        other.config_digest = "zzz".into();
        assert!(ManifestWriter::resume(&path, &other).is_err());
    }

    #[test]
    fn missing_file_is_named() {
        let p = Path::new("/nonexistent/manifest.jsonl");
        match Manifest::read(p) {
            Err(Error::MissingArtifact(q)) => assert_eq!(q, p),
            other => panic!("{other:?}"),
        }
    }
}
