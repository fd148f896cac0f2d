use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Entry, Record, TableId, Tables, FORMAT_VERSION};
use crate::domain::{Segment, SentencePair};
use crate::error::{Error, Result};
use crate::store::{ProjectRecord, RunLease};
use crate::triage::ReviewTask;

const MAGIC: &str = "corpusforge-store";
/// Journals longer than this are rewritten as one snapshot at open.
const COMPACT_AFTER: usize = 512;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(super) struct Op {
    pub table: TableId,
    pub key: String,
    /// Final entry, or `null` for a deletion.
    pub entry: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Commit { seq: u64, ops: Vec<Op> },
    Snapshot { seq: u64, snapshot: Tables },
}

pub(super) struct Journal {
    file: File,
    path: PathBuf,
    seq: u64,
}

fn apply_one<R: Record>(tables: &mut Tables, key: String, entry: Option<Value>) -> Result<()> {
    let table = R::table_mut(tables);
    match entry {
        Some(v) => {
            let e: Entry<R> =
                serde_json::from_value(v).map_err(|e| Error::Storage(format!("corrupt record `{key}`: {e}")))?;
            table.insert(key, e);
        }
        None => {
            table.remove(&key);
        }
    }
    Ok(())
}

fn apply(tables: &mut Tables, op: Op) -> Result<()> {
    match op.table {
        TableId::Projects => apply_one::<ProjectRecord>(tables, op.key, op.entry),
        TableId::Corpora => apply_one::<Vec<Segment>>(tables, op.key, op.entry),
        TableId::Pairs => apply_one::<SentencePair>(tables, op.key, op.entry),
        TableId::Tasks => apply_one::<ReviewTask>(tables, op.key, op.entry),
        TableId::Runs => apply_one::<RunLease>(tables, op.key, op.entry),
    }
}

fn write_line(out: &mut impl Write, value: &impl Serialize) -> Result<()> {
    let mut buf = serde_json::to_vec(value).map_err(|e| Error::Storage(e.to_string()))?;
    buf.push(b'\n');
    out.write_all(&buf)?;
    Ok(())
}

impl Journal {
    pub fn open(path: &Path) -> Result<(Journal, Tables)> {
        if !path.exists() {
            let mut file = OpenOptions::new().create_new(true).read(true).append(true).open(path)?;
            write_line(
                &mut file,
                &Header {
                    format: MAGIC.into(),
                    version: FORMAT_VERSION,
                },
            )?;
            file.sync_all()?;
            sync_dir(path);
            return Ok((
                Journal {
                    file,
                    path: path.to_path_buf(),
                    seq: 0,
                },
                Tables::default(),
            ));
        }

        let mut reader = BufReader::new(File::open(path)?);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: Header = serde_json::from_str(header_line.trim_end())
            .map_err(|_| Error::Storage(format!("{} is not a corpusforge store", path.display())))?;
        if header.format != MAGIC {
            return Err(Error::Storage(format!("{} is not a corpusforge store", path.display())));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Storage(format!(
                "store format version {} is not supported (expected {FORMAT_VERSION})",
                header.version
            )));
        }

        let mut tables = Tables::default();
        let mut seq = 0;
        let mut good_len = header_line.len() as u64;
        let mut lines = 0usize;
        loop {
            let mut line = String::new();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            let complete = line.ends_with('\n');
            match serde_json::from_str::<Line>(line.trim_end_matches('\n')) {
                Ok(Line::Commit { seq: s, ops }) if complete => {
                    for op in ops {
                        apply(&mut tables, op)?;
                    }
                    seq = s;
                }
                Ok(Line::Snapshot { seq: s, snapshot }) if complete => {
                    tables = snapshot;
                    seq = s;
                }
                // A torn tail from a crash mid-append: the commit never returned.
                _ if !complete => break,
                _ => {
                    return Err(Error::Storage(format!(
                        "corrupt journal entry after byte {good_len} in {}",
                        path.display()
                    )));
                }
            }
            good_len += n as u64;
            lines += 1;
        }
        drop(reader);

        let file = OpenOptions::new().read(true).append(true).open(path)?;
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        let mut journal = Journal {
            file,
            path: path.to_path_buf(),
            seq,
        };
        if lines > COMPACT_AFTER {
            journal.compact(&tables)?;
        }
        Ok((journal, tables))
    }

    pub fn append(&mut self, ops: &[Op]) -> Result<()> {
        let seq = self.seq + 1;
        let mut buf = serde_json::to_vec(&serde_json::json!({ "seq": seq, "ops": ops }))
            .map_err(|e| Error::Storage(e.to_string()))?;
        buf.push(b'\n');
        let start = self.file.seek(SeekFrom::End(0))?;
        let written = self.file.write_all(&buf).and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            // Leave no partial line behind for the next commit to append to.
            let _ = self.file.set_len(start);
            return Err(e.into());
        }
        self.seq = seq;
        Ok(())
    }

    /// Rewrites the journal as header + one snapshot line, atomically.
    fn compact(&mut self, tables: &Tables) -> Result<()> {
        let tmp = self.path.with_extension("db.tmp");
        {
            let mut out = File::create(&tmp)?;
            write_line(
                &mut out,
                &Header {
                    format: MAGIC.into(),
                    version: FORMAT_VERSION,
                },
            )?;
            write_line(&mut out, &serde_json::json!({ "seq": self.seq, "snapshot": tables }))?;
            out.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        sync_dir(&self.path);
        self.file = OpenOptions::new().read(true).append(true).open(&self.path)?;
        Ok(())
    }
}

fn sync_dir(path: &Path) {
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
}
