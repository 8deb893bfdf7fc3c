//! Persistent jargon dictionary.
//!
//! Entries are keyed by (normalized term, context). Lookups are answered by a
//! single SQL statement synthesized in code from a fixed template with one
//! bound parameter per term; term text never becomes part of the SQL.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Mutex;

use rusqlite::{params, params_from_iter, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::valid_context_name;
use crate::text::{dedup_terms, normalize_term};

/// Context value of entries that apply in every context.
pub const ANY_CONTEXT: &str = "*";

const EXCHANGE_HEADER: [&str; 5] = ["term", "context_name", "extended_name", "description", "notes"];

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS jargon (
    term_key      TEXT NOT NULL,
    context_name  TEXT NOT NULL,
    term          TEXT NOT NULL,
    extended_name TEXT NOT NULL,
    description   TEXT NOT NULL,
    notes         TEXT,
    PRIMARY KEY (term_key, context_name)
);";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JargonEntry {
    pub term: String,
    pub context_name: String,
    pub extended_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub notes: Option<String>,
}

impl JargonEntry {
    pub fn new(
        term: impl Into<String>,
        context_name: impl Into<String>,
        extended_name: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            term: term.into(),
            context_name: context_name.into(),
            extended_name: extended_name.into(),
            description: description.into(),
            notes: None,
        }
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = Some(notes.into());
        self
    }

    pub fn key(&self) -> (String, String) {
        (normalize_term(&self.term), self.context_name.clone())
    }

    /// Trims fields and folds empty notes to `None`.
    fn validated(mut self) -> Result<Self, JargonError> {
        self.term = self.term.trim().to_string();
        self.context_name = self.context_name.trim().to_string();
        self.extended_name = self.extended_name.trim().to_string();
        self.description = self.description.trim().to_string();
        self.notes = self
            .notes
            .map(|n| n.trim().to_string())
            .filter(|n| !n.is_empty());
        if normalize_term(&self.term).is_empty() {
            return Err(JargonError::Invalid("term is empty".into()));
        }
        if self.extended_name.is_empty() {
            return Err(JargonError::Invalid(format!(
                "extended_name is empty for term `{}`",
                self.term
            )));
        }
        if self.context_name != ANY_CONTEXT && !valid_context_name(&self.context_name) {
            return Err(JargonError::MalformedContext(self.context_name.clone()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LookupResult {
    pub hits: Vec<JargonEntry>,
    /// Terms without an entry, in their original query spelling.
    pub misses: Vec<String>,
}

#[derive(Debug, Error)]
pub enum JargonError {
    #[error("dictionary store unavailable: {0}")]
    Store(#[from] rusqlite::Error),
    #[error("invalid entry: {0}")]
    Invalid(String),
    #[error("malformed context name {0:?}")]
    MalformedContext(String),
    #[error("no terms to look up")]
    EmptyTerms,
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: duplicate key ({term}, {context}) first seen on row {first_row}")]
    DuplicateKey {
        row: usize,
        first_row: usize,
        term: String,
        context: String,
    },
    #[error("dictionary file io: {0}")]
    Io(#[from] std::io::Error),
}

/// Jargon dictionary backed by an embedded SQLite database.
///
/// Writers are serialized by the connection lock; every lookup is a single
/// statement and therefore sees one consistent state.
#[derive(Debug)]
pub struct JargonStore {
    conn: Mutex<Connection>,
}

fn row_to_entry(row: &rusqlite::Row<'_>) -> rusqlite::Result<JargonEntry> {
    Ok(JargonEntry {
        term: row.get("term")?,
        context_name: row.get("context_name")?,
        extended_name: row.get("extended_name")?,
        description: row.get("description")?,
        notes: row.get("notes")?,
    })
}

/// The lookup statement for `n` terms: parameters `?1..?n` carry term keys,
/// `?{n+1}` the context.
fn lookup_sql(n: usize) -> String {
    let slots = (1..=n).map(|i| format!("?{i}")).collect::<Vec<_>>().join(", ");
    format!(
        "SELECT term_key, context_name, term, extended_name, description, notes \
         FROM jargon WHERE term_key IN ({slots}) AND context_name IN (?{ctx}, '{any}')",
        ctx = n + 1,
        any = ANY_CONTEXT
    )
}

impl JargonStore {
    pub fn open(path: &Path) -> Result<Self, JargonError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self, JargonError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, JargonError> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Inserts or replaces the entry with the same (normalized term, context).
    pub fn upsert_entry(&self, entry: JargonEntry) -> Result<JargonEntry, JargonError> {
        let entry = entry.validated()?;
        let conn = self.conn();
        Self::write(&conn, &entry)?;
        Ok(entry)
    }

    fn write(conn: &Connection, e: &JargonEntry) -> Result<(), JargonError> {
        conn.execute(
            "INSERT INTO jargon (term_key, context_name, term, extended_name, description, notes)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)
             ON CONFLICT(term_key, context_name) DO UPDATE SET
                term = excluded.term,
                extended_name = excluded.extended_name,
                description = excluded.description,
                notes = excluded.notes",
            params![
                normalize_term(&e.term),
                e.context_name,
                e.term,
                e.extended_name,
                e.description,
                e.notes
            ],
        )?;
        Ok(())
    }

    pub fn delete_entry(&self, term: &str, context_name: &str) -> Result<bool, JargonError> {
        let n = self.conn().execute(
            "DELETE FROM jargon WHERE term_key = ?1 AND context_name = ?2",
            params![normalize_term(term), context_name.trim()],
        )?;
        Ok(n > 0)
    }

    pub fn get(&self, term: &str, context_name: &str) -> Result<Option<JargonEntry>, JargonError> {
        Ok(self
            .conn()
            .query_row(
                "SELECT term, context_name, extended_name, description, notes
                 FROM jargon WHERE term_key = ?1 AND context_name = ?2",
                params![normalize_term(term), context_name.trim()],
                row_to_entry,
            )
            .optional()?)
    }

    /// All entries ordered by (normalized term, context).
    pub fn entries(&self) -> Result<Vec<JargonEntry>, JargonError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT term, context_name, extended_name, description, notes
             FROM jargon ORDER BY term_key, context_name",
        )?;
        let rows = stmt.query_map([], row_to_entry)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn len(&self) -> Result<usize, JargonError> {
        let n: i64 = self
            .conn()
            .query_row("SELECT COUNT(*) FROM jargon", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    pub fn is_empty(&self) -> Result<bool, JargonError> {
        Ok(self.len()? == 0)
    }

    /// Resolves `terms` in `context_name`.
    ///
    /// Terms are deduplicated by normalized key. An entry registered for the
    /// context wins over a context-independent one. Hits and misses keep the
    /// input order.
    pub fn lookup<S: AsRef<str>>(
        &self,
        terms: &[S],
        context_name: &str,
    ) -> Result<LookupResult, JargonError> {
        let context_name = context_name.trim();
        if !valid_context_name(context_name) {
            return Err(JargonError::MalformedContext(context_name.to_string()));
        }
        let terms = dedup_terms(terms);
        if terms.is_empty() {
            return Err(JargonError::EmptyTerms);
        }
        let keys: Vec<String> = terms.iter().map(|t| normalize_term(t)).collect();
        let mut found: BTreeMap<(String, bool), JargonEntry> = BTreeMap::new();
        {
            let conn = self.conn();
            let mut stmt = conn.prepare(&lookup_sql(keys.len()))?;
            let bound = keys.iter().map(String::as_str).chain(std::iter::once(context_name));
            let mut rows = stmt.query(params_from_iter(bound))?;
            while let Some(row) = rows.next()? {
                let key: String = row.get(0)?;
                let specific = row.get::<_, String>(1)? != ANY_CONTEXT;
                found.insert((key, specific), row_to_entry(row)?);
            }
        }
        let mut result = LookupResult::default();
        for (term, key) in terms.into_iter().zip(keys) {
            let hit = found
                .remove(&(key.clone(), true))
                .or_else(|| found.remove(&(key, false)));
            match hit {
                Some(entry) => result.hits.push(entry),
                None => result.misses.push(term),
            }
        }
        Ok(result)
    }

    /// SHA-256 over the schema and every row, in key order.
    pub fn digest(&self) -> Result<String, JargonError> {
        let conn = self.conn();
        let mut hasher = Sha256::new();
        {
            let mut stmt =
                conn.prepare("SELECT type, name, COALESCE(sql, '') FROM sqlite_master ORDER BY type, name")?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                for i in 0..3 {
                    let v: String = row.get(i)?;
                    hasher.update(v.as_bytes());
                    hasher.update([0x1f]);
                }
                hasher.update([0x1e]);
            }
        }
        let mut stmt = conn.prepare(
            "SELECT term_key, context_name, term, extended_name, description, notes
             FROM jargon ORDER BY term_key, context_name",
        )?;
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            for i in 0..5 {
                let v: String = row.get(i)?;
                hasher.update(v.as_bytes());
                hasher.update([0x1f]);
            }
            match row.get::<_, Option<String>>(5)? {
                Some(notes) => {
                    hasher.update([1]);
                    hasher.update(notes.as_bytes());
                }
                None => hasher.update([0]),
            }
            hasher.update([0x1e]);
        }
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    /// Reads a tab-delimited exchange file and upserts every row in one
    /// transaction. Nothing is written if any row is rejected.
    pub fn import_dictionary<R: Read>(&self, reader: R) -> Result<usize, JargonError> {
        let entries = read_exchange(reader)?;
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for e in &entries {
            Self::write(&tx, e)?;
        }
        tx.commit()?;
        Ok(entries.len())
    }

    pub fn import_path(&self, path: &Path) -> Result<usize, JargonError> {
        self.import_dictionary(std::fs::File::open(path)?)
    }

    pub fn export_dictionary<W: Write>(&self, writer: W) -> Result<usize, JargonError> {
        let entries = self.entries()?;
        let mut out = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| JargonError::Io(std::io::Error::other(e));
        out.write_record(EXCHANGE_HEADER).map_err(io)?;
        for e in &entries {
            out.write_record([
                e.term.as_str(),
                e.context_name.as_str(),
                e.extended_name.as_str(),
                e.description.as_str(),
                e.notes.as_deref().unwrap_or(""),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(entries.len())
    }

    pub fn export_path(&self, path: &Path) -> Result<usize, JargonError> {
        let file = std::fs::File::create(path)?;
        let n = self.export_dictionary(std::io::BufWriter::new(&file))?;
        file.sync_all()?;
        Ok(n)
    }
}

/// Parses and validates an exchange file. Row numbers count the header as
/// row 1.
pub fn read_exchange<R: Read>(reader: R) -> Result<Vec<JargonEntry>, JargonError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(JargonError::MalformedRow {
                row: 1,
                reason: e.to_string(),
            })
        }
        None => {
            return Err(JargonError::MalformedRow {
                row: 1,
                reason: "missing header row".into(),
            })
        }
    };
    if header.iter().collect::<Vec<_>>() != EXCHANGE_HEADER {
        return Err(JargonError::MalformedRow {
            row: 1,
            reason: format!("header must be {}", EXCHANGE_HEADER.join("\\t")),
        });
    }
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut entries = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| JargonError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != EXCHANGE_HEADER.len() {
            return Err(JargonError::MalformedRow {
                row,
                reason: format!("expected {} columns, found {}", EXCHANGE_HEADER.len(), record.len()),
            });
        }
        let entry = JargonEntry {
            term: record[0].to_string(),
            context_name: record[1].to_string(),
            extended_name: record[2].to_string(),
            description: record[3].to_string(),
            notes: Some(record[4].to_string()),
        }
        .validated()
        .map_err(|e| JargonError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let key = entry.key();
        if let Some(&first_row) = seen.get(&key) {
            return Err(JargonError::DuplicateKey {
                row,
                first_row,
                term: entry.term,
                context: entry.context_name,
            });
        }
        seen.insert(key, row);
        entries.push(entry);
    }
    Ok(entries)
}

/// Distinct normalized keys of `terms`.
pub fn normalized_set<S: AsRef<str>>(terms: &[S]) -> HashSet<String> {
    terms
        .iter()
        .map(|t| normalize_term(t.as_ref()))
        .filter(|k| !k.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> JargonStore {
        let store = JargonStore::in_memory().unwrap();
        store
            .upsert_entry(
                JargonEntry::new(
                    "PUC",
                    "nand-design",
                    "Peripheral Under Cell",
                    "Places peripheral circuitry beneath the memory array.",
                )
                .with_notes("Also called CuA."),
            )
            .unwrap();
        store
            .upsert_entry(JargonEntry::new("RAG", "genetics", "Recombination-Activating Gene", "Gene family driving V(D)J recombination."))
            .unwrap();
        store
            .upsert_entry(JargonEntry::new("RAG", "llm-systems", "Retrieval Augmented Generation", "Retrieval before generation."))
            .unwrap();
        store
            .upsert_entry(JargonEntry::new("ECC", ANY_CONTEXT, "Error Correcting Code", "Redundancy for bit error correction."))
            .unwrap();
        store
    }

    #[test]
    fn lookup_hits_by_context() {
        let s = fixture();
        let r = s.lookup(&["PUC"], "nand-design").unwrap();
        assert_eq!(r.hits[0].extended_name, "Peripheral Under Cell");
        assert!(r.misses.is_empty());
        assert_eq!(
            s.lookup(&["RAG"], "genetics").unwrap().hits[0].extended_name,
            "Recombination-Activating Gene"
        );
        assert_eq!(
            s.lookup(&["RAG"], "llm-systems").unwrap().hits[0].extended_name,
            "Retrieval Augmented Generation"
        );
    }

    #[test]
    fn lookup_normalizes_and_reports_misses_in_order() {
        let s = fixture();
        assert_eq!(s.lookup(&["puc"], "nand-design").unwrap().hits[0].term, "PUC");
        let r = s.lookup(&["QZXV", " puc ", "ECC", "zz", "PUC"], "nand-design").unwrap();
        assert_eq!(
            r.hits.iter().map(|e| e.term.as_str()).collect::<Vec<_>>(),
            vec!["PUC", "ECC"]
        );
        assert_eq!(r.misses, vec!["QZXV", "zz"]);
        let r = s.lookup(&["QZXV"], "genetics").unwrap();
        assert!(r.hits.is_empty());
        assert_eq!(r.misses, vec!["QZXV"]);
    }

    #[test]
    fn specific_context_wins_over_wildcard() {
        let s = fixture();
        s.upsert_entry(JargonEntry::new("ECC", "nand-design", "Error Correction Code engine", "On-die ECC block."))
            .unwrap();
        assert_eq!(
            s.lookup(&["ECC"], "nand-design").unwrap().hits[0].extended_name,
            "Error Correction Code engine"
        );
        assert_eq!(
            s.lookup(&["ECC"], "genetics").unwrap().hits[0].extended_name,
            "Error Correcting Code"
        );
    }

    #[test]
    fn lookup_preconditions() {
        let s = fixture();
        assert!(matches!(s.lookup(&["  "], "nand-design"), Err(JargonError::EmptyTerms)));
        assert!(matches!(s.lookup::<&str>(&[], "nand-design"), Err(JargonError::EmptyTerms)));
        assert!(matches!(
            s.lookup(&["PUC"], "nand'; DROP TABLE jargon;--"),
            Err(JargonError::MalformedContext(_))
        ));
        assert!(matches!(s.lookup(&["PUC"], "*"), Err(JargonError::MalformedContext(_))));
    }

    #[test]
    fn upsert_replaces_and_validates() {
        let s = JargonStore::in_memory().unwrap();
        s.upsert_entry(JargonEntry::new("NEW", "ctx", "First", "")).unwrap();
        assert_eq!(s.lookup(&["new"], "ctx").unwrap().hits[0].extended_name, "First");
        s.upsert_entry(JargonEntry::new("new", "ctx", "Second", "")).unwrap();
        assert_eq!(s.len().unwrap(), 1);
        assert_eq!(s.lookup(&["NEW"], "ctx").unwrap().hits[0].extended_name, "Second");
        assert!(matches!(
            s.upsert_entry(JargonEntry::new("X", "ctx", "  ", "")),
            Err(JargonError::Invalid(_))
        ));
        assert!(s.delete_entry("NEW", "ctx").unwrap());
        assert!(s.is_empty().unwrap());
    }

    #[test]
    fn import_counts_and_rejects_duplicates_atomically() {
        let s = JargonStore::in_memory().unwrap();
        let ok = "term\tcontext_name\textended_name\tdescription\tnotes\n\
                  PUC\tnand-design\tPeripheral Under Cell\tdesc\t\n\
                  CuA\tnand-design\tCMOS under Array\tdesc\tsee PUC\n\
                  TLC\t*\tTriple-Level Cell\t3 bits per cell\t\n";
        assert_eq!(s.import_dictionary(ok.as_bytes()).unwrap(), 3);
        let before = s.digest().unwrap();
        let dup = "term\tcontext_name\textended_name\tdescription\tnotes\n\
                   SLC\t*\tSingle-Level Cell\t1 bit\t\n\
                   slc\t*\tSingle Level Cell\t1 bit\t\n";
        match s.import_dictionary(dup.as_bytes()) {
            Err(JargonError::DuplicateKey { row, first_row, .. }) => {
                assert_eq!((row, first_row), (3, 2));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
        assert_eq!(s.digest().unwrap(), before);
        let short = "term\tcontext_name\textended_name\tdescription\tnotes\nSLC\t*\n";
        assert!(matches!(
            s.import_dictionary(short.as_bytes()),
            Err(JargonError::MalformedRow { row: 2, .. })
        ));
        let bad_header = "a\tb\n";
        assert!(matches!(
            s.import_dictionary(bad_header.as_bytes()),
            Err(JargonError::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn export_then_import_is_identity() {
        let s = fixture();
        s.upsert_entry(JargonEntry::new("TAB", "ctx", "Has \"quotes\"\tand tab", "multi\nline")).unwrap();
        let mut buf = Vec::new();
        assert_eq!(s.export_dictionary(&mut buf).unwrap(), 5);
        let t = JargonStore::in_memory().unwrap();
        assert_eq!(t.import_dictionary(buf.as_slice()).unwrap(), 5);
        assert_eq!(s.entries().unwrap(), t.entries().unwrap());
        assert_eq!(s.digest().unwrap(), t.digest().unwrap());
    }

    #[test]
    fn persists_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.db");
        {
            let s = JargonStore::open(&path).unwrap();
            s.upsert_entry(JargonEntry::new("PUC", "nand-design", "Peripheral Under Cell", "")).unwrap();
        }
        let s = JargonStore::open(&path).unwrap();
        assert_eq!(s.len().unwrap(), 1);
    }

    proptest! {
        #[test]
        fn hits_and_misses_partition_the_input(
            picks in proptest::collection::vec(
                prop_oneof![
                    Just("PUC".to_string()), Just("puc".to_string()), Just("ECC".to_string()),
                    Just("RAG".to_string()), "[A-Z]{2,5}"
                ],
                1..8)
        ) {
            let s = fixture();
            let r = s.lookup(&picks, "nand-design").unwrap();
            let hits: Vec<String> = r.hits.iter().map(|e| e.term.clone()).collect();
            let hit_set = normalized_set(&hits);
            let miss_set = normalized_set(&r.misses);
            prop_assert!(hit_set.is_disjoint(&miss_set));
            let union: HashSet<String> = hit_set.union(&miss_set).cloned().collect();
            prop_assert_eq!(union, normalized_set(&picks));
            prop_assert_eq!(hits.len() + r.misses.len(), normalized_set(&picks).len());
        }
    }
}
