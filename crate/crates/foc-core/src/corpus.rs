//! Function-record data model, corpus ingestion, and duplicate removal.
//!
//! A corpus file is line-delimited: one JSON object per line with the fields
//! of [`FunctionRecord`] in snake_case. Lines starting with `#` are headers
//! and are skipped. Malformed lines are skipped with a diagnostic rather than
//! aborting the whole ingest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FocError, Result};
use crate::util::fnv1a64;

/// Instruction-set architecture of the compiled function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    X86,
    Arm,
    Mips,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::X86 => write!(f, "x86"),
            Arch::Arm => write!(f, "arm"),
            Arch::Mips => write!(f, "mips"),
        }
    }
}

/// Pointer width of the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Bits {
    B32,
    B64,
}

impl TryFrom<u16> for Bits {
    type Error = String;

    fn try_from(v: u16) -> std::result::Result<Self, String> {
        match v {
            32 => Ok(Bits::B32),
            64 => Ok(Bits::B64),
            other => Err(format!("bits must be 32 or 64, got {other}")),
        }
    }
}

impl From<Bits> for u16 {
    fn from(b: Bits) -> u16 {
        match b {
            Bits::B32 => 32,
            Bits::B64 => 64,
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u16::from(*self))
    }
}

/// Compiler optimization level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opt {
    O0,
    O1,
    O2,
    O3,
    Os,
}

impl fmt::Display for Opt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opt::O0 => write!(f, "O0"),
            Opt::O1 => write!(f, "O1"),
            Opt::O2 => write!(f, "O2"),
            Opt::O3 => write!(f, "O3"),
            Opt::Os => write!(f, "Os"),
        }
    }
}

/// One decompiled function together with its build metadata.
///
/// `blocks` holds one ordered opcode-mnemonic list per basic block; `edges`
/// are directed (from, to) block-index pairs. `name` and `source_file` may be
/// empty for stripped targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub project: String,
    pub binary: String,
    #[serde(default)]
    pub source_file: String,
    #[serde(default)]
    pub name: String,
    pub arch: Arch,
    pub bits: Bits,
    pub compiler: String,
    pub compiler_version: String,
    pub opt: Opt,
    pub pseudo_code: String,
    pub blocks: Vec<Vec<String>>,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub callees: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl FunctionRecord {
    /// Checks the structural invariants a record must satisfy to enter a
    /// corpus: non-empty id and in-range edge endpoints. Empty `blocks` are
    /// allowed here and rejected later at featurization.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(FocError::invalid("record id must not be empty"));
        }
        for &(from, to) in &self.edges {
            if from >= self.blocks.len() || to >= self.blocks.len() {
                return Err(FocError::invalid(format!(
                    "record {}: edge ({from}, {to}) out of range for {} blocks",
                    self.id,
                    self.blocks.len()
                )));
            }
        }
        Ok(())
    }

    /// Canonical bytes for exact dedup: UTF-8 pseudo-code, then the flattened
    /// opcode lists joined with newlines. Build metadata is deliberately
    /// excluded so identical code from different compile environments
    /// collapses.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pseudo_code.len() + 64);
        out.extend_from_slice(self.pseudo_code.as_bytes());
        out.push(b'\n');
        let mut first = true;
        for block in &self.blocks {
            for op in block {
                if !first {
                    out.push(b'\n');
                }
                out.extend_from_slice(op.as_bytes());
                first = false;
            }
        }
        out
    }

    fn content_digest(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.canonical_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// Where a corpus came from. The timestamp is informational and is not
/// serialized: corpus files must be byte-identical across reruns.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub source: String,
    pub ingested_at: std::time::SystemTime,
}

/// An in-memory corpus. No two records share an id.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<FunctionRecord>,
    provenance: Provenance,
}

impl Corpus {
    /// Builds a corpus from records, enforcing id uniqueness.
    pub fn new(records: Vec<FunctionRecord>, source: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(FocError::invalid(format!("duplicate record id: {}", r.id)));
            }
        }
        drop(seen);
        Ok(Corpus {
            records,
            provenance: Provenance {
                source: source.into(),
                ingested_at: std::time::SystemTime::now(),
            },
        })
    }

    pub fn records(&self) -> &[FunctionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn get(&self, id: &str) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Writes the corpus as line-delimited JSON records.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record)
                .map_err(|e| FocError::parse(format!("serialize record {}: {e}", record.id)))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }
}

/// Result of ingesting a corpus file: the well-formed records plus a
/// diagnostic per skipped line.
#[derive(Debug)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    /// (1-based line number, reason) for every malformed line.
    pub skipped: Vec<(usize, String)>,
}

impl IngestOutcome {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Reads a line-delimited corpus file. Blank lines and `#` header lines are
/// ignored; malformed lines (bad JSON, invalid edges, duplicate ids) are
/// skipped and reported. An unreadable file is fatal.
pub fn ingest(path: impl AsRef<Path>) -> Result<IngestOutcome> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| FocError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    ingest_reader(std::io::BufReader::new(file), &path.display().to_string())
}

/// Same as [`ingest`] but over any reader; `source` labels the provenance.
pub fn ingest_reader(reader: impl BufRead, source: &str) -> Result<IngestOutcome> {
    let mut records: Vec<FunctionRecord> = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: FunctionRecord = match serde_json::from_str(trimmed) {
            Ok(r) => r,
            Err(e) => {
                skipped.push((lineno, format!("invalid record: {e}")));
                continue;
            }
        };
        if let Err(e) = record.validate() {
            skipped.push((lineno, e.to_string()));
            continue;
        }
        if !seen.insert(record.id.clone()) {
            skipped.push((lineno, format!("duplicate record id: {}", record.id)));
            continue;
        }
        records.push(record);
    }
    Ok(IngestOutcome {
        corpus: Corpus {
            records,
            provenance: Provenance {
                source: source.to_string(),
                ingested_at: std::time::SystemTime::now(),
            },
        },
        skipped,
    })
}

/// Collapses records whose canonical byte serialization hashes equal, keeping
/// the first occurrence. Order is otherwise preserved.
pub fn dedup_exact(corpus: &Corpus) -> Corpus {
    let mut seen: HashSet<[u8; 32]> = HashSet::with_capacity(corpus.len());
    let records = corpus
        .records
        .iter()
        .filter(|r| seen.insert(r.content_digest()))
        .cloned()
        .collect();
    Corpus {
        records,
        provenance: corpus.provenance.clone(),
    }
}

const SHINGLE_TOKENS: usize = 5;
const MINHASH_PERMUTATIONS: usize = 256;
const MINHASH_SEED: u64 = 0x666f_632d_6d68; // fixed so signatures replay
const LSH_BANDS: usize = 16;
const LSH_ROWS: usize = MINHASH_PERMUTATIONS / LSH_BANDS;

/// Tokens for near-duplicate shingling: maximal runs of `[A-Za-z0-9_]` in the
/// pseudo-code; whitespace and punctuation only separate.
pub fn shingle_tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Hashed 5-token shingle set of a text. Texts shorter than one shingle
/// contribute their whole token sequence as a single shingle.
pub fn shingle_set(text: &str) -> HashSet<u64> {
    let tokens = shingle_tokens(text);
    let mut set = HashSet::new();
    if tokens.is_empty() {
        return set;
    }
    let hash_window = |window: &[&str]| {
        let mut bytes = Vec::new();
        for (i, t) in window.iter().enumerate() {
            if i > 0 {
                bytes.push(0x1f);
            }
            bytes.extend_from_slice(t.as_bytes());
        }
        fnv1a64(&bytes)
    };
    if tokens.len() < SHINGLE_TOKENS {
        set.insert(hash_window(&tokens));
    } else {
        for window in tokens.windows(SHINGLE_TOKENS) {
            set.insert(hash_window(window));
        }
    }
    set
}

/// Exact Jaccard similarity of the two texts' shingle sets. This is the
/// brute-force quantity the MinHash signature estimates.
pub fn shingle_jaccard(a: &str, b: &str) -> f64 {
    let sa = shingle_set(a);
    let sb = shingle_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// MinHash signature: componentwise minimum of 256 seeded permutation hashes
/// over the shingle set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature(Vec<u64>);

fn permutation_params() -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(MINHASH_SEED);
    (0..MINHASH_PERMUTATIONS)
        .map(|_| {
            let a: u64 = rng.random::<u64>() | 1;
            let b: u64 = rng.random();
            (a, b)
        })
        .collect()
}

/// Computes the signature of a text's shingle set.
pub fn minhash_signature(text: &str) -> MinHashSignature {
    minhash_signature_with(&permutation_params(), text)
}

fn minhash_signature_with(params: &[(u64, u64)], text: &str) -> MinHashSignature {
    let shingles = shingle_set(text);
    let values = params
        .iter()
        .map(|&(a, b)| {
            shingles
                .iter()
                .map(|&s| a.wrapping_mul(s).wrapping_add(b))
                .min()
                .unwrap_or(u64::MAX)
        })
        .collect();
    MinHashSignature(values)
}

/// Estimated Jaccard similarity: fraction of equal signature components.
pub fn minhash_estimate(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    debug_assert_eq!(a.0.len(), b.0.len());
    let matches = a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count();
    matches as f64 / a.0.len() as f64
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Removes near-duplicates: clusters of records whose estimated shingle
/// Jaccard similarity is at least `threshold` keep only the member with the
/// smallest id. Candidate pairs come from LSH banding over the signatures, so
/// pairs well below the threshold are never compared.
pub fn dedup_minhash(corpus: &Corpus, threshold: f64) -> Result<Corpus> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(FocError::invalid(format!(
            "minhash threshold must be in (0, 1], got {threshold}"
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Ok(corpus.clone());
    }

    let params = permutation_params();
    let signatures: Vec<MinHashSignature> = {
        use rayon::prelude::*;
        corpus
            .records
            .par_iter()
            .map(|r| minhash_signature_with(&params, &r.pseudo_code))
            .collect()
    };

    let mut candidates: HashSet<(usize, usize)> = HashSet::new();
    for band in 0..LSH_BANDS {
        let lo = band * LSH_ROWS;
        let hi = lo + LSH_ROWS;
        let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
        for (idx, sig) in signatures.iter().enumerate() {
            let mut bytes = Vec::with_capacity(LSH_ROWS * 8);
            for v in &sig.0[lo..hi] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            buckets.entry(fnv1a64(&bytes)).or_default().push(idx);
        }
        for members in buckets.values() {
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    candidates.insert((members[i].min(members[j]), members[i].max(members[j])));
                }
            }
        }
    }

    let mut uf = UnionFind::new(n);
    let mut pairs: Vec<(usize, usize)> = candidates.into_iter().collect();
    pairs.sort_unstable();
    for (i, j) in pairs {
        if minhash_estimate(&signatures[i], &signatures[j]) >= threshold {
            uf.union(i, j);
        }
    }

    // One representative per cluster: smallest id.
    let mut keeper: BTreeMap<usize, usize> = BTreeMap::new();
    for idx in 0..n {
        let root = uf.find(idx);
        let entry = keeper.entry(root).or_insert(idx);
        if corpus.records[idx].id < corpus.records[*entry].id {
            *entry = idx;
        }
    }
    let keep: HashSet<usize> = keeper.values().copied().collect();
    let records = corpus
        .records
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, r)| r.clone())
        .collect();
    Ok(Corpus {
        records,
        provenance: corpus.provenance.clone(),
    })
}
