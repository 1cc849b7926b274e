//! Flat cosine-similarity index, one-to-one comparison, one-to-many ranking,
//! and the metadata-driven pool builders for the XO/XC/XC+XB/XA/XM
//! evaluation protocols.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::*;
use crate::corpus::{Arch, Bits, Opt};
use crate::error::{FocError, Result};
use crate::metrics::RankedResult;
use crate::simmodel::{EmbeddingMeta, FunctionEmbedding};
use crate::util::derive_seed;

const MAGIC: [u8; 8] = *b"FOCIDX\x01\x00";
const VERSION: u32 = 1;

/// Cosine similarity of two embeddings; errors on a zero vector.
pub fn compare(a: &FunctionEmbedding, b: &FunctionEmbedding) -> Result<f64> {
    cosine(&a.vector, &b.vector)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FocError::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Err(FocError::invalid("cosine similarity is undefined for a zero vector"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Immutable flat index over function embeddings with a norm cache.
/// Queries are exhaustive scans; ties break by ascending id.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    entries: Vec<FunctionEmbedding>,
    norms: Vec<f64>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn build(entries: Vec<FunctionEmbedding>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut norms = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if by_id.insert(entry.id.clone(), i).is_some() {
                return Err(FocError::invalid(format!("duplicate function id: {}", entry.id)));
            }
            let norm = entry.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(FocError::invalid(format!(
                    "entry {}: embedding norm must be strictly positive and finite",
                    entry.id
                )));
            }
            norms.push(norm);
        }
        Ok(EmbeddingIndex {
            entries,
            norms,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FunctionEmbedding] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&FunctionEmbedding> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// Top-k entries by descending cosine similarity to the query, ties by
    /// ascending id. The query's own id is excluded iff `exclude_self`.
    pub fn query(
        &self,
        q: &FunctionEmbedding,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(FocError::invalid("k must be at least 1"));
        }
        if self.entries.is_empty() {
            return Err(FocError::invalid("the index is empty"));
        }
        let qnorm = q.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if qnorm == 0.0 {
            return Err(FocError::invalid("query embedding is the zero vector"));
        }
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            if exclude_self && entry.id == q.id {
                continue;
            }
            let dot: f64 = entry.vector.iter().zip(&q.vector).map(|(a, b)| a * b).sum();
            scored.push((i, dot / (self.norms[i] * qnorm)));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.entries[i].id.clone(), s))
            .collect())
    }

    /// Versioned binary container: little-endian, f64 vectors, documented
    /// layout (id, metadata snapshot, dim, components).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        write_magic(&mut w, &MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for entry in &self.entries {
            write_embedding(&mut w, entry)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut r = BufReader::new(file);
        read_magic(&mut r, &MAGIC)?;
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(FocError::parse(format!("unsupported index version {version}")));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let entries = (0..count)
            .map(|_| read_embedding(&mut r))
            .collect::<Result<Vec<_>>>()?;
        Self::build(entries)
    }
}

fn arch_tag(a: Arch) -> u8 {
    match a {
        Arch::X86 => 0,
        Arch::Arm => 1,
        Arch::Mips => 2,
    }
}

fn arch_from(tag: u8) -> Result<Arch> {
    match tag {
        0 => Ok(Arch::X86),
        1 => Ok(Arch::Arm),
        2 => Ok(Arch::Mips),
        other => Err(FocError::parse(format!("bad arch tag {other}"))),
    }
}

fn opt_tag(o: Opt) -> u8 {
    match o {
        Opt::O0 => 0,
        Opt::O1 => 1,
        Opt::O2 => 2,
        Opt::O3 => 3,
        Opt::Os => 4,
    }
}

fn opt_from(tag: u8) -> Result<Opt> {
    match tag {
        0 => Ok(Opt::O0),
        1 => Ok(Opt::O1),
        2 => Ok(Opt::O2),
        3 => Ok(Opt::O3),
        4 => Ok(Opt::Os),
        other => Err(FocError::parse(format!("bad opt tag {other}"))),
    }
}

fn write_embedding(w: &mut impl Write, e: &FunctionEmbedding) -> Result<()> {
    write_string(w, &e.id)?;
    w.write_u8(arch_tag(e.meta.arch))?;
    w.write_u8(if e.meta.bits == Bits::B64 { 64 } else { 32 })?;
    write_string(w, &e.meta.compiler)?;
    write_string(w, &e.meta.compiler_version)?;
    w.write_u8(opt_tag(e.meta.opt))?;
    write_string(w, &e.meta.project)?;
    write_string(w, &e.meta.binary)?;
    write_string(w, &e.meta.name)?;
    write_f64_slice(w, &e.vector)?;
    Ok(())
}

fn read_embedding(r: &mut impl Read) -> Result<FunctionEmbedding> {
    let id = read_string(r)?;
    let arch = arch_from(r.read_u8()?)?;
    let bits = match r.read_u8()? {
        32 => Bits::B32,
        64 => Bits::B64,
        other => return Err(FocError::parse(format!("bad bits tag {other}"))),
    };
    let compiler = read_string(r)?;
    let compiler_version = read_string(r)?;
    let opt = opt_from(r.read_u8()?)?;
    let project = read_string(r)?;
    let binary = read_string(r)?;
    let name = read_string(r)?;
    let vector = read_f64_slice(r)?;
    Ok(FunctionEmbedding {
        id,
        meta: EmbeddingMeta {
            arch,
            bits,
            compiler,
            compiler_version,
            opt,
            project,
            binary,
            name,
        },
        vector,
    })
}

/// Evaluation sub-task: which metadata axes a positive pair must differ on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubTask {
    XO,
    XC,
    XCXB,
    XA,
    XM,
}

impl std::fmt::Display for SubTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubTask::XO => write!(f, "XO"),
            SubTask::XC => write!(f, "XC"),
            SubTask::XCXB => write!(f, "XC+XB"),
            SubTask::XA => write!(f, "XA"),
            SubTask::XM => write!(f, "XM"),
        }
    }
}

impl std::str::FromStr for SubTask {
    type Err = FocError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_uppercase().as_str() {
            "XO" => Ok(SubTask::XO),
            "XC" => Ok(SubTask::XC),
            "XC+XB" | "XCXB" => Ok(SubTask::XCXB),
            "XA" => Ok(SubTask::XA),
            "XM" => Ok(SubTask::XM),
            other => Err(FocError::config(format!("unknown sub-task: {other}"))),
        }
    }
}

impl SubTask {
    /// Whether `candidate` is a valid positive for `query` under this
    /// sub-task's axis constraints.
    pub fn positive_ok(&self, query: &EmbeddingMeta, candidate: &EmbeddingMeta) -> bool {
        let same_compiler = query.compiler == candidate.compiler;
        let same_version = query.compiler_version == candidate.compiler_version;
        let same_opt = query.opt == candidate.opt;
        let same_arch = query.arch == candidate.arch;
        let same_bits = query.bits == candidate.bits;
        match self {
            SubTask::XO => !same_opt && same_compiler && same_version && same_arch && same_bits,
            SubTask::XC => !same_compiler && !same_version && !same_opt && same_arch && same_bits,
            SubTask::XCXB => !same_compiler && !same_version && !same_opt && !same_bits && same_arch,
            SubTask::XA => !same_arch && !same_bits,
            SubTask::XM => !same_compiler && !same_version && !same_opt && !same_arch && !same_bits,
        }
    }
}

/// Pool construction settings: one ground-truth positive plus
/// `pool_size - 1` negatives per query.
#[derive(Debug, Clone)]
pub struct PoolSpec {
    pub subtask: SubTask,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec {
            subtask: SubTask::XM,
            pool_size: 101,
            seed: 0,
        }
    }
}

/// One retrieval pool: the pool ids hold exactly one positive, the rest are
/// negatives from other groups. The query itself is not in the pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pool {
    pub query_id: String,
    pub positive_id: String,
    pub pool_ids: Vec<String>,
}

/// Grouping key over embedding metadata: same project and function name.
pub fn embedding_group_key(meta: &EmbeddingMeta) -> (String, String) {
    (meta.project.clone(), meta.name.clone())
}

/// Builds retrieval pools from embeddings. Every embedding with at least one
/// metadata-valid positive and enough out-of-group negatives becomes a
/// query; queries without a valid positive or with too few negatives are
/// skipped with a diagnostic.
pub fn build_pools(
    embeddings: &[FunctionEmbedding],
    spec: &PoolSpec,
) -> Result<(Vec<Pool>, Vec<String>)> {
    if spec.pool_size < 2 {
        return Err(FocError::invalid("pool size must be at least 2"));
    }
    let keys: Vec<(String, String)> =
        embeddings.iter().map(|e| embedding_group_key(&e.meta)).collect();
    let mut by_group: BTreeMap<&(String, String), Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        by_group.entry(key).or_default().push(i);
    }

    let mut pools = Vec::new();
    let mut skipped = Vec::new();
    for (qi, query) in embeddings.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, qi as u64));
        let group = &by_group[&keys[qi]];
        let positives: Vec<usize> = group
            .iter()
            .copied()
            .filter(|&ci| ci != qi && spec.subtask.positive_ok(&query.meta, &embeddings[ci].meta))
            .collect();
        if positives.is_empty() {
            skipped.push(format!(
                "query {}: no {} positive shares its group",
                query.id, spec.subtask
            ));
            continue;
        }
        let positive = positives[rand::seq::index::sample(&mut rng, positives.len(), 1).index(0)];

        let negatives_universe: Vec<usize> = (0..embeddings.len())
            .filter(|&ci| keys[ci] != keys[qi])
            .collect();
        let needed = spec.pool_size - 1;
        if negatives_universe.len() < needed {
            skipped.push(format!(
                "query {}: needs {needed} negatives, only {} candidates outside its group",
                query.id,
                negatives_universe.len()
            ));
            continue;
        }
        let chosen = rand::seq::index::sample(&mut rng, negatives_universe.len(), needed);
        let mut pool_ids: Vec<String> = chosen
            .iter()
            .map(|i| embeddings[negatives_universe[i]].id.clone())
            .collect();
        pool_ids.push(embeddings[positive].id.clone());
        pools.push(Pool {
            query_id: query.id.clone(),
            positive_id: embeddings[positive].id.clone(),
            pool_ids,
        });
    }
    Ok((pools, skipped))
}

/// Ranks each pool's candidates against its query by cosine similarity
/// (ties by ascending id) and reports the positive's 1-based rank.
pub fn evaluate_pools(index: &EmbeddingIndex, pools: &[Pool]) -> Result<Vec<RankedResult>> {
    let mut results = Vec::with_capacity(pools.len());
    for pool in pools {
        let query = index
            .get(&pool.query_id)
            .ok_or_else(|| FocError::invalid(format!("query {} not in index", pool.query_id)))?;
        let mut scored: Vec<(&str, f64)> = Vec::with_capacity(pool.pool_ids.len());
        for id in &pool.pool_ids {
            let entry = index
                .get(id)
                .ok_or_else(|| FocError::invalid(format!("pool member {id} not in index")))?;
            scored.push((id.as_str(), compare(query, entry)?));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(b.0)));
        let rank = scored
            .iter()
            .position(|(id, _)| *id == pool.positive_id)
            .map(|p| (p + 1) as u64);
        results.push(RankedResult {
            query_id: pool.query_id.clone(),
            rank,
        });
    }
    Ok(results)
}

/// Builds XM pools at each size and reports Recall@1 per size.
pub fn pool_sweep(
    embeddings: &[FunctionEmbedding],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if sizes.iter().any(|&s| s < 2) {
        return Err(FocError::invalid("every pool size must be at least 2"));
    }
    let index = EmbeddingIndex::build(embeddings.to_vec())?;
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let spec = PoolSpec {
            subtask: SubTask::XM,
            pool_size: size,
            seed,
        };
        let (pools, _) = build_pools(embeddings, &spec)?;
        if pools.is_empty() {
            return Err(FocError::invalid(format!(
                "no pools could be built at size {size}"
            )));
        }
        let results = evaluate_pools(&index, &pools)?;
        out.push((size, crate::metrics::recall_at_k(&results, 1)?));
    }
    Ok(out)
}
