//! The model checkpoint: a versioned binary container bundling the tokenizer
//! vocabulary, the opcode BoW vocabularies, every parameter tensor (row-major
//! with declared shapes), frozen flags, and the RNG seed used at
//! initialization.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::*;
use crate::corpus::{Corpus, FunctionRecord};
use crate::cryptoclass::Registry;
use crate::error::{FocError, Result};
use crate::features::{build_vocab, OpcodeCategoryMap, ARITH_VOCAB_LEN, GENERAL_VOCAB_LEN};
use crate::semencoder::{SemEncoder, Tokenizer, DEFAULT_D_SEM, DEFAULT_OOV_BUCKETS, DEFAULT_VOCAB_SIZE};
use crate::simmodel::{
    embed_function, forward_ablated, prepare_function, Ablation, FunctionEmbedding, FusionParams,
    GcnParams, DEFAULT_D_G, DEFAULT_GCN_LAYERS,
};

const MAGIC: [u8; 8] = *b"FOCCKPT\x01";
const VERSION: u32 = 1;

/// Architecture hyperparameters chosen at initialization.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub d_sem: usize,
    pub d_g: usize,
    pub gcn_layers: usize,
    pub vocab_size: usize,
    pub oov_buckets: usize,
    pub gcn_strict: bool,
    /// Function-level feature width: 4 counts + keyword-bag slots.
    pub crypto_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_sem: DEFAULT_D_SEM,
            d_g: DEFAULT_D_G,
            gcn_layers: DEFAULT_GCN_LAYERS,
            vocab_size: DEFAULT_VOCAB_SIZE,
            oov_buckets: DEFAULT_OOV_BUCKETS,
            gcn_strict: false,
            crypto_dim: crate::features::CRYPTO_FEATURE_DIM,
        }
    }
}

/// Complete parameter set of the similarity model.
#[derive(Debug, Clone)]
pub struct SimCheckpoint {
    /// Seed the tensors were initialized from.
    pub seed: u64,
    pub encoder: SemEncoder,
    pub gcn: GcnParams,
    pub fusion: FusionParams,
    /// Opcode BoW vocabularies pinned at build time; `None` slots are
    /// reserved.
    pub general_vocab: Vec<Option<String>>,
    pub arith_vocab: Vec<Option<String>>,
}

impl SimCheckpoint {
    /// Initializes all tensors from the seed (uniform in
    /// +/- sqrt(6/(fan_in+fan_out)), biases zero) with the given tokenizer
    /// and opcode vocabularies. The encoder starts frozen.
    pub fn init(
        config: &ModelConfig,
        tokenizer: Tokenizer,
        general_vocab: Vec<Option<String>>,
        arith_vocab: Vec<Option<String>>,
        seed: u64,
    ) -> Result<Self> {
        if general_vocab.len() != GENERAL_VOCAB_LEN || arith_vocab.len() != ARITH_VOCAB_LEN {
            return Err(FocError::invalid("opcode vocabulary sizes must be 120/76"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = SemEncoder::init(tokenizer, config.d_sem, &mut rng);
        encoder.frozen = true;
        let gcn = GcnParams::init(config.d_g, config.gcn_layers, config.gcn_strict, &mut rng);
        let fusion = FusionParams::init(config.d_sem + config.d_g + config.crypto_dim, &mut rng);
        Ok(SimCheckpoint {
            seed,
            encoder,
            gcn,
            fusion,
            general_vocab,
            arith_vocab,
        })
    }

    /// Fresh checkpoint for a corpus: tokenizer fitted on the pseudo-code,
    /// opcode vocabularies from corpus frequencies.
    pub fn init_from_corpus(
        config: &ModelConfig,
        corpus: &Corpus,
        map: &OpcodeCategoryMap,
        seed: u64,
    ) -> Result<Self> {
        let tokenizer = Tokenizer::fit(
            corpus.records().iter().map(|r| r.pseudo_code.as_str()),
            config.vocab_size,
            config.oov_buckets,
        );
        let filled = build_vocab(corpus, map)?;
        Self::init(config, tokenizer, filled.general_vocab, filled.arith_vocab, seed)
    }

    /// Fresh checkpoint for encoder-only training: tokenizer fitted on code
    /// pair text; opcode vocabularies left reserved until a corpus is seen.
    pub fn init_from_texts<'a>(
        config: &ModelConfig,
        texts: impl IntoIterator<Item = &'a str>,
        seed: u64,
    ) -> Result<Self> {
        let tokenizer = Tokenizer::fit(texts, config.vocab_size, config.oov_buckets);
        Self::init(
            config,
            tokenizer,
            vec![None; GENERAL_VOCAB_LEN],
            vec![None; ARITH_VOCAB_LEN],
            seed,
        )
    }

    pub fn d_sem(&self) -> usize {
        self.encoder.d_sem()
    }

    pub fn d_g(&self) -> usize {
        self.gcn.d_g()
    }

    pub fn crypto_dim(&self) -> usize {
        self.fusion.input_dim() - self.d_sem() - self.d_g()
    }

    pub fn has_opcode_vocab(&self) -> bool {
        self.general_vocab.iter().any(Option::is_some)
            || self.arith_vocab.iter().any(Option::is_some)
    }

    /// Installs the checkpoint's vocabularies into a category map so
    /// featurization matches what the model was trained on.
    pub fn category_map(&self, base: &OpcodeCategoryMap) -> Result<OpcodeCategoryMap> {
        let mut map = base.clone();
        map.set_vocab(self.general_vocab.clone(), self.arith_vocab.clone())?;
        Ok(map)
    }

    /// Embeds one record. `map` must already carry this checkpoint's
    /// vocabularies (see [`SimCheckpoint::category_map`]).
    pub fn embed_record(
        &self,
        record: &FunctionRecord,
        registry: &Registry,
        map: &OpcodeCategoryMap,
    ) -> Result<FunctionEmbedding> {
        embed_function(record, &self.encoder, &self.gcn, &self.fusion, registry, map)
    }

    /// Embeds one record with chosen fusion inputs zeroed.
    pub fn embed_record_ablated(
        &self,
        record: &FunctionRecord,
        registry: &Registry,
        map: &OpcodeCategoryMap,
        ablation: Ablation,
    ) -> Result<FunctionEmbedding> {
        let prep = prepare_function(record, &self.encoder.tokenizer, registry, map, self.gcn.strict)?;
        let vector = forward_ablated(&prep, &self.encoder, &self.gcn, &self.fusion, ablation)?;
        Ok(FunctionEmbedding {
            id: prep.id,
            meta: prep.meta,
            vector: vector.to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_to(&mut BufWriter::new(file))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        write_magic(w, &MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u8(self.encoder.frozen as u8)?;
        w.write_u8(self.gcn.strict as u8)?;

        write_string_list(w, self.encoder.tokenizer.vocab())?;
        w.write_u32::<LittleEndian>(self.encoder.tokenizer.oov_buckets() as u32)?;

        w.write_u32::<LittleEndian>(self.general_vocab.len() as u32)?;
        for slot in &self.general_vocab {
            write_opt_string(w, slot)?;
        }
        w.write_u32::<LittleEndian>(self.arith_vocab.len() as u32)?;
        for slot in &self.arith_vocab {
            write_opt_string(w, slot)?;
        }

        write_matrix(w, &self.encoder.embeddings)?;
        write_matrix(w, &self.gcn.feat_w)?;
        write_vector(w, &self.gcn.feat_b)?;
        w.write_u32::<LittleEndian>(self.gcn.layers.len() as u32)?;
        for layer in &self.gcn.layers {
            write_matrix(w, layer)?;
        }
        write_matrix(w, &self.fusion.w)?;
        write_vector(w, &self.fusion.b)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        read_magic(r, &MAGIC)?;
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(FocError::parse(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let seed = r.read_u64::<LittleEndian>()?;
        let frozen = r.read_u8()? != 0;
        let strict = r.read_u8()? != 0;

        let vocab = read_string_list(r)?;
        let oov_buckets = r.read_u32::<LittleEndian>()? as usize;
        let tokenizer = Tokenizer::new(vocab, oov_buckets);

        let n_general = r.read_u32::<LittleEndian>()? as usize;
        let general_vocab = (0..n_general)
            .map(|_| read_opt_string(r))
            .collect::<Result<Vec<_>>>()?;
        let n_arith = r.read_u32::<LittleEndian>()? as usize;
        let arith_vocab = (0..n_arith)
            .map(|_| read_opt_string(r))
            .collect::<Result<Vec<_>>>()?;

        let embeddings = read_matrix(r)?;
        if embeddings.nrows() != tokenizer.rows() {
            return Err(FocError::parse(format!(
                "embedding rows {} do not match tokenizer rows {}",
                embeddings.nrows(),
                tokenizer.rows()
            )));
        }
        let feat_w = read_matrix(r)?;
        let feat_b = read_vector(r)?;
        let n_layers = r.read_u32::<LittleEndian>()? as usize;
        let layers = (0..n_layers).map(|_| read_matrix(r)).collect::<Result<Vec<_>>>()?;
        let fuse_w = read_matrix(r)?;
        let fuse_b = read_vector(r)?;

        Ok(SimCheckpoint {
            seed,
            encoder: SemEncoder {
                tokenizer,
                embeddings,
                frozen,
            },
            gcn: GcnParams {
                feat_w,
                feat_b,
                layers,
                strict,
            },
            fusion: FusionParams {
                w: fuse_w,
                b: fuse_b,
            },
            general_vocab,
            arith_vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Arch, Bits, Opt};
    use crate::cryptoclass::default_registry;

    fn tiny_corpus() -> Corpus {
        let records = (0..3)
            .map(|i| FunctionRecord {
                id: format!("r{i}"),
                project: "p".into(),
                binary: "b".into(),
                source_file: "s.c".into(),
                name: format!("f{i}"),
                arch: Arch::X86,
                bits: Bits::B64,
                compiler: "gcc".into(),
                compiler_version: "11".into(),
                opt: Opt::O0,
                pseudo_code: format!("int f{i}(int a) {{ return a + {i}; }}"),
                blocks: vec![vec!["mov".into(), "add".into()], vec!["ret".into()]],
                edges: vec![(0, 1)],
                callees: vec![],
                summary: None,
            })
            .collect();
        Corpus::new(records, "mem").unwrap()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_sem: 8,
            d_g: 6,
            gcn_layers: 2,
            vocab_size: 64,
            oov_buckets: 8,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let corpus = tiny_corpus();
        let map = OpcodeCategoryMap::builtin();
        let ckpt = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &map, 99).unwrap();

        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = SimCheckpoint::read_from(&mut std::io::Cursor::new(&buf)).unwrap();

        assert_eq!(back.seed, 99);
        assert_eq!(back.encoder.frozen, ckpt.encoder.frozen);
        assert_eq!(back.gcn.strict, ckpt.gcn.strict);
        assert_eq!(back.encoder.tokenizer, ckpt.encoder.tokenizer);
        assert_eq!(back.general_vocab, ckpt.general_vocab);
        assert_eq!(back.arith_vocab, ckpt.arith_vocab);
        assert_eq!(back.encoder.embeddings, ckpt.encoder.embeddings);
        assert_eq!(back.gcn.feat_w, ckpt.gcn.feat_w);
        assert_eq!(back.gcn.layers, ckpt.gcn.layers);
        assert_eq!(back.fusion.w, ckpt.fusion.w);

        // identical bytes when re-serialized
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn same_seed_same_model() {
        let corpus = tiny_corpus();
        let map = OpcodeCategoryMap::builtin();
        let a = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &map, 7).unwrap();
        let b = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &map, 7).unwrap();
        assert_eq!(a.encoder.embeddings, b.encoder.embeddings);
        assert_eq!(a.gcn.feat_w, b.gcn.feat_w);
        let c = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &map, 8).unwrap();
        assert_ne!(a.encoder.embeddings, c.encoder.embeddings);
    }

    #[test]
    fn embeddings_survive_a_roundtrip() {
        let corpus = tiny_corpus();
        let registry = default_registry();
        let base = OpcodeCategoryMap::builtin();
        let ckpt = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &base, 3).unwrap();
        let map = ckpt.category_map(&base).unwrap();

        let before = ckpt.embed_record(&corpus.records()[0], &registry, &map).unwrap();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = SimCheckpoint::read_from(&mut std::io::Cursor::new(&buf)).unwrap();
        let map2 = back.category_map(&base).unwrap();
        let after = back.embed_record(&corpus.records()[0], &registry, &map2).unwrap();
        assert_eq!(before.vector, after.vector);
    }

    #[test]
    fn ablation_zeroes_the_right_slice() {
        let corpus = tiny_corpus();
        let registry = default_registry();
        let base = OpcodeCategoryMap::builtin();
        let ckpt = SimCheckpoint::init_from_corpus(&tiny_config(), &corpus, &base, 5).unwrap();
        let map = ckpt.category_map(&base).unwrap();
        let record = &corpus.records()[0];

        let full = ckpt.embed_record(record, &registry, &map).unwrap();
        let no_sem = ckpt
            .embed_record_ablated(record, &registry, &map, Ablation { zero_semantic: true, ..Default::default() })
            .unwrap();
        assert_ne!(full.vector, no_sem.vector);
        let all_zero = ckpt
            .embed_record_ablated(
                record,
                &registry,
                &map,
                Ablation { zero_semantic: true, zero_structure: true, zero_crypto: true },
            )
            .unwrap();
        // all inputs zeroed -> only the bias remains, which is zero at init
        assert!(all_zero.vector.iter().all(|&v| v == 0.0));
    }
}
