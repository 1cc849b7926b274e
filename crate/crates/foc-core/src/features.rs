//! Statistical featurization: 200-dim attributed-CFG block vectors and the
//! 65-dim function-level cryptographic feature vector.
//!
//! A block vector is `[count General, count Arithmetic, count Logic,
//! count Branch, BoW over the 120-slot general vocabulary, BoW over the
//! 76-slot arithmetic vocabulary]`. Opcodes not covered by the category map
//! count as General and never occupy a BoW slot. The function-level vector is
//! `[n_blocks, n_edges, n_callees, n_unique_callees, keyword bag (61)]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Arch, Corpus, FunctionRecord};
use crate::cryptoclass::{keyword_bow, Registry};
use crate::error::{FocError, Result};

pub const GENERAL_VOCAB_LEN: usize = 120;
pub const ARITH_VOCAB_LEN: usize = 76;
/// 4 category counts + 120 general BoW + 76 arithmetic BoW.
pub const BLOCK_FEATURE_DIM: usize = 4 + GENERAL_VOCAB_LEN + ARITH_VOCAB_LEN;
/// 4 function-level counts + 61 keyword-bag slots.
pub const CRYPTO_FEATURE_DIM: usize = 4 + 61;

/// Opcode category. Categories are disjoint; General is the complement class
/// for anything unmapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpcodeCategory {
    General,
    Arithmetic,
    Logic,
    Branch,
}

impl std::fmt::Display for OpcodeCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OpcodeCategory::General => write!(f, "general"),
            OpcodeCategory::Arithmetic => write!(f, "arithmetic"),
            OpcodeCategory::Logic => write!(f, "logic"),
            OpcodeCategory::Branch => write!(f, "branch"),
        }
    }
}

impl std::str::FromStr for OpcodeCategory {
    type Err = FocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(OpcodeCategory::General),
            "arithmetic" => Ok(OpcodeCategory::Arithmetic),
            "logic" => Ok(OpcodeCategory::Logic),
            "branch" => Ok(OpcodeCategory::Branch),
            other => Err(FocError::config(format!("unknown opcode category: {other}"))),
        }
    }
}

/// Per-architecture opcode -> category maps plus the two ordered BoW
/// vocabularies. Vocabulary slots are `None` until filled by [`build_vocab`]
/// or loaded from a checkpoint; reserved slots never match.
#[derive(Debug, Clone)]
pub struct OpcodeCategoryMap {
    categories: BTreeMap<Arch, HashMap<String, OpcodeCategory>>,
    strip_suffixes: BTreeMap<Arch, Vec<&'static str>>,
    pub general_vocab: Vec<Option<String>>,
    pub arith_vocab: Vec<Option<String>>,
    general_slots: HashMap<String, usize>,
    arith_slots: HashMap<String, usize>,
}

impl OpcodeCategoryMap {
    pub fn new(categories: BTreeMap<Arch, HashMap<String, OpcodeCategory>>) -> Self {
        let mut strip_suffixes = BTreeMap::new();
        // Thumb-2 width qualifiers: "add.w" counts as "add".
        strip_suffixes.insert(Arch::Arm, vec![".w", ".n"]);
        let mut map = OpcodeCategoryMap {
            categories,
            strip_suffixes,
            general_vocab: vec![None; GENERAL_VOCAB_LEN],
            arith_vocab: vec![None; ARITH_VOCAB_LEN],
            general_slots: HashMap::new(),
            arith_slots: HashMap::new(),
        };
        map.rebuild_slots();
        map
    }

    /// The shipped map covering common x86/ARM/MIPS mnemonics, with empty
    /// vocabularies.
    pub fn builtin() -> Self {
        Self::new(builtin_categories())
    }

    fn rebuild_slots(&mut self) {
        self.general_slots = self
            .general_vocab
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (s.clone(), i)))
            .collect();
        self.arith_slots = self
            .arith_vocab
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (s.clone(), i)))
            .collect();
    }

    /// Installs vocabularies (e.g. restored from a checkpoint). Lengths must
    /// be exactly 120 and 76.
    pub fn set_vocab(
        &mut self,
        general: Vec<Option<String>>,
        arith: Vec<Option<String>>,
    ) -> Result<()> {
        if general.len() != GENERAL_VOCAB_LEN || arith.len() != ARITH_VOCAB_LEN {
            return Err(FocError::invalid(format!(
                "vocabulary sizes must be {GENERAL_VOCAB_LEN}/{ARITH_VOCAB_LEN}, got {}/{}",
                general.len(),
                arith.len()
            )));
        }
        self.general_vocab = general;
        self.arith_vocab = arith;
        self.rebuild_slots();
        Ok(())
    }

    pub fn has_vocab(&self) -> bool {
        !self.general_slots.is_empty() || !self.arith_slots.is_empty()
    }

    /// Lowercases and strips a width suffix where the shipped map says so.
    pub fn normalize(&self, arch: Arch, mnemonic: &str) -> String {
        let lower = mnemonic.to_lowercase();
        if let Some(suffixes) = self.strip_suffixes.get(&arch) {
            for suffix in suffixes {
                if let Some(stripped) = lower.strip_suffix(suffix) {
                    if !stripped.is_empty() {
                        return stripped.to_string();
                    }
                }
            }
        }
        lower
    }

    /// Category of a mnemonic under the given architecture, and whether the
    /// mnemonic was explicitly mapped. Unmapped mnemonics default to General.
    pub fn category(&self, arch: Arch, mnemonic: &str) -> (OpcodeCategory, bool) {
        let norm = self.normalize(arch, mnemonic);
        match self.categories.get(&arch).and_then(|m| m.get(norm.as_str())) {
            Some(&cat) => (cat, true),
            None => (OpcodeCategory::General, false),
        }
    }

    /// Loads category lines `arch<TAB>opcode<TAB>category` from a file,
    /// replacing the builtin tables.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut categories: BTreeMap<Arch, HashMap<String, OpcodeCategory>> = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(FocError::config(format!(
                    "category map line {}: expected arch<TAB>opcode<TAB>category",
                    lineno + 1
                )));
            }
            let arch = match fields[0].trim() {
                "x86" => Arch::X86,
                "arm" => Arch::Arm,
                "mips" => Arch::Mips,
                other => return Err(FocError::config(format!("unknown arch: {other}"))),
            };
            let category: OpcodeCategory = fields[2].trim().parse()?;
            categories
                .entry(arch)
                .or_default()
                .insert(fields[1].trim().to_lowercase(), category);
        }
        Ok(Self::new(categories))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for (arch, table) in &self.categories {
            let mut entries: Vec<_> = table.iter().collect();
            entries.sort_by_key(|(op, _)| op.as_str());
            for (op, cat) in entries {
                writeln!(w, "{arch}\t{op}\t{cat}")?;
            }
        }
        Ok(())
    }
}

fn builtin_categories() -> BTreeMap<Arch, HashMap<String, OpcodeCategory>> {
    use OpcodeCategory::*;
    let mut map = BTreeMap::new();

    let x86: &[(&str, OpcodeCategory)] = &[
        ("mov", General), ("movzx", General), ("movsx", General), ("movsxd", General),
        ("lea", General), ("push", General), ("pop", General), ("cmp", General),
        ("test", General), ("nop", General), ("xchg", General), ("cdq", General),
        ("cdqe", General), ("cwde", General), ("leave", General), ("movq", General),
        ("movd", General), ("movaps", General), ("movups", General), ("movdqa", General),
        ("movdqu", General), ("cmovz", General), ("cmovnz", General), ("sete", General),
        ("setne", General), ("int3", General),
        ("add", Arithmetic), ("sub", Arithmetic), ("mul", Arithmetic), ("imul", Arithmetic),
        ("div", Arithmetic), ("idiv", Arithmetic), ("inc", Arithmetic), ("dec", Arithmetic),
        ("neg", Arithmetic), ("adc", Arithmetic), ("sbb", Arithmetic), ("paddd", Arithmetic),
        ("psubd", Arithmetic),
        ("and", Logic), ("or", Logic), ("xor", Logic), ("not", Logic),
        ("shl", Logic), ("shr", Logic), ("sar", Logic), ("sal", Logic),
        ("rol", Logic), ("ror", Logic), ("rcl", Logic), ("rcr", Logic),
        ("bswap", Logic), ("pxor", Logic), ("pand", Logic), ("por", Logic),
        ("bt", Logic), ("bts", Logic), ("btr", Logic),
        ("jmp", Branch), ("je", Branch), ("jne", Branch), ("jz", Branch),
        ("jnz", Branch), ("ja", Branch), ("jae", Branch), ("jb", Branch),
        ("jbe", Branch), ("jg", Branch), ("jge", Branch), ("jl", Branch),
        ("jle", Branch), ("js", Branch), ("jns", Branch), ("jo", Branch),
        ("jno", Branch), ("jp", Branch), ("jnp", Branch), ("jc", Branch),
        ("jnc", Branch), ("call", Branch), ("ret", Branch), ("retn", Branch),
        ("loop", Branch), ("jrcxz", Branch), ("jecxz", Branch),
    ];

    let arm: &[(&str, OpcodeCategory)] = &[
        ("mov", General), ("movw", General), ("movt", General), ("ldr", General),
        ("ldrb", General), ("ldrh", General), ("ldrsb", General), ("ldrsh", General),
        ("ldp", General), ("ldm", General), ("str", General), ("strb", General),
        ("strh", General), ("stp", General), ("stm", General), ("push", General),
        ("pop", General), ("cmp", General), ("cmn", General), ("tst", General),
        ("adr", General), ("adrp", General), ("nop", General), ("csel", General),
        ("cset", General), ("uxtb", General), ("uxth", General), ("sxtb", General),
        ("sxth", General),
        ("add", Arithmetic), ("adds", Arithmetic), ("adc", Arithmetic), ("sub", Arithmetic),
        ("subs", Arithmetic), ("sbc", Arithmetic), ("rsb", Arithmetic), ("mul", Arithmetic),
        ("mla", Arithmetic), ("mls", Arithmetic), ("umull", Arithmetic), ("smull", Arithmetic),
        ("sdiv", Arithmetic), ("udiv", Arithmetic), ("madd", Arithmetic), ("msub", Arithmetic),
        ("neg", Arithmetic),
        ("and", Logic), ("ands", Logic), ("orr", Logic), ("eor", Logic),
        ("eon", Logic), ("bic", Logic), ("orn", Logic), ("mvn", Logic),
        ("lsl", Logic), ("lsr", Logic), ("asr", Logic), ("ror", Logic),
        ("rrx", Logic), ("rev", Logic),
        ("b", Branch), ("bl", Branch), ("bx", Branch), ("blx", Branch),
        ("br", Branch), ("blr", Branch), ("ret", Branch), ("beq", Branch),
        ("bne", Branch), ("bgt", Branch), ("blt", Branch), ("bge", Branch),
        ("ble", Branch), ("bhi", Branch), ("bls", Branch), ("bcs", Branch),
        ("bcc", Branch), ("bmi", Branch), ("bpl", Branch), ("cbz", Branch),
        ("cbnz", Branch), ("tbz", Branch), ("tbnz", Branch),
    ];

    let mips: &[(&str, OpcodeCategory)] = &[
        ("move", General), ("li", General), ("lui", General), ("la", General),
        ("lw", General), ("lb", General), ("lbu", General), ("lh", General),
        ("lhu", General), ("ld", General), ("sw", General), ("sb", General),
        ("sh", General), ("sd", General), ("mfhi", General), ("mflo", General),
        ("mthi", General), ("mtlo", General), ("nop", General), ("slt", General),
        ("slti", General), ("sltu", General), ("sltiu", General), ("mfc0", General),
        ("mtc0", General),
        ("add", Arithmetic), ("addu", Arithmetic), ("addi", Arithmetic), ("addiu", Arithmetic),
        ("sub", Arithmetic), ("subu", Arithmetic), ("mult", Arithmetic), ("multu", Arithmetic),
        ("mul", Arithmetic), ("div", Arithmetic), ("divu", Arithmetic), ("dadd", Arithmetic),
        ("daddu", Arithmetic), ("daddiu", Arithmetic), ("dsub", Arithmetic), ("dsubu", Arithmetic),
        ("madd", Arithmetic), ("msub", Arithmetic), ("negu", Arithmetic),
        ("and", Logic), ("andi", Logic), ("or", Logic), ("ori", Logic),
        ("xor", Logic), ("xori", Logic), ("nor", Logic), ("sll", Logic),
        ("srl", Logic), ("sra", Logic), ("sllv", Logic), ("srlv", Logic),
        ("srav", Logic), ("dsll", Logic), ("dsrl", Logic), ("dsra", Logic),
        ("rotr", Logic),
        ("j", Branch), ("jal", Branch), ("jr", Branch), ("jalr", Branch),
        ("beq", Branch), ("bne", Branch), ("beqz", Branch), ("bnez", Branch),
        ("bgez", Branch), ("bgtz", Branch), ("blez", Branch), ("bltz", Branch),
        ("bgezal", Branch), ("bltzal", Branch), ("b", Branch), ("bal", Branch),
    ];

    for (arch, table) in [(Arch::X86, x86), (Arch::Arm, arm), (Arch::Mips, mips)] {
        map.insert(
            arch,
            table.iter().map(|&(op, cat)| (op.to_string(), cat)).collect(),
        );
    }
    map
}

/// Attributed control-flow graph: one 200-dim feature vector per basic block
/// plus the directed edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acfg {
    pub node_features: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
}

impl Acfg {
    pub fn node_count(&self) -> usize {
        self.node_features.len()
    }
}

/// 200-dim statistical feature vector of one basic block.
pub fn block_features(opcodes: &[String], map: &OpcodeCategoryMap, arch: Arch) -> Vec<f64> {
    let mut features = vec![0.0; BLOCK_FEATURE_DIM];
    for op in opcodes {
        let norm = map.normalize(arch, op);
        let (category, _known) = map.category(arch, &norm);
        match category {
            OpcodeCategory::General => features[0] += 1.0,
            OpcodeCategory::Arithmetic => features[1] += 1.0,
            OpcodeCategory::Logic => features[2] += 1.0,
            OpcodeCategory::Branch => features[3] += 1.0,
        }
        // BoW slots only count explicitly mapped opcodes of the matching
        // category, so unknown opcodes never reach a slot.
        match category {
            OpcodeCategory::General => {
                if let Some(&slot) = map.general_slots.get(norm.as_str()) {
                    features[4 + slot] += 1.0;
                }
            }
            OpcodeCategory::Arithmetic => {
                if let Some(&slot) = map.arith_slots.get(norm.as_str()) {
                    features[4 + GENERAL_VOCAB_LEN + slot] += 1.0;
                }
            }
            _ => {}
        }
    }
    features
}

/// Builds the attributed CFG for a record. Records with no basic blocks are
/// rejected.
pub fn build_acfg(record: &FunctionRecord, map: &OpcodeCategoryMap) -> Result<Acfg> {
    if record.blocks.is_empty() {
        return Err(FocError::invalid(format!(
            "record {}: cannot featurize a function with no basic blocks",
            record.id
        )));
    }
    for &(from, to) in &record.edges {
        if from >= record.blocks.len() || to >= record.blocks.len() {
            return Err(FocError::invalid(format!(
                "record {}: edge ({from}, {to}) out of range",
                record.id
            )));
        }
    }
    let node_features = record
        .blocks
        .iter()
        .map(|block| block_features(block, map, record.arch))
        .collect();
    Ok(Acfg {
        node_features,
        edges: record.edges.clone(),
    })
}

/// 65-dim function-level cryptographic feature vector:
/// `[n_blocks, n_edges, n_callees, n_unique_callees, keyword bag]`.
pub fn crypto_features(record: &FunctionRecord, registry: &Registry) -> Vec<f64> {
    let unique: HashSet<&str> = record.callees.iter().map(String::as_str).collect();
    let mut features = Vec::with_capacity(4 + registry.vector_len());
    features.push(record.blocks.len() as f64);
    features.push(record.edges.len() as f64);
    features.push(record.callees.len() as f64);
    features.push(unique.len() as f64);
    features.extend(
        keyword_bow(&record.pseudo_code, registry)
            .into_iter()
            .map(f64::from),
    );
    features
}

/// Fills the BoW vocabularies from corpus frequencies: the 120 most frequent
/// explicitly-mapped General opcodes and the 76 most frequent Arithmetic
/// ones, ties broken lexicographically, remaining slots reserved.
pub fn build_vocab(corpus: &Corpus, map: &OpcodeCategoryMap) -> Result<OpcodeCategoryMap> {
    if corpus.is_empty() {
        return Err(FocError::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut general_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut arith_counts: BTreeMap<String, u64> = BTreeMap::new();
    for record in corpus.records() {
        for block in &record.blocks {
            for op in block {
                let norm = map.normalize(record.arch, op);
                let (category, known) = map.category(record.arch, &norm);
                if !known {
                    continue;
                }
                match category {
                    OpcodeCategory::General => *general_counts.entry(norm).or_insert(0) += 1,
                    OpcodeCategory::Arithmetic => *arith_counts.entry(norm).or_insert(0) += 1,
                    _ => {}
                }
            }
        }
    }
    let pick = |counts: BTreeMap<String, u64>, len: usize| {
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut vocab = vec![None; len];
        for (slot, (op, _)) in entries.into_iter().take(len).enumerate() {
            vocab[slot] = Some(op);
        }
        vocab
    };
    let mut filled = map.clone();
    filled.set_vocab(
        pick(general_counts, GENERAL_VOCAB_LEN),
        pick(arith_counts, ARITH_VOCAB_LEN),
    )?;
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Bits, Opt};
    use crate::cryptoclass::default_registry;

    fn record(id: &str, pseudo: &str, blocks: Vec<Vec<&str>>, edges: Vec<(usize, usize)>, callees: Vec<&str>) -> FunctionRecord {
        FunctionRecord {
            id: id.to_string(),
            project: "p".into(),
            binary: "b".into(),
            source_file: "s.c".into(),
            name: "f".into(),
            arch: Arch::X86,
            bits: Bits::B64,
            compiler: "gcc".into(),
            compiler_version: "11.2.0".into(),
            opt: Opt::O0,
            pseudo_code: pseudo.to_string(),
            blocks: blocks.into_iter().map(|b| b.into_iter().map(str::to_string).collect()).collect(),
            edges,
            callees: callees.into_iter().map(str::to_string).collect(),
            summary: None,
        }
    }

    fn vocab_map() -> OpcodeCategoryMap {
        let mut map = OpcodeCategoryMap::builtin();
        let mut general = vec![None; GENERAL_VOCAB_LEN];
        general[0] = Some("mov".to_string());
        general[1] = Some("push".to_string());
        let mut arith = vec![None; ARITH_VOCAB_LEN];
        arith[0] = Some("add".to_string());
        arith[1] = Some("mul".to_string());
        map.set_vocab(general, arith).unwrap();
        map
    }

    fn ops(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_block_is_a_zero_vector() {
        let map = vocab_map();
        let f = block_features(&[], &map, Arch::X86);
        assert_eq!(f.len(), BLOCK_FEATURE_DIM);
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn category_counts_and_bow_slots() {
        let map = vocab_map();
        let f = block_features(&ops(&["mov", "add", "xor", "jmp"]), &map, Arch::X86);
        assert_eq!(&f[0..4], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(f[4], 1.0); // mov slot
        assert_eq!(f[4 + GENERAL_VOCAB_LEN], 1.0); // add slot
        assert_eq!(f.iter().sum::<f64>(), 4.0 + 2.0);
    }

    #[test]
    fn arithmetic_only_block() {
        let map = vocab_map();
        let f = block_features(&ops(&["add", "add", "mul"]), &map, Arch::X86);
        assert_eq!(&f[0..4], &[0.0, 3.0, 0.0, 0.0]);
        assert_eq!(f[4 + GENERAL_VOCAB_LEN], 2.0); // add
        assert_eq!(f[4 + GENERAL_VOCAB_LEN + 1], 1.0); // mul
    }

    #[test]
    fn unknown_opcode_counts_general_without_bow() {
        let map = vocab_map();
        let f = block_features(&ops(&["frobnicate"]), &map, Arch::X86);
        assert_eq!(&f[0..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f[4..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn arm_width_suffix_is_stripped() {
        let map = vocab_map();
        let f = block_features(&ops(&["ADD.W"]), &map, Arch::Arm);
        assert_eq!(&f[0..4], &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn block_features_are_order_insensitive_and_additive() {
        let map = vocab_map();
        let a = ops(&["mov", "add", "xor"]);
        let b = ops(&["jmp", "add", "mov"]);
        let mut shuffled = a.clone();
        shuffled.reverse();
        assert_eq!(block_features(&a, &map, Arch::X86), block_features(&shuffled, &map, Arch::X86));
        let concat: Vec<String> = a.iter().chain(b.iter()).cloned().collect();
        let fa = block_features(&a, &map, Arch::X86);
        let fb = block_features(&b, &map, Arch::X86);
        let fc = block_features(&concat, &map, Arch::X86);
        for i in 0..BLOCK_FEATURE_DIM {
            assert_eq!(fc[i], fa[i] + fb[i]);
        }
    }

    #[test]
    fn bow_is_bounded_by_category_counts() {
        let map = vocab_map();
        for opsle in [
            ops(&["mov", "mov", "push", "call", "unknownop"]),
            ops(&["add", "mul", "sub", "xor", "ror"]),
        ] {
            let f = block_features(&opsle, &map, Arch::X86);
            let gen_bow: f64 = f[4..4 + GENERAL_VOCAB_LEN].iter().sum();
            let arith_bow: f64 = f[4 + GENERAL_VOCAB_LEN..].iter().sum();
            assert!(gen_bow <= f[0]);
            assert!(arith_bow <= f[1]);
        }
    }

    #[test]
    fn acfg_shape_follows_the_record() {
        let map = vocab_map();
        let r = record("a", "", vec![vec!["mov"]], vec![], vec![]);
        let acfg = build_acfg(&r, &map).unwrap();
        assert_eq!(acfg.node_count(), 1);
        assert!(acfg.edges.is_empty());

        let r3 = record(
            "b",
            "",
            vec![vec!["mov"], vec!["add", "add"], vec!["ret"]],
            vec![(0, 1), (1, 2)],
            vec![],
        );
        let acfg3 = build_acfg(&r3, &map).unwrap();
        assert_eq!(acfg3.node_count(), 3);
        for (i, block) in r3.blocks.iter().enumerate() {
            assert_eq!(acfg3.node_features[i], block_features(block, &map, r3.arch));
        }
    }

    #[test]
    fn empty_blocks_are_rejected() {
        let map = vocab_map();
        let r = record("a", "", vec![], vec![], vec![]);
        assert!(build_acfg(&r, &map).is_err());
    }

    #[test]
    fn crypto_feature_counts() {
        let registry = default_registry();
        let r = record(
            "a",
            "int helper(int x) { return x; }",
            vec![vec!["mov"], vec!["add"], vec!["ret"]],
            vec![(0, 1), (1, 2)],
            vec!["f", "g", "f"],
        );
        let v = crypto_features(&r, &registry);
        assert_eq!(v.len(), CRYPTO_FEATURE_DIM);
        assert_eq!(&v[0..4], &[3.0, 2.0, 3.0, 2.0]);
        assert!(v[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn crypto_features_minimal_record() {
        let registry = default_registry();
        let r = record("a", "", vec![vec![]], vec![], vec![]);
        let v = crypto_features(&r, &registry);
        assert_eq!(&v[0..4], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn crypto_features_pick_up_keywords() {
        let registry = default_registry();
        let r = record("a", "void f() { AES_encrypt(buf); }", vec![vec!["mov"]], vec![], vec![]);
        let v = crypto_features(&r, &registry);
        let aes_slot = registry.vector_classes().iter().position(|c| *c == "aes").unwrap();
        assert_eq!(v[4 + aes_slot], 1.0);
    }

    #[test]
    fn vocab_from_tiny_corpus() {
        let map = OpcodeCategoryMap::builtin();
        let corpus = Corpus::new(
            vec![record("a", "", vec![vec!["mov", "add", "mov"]], vec![], vec![])],
            "mem",
        )
        .unwrap();
        let filled = build_vocab(&corpus, &map).unwrap();
        assert_eq!(filled.general_vocab[0].as_deref(), Some("mov"));
        assert!(filled.general_vocab[1].is_none());
        assert_eq!(filled.arith_vocab[0].as_deref(), Some("add"));
        assert!(filled.arith_vocab[1].is_none());
    }

    #[test]
    fn vocab_build_is_deterministic_and_frequency_ordered() {
        let map = OpcodeCategoryMap::builtin();
        let blocks = vec![vec!["push"; 10], vec!["mov"; 3], vec!["lea"; 3]];
        let corpus = Corpus::new(vec![record("a", "", blocks, vec![], vec![])], "mem").unwrap();
        let v1 = build_vocab(&corpus, &map).unwrap();
        let v2 = build_vocab(&corpus, &map).unwrap();
        assert_eq!(v1.general_vocab, v2.general_vocab);
        assert_eq!(v1.general_vocab[0].as_deref(), Some("push"));
        // Tie between mov and lea broken lexicographically.
        assert_eq!(v1.general_vocab[1].as_deref(), Some("lea"));
        assert_eq!(v1.general_vocab[2].as_deref(), Some("mov"));
    }

    #[test]
    fn category_map_file_roundtrip() {
        let map = OpcodeCategoryMap::builtin();
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        let back = OpcodeCategoryMap::from_reader(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.category(Arch::X86, "ror"), (OpcodeCategory::Logic, true));
        assert_eq!(back.category(Arch::Mips, "beq"), (OpcodeCategory::Branch, true));
        assert_eq!(back.category(Arch::X86, "nonesuch").1, false);
    }
}
