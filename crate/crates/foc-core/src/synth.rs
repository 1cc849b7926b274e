//! Synthetic benchmark generator: function groups rendered as compile-config
//! variants (category-preserving opcode substitutions, block permutation,
//! identifier renaming) plus matching source texts for encoder training.
//!
//! Each group carries four variants whose metadata is arranged so that
//! (v0, v1) and (v2, v3) differ on every axis (compiler, version,
//! optimization, architecture, bitness); v2/v3 form the training split and
//! v0/v1 the held-out split, so evaluation runs on compile configurations
//! never seen during training. Optional single-variant distractor groups
//! enlarge the negative universe for large retrieval pools.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Arch, Bits, Corpus, FunctionRecord, Opt};
use crate::util::derive_seed;

/// Generator settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Four-variant function groups.
    pub groups: usize,
    /// Extra single-variant groups used only as negatives.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            groups: 200,
            distractors: 0,
            seed: 0,
        }
    }
}

/// Generated corpus plus the split bookkeeping.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub corpus: Corpus,
    /// Variants v2/v3 of every group.
    pub train_ids: Vec<String>,
    /// Variants v0/v1 of every group.
    pub eval_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    /// (source_code, binary pseudo-code) pairs over the training variants.
    pub encoder_pairs: Vec<(String, String)>,
}

impl SynthBenchmark {
    pub fn train_corpus(&self) -> Corpus {
        subset(&self.corpus, &self.train_ids, "synth:train")
    }

    pub fn eval_corpus(&self) -> Corpus {
        subset(&self.corpus, &self.eval_ids, "synth:eval")
    }
}

fn subset(corpus: &Corpus, ids: &[String], label: &str) -> Corpus {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let records = corpus
        .records()
        .iter()
        .filter(|r| wanted.contains(r.id.as_str()))
        .cloned()
        .collect();
    Corpus::new(records, label).expect("subset of a valid corpus is valid")
}

const ARCHES: [Arch; 3] = [Arch::X86, Arch::Arm, Arch::Mips];

struct VariantCombo {
    compiler: &'static str,
    version: &'static str,
    opt: Opt,
    bits: Bits,
    /// Index into the group's rotated architecture cycle.
    arch_slot: usize,
}

/// The four compile configurations. (v0, v1) and (v2, v3) differ pairwise on
/// every metadata axis, so they are the XM-valid positive pairs.
const COMBOS: [VariantCombo; 4] = [
    VariantCombo { compiler: "gcc", version: "11.2.0", opt: Opt::O0, bits: Bits::B64, arch_slot: 0 },
    VariantCombo { compiler: "clang", version: "13.0.1", opt: Opt::O2, bits: Bits::B32, arch_slot: 1 },
    VariantCombo { compiler: "clang", version: "12.0.0", opt: Opt::O3, bits: Bits::B64, arch_slot: 2 },
    VariantCombo { compiler: "gcc", version: "9.4.0", opt: Opt::O1, bits: Bits::B32, arch_slot: 0 },
];

fn arch_for(rotation: usize, slot: usize) -> Arch {
    ARCHES[(rotation + slot) % 3]
}

const N_CATEGORIES: usize = 4;

fn opcode_pool(arch: Arch, category: usize) -> &'static [&'static str] {
    match (arch, category) {
        (Arch::X86, 0) => &["mov", "movzx", "lea", "push", "pop", "cmp", "test", "xchg"],
        (Arch::X86, 1) => &["add", "sub", "imul", "mul", "inc", "dec", "adc", "neg"],
        (Arch::X86, 2) => &["and", "or", "xor", "shl", "shr", "rol", "ror", "not"],
        (Arch::X86, _) => &["jmp", "je", "jne", "jg", "jl", "call", "ret", "ja"],
        (Arch::Arm, 0) => &["mov", "ldr", "str", "push", "pop", "cmp", "movw", "tst"],
        (Arch::Arm, 1) => &["add", "sub", "mul", "mla", "adc", "rsb", "sdiv", "neg"],
        (Arch::Arm, 2) => &["and", "orr", "eor", "lsl", "lsr", "ror", "bic", "mvn"],
        (Arch::Arm, _) => &["b", "bl", "beq", "bne", "bgt", "blt", "bx", "ret"],
        (Arch::Mips, 0) => &["move", "li", "lw", "sw", "lui", "lb", "sb", "slt"],
        (Arch::Mips, 1) => &["add", "addu", "addiu", "sub", "subu", "mul", "div", "madd"],
        (Arch::Mips, 2) => &["and", "or", "xor", "sll", "srl", "sra", "nor", "xori"],
        (Arch::Mips, _) => &["j", "jal", "jr", "beq", "bne", "bgez", "blez", "b"],
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lor", "mek", "tri", "zan", "pol", "due", "sim", "rav", "tul", "neq", "vos", "bri",
    "gam", "hex", "jun",
];

const THEMES: [&str; 18] = [
    "aes", "des", "sha1", "sha256", "sha512", "md5", "rc4", "chacha20", "sm4", "sm3", "blowfish",
    "camellia", "hmac", "poly1305", "xtea", "tea", "rsa", "ecdsa",
];

const PARAM_BUF: [&str; 4] = ["data", "buf", "src", "input"];
const PARAM_LEN: [&str; 4] = ["len", "size", "count", "n"];
const LOCAL_ACC: [&str; 4] = ["acc", "state", "sum", "hash"];
const LOCAL_MIX: [&str; 4] = ["mix", "tmp", "aux", "carry"];
const LOCAL_IDX: [&str; 4] = ["i", "j", "k", "pos"];

/// Group-level blueprint shared by all variants. The group-identifying
/// signal lives mostly in identifier and literal tokens (stem, helper, the
/// string literal, constants); the opcode sequences and topology are drawn
/// from one global distribution and get heavy per-variant noise, like code
/// rebuilt under a different compiler.
struct Blueprint {
    stem: String,
    helper: String,
    acc_name: &'static str,
    buf_name: &'static str,
    word: &'static str,
    word2: &'static str,
    theme: Option<&'static str>,
    constants: [u32; 10],
    /// Abstract ops per block: (category, variety).
    blocks: Vec<Vec<(usize, u32)>>,
    edges: Vec<(usize, usize)>,
    callees: Vec<String>,
}

/// One global opcode-category mix shared by all groups; structure should not
/// trivially identify a group.
const CATEGORY_WEIGHTS: [f64; N_CATEGORIES] = [0.40, 0.25, 0.20, 0.15];

fn blueprint(seed: u64, stream: u64, unique: usize) -> Blueprint {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    let mut pick_name = |suffix: String| {
        format!(
            "{}{}{}{}",
            SYLLABLES[rng.random_range(0..SYLLABLES.len())],
            SYLLABLES[rng.random_range(0..SYLLABLES.len())],
            SYLLABLES[rng.random_range(0..SYLLABLES.len())],
            suffix,
        )
    };
    let stem = pick_name(format!("{unique}"));
    let helper = pick_name(format!("{unique}x"));
    let word = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
    let word2 = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
    let acc_name = LOCAL_ACC[rng.random_range(0..LOCAL_ACC.len())];
    let buf_name = PARAM_BUF[rng.random_range(0..PARAM_BUF.len())];
    let theme = rng
        .random_bool(0.3)
        .then(|| THEMES[rng.random_range(0..THEMES.len())]);
    let mut constants = [0u32; 10];
    for c in constants.iter_mut() {
        *c = rng.random::<u32>();
    }

    let mut weights = CATEGORY_WEIGHTS;
    for w in weights.iter_mut() {
        *w *= rng.random_range(0.7..1.4);
    }
    let total: f64 = weights.iter().sum();
    let n_blocks = rng.random_range(4..=7);
    let blocks = (0..n_blocks)
        .map(|_| {
            let len = rng.random_range(5..=8);
            (0..len)
                .map(|_| {
                    let mut pick = rng.random_range(0.0..total);
                    let mut category = 0;
                    for (c, &w) in weights.iter().enumerate() {
                        if pick < w {
                            category = c;
                            break;
                        }
                        pick -= w;
                    }
                    (category, rng.random::<u32>())
                })
                .collect()
        })
        .collect::<Vec<Vec<(usize, u32)>>>();

    let mut edges = Vec::new();
    for i in 1..n_blocks {
        edges.push((rng.random_range(0..i), i));
    }
    for _ in 0..n_blocks / 2 {
        edges.push((rng.random_range(0..n_blocks), rng.random_range(0..n_blocks)));
    }

    let mut callees = vec![
        format!("{stem}_round"),
        format!("{stem}_mix"),
        format!("{stem}_fold"),
        format!("{helper}_norm"),
    ];
    if let Some(theme) = theme {
        callees.push(format!("{theme}_sub"));
    }

    Blueprint {
        stem,
        helper,
        acc_name,
        buf_name,
        word,
        word2,
        theme,
        constants,
        blocks,
        edges,
        callees,
    }
}

fn pseudo_code(bp: &Blueprint, rng: &mut ChaCha8Rng) -> String {
    let buf = bp.buf_name;
    let len = PARAM_LEN[rng.random_range(0..PARAM_LEN.len())];
    let acc = bp.acc_name;
    let mix = LOCAL_MIX[rng.random_range(0..LOCAL_MIX.len())];
    let idx = LOCAL_IDX[rng.random_range(0..LOCAL_IDX.len())];
    let stem = &bp.stem;
    let helper = &bp.helper;
    let word = bp.word;
    let word2 = bp.word2;
    let [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10] = bp.constants;
    let theme_line = match bp.theme {
        Some(theme) => format!("    {mix} = {theme}_sub({mix});\n"),
        None => String::new(),
    };
    format!(
        "uint32_t {stem}_process(uint8_t *{buf}, int {len})\n{{\n  uint32_t {acc} = 0x{c1:08x};\n  uint32_t {mix} = 0x{c5:08x};\n  int {idx};\n  if (!{buf}) {{\n    report_fault(\"{stem} {word} {word2} fault\");\n    return 0x{c4:08x};\n  }}\n  for ({idx} = 0; {idx} < {len}; {idx}++) {{\n    {acc} = {stem}_round({acc}, {buf}[{idx}]);\n    {mix} ^= {stem}_mix({acc}) + 0x{c2:08x};\n    {acc} = {helper}_norm({acc} ^ {mix});\n    {mix} = (({mix} << 7) | ({mix} >> 25)) + 0x{c6:08x};\n    {acc} ^= ({mix} & 0x{c7:08x}) * 9;\n    {mix} += {stem}_tab[{acc} >> 28];\n    {acc} = ({acc} + 0x{c9:08x}) ^ ({mix} | 0x{c10:08x});\n{theme_line}  }}\n  if ({mix} > 0x{c3:08x}) {{\n    {mix} = {stem}_fold({mix} + 0x{c8:08x});\n  }}\n  return {acc} ^ {mix};\n}}\n"
    )
}

fn source_code(bp: &Blueprint) -> String {
    let stem = &bp.stem;
    let helper = &bp.helper;
    let word = bp.word;
    let word2 = bp.word2;
    let [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10] = bp.constants;
    let theme_line = match bp.theme {
        Some(theme) => format!("        value = {theme}_sub(value);\n"),
        None => String::new(),
    };
    format!(
        "static uint32_t {stem}_process(const unsigned char *data, size_t length)\n{{\n    uint32_t state = 0x{c1:08x}U;\n    uint32_t value = 0x{c5:08x}U;\n    size_t index;\n    if (data == NULL) {{\n        report_fault(\"{stem} {word} {word2} fault\");\n        return 0x{c4:08x}U;\n    }}\n    for (index = 0; index < length; index++) {{\n        state = {stem}_round(state, data[index]);\n        value ^= {stem}_mix(state) + 0x{c2:08x}U;\n        state = {helper}_norm(state ^ value);\n        value = ((value << 7) | (value >> 25)) + 0x{c6:08x}U;\n        state ^= (value & 0x{c7:08x}U) * 9U;\n        value += {stem}_tab[state >> 28];\n        state = (state + 0x{c9:08x}U) ^ (value | 0x{c10:08x}U);\n{theme_line}    }}\n    if (value > 0x{c3:08x}U)\n        value = {stem}_fold(value + 0x{c8:08x}U);\n    return state ^ value;\n}}\n"
    )
}

fn summary(bp: &Blueprint) -> String {
    match bp.theme {
        Some(theme) => format!(
            "Computes the {} transformation of the input buffer using {theme} style mixing.",
            bp.stem
        ),
        None => format!("Computes the {} checksum over the input buffer.", bp.stem),
    }
}

fn render_variant(
    bp: &Blueprint,
    id: String,
    rotation: usize,
    combo: &VariantCombo,
    seed: u64,
    stream: u64,
) -> FunctionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
    let arch = arch_for(rotation, combo.arch_slot);

    // category-preserving substitutions plus insertion/deletion noise
    let mut blocks: Vec<Vec<String>> = bp
        .blocks
        .iter()
        .map(|block| {
            let mut ops: Vec<String> = block
                .iter()
                .map(|&(category, variety)| {
                    let pool = opcode_pool(arch, category);
                    let shift = if rng.random_bool(0.3) {
                        1 + rng.random_range(0..pool.len() as u32 - 1)
                    } else {
                        0
                    };
                    pool[((variety + shift) as usize) % pool.len()].to_string()
                })
                .collect();
            if rng.random_bool(0.4) {
                let category = rng.random_range(0..N_CATEGORIES);
                let pool = opcode_pool(arch, category);
                ops.push(pool[rng.random_range(0..pool.len())].to_string());
            }
            if ops.len() > 2 && rng.random_bool(0.25) {
                ops.pop();
            }
            ops
        })
        .collect();

    // optimization-style block count jitter: sometimes an extra spill block
    let mut edges = bp.edges.clone();
    if rng.random_bool(0.25) {
        let target = blocks.len();
        let category = rng.random_range(0..N_CATEGORIES);
        let pool = opcode_pool(arch, category);
        blocks.push(
            (0..rng.random_range(2..=4))
                .map(|_| pool[rng.random_range(0..pool.len())].to_string())
                .collect(),
        );
        edges.push((rng.random_range(0..target), target));
    }
    // and edge jitter
    for _ in 0..rng.random_range(0..=1) {
        edges.push((rng.random_range(0..blocks.len()), rng.random_range(0..blocks.len())));
    }

    // block permutation with edge remap
    let n = blocks.len();
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let mut permuted_blocks = vec![Vec::new(); n];
    for (old, &new) in perm.iter().enumerate() {
        permuted_blocks[new] = std::mem::take(&mut blocks[old]);
    }
    let edges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();

    let mut callees = bp.callees.clone();
    for _ in 0..rng.random_range(0..=2) {
        let extra = callees[rng.random_range(0..callees.len())].clone();
        callees.push(extra); // extra call site
    }

    let pseudo = pseudo_code(bp, &mut rng);
    FunctionRecord {
        id,
        project: "synthcrypt".into(),
        binary: format!(
            "libsynth_{}{}_{}{}_{}.so",
            combo.compiler,
            combo.version,
            arch,
            combo.bits,
            combo.opt
        ),
        source_file: format!("src/{}.c", bp.stem),
        name: format!("{}_process", bp.stem),
        arch,
        bits: combo.bits,
        compiler: combo.compiler.to_string(),
        compiler_version: combo.version.to_string(),
        opt: combo.opt,
        pseudo_code: pseudo,
        blocks: permuted_blocks,
        edges,
        callees,
        summary: Some(summary(bp)),
    }
}

/// Generates the benchmark corpus.
pub fn generate(config: &SynthConfig) -> SynthBenchmark {
    let mut records = Vec::with_capacity(config.groups * 4 + config.distractors);
    let mut train_ids = Vec::new();
    let mut eval_ids = Vec::new();
    let mut encoder_pairs = Vec::new();

    for g in 0..config.groups {
        let bp = blueprint(config.seed, g as u64 * 8, g);
        let rotation = g % 3;
        let source = source_code(&bp);
        for (v, combo) in COMBOS.iter().enumerate() {
            let id = format!("g{g:04}v{v}");
            let record = render_variant(
                &bp,
                id.clone(),
                rotation,
                combo,
                config.seed,
                g as u64 * 8 + 1 + v as u64,
            );
            if v >= 2 {
                train_ids.push(id);
                encoder_pairs.push((source.clone(), record.pseudo_code.clone()));
            } else {
                eval_ids.push(id);
            }
            records.push(record);
        }
    }

    let mut distractor_ids = Vec::new();
    for d in 0..config.distractors {
        let bp = blueprint(config.seed, 0x4000_0000 + d as u64 * 8, config.groups + d);
        let id = format!("d{d:05}");
        let record = render_variant(
            &bp,
            id.clone(),
            d % 3,
            &COMBOS[d % 4],
            config.seed,
            0x4000_0000 + d as u64 * 8 + 1,
        );
        distractor_ids.push(id);
        records.push(record);
    }

    SynthBenchmark {
        corpus: Corpus::new(records, "synth").expect("generated ids are unique"),
        train_ids,
        eval_ids,
        distractor_ids,
        encoder_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SubTask;
    use crate::simmodel::EmbeddingMeta;
    use crate::simtrain::group_key;

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig {
            groups: 5,
            distractors: 3,
            seed: 42,
        };
        let a = generate(&config);
        let b = generate(&config);
        assert_eq!(a.corpus.records(), b.corpus.records());
        let c = generate(&SynthConfig { seed: 43, ..config });
        assert_ne!(a.corpus.records(), c.corpus.records());
    }

    #[test]
    fn group_structure_and_splits() {
        let config = SynthConfig {
            groups: 6,
            distractors: 4,
            seed: 1,
        };
        let bench = generate(&config);
        assert_eq!(bench.corpus.len(), 6 * 4 + 4);
        assert_eq!(bench.train_ids.len(), 12);
        assert_eq!(bench.eval_ids.len(), 12);
        assert_eq!(bench.encoder_pairs.len(), 12);

        // variants share the grouping key; distractors do not join any group
        for g in 0..6 {
            let ids: Vec<String> = (0..4).map(|v| format!("g{g:04}v{v}")).collect();
            let keys: std::collections::BTreeSet<_> = ids
                .iter()
                .map(|id| group_key(bench.corpus.get(id).unwrap()))
                .collect();
            assert_eq!(keys.len(), 1);
        }
    }

    #[test]
    fn designated_pairs_are_xm_valid() {
        let bench = generate(&SynthConfig {
            groups: 9,
            distractors: 0,
            seed: 7,
        });
        for g in 0..9 {
            for (a, b) in [(0, 1), (2, 3)] {
                let ra = bench.corpus.get(&format!("g{g:04}v{a}")).unwrap();
                let rb = bench.corpus.get(&format!("g{g:04}v{b}")).unwrap();
                let ma = EmbeddingMeta::of(ra);
                let mb = EmbeddingMeta::of(rb);
                assert!(
                    SubTask::XM.positive_ok(&ma, &mb),
                    "group {g}: v{a}/v{b} must differ on every axis"
                );
            }
        }
    }

    #[test]
    fn records_are_featurizable_and_variants_share_core_tokens() {
        let bench = generate(&SynthConfig {
            groups: 4,
            distractors: 0,
            seed: 3,
        });
        for record in bench.corpus.records() {
            assert!(!record.blocks.is_empty());
            record.validate().unwrap();
            assert!(record.pseudo_code.contains("_process"));
        }
        // the stem survives renaming across variants
        let a = bench.corpus.get("g0000v0").unwrap();
        let b = bench.corpus.get("g0000v3").unwrap();
        let stem = a.name.strip_suffix("_process").unwrap();
        assert!(b.pseudo_code.contains(stem));
        assert_eq!(a.name, b.name);
    }
}
