//! Registry of cryptographic classes and the keyword-based discriminator.
//!
//! The default registry holds 61 vector classes (45 primitives, 8 block
//! modes, 8 authenticated-encryption modes) plus a handful of extra classes
//! that are recognized by [`classify_text`] but excluded from the 61-dim
//! keyword bag. Matching is case-insensitive whole-word: a word boundary is
//! any character outside `[a-z0-9]` (after lowercasing) or the string edge,
//! multi-word alias forms match as contiguous phrases, and the longest form
//! wins at each position before scanning resumes after the match.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FocError, Result};

/// Class category from the discriminator's taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Primitive,
    BlockMode,
    AeMode,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Primitive => write!(f, "primitive"),
            Category::BlockMode => write!(f, "block_mode"),
            Category::AeMode => write!(f, "ae_mode"),
        }
    }
}

impl std::str::FromStr for Category {
    type Err = FocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitive" => Ok(Category::Primitive),
            "block_mode" => Ok(Category::BlockMode),
            "ae_mode" => Ok(Category::AeMode),
            other => Err(FocError::config(format!("unknown category: {other}"))),
        }
    }
}

/// One cryptographic class: canonical name, category, and alias forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryptoClass {
    pub canonical: String,
    pub category: Category,
    pub aliases: Vec<String>,
    /// Vector classes occupy a slot in the keyword bag; non-vector classes
    /// are reported by classification only.
    pub vector: bool,
}

/// A single keyword match inside a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHit {
    /// Canonical class name.
    pub class: String,
    /// The canonical name or alias form that matched.
    pub matched_form: String,
    /// Character offset of the match in the lowercased text.
    pub position: usize,
}

/// Immutable-after-load registry of crypto classes.
#[derive(Debug, Clone)]
pub struct Registry {
    classes: Vec<CryptoClass>,
    /// Indices of vector classes in keyword-bag order.
    vector_order: Vec<usize>,
    /// All matchable forms, grouped by first byte, longest first.
    forms_by_first: HashMap<u8, Vec<(String, usize)>>,
    disabled: HashSet<String>,
}

impl Registry {
    /// Builds a registry from classes, rejecting duplicate canonical names or
    /// forms shared across classes.
    pub fn from_classes(classes: Vec<CryptoClass>) -> Result<Self> {
        let mut canon_seen = HashSet::new();
        let mut form_owner: HashMap<String, usize> = HashMap::new();
        for (idx, class) in classes.iter().enumerate() {
            let canonical = class.canonical.to_lowercase();
            if canonical.is_empty() {
                return Err(FocError::config("empty canonical class name"));
            }
            if !canon_seen.insert(canonical.clone()) {
                return Err(FocError::config(format!(
                    "duplicate canonical class: {canonical}"
                )));
            }
            for form in std::iter::once(&class.canonical).chain(&class.aliases) {
                let form = form.to_lowercase();
                if form.is_empty() {
                    return Err(FocError::config(format!(
                        "class {canonical} has an empty alias"
                    )));
                }
                if let Some(&owner) = form_owner.get(&form) {
                    if owner != idx {
                        return Err(FocError::config(format!(
                            "alias '{form}' maps to both '{}' and '{canonical}'",
                            classes[owner].canonical
                        )));
                    }
                } else {
                    form_owner.insert(form, idx);
                }
            }
        }

        let vector_order = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.vector)
            .map(|(i, _)| i)
            .collect();

        let mut forms_by_first: HashMap<u8, Vec<(String, usize)>> = HashMap::new();
        for (form, idx) in form_owner {
            let first = form.as_bytes()[0];
            forms_by_first.entry(first).or_default().push((form, idx));
        }
        for forms in forms_by_first.values_mut() {
            forms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        }

        Ok(Registry {
            classes,
            vector_order,
            forms_by_first,
            disabled: HashSet::new(),
        })
    }

    pub fn classes(&self) -> &[CryptoClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Number of slots in the keyword bag (61 for the default registry).
    pub fn vector_len(&self) -> usize {
        self.vector_order.len()
    }

    /// Canonical names of vector classes in keyword-bag order.
    pub fn vector_classes(&self) -> Vec<&str> {
        self.vector_order
            .iter()
            .map(|&i| self.classes[i].canonical.as_str())
            .collect()
    }

    /// Canonical class a form belongs to, if registered.
    pub fn canonical_of(&self, form: &str) -> Option<&str> {
        let form = form.to_lowercase();
        let first = *form.as_bytes().first()?;
        self.forms_by_first
            .get(&first)?
            .iter()
            .find(|(f, _)| *f == form)
            .map(|&(_, idx)| self.classes[idx].canonical.as_str())
    }

    /// Disables a noisy alias form (e.g. `curve`) so it no longer matches.
    /// Canonical names cannot be disabled.
    pub fn disable_alias(&mut self, form: &str) -> Result<()> {
        let form = form.to_lowercase();
        if self.classes.iter().any(|c| c.canonical.to_lowercase() == form) {
            return Err(FocError::config(format!(
                "'{form}' is a canonical class name, not an alias"
            )));
        }
        if self.canonical_of(&form).is_none() {
            return Err(FocError::config(format!("unknown alias: {form}")));
        }
        self.disabled.insert(form);
        Ok(())
    }

    fn is_word_byte(b: u8) -> bool {
        b.is_ascii_lowercase() || b.is_ascii_digit()
    }

    /// All hits of registered forms in `text`, left to right, longest form
    /// first at each position; the scan resumes after each match.
    pub fn scan(&self, text: &str) -> Vec<ClassHit> {
        let lower = text.to_lowercase();
        let bytes = lower.as_bytes();
        let mut hits = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let at_word_start =
                Self::is_word_byte(bytes[i]) && (i == 0 || !Self::is_word_byte(bytes[i - 1]));
            if at_word_start {
                if let Some((form, class_idx)) = self.match_at(bytes, i) {
                    let len = form.len();
                    hits.push(ClassHit {
                        class: self.classes[class_idx].canonical.clone(),
                        matched_form: form,
                        position: lower[..i].chars().count(),
                    });
                    i += len;
                    continue;
                }
            }
            i += 1;
        }
        hits
    }

    fn match_at(&self, bytes: &[u8], i: usize) -> Option<(String, usize)> {
        let candidates = self.forms_by_first.get(&bytes[i])?;
        for (form, class_idx) in candidates {
            if self.disabled.contains(form) {
                continue;
            }
            let end = i + form.len();
            if end > bytes.len() {
                continue;
            }
            if &bytes[i..end] != form.as_bytes() {
                continue;
            }
            if end < bytes.len() && Self::is_word_byte(bytes[end]) {
                continue;
            }
            return Some((form.clone(), *class_idx));
        }
        None
    }

    /// Loads a registry file: `canonical<TAB>category<TAB>alias1|alias2|...`
    /// with an optional fourth `non-vector` column. `#` lines are comments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut classes = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() < 2 || fields.len() > 4 {
                return Err(FocError::config(format!(
                    "registry line {}: expected 2-4 tab-separated fields",
                    lineno + 1
                )));
            }
            let canonical = fields[0].trim().to_string();
            let category: Category = fields[1].trim().parse()?;
            let aliases = fields
                .get(2)
                .map(|f| {
                    f.split('|')
                        .map(str::trim)
                        .filter(|a| !a.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            let vector = match fields.get(3).map(|f| f.trim()) {
                None | Some("") => true,
                Some("non-vector") => false,
                Some(other) => {
                    return Err(FocError::config(format!(
                        "registry line {}: unknown flag '{other}'",
                        lineno + 1
                    )))
                }
            };
            classes.push(CryptoClass {
                canonical,
                category,
                aliases,
                vector,
            });
        }
        Self::from_classes(classes)
    }

    /// Writes the registry in the file format accepted by [`Registry::from_file`],
    /// preserving keyword-bag order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for class in &self.classes {
            let flag = if class.vector { "" } else { "\tnon-vector" };
            writeln!(
                w,
                "{}\t{}\t{}{}",
                class.canonical,
                class.category,
                class.aliases.join("|"),
                flag
            )?;
        }
        Ok(())
    }
}

macro_rules! class {
    ($canon:literal, $cat:expr, [$($alias:literal),*], $vector:expr) => {
        CryptoClass {
            canonical: $canon.to_string(),
            category: $cat,
            aliases: vec![$($alias.to_string()),*],
            vector: $vector,
        }
    };
}

/// The default registry: 45 primitives, 8 block modes, and 8 AE modes as the
/// keyword-bag classes (in that order), plus the extra alias-table classes
/// flagged non-vector.
pub fn default_registry() -> Registry {
    use Category::*;
    let classes = vec![
        // Cryptographic primitive classes (45), keyword-bag slots 0..45.
        class!("3des", Primitive, ["triple-des", "triple des", "tripledes", "desede", "des-ede"], true),
        class!("aes", Primitive, ["rijndael", "advanced encryption standard", "aes128", "aes192", "aes256", "aes512"], true),
        class!("aria", Primitive, ["korean algorithm"], true),
        class!("blake2", Primitive, ["blake2b", "blake2s"], true),
        class!("blowfish", Primitive, ["bf", "blowfish-cipher"], true),
        class!("camellia", Primitive, ["ntt cipher"], true),
        class!("cast", Primitive, ["cast-128", "cast5", "cast-256", "cast6", "cast128", "cast256"], true),
        class!("chacha20", Primitive, ["chacha"], true),
        class!("cmac", Primitive, ["cipher-mac", "cipher based mac"], true),
        class!("curve25519", Primitive, ["curve-25519", "x25519", "ristretto255", "montgomery curve"], true),
        class!("curve448", Primitive, ["curve-448", "x448", "goldilocks"], true),
        class!("des", Primitive, ["data encryption standard"], true),
        class!("dh", Primitive, ["diffie hellman", "diffie-hellman", "dhke", "diffiehellman", "dh-key-exchange"], true),
        class!("dsa", Primitive, ["digital signature algorithm"], true),
        class!("ecc", Primitive, ["ec", "elliptic", "curve", "elliptic curve cryptography"], true),
        class!("ecdh", Primitive, ["elliptic curve diffie-hellman", "ec diffie-hellman"], true),
        class!("ecdsa", Primitive, ["elliptic curve dsa", "ec dsa"], true),
        class!("ecjpake", Primitive, ["elliptic curve j-pake", "ec j-pake"], true),
        class!("ed448", Primitive, ["ed-448", "edwards448"], true),
        class!("ed25519", Primitive, ["ed-25519", "edwards25519"], true),
        class!("hmac", Primitive, ["hash mac", "hash-based mac"], true),
        class!("idea", Primitive, ["international data encryption algorithm"], true),
        class!("md4", Primitive, ["message digest 4"], true),
        class!("md5", Primitive, ["message digest 5"], true),
        class!("mdc2", Primitive, ["mdc-2", "message digest cipher 2"], true),
        class!("poly1305", Primitive, ["poly-1305", "mac-poly1305"], true),
        class!("rc2", Primitive, ["rivest cipher 2"], true),
        class!("rc4", Primitive, ["rivest cipher 4", "arc4", "alleged rc4"], true),
        class!("ripemd160", Primitive, ["ripemd-160", "ripe md", "ripe-md", "rmd160"], true),
        class!("rsa", Primitive, ["rivest-shamir-adleman"], true),
        class!("salsa20", Primitive, ["salsa"], true),
        class!("sha1", Primitive, ["sha-1", "secure hash algorithm 1"], true),
        class!("sha224", Primitive, ["sha-224", "secure hash algorithm 224"], true),
        class!("sha256", Primitive, ["sha-256", "secure hash algorithm 256"], true),
        class!("sha384", Primitive, ["sha-384", "secure hash algorithm 384"], true),
        class!("sha512", Primitive, ["sha-512", "secure hash algorithm 512"], true),
        class!("sha3", Primitive, ["keccak", "secure hash algorithm 3"], true),
        class!("siphash", Primitive, ["sip hash"], true),
        class!("sm2", Primitive, ["chinese sm2"], true),
        class!("sm3", Primitive, ["chinese sm3"], true),
        class!("sm4", Primitive, ["chinese sm4"], true),
        class!("tea", Primitive, ["tiny encryption algorithm"], true),
        class!("umac", Primitive, ["universal mac"], true),
        class!("whirlpool", Primitive, ["whirlpool hash"], true),
        class!("xtea", Primitive, ["x-tea", "extended tea"], true),
        // Block encryption modes (8), slots 45..53.
        class!("cbc", BlockMode, [], true),
        class!("pcbc", BlockMode, [], true),
        class!("cfb", BlockMode, [], true),
        class!("ctr", BlockMode, [], true),
        class!("ecb", BlockMode, [], true),
        class!("ofb", BlockMode, [], true),
        class!("ocf", BlockMode, [], true),
        class!("xts", BlockMode, [], true),
        // Authenticated encryption modes (8), slots 53..61.
        class!("ccm", AeMode, [], true),
        class!("gcm", AeMode, [], true),
        class!("sgcm", AeMode, [], true),
        class!("cwc", AeMode, [], true),
        class!("eax", AeMode, [], true),
        class!("ocb", AeMode, [], true),
        class!("siv", AeMode, [], true),
        class!("iapm", AeMode, [], true),
        // Alias-table classes outside the keyword bag.
        class!("safer", Primitive, ["safer-sk64", "safer-sk128", "safer-k64", "safer-k128", "secure and fast encryption routine"], false),
        class!("seed", Primitive, ["seed_c", "seed_enc", "seed_dec", "seedc", "seed c", "seed enc", "seed dec"], false),
        class!("pmac", Primitive, ["parallel message authentication code", "parallel mac"], false),
        class!("omac", Primitive, ["one-key mac", "one key mac", "offset mac"], false),
        class!("rc5", Primitive, ["rivest cipher 5"], false),
        class!("rc6", Primitive, ["rivest cipher 6"], false),
        class!("tiger", Primitive, ["tiger2"], false),
        class!("twofish", Primitive, ["two fish", "2fish"], false),
        class!("serpent", Primitive, ["serpent cipher"], false),
        class!("mars", Primitive, ["ibm mars"], false),
        class!("aesni", Primitive, ["aes-ni"], false),
    ];
    Registry::from_classes(classes).expect("builtin registry is consistent")
}

/// Canonical classes with at least one whole-word hit in `text`.
pub fn classify_text(text: &str, registry: &Registry) -> BTreeSet<String> {
    registry.scan(text).into_iter().map(|h| h.class).collect()
}

/// The label-acceptance check: true iff summary and source classify to the
/// same set of classes.
pub fn labels_agree(summary: &str, source: &str, registry: &Registry) -> bool {
    classify_text(summary, registry) == classify_text(source, registry)
}

/// Keyword bag over the registry's vector classes: component `k` counts the
/// hits of class `k` (every canonical/alias occurrence) in the pseudo-code.
pub fn keyword_bow(pseudo_code: &str, registry: &Registry) -> Vec<u32> {
    let mut slot_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (slot, name) in registry.vector_classes().into_iter().enumerate() {
        slot_of.insert(name, slot);
    }
    let mut bow = vec![0u32; registry.vector_len()];
    for hit in registry.scan(pseudo_code) {
        if let Some(&slot) = slot_of.get(hit.class.as_str()) {
            bow[slot] += 1;
        }
    }
    bow
}

/// Per-form hit counts, for inspecting noisy aliases.
pub fn hit_counts(text: &str, registry: &Registry) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for hit in registry.scan(text) {
        *counts.entry(hit.matched_form).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_has_61_vector_classes() {
        let reg = default_registry();
        assert_eq!(reg.vector_len(), 61);
        let prims = reg
            .classes()
            .iter()
            .filter(|c| c.vector && c.category == Category::Primitive)
            .count();
        let blocks = reg
            .classes()
            .iter()
            .filter(|c| c.vector && c.category == Category::BlockMode)
            .count();
        let ae = reg
            .classes()
            .iter()
            .filter(|c| c.vector && c.category == Category::AeMode)
            .count();
        assert_eq!((prims, blocks, ae), (45, 8, 8));
    }

    #[test]
    fn alias_lookup() {
        let reg = default_registry();
        assert_eq!(reg.canonical_of("tripledes"), Some("3des"));
        assert_eq!(reg.canonical_of("rijndael"), Some("aes"));
        assert_eq!(reg.canonical_of("Keccak"), Some("sha3"));
        assert_eq!(reg.canonical_of("nonesuch"), None);
    }

    #[test]
    fn classify_empty_text() {
        let reg = default_registry();
        assert!(classify_text("", &reg).is_empty());
    }

    #[test]
    fn classify_hyphenated_alias() {
        let reg = default_registry();
        let classes = classify_text("triple-des key schedule", &reg);
        assert_eq!(classes.into_iter().collect::<Vec<_>>(), vec!["3des"]);
    }

    #[test]
    fn classify_mixed_identifiers() {
        let reg = default_registry();
        let classes = classify_text("AES_set_encrypt_key with aes128 in CBC mode", &reg);
        let expect: BTreeSet<String> = ["aes", "cbc"].iter().map(|s| s.to_string()).collect();
        assert_eq!(classes, expect);
    }

    #[test]
    fn labels_agree_examples() {
        let reg = default_registry();
        assert!(labels_agree("computes sha256 digest", "sha256_update(...)", &reg));
        assert!(!labels_agree("computes md5", "sha1_init(...)", &reg));
        assert!(labels_agree("", "", &reg));
    }

    #[test]
    fn keyword_bow_counts_and_dimension() {
        let reg = default_registry();
        assert_eq!(keyword_bow("no crypto here", &reg), vec![0; 61]);
        let bow = keyword_bow("aes_init(); aes_done();", &reg);
        assert_eq!(bow.len(), 61);
        let aes_slot = reg.vector_classes().iter().position(|c| *c == "aes").unwrap();
        assert_eq!(bow[aes_slot], 2);
        assert_eq!(bow.iter().sum::<u32>(), 2);
    }

    #[test]
    fn whole_word_blocks_embedded_aliases() {
        let reg = default_registry();
        assert!(classify_text("aesthetic", &reg).is_empty());
        assert!(classify_text("xaes", &reg).is_empty());
        assert!(classify_text("aes2", &reg).is_empty());
    }

    #[test]
    fn longest_form_wins_then_rescan() {
        let reg = default_registry();
        // "montgomery curve" must resolve to curve25519, not to ecc via "curve".
        let classes = classify_text("montgomery curve ladder", &reg);
        assert_eq!(classes.into_iter().collect::<Vec<_>>(), vec!["curve25519"]);
        // sha256 must not also hit other classes.
        let bow = keyword_bow("sha256", &reg);
        assert_eq!(bow.iter().sum::<u32>(), 1);
    }

    #[test]
    fn alias_closure_over_the_whole_registry() {
        let reg = default_registry();
        for class in reg.classes() {
            for form in std::iter::once(&class.canonical).chain(&class.aliases) {
                let classes = classify_text(form, &reg);
                assert_eq!(
                    classes.into_iter().collect::<Vec<_>>(),
                    vec![class.canonical.clone()],
                    "form '{form}' must classify to exactly '{}'",
                    class.canonical
                );
            }
        }
    }

    #[test]
    fn classify_is_case_invariant() {
        let reg = default_registry();
        let lower = classify_text("hmac with sha512 in gcm", &reg);
        let upper = classify_text("HMAC WITH SHA512 IN GCM", &reg);
        assert_eq!(lower, upper);
    }

    #[test]
    fn classify_matches_bow_support_on_vector_classes() {
        let reg = default_registry();
        let text = "rc4 stream then Chacha and keccak; twofish is extra";
        let classes = classify_text(text, &reg);
        let bow = keyword_bow(text, &reg);
        let from_bow: BTreeSet<String> = reg
            .vector_classes()
            .iter()
            .zip(&bow)
            .filter(|(_, &n)| n > 0)
            .map(|(c, _)| c.to_string())
            .collect();
        let vector_names: BTreeSet<String> =
            reg.vector_classes().iter().map(|s| s.to_string()).collect();
        let classes_vec: BTreeSet<String> =
            classes.iter().filter(|c| vector_names.contains(*c)).cloned().collect();
        assert_eq!(classes_vec, from_bow);
        // twofish is reported by classification but has no bag slot
        assert!(classes.contains("twofish"));
    }

    #[test]
    fn disabled_alias_no_longer_matches() {
        let mut reg = default_registry();
        assert_eq!(
            classify_text("curve arithmetic", &reg).into_iter().collect::<Vec<_>>(),
            vec!["ecc"]
        );
        reg.disable_alias("curve").unwrap();
        assert!(classify_text("curve arithmetic", &reg).is_empty());
        // canonical names cannot be disabled
        assert!(reg.disable_alias("aes").is_err());
    }

    #[test]
    fn duplicate_alias_across_classes_is_fatal() {
        let classes = vec![
            CryptoClass {
                canonical: "aes".into(),
                category: Category::Primitive,
                aliases: vec!["shared".into()],
                vector: true,
            },
            CryptoClass {
                canonical: "des".into(),
                category: Category::Primitive,
                aliases: vec!["shared".into()],
                vector: true,
            },
        ];
        assert!(matches!(
            Registry::from_classes(classes),
            Err(FocError::Config(_))
        ));
    }

    #[test]
    fn registry_file_roundtrip() {
        let reg = default_registry();
        let mut buf = Vec::new();
        reg.write_to(&mut buf).unwrap();
        let back = Registry::from_reader(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), reg.len());
        assert_eq!(back.vector_len(), 61);
        assert_eq!(back.vector_classes(), reg.vector_classes());
        assert_eq!(back.canonical_of("desede"), Some("3des"));
    }
}
