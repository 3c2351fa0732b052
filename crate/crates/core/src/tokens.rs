//! Tokenization, token hashing and the fixed word inventory shared by the
//! scene generator, the policy's embeddings and the experience encoder.

use std::collections::BTreeSet;

pub type TokenSet = BTreeSet<String>;

/// Lowercase, split on anything that is not ASCII alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

pub fn token_set(text: &str) -> TokenSet {
    tokenize(text).into_iter().collect()
}

/// 64-bit FNV-1a. Used wherever a platform-stable hash is needed.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn bucket(token: &str, buckets: usize) -> usize {
    (fnv1a(token.as_bytes()) % buckets as u64) as usize
}

/// Embedding row of a token: content words own fixed rows at the front of the
/// table and everything else hashes into the rest. Tables too small for the
/// vocabulary fall back to plain hashing.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    let vocab = content_vocabulary();
    if buckets <= vocab.len() {
        return bucket(token, buckets);
    }
    match vocab.iter().position(|w| *w == token) {
        Some(i) => i,
        None => vocab.len() + bucket(token, buckets - vocab.len()),
    }
}

/// Objects, colours, then region words of every scene type, without repeats.
pub fn content_vocabulary() -> &'static [&'static str] {
    static VOCAB: std::sync::OnceLock<Vec<&'static str>> = std::sync::OnceLock::new();
    VOCAB.get_or_init(|| {
        let mut v: Vec<&'static str> = OBJECTS.into_iter().chain(COLORS).collect();
        for st in SceneType::ALL {
            for r in st.regions() {
                if !v.contains(&r) {
                    v.push(r);
                }
            }
        }
        v
    })
}

pub const OBJECTS: [&str; 16] = [
    "sofa", "painting", "lamp", "plant", "fountain", "bench", "statue", "clock", "mirror", "piano",
    "table", "shelf", "vase", "poster", "door", "desk",
];

pub const COLORS: [&str; 8] = [
    "red", "blue", "green", "yellow", "white", "black", "brown", "orange",
];

/// Scene categories; `Residential` is in-distribution, the rest are OOD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneType {
    Residential,
    Office,
    Mall,
    Hotel,
    Cinema,
    Other,
}

impl SceneType {
    pub const ALL: [SceneType; 6] = [
        SceneType::Residential,
        SceneType::Office,
        SceneType::Mall,
        SceneType::Hotel,
        SceneType::Cinema,
        SceneType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneType::Residential => "residential",
            SceneType::Office => "office",
            SceneType::Mall => "mall",
            SceneType::Hotel => "hotel",
            SceneType::Cinema => "cinema",
            SceneType::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<SceneType> {
        SceneType::ALL.into_iter().find(|t| t.as_str() == s.trim().to_ascii_lowercase())
    }

    pub fn is_ood(self) -> bool {
        self != SceneType::Residential
    }

    /// Region words; index 0 is shared by every scene type.
    pub fn regions(self) -> [&'static str; 8] {
        match self {
            SceneType::Residential => [
                "corridor", "kitchen", "bedroom", "bathroom", "lounge", "dining", "study", "laundry",
            ],
            SceneType::Office => [
                "corridor", "lobby", "cubicles", "boardroom", "pantry", "reception", "archive",
                "printroom",
            ],
            SceneType::Mall => [
                "corridor", "atrium", "foodcourt", "arcade", "boutique", "escalator", "concourse",
                "pharmacy",
            ],
            SceneType::Hotel => [
                "corridor", "foyer", "suite", "ballroom", "spa", "restaurant", "gym", "terrace",
            ],
            SceneType::Cinema => [
                "corridor", "auditorium", "concession", "ticketing", "projection", "restroom",
                "balcony", "gallery",
            ],
            SceneType::Other => [
                "corridor", "warehouse", "garage", "workshop", "storage", "loading", "yard",
                "depot",
            ],
        }
    }
}

impl std::fmt::Display for SceneType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True for words that name a place or a landmark (as opposed to template
/// filler like "walk" or "the").
pub fn is_content_word(token: &str) -> bool {
    OBJECTS.contains(&token)
        || COLORS.contains(&token)
        || SceneType::ALL.iter().any(|t| t.regions().contains(&token))
}

pub fn object_index(token: &str) -> Option<usize> {
    OBJECTS.iter().position(|o| *o == token)
}

/// Fixed slot layout of visual feature vectors (dimension `dim` ≥ 64).
///
/// `[0,16)` object words, `[16,24)` colours, `[24,32)` regions (by position in
/// the scene type's region list), `[32,40)` hashed unknown words, `[40,56)`
/// experience-match slots written only by the fusion layer, `[56,dim-2)`
/// appearance, `dim-2` bias, `dim-1` visited flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub dim: usize,
}

impl FeatureLayout {
    pub const MIN_DIM: usize = 64;
    pub const OBJECT: usize = 0;
    pub const COLOR: usize = 16;
    pub const REGION: usize = 24;
    pub const UNKNOWN: usize = 32;
    pub const MATCH: usize = 40;
    pub const APPEARANCE: usize = 56;

    pub fn new(dim: usize) -> Option<Self> {
        (dim >= Self::MIN_DIM).then_some(Self { dim })
    }

    pub fn bias(&self) -> usize {
        self.dim - 2
    }

    pub fn visited(&self) -> usize {
        self.dim - 1
    }

    /// Feature slot of a content token.
    pub fn slot(&self, token: &str) -> usize {
        if let Some(i) = object_index(token) {
            return Self::OBJECT + i;
        }
        if let Some(i) = COLORS.iter().position(|c| *c == token) {
            return Self::COLOR + i;
        }
        for st in SceneType::ALL {
            if let Some(i) = st.regions().iter().position(|r| *r == token) {
                return Self::REGION + i;
            }
        }
        Self::UNKNOWN + bucket(token, 8)
    }
}
