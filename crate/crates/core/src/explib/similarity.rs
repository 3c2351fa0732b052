use super::{Experience, LibraryConfig, RetrievalKey};
use crate::tokens::TokenSet;

/// |a ∩ b| / |a ∪ b|, with two empty sets counting as identical.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Mean per-field Jaccard over S_t, C_s, R_s and T_n.
pub fn cat_similarity(a: &Experience, b: &Experience) -> f64 {
    (jaccard(&a.scene_type, &b.scene_type)
        + jaccard(&a.context, &b.context)
        + jaccard(&a.rules, &b.rules)
        + jaccard(&a.strategy, &b.strategy))
        / 4.0
}

fn numeric(e: &Experience, f_max: f64) -> [f64; 2] {
    [e.eta_s, (e.f as f64 / f_max).min(1.0)]
}

fn cosine(x: [f64; 2], y: [f64; 2]) -> f64 {
    let nx = x[0].hypot(x[1]);
    let ny = y[0].hypot(y[1]);
    if nx == 0.0 && ny == 0.0 {
        return 1.0;
    }
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    ((x[0] * y[0] + x[1] * y[1]) / (nx * ny)).clamp(0.0, 1.0)
}

/// Cosine of `(eta_s, f_norm)` clamped at zero; two zero vectors give 1.
pub fn num_similarity(a: &Experience, b: &Experience, f_max: f64) -> f64 {
    cosine(numeric(a, f_max), numeric(b, f_max))
}

/// `alpha * sim_cat + (1 - alpha) * sim_num`.
pub fn similarity(a: &Experience, b: &Experience, cfg: &LibraryConfig) -> f64 {
    cfg.alpha * cat_similarity(a, b) + (1.0 - cfg.alpha) * num_similarity(a, b, cfg.f_max)
}

/// Mean Jaccard of the three key fields against an entry.
pub fn key_similarity(key: &RetrievalKey, e: &Experience) -> f64 {
    (jaccard(&key.scene_type, &e.scene_type) + jaccard(&key.context, &e.context) + jaccard(&key.strategy, &e.strategy))
        / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::token_set;

    fn exp(s: &str, c: &str, r: &str, t: &str, eta: f64, f: u32) -> Experience {
        let mut e = Experience::new(token_set(s), token_set(c), token_set(r), token_set(t), eta, 0.0);
        e.f = f;
        e
    }

    #[test]
    fn jaccard_cases() {
        let e = TokenSet::new();
        assert_eq!(jaccard(&e, &e), 1.0);
        assert_eq!(jaccard(&token_set("a"), &e), 0.0);
        assert_eq!(jaccard(&token_set("a b"), &token_set("b c")), 1.0 / 3.0);
    }

    #[test]
    fn categorical_examples() {
        let a = exp("mall", "red sofa", "left", "corridor", 1.0, 1);
        assert_eq!(cat_similarity(&a, &a), 1.0);
        let b = exp("office", "blue lamp", "right", "lobby", 1.0, 1);
        assert_eq!(cat_similarity(&a, &b), 0.0);
        let c = exp("mall", "red sofa", "right", "lobby", 1.0, 1);
        assert_eq!(cat_similarity(&a, &c), 0.5);
    }

    #[test]
    fn numeric_examples() {
        let a = exp("x", "", "", "", 1.0, 1);
        assert_eq!(num_similarity(&a, &a, 10.0), 1.0);
        assert_eq!(cosine([1.0, 0.0], [0.0, 1.0]), 0.0);
        assert!((cosine([0.8, 0.5], [0.4, 0.25]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine([0.0, 0.0], [0.0, 0.0]), 1.0);
        assert_eq!(cosine([0.0, 0.0], [1.0, 0.0]), 0.0);
    }

    #[test]
    fn weighted_combination() {
        let cfg = LibraryConfig::default();
        let a = exp("mall", "red sofa", "left", "corridor", 1.0, 1);
        let c = exp("mall", "red sofa", "right", "lobby", 1.0, 1);
        // sim_cat = 0.5, sim_num = 1.0
        assert!((similarity(&a, &c, &cfg) - 0.7).abs() < 1e-12);
        let d = exp("office", "blue lamp", "right", "lobby", 0.0, 1);
        let e = exp("mall", "red", "left", "corridor", 1.0, 1);
        let cfg_inf = LibraryConfig { f_max: 1e300, ..LibraryConfig::default() };
        assert!(similarity(&d, &e, &cfg_inf).abs() < 1e-12);
    }
}
