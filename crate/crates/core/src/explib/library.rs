use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::similarity::{key_similarity, similarity};
use super::{Experience, RetrievalKey, Timestamp};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    /// Capacity K.
    pub capacity: usize,
    /// Weight of categorical similarity.
    pub alpha: f64,
    /// Merge threshold.
    pub tau_update: f64,
    /// Weight of the old success rate when merging.
    pub lambda: f64,
    /// Quality weights for success rate, frequency and timeliness.
    pub w: [f64; 3],
    pub f_max: f64,
    /// Timeliness decay per time unit.
    pub beta: f64,
    pub tau_quality: f64,
    pub tau_retrieve: f64,
    pub m_retrieve: usize,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            capacity: 100,
            alpha: 0.6,
            tau_update: 0.7,
            lambda: 0.6,
            w: [0.5, 0.3, 0.2],
            f_max: 10.0,
            beta: 0.1,
            tau_quality: 0.3,
            tau_retrieve: 0.5,
            m_retrieve: 5,
        }
    }
}

impl LibraryConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.capacity == 0 {
            return Err(invalid("capacity must be at least 1"));
        }
        unit("alpha", self.alpha)?;
        unit("tau_update", self.tau_update)?;
        unit("lambda", self.lambda)?;
        unit("tau_quality", self.tau_quality)?;
        unit("tau_retrieve", self.tau_retrieve)?;
        for &w in &self.w {
            unit("w", w)?;
        }
        if (self.w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("quality weights must sum to 1"));
        }
        if !(self.f_max.is_finite() && self.f_max > 0.0) {
            return Err(invalid("f_max must be positive"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(invalid("beta must be non-negative"));
        }
        Ok(())
    }

    /// Quality score; `now` must not precede `e.t_last`.
    pub fn quality(&self, e: &Experience, now: Timestamp) -> Result<f64> {
        if now < e.t_last || !now.is_finite() {
            return Err(invalid(format!("quality at {now} precedes last update {}", e.t_last)));
        }
        Ok(self.quality_unchecked(e, now))
    }

    // Clock skew inside the library counts as zero elapsed time.
    pub(crate) fn quality_unchecked(&self, e: &Experience, now: Timestamp) -> f64 {
        let dt = (now - e.t_last).max(0.0);
        self.w[0] * e.eta_s + self.w[1] * (e.f as f64 / self.f_max).min(1.0) + self.w[2] * (-self.beta * dt).exp()
    }

    /// Incremental update of `old` with `new`: blended success rate, one more
    /// occurrence, and set union of the token fields.
    pub fn merge(&self, old: &Experience, new: &Experience, now: Timestamp) -> Experience {
        let union = |a: &crate::tokens::TokenSet, b: &crate::tokens::TokenSet| a.union(b).cloned().collect();
        Experience {
            scene_type: union(&old.scene_type, &new.scene_type),
            context: union(&old.context, &new.context),
            rules: union(&old.rules, &new.rules),
            strategy: union(&old.strategy, &new.strategy),
            eta_s: (self.lambda * old.eta_s + (1.0 - self.lambda) * new.eta_s).clamp(0.0, 1.0),
            f: old.f.saturating_add(1),
            t_last: now.max(old.t_last),
            raw_text: if new.raw_text.is_empty() { old.raw_text.clone() } else { new.raw_text.clone() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Merged(usize),
    Appended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub experience: Experience,
    pub similarity: f64,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceLibrary {
    config: LibraryConfig,
    entries: Vec<Experience>,
}

impl ExperienceLibrary {
    pub fn new(config: LibraryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, entries: Vec::new() })
    }

    pub fn from_entries(config: LibraryConfig, entries: Vec<Experience>) -> Result<Self> {
        config.validate()?;
        if entries.len() > config.capacity {
            return Err(invalid(format!("{} entries exceed capacity {}", entries.len(), config.capacity)));
        }
        if let Some(bad) = entries.iter().position(|e| !e.is_valid()) {
            return Err(invalid(format!("entry {bad} violates experience invariants")));
        }
        Ok(Self { config, entries })
    }

    pub fn config(&self) -> &LibraryConfig {
        &self.config
    }

    pub fn entries(&self) -> &[Experience] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn quality(&self, e: &Experience, now: Timestamp) -> Result<f64> {
        self.config.quality(e, now)
    }

    /// Merge into the most similar entry when it clears `tau_update`,
    /// otherwise append. Over capacity, the lowest-quality entry is evicted.
    pub fn upsert(&mut self, e_new: Experience, now: Timestamp) -> UpsertOutcome {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let s = similarity(&e_new, e, &self.config);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let outcome = match best {
            Some((i, s)) if s >= self.config.tau_update => {
                self.entries[i] = self.config.merge(&self.entries[i], &e_new, now);
                UpsertOutcome::Merged(i)
            }
            _ => {
                let mut e = e_new;
                e.t_last = now;
                self.entries.push(e);
                UpsertOutcome::Appended
            }
        };
        while self.entries.len() > self.config.capacity {
            let victim = self.lowest_quality(now);
            self.entries.remove(victim);
        }
        outcome
    }

    fn lowest_quality(&self, now: Timestamp) -> usize {
        let mut victim = 0;
        let mut q_min = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let q = self.config.quality_unchecked(e, now);
            if q < q_min || (q == q_min && e.t_last < self.entries[victim].t_last) {
                victim = i;
                q_min = q;
            }
        }
        victim
    }

    /// Drop entries below `tau_quality`, keep the top K by quality. Returns
    /// the number of entries removed.
    pub fn cleanup(&mut self, now: Timestamp) -> usize {
        let before = self.entries.len();
        let mut scored: Vec<(f64, Experience)> = std::mem::take(&mut self.entries)
            .into_iter()
            .map(|e| (self.config.quality_unchecked(&e, now), e))
            .filter(|(q, _)| *q >= self.config.tau_quality)
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.t_last.partial_cmp(&b.1.t_last).unwrap_or(Ordering::Equal))
        });
        scored.truncate(self.config.capacity);
        self.entries = scored.into_iter().map(|(_, e)| e).collect();
        before - self.entries.len()
    }

    /// Entries with key similarity at least `tau_retrieve`, most similar
    /// first (higher quality on ties), at most `m_retrieve` of them.
    pub fn retrieve(&self, key: &RetrievalKey, now: Timestamp) -> Vec<Retrieved> {
        if !key.is_valid() {
            return Vec::new();
        }
        let mut hits: Vec<Retrieved> = self
            .entries
            .iter()
            .filter_map(|e| {
                let similarity = key_similarity(key, e);
                (similarity >= self.config.tau_retrieve).then(|| Retrieved {
                    experience: e.clone(),
                    similarity,
                    quality: self.config.quality_unchecked(e, now),
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then(b.quality.partial_cmp(&a.quality).unwrap_or(Ordering::Equal))
        });
        hits.truncate(self.config.m_retrieve);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::token_set;

    fn exp(s: &str, c: &str, r: &str, t: &str, eta: f64, f: u32, t_last: f64) -> Experience {
        let mut e = Experience::new(token_set(s), token_set(c), token_set(r), token_set(t), eta, t_last);
        e.f = f;
        e
    }

    fn lib(k: usize, entries: Vec<Experience>) -> ExperienceLibrary {
        ExperienceLibrary::from_entries(LibraryConfig::with_capacity(k), entries).unwrap()
    }

    #[test]
    fn paper_constants_are_defaults() {
        let c = LibraryConfig::default();
        assert_eq!((c.alpha, c.tau_update, c.lambda, c.f_max, c.tau_quality), (0.6, 0.7, 0.6, 10.0, 0.3));
        assert_eq!(c.w, [0.5, 0.3, 0.2]);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(LibraryConfig { capacity: 0, ..Default::default() }.validate().is_err());
        assert!(LibraryConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(LibraryConfig { w: [0.5, 0.5, 0.5], ..Default::default() }.validate().is_err());
        assert!(LibraryConfig { beta: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn quality_examples() {
        let c = LibraryConfig::default();
        assert!((c.quality(&exp("x", "", "", "", 1.0, 10, 0.0), 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((c.quality(&exp("x", "", "", "", 0.8, 5, 0.0), 0.0).unwrap() - 0.75).abs() < 1e-12);
        let q = c.quality(&exp("x", "", "", "", 0.8, 5, 0.0), 10.0).unwrap();
        assert!((q - (0.4 + 0.15 + 0.2 * (-1.0f64).exp())).abs() < 1e-12);
        assert!((q - 0.6236).abs() < 1e-4);
        assert!(c.quality(&exp("x", "", "", "", 0.8, 5, 5.0), 4.0).is_err());
    }

    #[test]
    fn merge_examples() {
        let c = LibraryConfig::default();
        let old = exp("mall", "red", "", "a", 0.5, 3, 0.0);
        let new = exp("mall", "blue", "", "b", 1.0, 1, 0.0);
        let m = c.merge(&old, &new, 4.0);
        assert!((m.eta_s - 0.7).abs() < 1e-12);
        assert_eq!(m.f, 4);
        assert_eq!(m.t_last, 4.0);
        assert_eq!(m.context, token_set("red blue"));
        let same = c.merge(&old, &old, 0.0);
        assert_eq!((same.scene_type.clone(), same.context.clone(), same.strategy.clone()), (old.scene_type, old.context, old.strategy));
        assert!((same.eta_s - old.eta_s).abs() < 1e-12);
    }

    #[test]
    fn upsert_merges_at_threshold_and_appends_below() {
        // cat = (1 + 1 + 0 + 0) / 4 = 0.5 with sim_num = 1 gives 0.7: merged
        let base = exp("mall", "red sofa", "left", "corridor", 1.0, 1, 0.0);
        let mut l = lib(10, vec![base.clone()]);
        let near = exp("mall", "red sofa", "right", "lobby", 1.0, 1, 0.0);
        assert_eq!(l.upsert(near, 1.0), UpsertOutcome::Merged(0));
        assert_eq!(l.len(), 1);
        assert_eq!(l.entries()[0].f, 2);
        // cat = (1 + 1/3 + 0 + 0) / 4 = 1/3 gives 0.6: appended
        let mut l = lib(10, vec![base]);
        let far = exp("mall", "red lamp", "right", "lobby", 1.0, 1, 0.0);
        assert_eq!(l.upsert(far, 1.0), UpsertOutcome::Appended);
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn upsert_evicts_lowest_quality_when_full() {
        let a = exp("a", "a", "a", "a", 0.9, 5, 0.0);
        let b = exp("b", "b", "b", "b", 0.1, 1, 0.0);
        let mut l = lib(2, vec![a.clone(), b]);
        let c = exp("c", "c", "c", "c", 0.6, 1, 0.0);
        assert_eq!(l.upsert(c, 0.0), UpsertOutcome::Appended);
        assert_eq!(l.len(), 2);
        assert_eq!(l.entries()[0], a);
        assert_eq!(l.entries()[1].scene_type, token_set("c"));
    }

    #[test]
    fn cleanup_filters_and_truncates() {
        // qualities at now = 0: eta 1 f 10 -> 1.0; eta 0.2 f 1 -> 0.33; eta 0 f 1 -> 0.23
        let hi = exp("a", "", "", "", 1.0, 10, 0.0);
        let mid = exp("b", "", "", "", 0.2, 1, 0.0);
        let lo = exp("c", "", "", "", 0.0, 1, 0.0);
        let mut l = lib(10, vec![lo, mid.clone(), hi.clone()]);
        assert_eq!(l.cleanup(0.0), 1);
        assert_eq!(l.entries(), &[hi.clone(), mid][..]);

        let mut l = lib(10, vec![]);
        assert_eq!(l.cleanup(0.0), 0);

        let a = exp("a", "", "", "", 0.9, 1, 0.0);
        let b = exp("b", "", "", "", 0.7, 1, 0.0);
        let c = exp("c", "", "", "", 0.5, 1, 0.0);
        let mut l = lib(2, vec![c, a.clone()]);
        l.entries.push(b.clone());
        assert_eq!(l.cleanup(0.0), 1);
        assert_eq!(l.entries(), &[a, b][..]);
    }

    #[test]
    fn retrieve_filters_sorts_and_truncates() {
        let key = RetrievalKey::new(token_set("mall"), token_set("red sofa"), token_set("corridor")).unwrap();
        // key sims: 1.0 (identical), 2/3, 1/3
        let e1 = exp("mall", "red sofa", "x", "corridor", 0.5, 1, 0.0);
        let e2 = exp("mall", "red sofa", "x", "lobby", 0.5, 1, 0.0);
        let e3 = exp("mall", "blue", "x", "lobby", 0.5, 1, 0.0);
        let mut l = ExperienceLibrary::from_entries(
            LibraryConfig { m_retrieve: 2, ..LibraryConfig::with_capacity(10) },
            vec![e3, e2.clone(), e1.clone()],
        )
        .unwrap();
        let hits = l.retrieve(&key, 0.0);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].experience, e1);
        assert_eq!(hits[0].similarity, 1.0);
        assert_eq!(hits[1].experience, e2);
        l.entries.clear();
        assert!(l.retrieve(&key, 0.0).is_empty());
    }

    #[test]
    fn retrieve_prefers_quality_on_ties() {
        let key = RetrievalKey::new(token_set("mall"), token_set(""), token_set("")).unwrap();
        let weak = exp("mall", "", "", "", 0.1, 1, 0.0);
        let strong = exp("mall", "", "", "", 0.9, 1, 0.0);
        let l = lib(10, vec![weak, strong.clone()]);
        assert_eq!(l.retrieve(&key, 0.0)[0].experience, strong);
    }

    #[test]
    fn from_entries_checks_invariants() {
        let e = exp("a", "", "", "", 0.5, 1, 0.0);
        assert!(ExperienceLibrary::from_entries(LibraryConfig::with_capacity(1), vec![e.clone(), e.clone()]).is_err());
        let mut bad = e;
        bad.f = 0;
        assert!(ExperienceLibrary::from_entries(LibraryConfig::with_capacity(5), vec![bad]).is_err());
        assert!(RetrievalKey::new(token_set(""), token_set(""), token_set("")).is_none());
    }
}
