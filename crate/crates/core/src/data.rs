//! Datasets: the line-oriented file format, n-gram context pattern
//! extraction from tagged sentences, and synthetic corpora with known labels.
//!
//! File layout (UTF-8, tab-separated, `#` starts a comment line):
//!
//! ```text
//! ENTITIES
//! 0	Paris
//! PATTERNS
//! 0	* is an important city
//! EDGES
//! 0	0	3
//! SEEDS
//! city	0
//! GOLD
//! 0	city
//! ```
//!
//! Ids in ENTITIES and PATTERNS must be dense and listed in order. Category
//! ids follow the order in which categories first appear under SEEDS.
//! GOLD is optional.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::{CategoryId, EntityId, PatternId};

#[derive(Clone, Debug)]
pub struct Dataset {
    entities: Vec<String>,
    patterns: Vec<String>,
    graph: BipartiteGraph,
    categories: Vec<String>,
    seeds: Vec<Vec<EntityId>>,
    gold: BTreeMap<EntityId, CategoryId>,
}

impl Dataset {
    /// Validates and assembles a dataset. Duplicate co-occurrences are summed.
    pub fn new(
        entities: Vec<String>,
        patterns: Vec<String>,
        records: &[(EntityId, PatternId, u32)],
        categories: Vec<String>,
        seeds: Vec<Vec<EntityId>>,
        gold: BTreeMap<EntityId, CategoryId>,
    ) -> Result<Self> {
        if categories.is_empty() || categories.len() != seeds.len() {
            return Err(Error::Validation(format!(
                "{} categories but {} seed sets",
                categories.len(),
                seeds.len()
            )));
        }
        let graph = BipartiteGraph::build(entities.len(), patterns.len(), records)?;
        let mut seen = BTreeSet::new();
        for (c, set) in seeds.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Validation(format!("category {} has no seeds", categories[c])));
            }
            for &e in set {
                if e >= entities.len() {
                    return Err(Error::Validation(format!("seed {e} of {} is not an entity", categories[c])));
                }
                if !seen.insert(e) {
                    return Err(Error::Validation(format!("seed {} appears in more than one seed set", entities[e])));
                }
                if let Some(&g) = gold.get(&e) {
                    if g != c {
                        return Err(Error::Validation(format!(
                            "seed {} of {} is labelled {}",
                            entities[e], categories[c], categories[g]
                        )));
                    }
                }
            }
        }
        for (&e, &c) in &gold {
            if e >= entities.len() || c >= categories.len() {
                return Err(Error::Validation(format!("gold label ({e}, {c}) out of range")));
            }
        }
        Ok(Dataset {
            entities,
            patterns,
            graph,
            categories,
            seeds,
            gold,
        })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn seeds(&self) -> &[Vec<EntityId>] {
        &self.seeds
    }

    pub fn gold(&self) -> &BTreeMap<EntityId, CategoryId> {
        &self.gold
    }

    pub fn has_gold(&self) -> bool {
        !self.gold.is_empty()
    }

    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.categories.iter().position(|c| c == name)
    }

    /// Canonical text form: sections in fixed order, edges sorted and merged.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str("ENTITIES\n");
        for (i, name) in self.entities.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{name}");
        }
        s.push_str("PATTERNS\n");
        for (i, name) in self.patterns.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{name}");
        }
        s.push_str("EDGES\n");
        for e in self.graph.edges() {
            let _ = writeln!(s, "{}\t{}\t{}", e.entity, e.pattern, e.count);
        }
        s.push_str("SEEDS\n");
        for (c, set) in self.seeds.iter().enumerate() {
            for &e in set {
                let _ = writeln!(s, "{}\t{e}", self.categories[c]);
            }
        }
        if self.has_gold() {
            s.push_str("GOLD\n");
            for (&e, &c) in &self.gold {
                let _ = writeln!(s, "{e}\t{}", self.categories[c]);
            }
        }
        s
    }

    /// SHA-256 of the canonical form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_string().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Clone, Copy, PartialEq)]
        enum Section {
            None,
            Entities,
            Patterns,
            Edges,
            Seeds,
            Gold,
        }
        let mut section = Section::None;
        let mut entities = Vec::new();
        let mut patterns = Vec::new();
        let mut records = Vec::new();
        let mut categories: Vec<String> = Vec::new();
        let mut seeds: Vec<Vec<EntityId>> = Vec::new();
        let mut gold_raw: Vec<(usize, EntityId, String)> = Vec::new();
        let mut seen_sections = BTreeSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let header = match line.trim() {
                "ENTITIES" => Some(Section::Entities),
                "PATTERNS" => Some(Section::Patterns),
                "EDGES" => Some(Section::Edges),
                "SEEDS" => Some(Section::Seeds),
                "GOLD" => Some(Section::Gold),
                _ => None,
            };
            if let Some(h) = header {
                if !seen_sections.insert(line.trim().to_string()) {
                    return Err(parse_err(line_no, format!("section {} repeated", line.trim())));
                }
                section = h;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let int = |i: usize, what: &str| -> Result<usize> {
                fields
                    .get(i)
                    .ok_or_else(|| parse_err(line_no, format!("missing field `{what}`")))?
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(line_no, format!("field `{what}` is not a non-negative integer")))
            };
            let want = |n: usize| -> Result<()> {
                if fields.len() == n {
                    Ok(())
                } else {
                    Err(parse_err(line_no, format!("expected {n} tab-separated fields, found {}", fields.len())))
                }
            };
            match section {
                Section::None => return Err(parse_err(line_no, "record before any section header")),
                Section::Entities | Section::Patterns => {
                    want(2)?;
                    let id = int(0, "id")?;
                    let vocab = if section == Section::Entities { &mut entities } else { &mut patterns };
                    if id != vocab.len() {
                        return Err(parse_err(line_no, format!("id {id} out of order, expected {}", vocab.len())));
                    }
                    vocab.push(fields[1].to_string());
                }
                Section::Edges => {
                    want(3)?;
                    let e = int(0, "entity")?;
                    let p = int(1, "pattern")?;
                    let c = int(2, "count")?;
                    if e >= entities.len() {
                        return Err(parse_err(line_no, format!("unknown entity {e}")));
                    }
                    if p >= patterns.len() {
                        return Err(parse_err(line_no, format!("unknown pattern {p}")));
                    }
                    let c = u32::try_from(c)
                        .ok()
                        .filter(|&c| c >= 1)
                        .ok_or_else(|| parse_err(line_no, "field `count` must be between 1 and 2^32-1"))?;
                    records.push((e, p, c));
                }
                Section::Seeds => {
                    want(2)?;
                    let e = int(1, "entity")?;
                    if e >= entities.len() {
                        return Err(parse_err(line_no, format!("unknown seed entity {e}")));
                    }
                    let name = fields[0].trim();
                    let c = match categories.iter().position(|c| c == name) {
                        Some(c) => c,
                        None => {
                            categories.push(name.to_string());
                            seeds.push(Vec::new());
                            categories.len() - 1
                        }
                    };
                    seeds[c].push(e);
                }
                Section::Gold => {
                    want(2)?;
                    let e = int(0, "entity")?;
                    if e >= entities.len() {
                        return Err(parse_err(line_no, format!("unknown entity {e}")));
                    }
                    gold_raw.push((line_no, e, fields[1].trim().to_string()));
                }
            }
        }
        let mut gold = BTreeMap::new();
        for (line_no, e, name) in gold_raw {
            let c = categories
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| parse_err(line_no, format!("gold category `{name}` has no seeds")))?;
            if gold.insert(e, c).is_some_and(|prev| prev != c) {
                return Err(parse_err(line_no, format!("entity {e} has conflicting gold labels")));
            }
        }
        Self::new(entities, patterns, &records, categories, seeds, gold)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// A sentence with entity mentions as half-open token spans.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

impl TaggedSentence {
    pub fn new(tokens: &[&str], spans: &[(usize, usize)]) -> Self {
        TaggedSentence {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            spans: spans.to_vec(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut sorted = self.spans.clone();
        sorted.sort_unstable();
        let mut last_end = 0;
        for (i, &(s, e)) in sorted.iter().enumerate() {
            if s >= e || e > self.tokens.len() {
                return Err(format!("span {s}..{e} invalid for {} tokens", self.tokens.len()));
            }
            if i > 0 && s < last_end {
                return Err(format!("span {s}..{e} overlaps another mention"));
            }
            last_end = e;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Context before the mention: `located in *`.
    Left,
    /// Context after the mention: `* is an important city`.
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternKey {
    pub side: Side,
    pub ngram: Vec<String>,
}

impl std::fmt::Display for PatternKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.side {
            Side::Left => write!(f, "{} *", self.ngram.join(" ")),
            Side::Right => write!(f, "* {}", self.ngram.join(" ")),
        }
    }
}

/// Output of [`extract_patterns`]; vocabularies are in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub entities: Vec<String>,
    pub patterns: Vec<PatternKey>,
    /// `(entity, pattern, count)`, sorted by entity then pattern id.
    pub records: Vec<(EntityId, PatternId, u32)>,
    pub skipped_sentences: usize,
}

impl Extraction {
    pub fn entity_id(&self, surface: &str) -> Option<EntityId> {
        self.entities.iter().position(|e| e == surface)
    }

    pub fn pattern_names(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.to_string()).collect()
    }

    /// Records keyed by surface form and rendered pattern.
    pub fn as_map(&self) -> BTreeMap<(String, String), u32> {
        self.records
            .iter()
            .map(|&(e, p, c)| ((self.entities[e].clone(), self.patterns[p].to_string()), c))
            .collect()
    }
}

/// Every left and right context n-gram (`1 <= n <= max_n`) adjacent to each
/// entity mention, within its sentence. Entity surface forms are the span's
/// tokens joined by single spaces. Sentences with malformed spans are skipped.
pub fn extract_patterns(corpus: &[TaggedSentence], max_n: usize) -> Extraction {
    let mut entity_ids: HashMap<String, EntityId> = HashMap::new();
    let mut pattern_ids: HashMap<PatternKey, PatternId> = HashMap::new();
    let mut out = Extraction::default();
    let mut counts: BTreeMap<(EntityId, PatternId), u32> = BTreeMap::new();

    for (i, sentence) in corpus.iter().enumerate() {
        if let Err(msg) = sentence.validate() {
            log::warn!("skipping sentence {i}: {msg}");
            out.skipped_sentences += 1;
            continue;
        }
        for &(start, end) in &sentence.spans {
            let surface = sentence.tokens[start..end].join(" ");
            let e = *entity_ids.entry(surface.clone()).or_insert_with(|| {
                out.entities.push(surface);
                out.entities.len() - 1
            });
            let mut emit = |key: PatternKey| {
                let p = *pattern_ids.entry(key.clone()).or_insert_with(|| {
                    out.patterns.push(key);
                    out.patterns.len() - 1
                });
                *counts.entry((e, p)).or_default() += 1;
            };
            for n in 1..=max_n.min(start) {
                emit(PatternKey {
                    side: Side::Left,
                    ngram: sentence.tokens[start - n..start].to_vec(),
                });
            }
            for n in 1..=max_n.min(sentence.tokens.len() - end) {
                emit(PatternKey {
                    side: Side::Right,
                    ngram: sentence.tokens[end..end + n].to_vec(),
                });
            }
        }
    }
    out.records = counts.into_iter().map(|((e, p), c)| (e, p, c)).collect();
    out
}

/// Parameters of a synthetic corpus with one pattern block per category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub entities_per_category: usize,
    pub patterns_per_category: usize,
    /// Fraction of each entity's links that go to other categories' blocks.
    pub noise: f64,
    /// Pattern links per entity before the noise split.
    pub links_per_entity: usize,
    /// Co-occurrence counts are `1 + Geometric(count_continue)` (number of
    /// further successes before the first failure).
    pub count_continue: f64,
    pub seeds_per_category: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            categories: 4,
            entities_per_category: 100,
            patterns_per_category: 40,
            noise: 0.2,
            links_per_entity: 10,
            count_continue: 0.5,
            seeds_per_category: 10,
            seed: 0,
        }
    }
}

const MAX_COUNT: u32 = 1000;

impl SyntheticSpec {
    /// In-block and out-of-block links per entity.
    pub fn link_split(&self) -> (usize, usize) {
        let p = self.links_per_entity as f64;
        // guards against 10 * (1 - 0.2) landing a hair above 8
        let inside = (p * (1.0 - self.noise) - 1e-9).ceil().max(0.0) as usize;
        let outside = (p * self.noise + 1e-9).floor() as usize;
        (inside, outside)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.categories == 0 || self.entities_per_category == 0 || self.patterns_per_category == 0 {
            return fail("categories, entities_per_category and patterns_per_category must be >= 1".into());
        }
        if self.links_per_entity == 0 {
            return fail("links_per_entity must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return fail(format!("noise must lie in [0, 1), got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.count_continue) {
            return fail(format!("count_continue must lie in [0, 1), got {}", self.count_continue));
        }
        if self.seeds_per_category == 0 || self.seeds_per_category > self.entities_per_category {
            return fail(format!(
                "seeds_per_category must lie in 1..={}, got {}",
                self.entities_per_category, self.seeds_per_category
            ));
        }
        let (inside, outside) = self.link_split();
        if inside > self.patterns_per_category {
            return fail(format!(
                "{inside} in-category links per entity need at least that many patterns per category, got {}",
                self.patterns_per_category
            ));
        }
        let foreign = (self.categories - 1) * self.patterns_per_category;
        if outside > foreign {
            return fail(format!("{outside} out-of-category links per entity but only {foreign} foreign patterns"));
        }
        Ok(())
    }
}

/// Builds a dataset whose ground truth is known by construction.
///
/// Entity and pattern ids are shuffled so that id order carries no category
/// information. The first `seeds_per_category` entities generated for each
/// category become its seeds.
pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c_n, e_n, p_n) = (spec.categories, spec.entities_per_category, spec.patterns_per_category);
    let entity_perm = shuffled(c_n * e_n, &mut rng);
    let pattern_perm = shuffled(c_n * p_n, &mut rng);
    let (inside, outside) = spec.link_split();

    let mut records = Vec::with_capacity(c_n * e_n * (inside + outside));
    for c in 0..c_n {
        for j in 0..e_n {
            let e = entity_perm[c * e_n + j];
            for local in sample(&mut rng, p_n, inside) {
                records.push((e, pattern_perm[c * p_n + local], draw_count(spec.count_continue, &mut rng)));
            }
            for k in sample(&mut rng, (c_n - 1) * p_n, outside) {
                // skip over this category's own block
                let block = k / p_n;
                let block = if block >= c { block + 1 } else { block };
                let global = block * p_n + k % p_n;
                records.push((e, pattern_perm[global], draw_count(spec.count_continue, &mut rng)));
            }
        }
    }

    let mut entities = vec![String::new(); c_n * e_n];
    let mut gold = BTreeMap::new();
    for c in 0..c_n {
        for j in 0..e_n {
            let e = entity_perm[c * e_n + j];
            entities[e] = format!("c{c}_e{j:03}");
            gold.insert(e, c);
        }
    }
    let mut patterns = vec![String::new(); c_n * p_n];
    for c in 0..c_n {
        for j in 0..p_n {
            patterns[pattern_perm[c * p_n + j]] = format!("c{c}_p{j:03}");
        }
    }
    let seeds = (0..c_n)
        .map(|c| (0..spec.seeds_per_category).map(|j| entity_perm[c * e_n + j]).collect())
        .collect();
    let categories = (0..c_n).map(|c| format!("cat{c}")).collect();
    Dataset::new(entities, patterns, &records, categories, seeds, gold)
}

fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn draw_count(q: f64, rng: &mut impl Rng) -> u32 {
    let mut c = 1;
    while c < MAX_COUNT && q > 0.0 && rng.gen_bool(q) {
        c += 1;
    }
    c
}
