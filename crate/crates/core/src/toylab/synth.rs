//! Synthetic fact corpora over a closed pseudo-word vocabulary.
//!
//! Every entity is one token whose surface form is a fixed-length pseudo-word
//! and no entity name occurs inside any other vocabulary word, so exact
//! string matching on document text finds exactly the planted mentions.
//! Each fact also has an alias: a second subject name that the model reads
//! as the same subject but that string matching on the canonical name does
//! not see.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::corpus::{write_corpus, CorpusManifest, DataBatch, Document};
use crate::item::{write_items, EvalItem};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
const PERIOD: u32 = 2;
const TOKENIZER_ID: &str = "toylab-words-v1";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    /// Sentence shape with one `[X]` (subject) and a final `[Y]` (object).
    pub template: String,
    /// Size of the relation's object pool.
    pub objects: usize,
}

/// How many times each fact is written into each batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MentionSchedule {
    /// Each fact debuts in a uniformly drawn batch with `debut_mentions`
    /// canonical mentions plus 0..=`max_alias_mentions` alias mentions, and
    /// gets `maintenance_mentions` canonical mentions in every later batch.
    Debut {
        debut_mentions: usize,
        max_alias_mentions: usize,
        maintenance_mentions: usize,
    },
    /// Canonical mention counts indexed `[fact][batch]`; no alias mentions.
    Explicit { mentions: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub relations: Vec<RelationSpec>,
    pub facts_per_relation: usize,
    pub batches: usize,
    pub sequence_length: usize,
    pub schedule: MentionSchedule,
    /// Fraction of documents in a batch that carry no fact.
    pub distractor_rate: f64,
    /// Inclusive range of filler words per document.
    pub doc_words: [usize; 2],
    pub filler_vocab: usize,
    pub entity_syllables: usize,
    pub filler_syllables: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 17,
            relations: vec![
                RelationSpec {
                    name: "P131".into(),
                    template: "[X] is located in [Y]".into(),
                    objects: 12,
                },
                RelationSpec {
                    name: "P19".into(),
                    template: "[X] was born in [Y]".into(),
                    objects: 12,
                },
                RelationSpec {
                    name: "P37".into(),
                    template: "The official language of [X] is [Y]".into(),
                    objects: 12,
                },
            ],
            facts_per_relation: 60,
            batches: 6,
            sequence_length: 64,
            schedule: MentionSchedule::Debut {
                debut_mentions: 4,
                max_alias_mentions: 2,
                maintenance_mentions: 2,
            },
            distractor_rate: 0.6,
            doc_words: [8, 24],
            filler_vocab: 300,
            entity_syllables: 3,
            filler_syllables: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PatternToken {
    Word(u32),
    Subject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pattern: Vec<PatternToken>,
    /// Offset of the subject slot within the pattern.
    subject_slot: usize,
    /// Global object ids.
    pub objects: Vec<usize>,
}

impl Relation {
    pub fn pattern_len(&self) -> usize {
        self.pattern.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub relation: usize,
    /// Global object id.
    pub object: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenKind {
    Other,
    /// Canonical or alias name of the fact's subject.
    Subject(usize),
    Object(usize),
}

/// A (fact, relation, object) statement read off a token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub fact: usize,
    pub relation: usize,
    pub object: usize,
}

/// Vocabulary, relations and facts of one generated corpus. Fact `f` owns
/// subject `f`; subjects are never shared between facts.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    vocab: Vec<String>,
    kinds: Vec<TokenKind>,
    relations: Vec<Relation>,
    facts: Vec<Fact>,
    subject_names: Vec<String>,
    alias_names: Vec<String>,
    object_names: Vec<String>,
    subject_tokens: Vec<u32>,
    alias_tokens: Vec<u32>,
    object_tokens: Vec<u32>,
    filler_tokens: Vec<u32>,
}

impl ToyWorld {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn object_count(&self) -> usize {
        self.object_names.len()
    }

    pub fn subject_name(&self, fact: usize) -> &str {
        &self.subject_names[fact]
    }

    pub fn alias_name(&self, fact: usize) -> &str {
        &self.alias_names[fact]
    }

    pub fn object_name(&self, object: usize) -> &str {
        &self.object_names[object]
    }

    pub fn item_id(&self, fact: usize) -> String {
        format!("{}:{}", self.relations[self.facts[fact].relation].name, self.subject_names[fact])
    }

    /// Text of a token span, words joined by single spaces.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let words: Vec<&str> = tokens.iter().map(|&t| self.vocab[t as usize].as_str()).collect();
        words.join(" ")
    }

    /// Every complete fact statement in `tokens`.
    pub fn extract(&self, tokens: &[u32]) -> Vec<Triple> {
        let mut out = Vec::new();
        for (p, &tok) in tokens.iter().enumerate() {
            let TokenKind::Subject(fact) = self.kinds.get(tok as usize).copied().unwrap_or(TokenKind::Other) else {
                continue;
            };
            let rel_id = self.facts[fact].relation;
            let rel = &self.relations[rel_id];
            let Some(start) = p.checked_sub(rel.subject_slot) else {
                continue;
            };
            let end = start + rel.pattern.len();
            if end > tokens.len() {
                continue;
            }
            let mut object = None;
            let ok = rel.pattern.iter().zip(&tokens[start..end]).all(|(pt, &t)| match pt {
                PatternToken::Word(w) => *w == t,
                PatternToken::Subject => true,
                PatternToken::Object => match self.kinds.get(t as usize) {
                    Some(TokenKind::Object(o)) if rel.objects.contains(o) => {
                        object = Some(*o);
                        true
                    }
                    _ => false,
                },
            });
            if let (true, Some(object)) = (ok, object) {
                out.push(Triple {
                    fact,
                    relation: rel_id,
                    object,
                });
            }
        }
        out
    }

    fn sentence(&self, fact: usize, alias: bool) -> Vec<u32> {
        let f = self.facts[fact];
        let subject = if alias {
            self.alias_tokens[fact]
        } else {
            self.subject_tokens[fact]
        };
        let mut out: Vec<u32> = self.relations[f.relation]
            .pattern
            .iter()
            .map(|pt| match pt {
                PatternToken::Word(w) => *w,
                PatternToken::Subject => subject,
                PatternToken::Object => self.object_tokens[f.object],
            })
            .collect();
        out.push(PERIOD);
        out
    }
}

/// A generated corpus: batches in training order plus one cloze item per fact.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub world: ToyWorld,
    pub manifest: CorpusManifest,
    pub batches: Vec<DataBatch>,
    pub items: Vec<EvalItem>,
    /// Canonical mentions `[fact][batch]`.
    pub mentions: Vec<Vec<usize>>,
    /// Alias mentions `[fact][batch]`.
    pub alias_mentions: Vec<Vec<usize>>,
}

impl ToyCorpus {
    /// Writes the batches with a manifest plus `items.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest, ToyError> {
        let manifest = write_corpus(&self.manifest, &self.batches, dir)?;
        write_items(&dir.join("items.jsonl"), &self.items)?;
        Ok(manifest)
    }

    /// Index of the fact behind each item id.
    pub fn fact_index(&self) -> BTreeMap<String, usize> {
        (0..self.world.facts.len()).map(|f| (self.world.item_id(f), f)).collect()
    }
}

fn invalid(msg: impl Into<String>) -> ToyError {
    ToyError::InvalidSpec(msg.into())
}

fn parse_template(template: &str) -> Result<(Vec<Result<String, bool>>, usize), ToyError> {
    // Ok(word) for literal words, Err(true) for [X], Err(false) for [Y].
    let parts: Vec<Result<String, bool>> = template
        .split_whitespace()
        .map(|w| match w {
            "[X]" => Err(true),
            "[Y]" => Err(false),
            other => Ok(other.to_string()),
        })
        .collect();
    let subjects = parts.iter().filter(|p| **p == Err(true)).count();
    let objects = parts.iter().filter(|p| **p == Err(false)).count();
    if subjects != 1 || objects != 1 || parts.last() != Some(&Err(false)) {
        return Err(invalid(format!(
            "template {template:?} needs exactly one [X] and one [Y], with [Y] last"
        )));
    }
    if parts.iter().any(|p| matches!(p, Ok(w) if w.contains('[') || w == ".")) {
        return Err(invalid(format!("template {template:?} has a malformed word")));
    }
    let slot = parts.iter().position(|p| *p == Err(true)).expect("one subject slot");
    Ok((parts, slot))
}

impl SyntheticSpec {
    pub fn fact_count(&self) -> usize {
        self.relations.len() * self.facts_per_relation
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.relations.is_empty() || self.facts_per_relation == 0 {
            return Err(invalid("at least one relation and one fact per relation are required"));
        }
        if self.batches == 0 {
            return Err(invalid("batches must be positive"));
        }
        if self.sequence_length == 0 {
            return Err(invalid("sequence_length must be positive"));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return Err(invalid("distractor_rate must lie in [0, 1)"));
        }
        if self.doc_words[0] > self.doc_words[1] {
            return Err(invalid("doc_words range is empty"));
        }
        if self.entity_syllables <= self.filler_syllables || self.filler_syllables == 0 {
            return Err(invalid("entity names must have more syllables than filler words"));
        }
        let mut names = BTreeSet::new();
        for r in &self.relations {
            parse_template(&r.template)?;
            if r.objects < 4 {
                return Err(invalid(format!("relation {} needs at least 4 objects for 4-choice items", r.name)));
            }
            if !names.insert(&r.name) {
                return Err(invalid(format!("duplicate relation name {}", r.name)));
            }
        }
        if let MentionSchedule::Explicit { mentions } = &self.schedule {
            if mentions.len() != self.fact_count() || mentions.iter().any(|row| row.len() != self.batches) {
                return Err(invalid(format!(
                    "explicit schedule must be {} facts by {} batches",
                    self.fact_count(),
                    self.batches
                )));
            }
        }
        let syllables = CONSONANTS.len() * VOWELS.len();
        let entity_capacity = syllables.saturating_pow(self.entity_syllables as u32);
        let entities = 2 * self.fact_count() + self.relations.iter().map(|r| r.objects).sum::<usize>();
        if entities > entity_capacity {
            return Err(ToyError::VocabularyTooSmall {
                kind: "entity",
                needed: entities,
                capacity: entity_capacity,
            });
        }
        let filler_capacity = syllables.saturating_pow(self.filler_syllables as u32);
        if self.filler_vocab == 0 || self.filler_vocab > filler_capacity {
            return Err(ToyError::VocabularyTooSmall {
                kind: "filler",
                needed: self.filler_vocab,
                capacity: filler_capacity,
            });
        }
        Ok(())
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

/// Distinct pseudo-words of one length that avoid `taken` and occur inside
/// none of the `reserved` words. Equal-length words cannot contain one
/// another.
fn draw_words(
    rng: &mut ChaCha8Rng,
    count: usize,
    syllables: usize,
    taken: &mut BTreeSet<String>,
    reserved: &[String],
) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if taken.contains(&w) || reserved.iter().any(|r| r.contains(&w)) {
            continue;
        }
        taken.insert(w.clone());
        out.push(w);
    }
    out
}

fn build_world(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<ToyWorld, ToyError> {
    let mut vocab: Vec<String> = vec!["<pad>".into(), "<eos>".into(), ".".into()];
    let mut index: BTreeMap<String, u32> = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    let mut add = |w: &str, vocab: &mut Vec<String>| -> u32 {
        *index.entry(w.to_string()).or_insert_with(|| {
            vocab.push(w.to_string());
            (vocab.len() - 1) as u32
        })
    };

    let mut parsed = Vec::with_capacity(spec.relations.len());
    for r in &spec.relations {
        let (parts, slot) = parse_template(&r.template)?;
        let pattern: Vec<PatternToken> = parts
            .iter()
            .map(|p| match p {
                Ok(w) => PatternToken::Word(add(w, &mut vocab)),
                Err(true) => PatternToken::Subject,
                Err(false) => PatternToken::Object,
            })
            .collect();
        parsed.push((pattern, slot));
    }
    let template_words: Vec<String> = vocab[3..].to_vec();

    let mut taken: BTreeSet<String> = vocab.iter().cloned().collect();
    let filler = draw_words(rng, spec.filler_vocab, spec.filler_syllables, &mut taken, &[]);
    let n_facts = spec.fact_count();
    let n_objects: usize = spec.relations.iter().map(|r| r.objects).sum();
    let subject_names = draw_words(rng, n_facts, spec.entity_syllables, &mut taken, &template_words);
    let alias_names = draw_words(rng, n_facts, spec.entity_syllables, &mut taken, &template_words);
    let object_names = draw_words(rng, n_objects, spec.entity_syllables, &mut taken, &template_words);

    let filler_tokens: Vec<u32> = filler.iter().map(|w| add(w, &mut vocab)).collect();
    let subject_tokens: Vec<u32> = subject_names.iter().map(|w| add(w, &mut vocab)).collect();
    let alias_tokens: Vec<u32> = alias_names.iter().map(|w| add(w, &mut vocab)).collect();
    let object_tokens: Vec<u32> = object_names.iter().map(|w| add(w, &mut vocab)).collect();

    let mut kinds = vec![TokenKind::Other; vocab.len()];
    for (f, (&s, &a)) in subject_tokens.iter().zip(&alias_tokens).enumerate() {
        kinds[s as usize] = TokenKind::Subject(f);
        kinds[a as usize] = TokenKind::Subject(f);
    }
    for (o, &t) in object_tokens.iter().enumerate() {
        kinds[t as usize] = TokenKind::Object(o);
    }

    let mut relations = Vec::with_capacity(spec.relations.len());
    let mut next_object = 0;
    for (r, (pattern, slot)) in spec.relations.iter().zip(parsed) {
        relations.push(Relation {
            name: r.name.clone(),
            pattern,
            subject_slot: slot,
            objects: (next_object..next_object + r.objects).collect(),
        });
        next_object += r.objects;
    }

    let mut facts = Vec::with_capacity(n_facts);
    for (r, rel) in relations.iter().enumerate() {
        for _ in 0..spec.facts_per_relation {
            facts.push(Fact {
                relation: r,
                object: *rel.objects.choose(rng).expect("pool has objects"),
            });
        }
    }

    Ok(ToyWorld {
        vocab,
        kinds,
        relations,
        facts,
        subject_names,
        alias_names,
        object_names,
        subject_tokens,
        alias_tokens,
        object_tokens,
        filler_tokens,
    })
}

fn build_items(world: &ToyWorld, rng: &mut ChaCha8Rng) -> Vec<EvalItem> {
    world
        .facts
        .iter()
        .enumerate()
        .map(|(f, fact)| {
            let rel = &world.relations[fact.relation];
            let others: Vec<usize> = rel.objects.iter().copied().filter(|&o| o != fact.object).collect();
            let mut choices: Vec<usize> = others.choose_multiple(rng, 3).copied().collect();
            choices.push(fact.object);
            choices.shuffle(rng);
            let answer_index = choices.iter().position(|&o| o == fact.object).expect("gold is a choice");
            let mut sentence = world.sentence(f, false);
            sentence.truncate(sentence.len() - 2);
            EvalItem {
                item_id: world.item_id(f),
                question: world.decode(&sentence),
                choices: choices.iter().map(|&o| world.object_names[o].clone()).collect(),
                answer_index,
                subject: Some(world.subject_names[f].clone()),
                object: Some(world.object_names[fact.object].clone()),
                relation: Some(rel.name.clone()),
                dataset: Some("toylab".into()),
            }
        })
        .collect()
}

fn build_schedule(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = spec.fact_count();
    match &spec.schedule {
        MentionSchedule::Explicit { mentions } => (mentions.clone(), vec![vec![0; spec.batches]; n]),
        MentionSchedule::Debut {
            debut_mentions,
            max_alias_mentions,
            maintenance_mentions,
        } => {
            let mut canonical = vec![vec![0; spec.batches]; n];
            let mut alias = vec![vec![0; spec.batches]; n];
            for f in 0..n {
                let debut = rng.random_range(0..spec.batches);
                canonical[f][debut] = *debut_mentions;
                alias[f][debut] = rng.random_range(0..=*max_alias_mentions);
                canonical[f][debut + 1..].fill(*maintenance_mentions);
            }
            (canonical, alias)
        }
    }
}

fn filler_sentences(world: &ToyWorld, rng: &mut ChaCha8Rng, words: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut left = words;
    while left > 0 {
        let n = rng.random_range(3..=8).min(left);
        let mut s: Vec<u32> = (0..n)
            .map(|_| *world.filler_tokens.choose(rng).expect("filler vocabulary"))
            .collect();
        s.push(PERIOD);
        out.push(s);
        left -= n;
    }
    out
}

fn build_doc(world: &ToyWorld, rng: &mut ChaCha8Rng, words: [usize; 2], fact: Option<(usize, bool)>) -> Vec<u32> {
    let n = rng.random_range(words[0]..=words[1]);
    let mut sentences = filler_sentences(world, rng, n);
    if let Some((f, alias)) = fact {
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, world.sentence(f, alias));
    }
    if sentences.is_empty() {
        sentences.push(vec![*world.filler_tokens.choose(rng).expect("filler vocabulary"), PERIOD]);
    }
    sentences.concat()
}

/// Generates the batches and items described by `spec`. The same spec always
/// yields the same corpus.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<ToyCorpus, ToyError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let world = build_world(spec, &mut rng)?;
    let items = build_items(&world, &mut rng);
    let (mentions, alias_mentions) = build_schedule(spec, &mut rng);

    let mut batches = Vec::with_capacity(spec.batches);
    let mut step = 0u64;
    for b in 0..spec.batches {
        let mut plan: Vec<Option<(usize, bool)>> = Vec::new();
        for f in 0..world.facts.len() {
            plan.extend(std::iter::repeat_n(Some((f, false)), mentions[f][b]));
            plan.extend(std::iter::repeat_n(Some((f, true)), alias_mentions[f][b]));
        }
        let fact_docs = plan.len();
        let distractors = (fact_docs as f64 * spec.distractor_rate / (1.0 - spec.distractor_rate)).round() as usize;
        plan.extend(std::iter::repeat_n(None, distractors.max(usize::from(fact_docs == 0))));
        plan.shuffle(&mut rng);

        let mut tokens: Vec<u32> = Vec::new();
        let mut spans = Vec::with_capacity(plan.len());
        for what in plan {
            let doc = build_doc(&world, &mut rng, spec.doc_words, what);
            let start = tokens.len();
            tokens.extend_from_slice(&doc);
            spans.push((start, tokens.len()));
            tokens.push(EOS);
        }
        let rem = tokens.len() % spec.sequence_length;
        if rem != 0 {
            tokens.resize(tokens.len() + spec.sequence_length - rem, PAD);
        }
        step += (tokens.len() / spec.sequence_length) as u64;
        let documents = spans
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| Document {
                doc_id: format!("b{}-{i:05}", b + 1),
                batch_id: step,
                token_start: s,
                token_end: e,
                text: world.decode(&tokens[s..e]),
            })
            .collect();
        batches.push(DataBatch::new(step, documents, tokens)?);
    }

    Ok(ToyCorpus {
        manifest: CorpusManifest {
            config_hash: Some(crate::io::config_hash(spec)),
            ..CorpusManifest::new(TOKENIZER_ID, spec.sequence_length, PAD)
        },
        world,
        batches,
        items,
        mentions,
        alias_mentions,
    })
}
