//! Datasets: TSV loaders and writers, vocabulary indexing, labeled/unlabeled
//! splits and planted-token synthetic tasks.
//!
//! Canonical formats (UTF-8, tab separated, no header):
//!
//! * ranking: `question_id \t question \t answer \t label`, label in `{0,1}`,
//!   one row per candidate, rows of a question kept together;
//! * classification: `sentence \t label`, label a non-negative integer.
//!
//! Text is lowercased and split on whitespace.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Vocabulary, UNK_TOKEN};
use crate::error::{Error, Result};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// A question with its candidate answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankingInstance<T = String> {
    pub id: String,
    pub question: Vec<T>,
    pub candidates: Vec<Vec<T>>,
    relevance: Option<Vec<u8>>,
}

impl<T> RankingInstance<T> {
    pub fn new(id: impl Into<String>, question: Vec<T>, candidates: Vec<Vec<T>>, relevance: Option<Vec<u8>>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::contract("ranking instance without candidates"));
        }
        if let Some(r) = &relevance {
            if r.len() != candidates.len() {
                return Err(Error::contract(format!(
                    "{} candidates but {} relevance labels",
                    candidates.len(),
                    r.len()
                )));
            }
            if r.iter().any(|&x| x > 1) {
                return Err(Error::contract("relevance labels must be 0 or 1"));
            }
        }
        Ok(Self {
            id: id.into(),
            question,
            candidates,
            relevance,
        })
    }

    pub fn relevance(&self) -> Option<&[u8]> {
        self.relevance.as_deref()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_relevant(&self) -> usize {
        self.relevance.as_ref().map_or(0, |r| r.iter().filter(|&&x| x == 1).count())
    }
}

impl RankingInstance<String> {
    pub fn index(&self, vocab: &Vocabulary) -> RankingInstance<u32> {
        RankingInstance {
            id: self.id.clone(),
            question: vocab.ids(&self.question),
            candidates: self.candidates.iter().map(|c| vocab.ids(c)).collect(),
            relevance: self.relevance.clone(),
        }
    }
}

/// A sentence with its class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassificationInstance<T = String> {
    pub tokens: Vec<T>,
    label: Option<usize>,
}

impl<T> ClassificationInstance<T> {
    pub fn new(tokens: Vec<T>, label: Option<usize>) -> Self {
        Self { tokens, label }
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }
}

impl ClassificationInstance<String> {
    pub fn index(&self, vocab: &Vocabulary) -> ClassificationInstance<u32> {
        ClassificationInstance {
            tokens: vocab.ids(&self.tokens),
            label: self.label,
        }
    }
}

/// Instances whose label can be withheld.
pub trait Labeled {
    fn is_labeled(&self) -> bool;
    /// The same input with every trace of its label removed.
    fn hide_label(self) -> Self;
}

impl<T> Labeled for RankingInstance<T> {
    fn is_labeled(&self) -> bool {
        self.relevance.is_some()
    }

    fn hide_label(mut self) -> Self {
        self.relevance = None;
        self
    }
}

impl<T> Labeled for ClassificationInstance<T> {
    fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    fn hide_label(mut self) -> Self {
        self.label = None;
        self
    }
}

/// Loader output: kept instances plus what was dropped or patched.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub instances: Vec<T>,
    pub warnings: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn load_qa_tsv(path: &Path) -> Result<Loaded<RankingInstance>> {
    let lines = read_lines(path)?;
    parse_qa_lines(path, lines.iter().map(String::as_str))
}

pub fn parse_qa_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<Loaded<RankingInstance>> {
    struct Group {
        id: String,
        question: Vec<String>,
        candidates: Vec<Vec<String>>,
        labels: Vec<u8>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_error(path, line_no, format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let label = match cols[3].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_error(path, line_no, format!("label must be 0 or 1, found {other:?}"))),
        };
        let id = cols[0];
        let g = match by_id.get(id) {
            Some(&g) => g,
            None => {
                by_id.insert(id.to_owned(), groups.len());
                groups.push(Group {
                    id: id.to_owned(),
                    question: tokenize(cols[1]),
                    candidates: Vec::new(),
                    labels: Vec::new(),
                });
                groups.len() - 1
            }
        };
        let mut answer = tokenize(cols[2]);
        if answer.is_empty() {
            answer.push(UNK_TOKEN.to_owned());
        }
        groups[g].candidates.push(answer);
        groups[g].labels.push(label);
    }

    let mut instances = Vec::with_capacity(groups.len());
    let mut warnings = Vec::new();
    for mut g in groups {
        if !g.labels.contains(&1) {
            warnings.push(format!("question {} has no correct answer; excluded", g.id));
            continue;
        }
        if g.question.is_empty() {
            warnings.push(format!("question {} has empty text; using {UNK_TOKEN}", g.id));
            g.question.push(UNK_TOKEN.to_owned());
        }
        instances.push(RankingInstance::new(g.id, g.question, g.candidates, Some(g.labels))?);
    }
    Ok(Loaded { instances, warnings })
}

pub fn load_cls_tsv(path: &Path) -> Result<Loaded<ClassificationInstance>> {
    let lines = read_lines(path)?;
    parse_cls_lines(path, lines.iter().map(String::as_str))
}

pub fn parse_cls_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<Loaded<ClassificationInstance>> {
    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_error(path, line_no, format!("expected 2 tab-separated columns, found {}", cols.len())));
        }
        let label: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("label must be a non-negative integer, found {:?}", cols[1])))?;
        let mut tokens = tokenize(cols[0]);
        if tokens.is_empty() {
            warnings.push(format!("line {line_no}: empty sentence kept as {UNK_TOKEN}"));
            tokens.push(UNK_TOKEN.to_owned());
        }
        instances.push(ClassificationInstance::new(tokens, Some(label)));
    }
    Ok(Loaded { instances, warnings })
}

/// Number of classes implied by the largest label.
pub fn infer_num_classes(data: &[ClassificationInstance]) -> usize {
    data.iter().filter_map(|x| x.label()).max().map_or(0, |m| m + 1)
}

pub fn write_qa_tsv(path: &Path, data: &[RankingInstance]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for inst in data {
        let rel = inst
            .relevance()
            .ok_or_else(|| Error::contract(format!("question {} has no labels to write", inst.id)))?;
        for (c, r) in inst.candidates.iter().zip(rel) {
            writeln!(w, "{}\t{}\t{}\t{}", inst.id, inst.question.join(" "), c.join(" "), r).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_cls_tsv(path: &Path, data: &[ClassificationInstance]) -> Result<()> {
    let mut out = String::new();
    for inst in data {
        let label = inst.label().ok_or_else(|| Error::contract("instance has no label to write"))?;
        out.push_str(&format!("{}\t{}\n", inst.tokens.join(" "), label));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn ranking_vocabulary(data: &[RankingInstance]) -> Vocabulary {
    Vocabulary::build(data.iter().flat_map(|x| {
        x.question
            .iter()
            .chain(x.candidates.iter().flatten())
            .map(String::as_str)
    }))
}

pub fn classification_vocabulary(data: &[ClassificationInstance]) -> Vocabulary {
    Vocabulary::build(data.iter().flat_map(|x| x.tokens.iter().map(String::as_str)))
}

/// `k` labeled instances and the label-stripped remainder of a training set.
#[derive(Clone, Debug)]
pub struct SemiSupSplit<T> {
    pub labeled: Vec<T>,
    pub unlabeled: Vec<T>,
    pub seed: u64,
}

/// Uniform sample without replacement of `k` instances to keep labeled.
pub fn split_semisup<T: Labeled + Clone>(train: &[T], k: usize, seed: u64) -> Result<SemiSupSplit<T>> {
    if k == 0 || k > train.len() {
        return Err(Error::contract(format!(
            "labeled set size {k} outside 1..={}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = vec![false; train.len()];
    for i in sample(&mut rng, train.len(), k) {
        picked[i] = true;
    }
    let mut labeled = Vec::with_capacity(k);
    let mut unlabeled = Vec::with_capacity(train.len() - k);
    for (x, keep) in train.iter().zip(picked) {
        if keep {
            labeled.push(x.clone());
        } else {
            unlabeled.push(x.clone().hide_label());
        }
    }
    Ok(SemiSupSplit {
        labeled,
        unlabeled,
        seed,
    })
}

/// Planted-keyword answer selection task.
///
/// Every question carries one keyword; its single correct candidate carries
/// the same keyword and each distractor carries a different one. Matching
/// keywords therefore ranks perfectly.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingSynth {
    pub num_questions: usize,
    pub candidates: usize,
    pub vocab_size: usize,
    /// Share of the vocabulary used as keywords; the rest is filler.
    pub keyword_fraction: f64,
    pub question_fillers: usize,
    pub answer_fillers: usize,
}

impl RankingSynth {
    pub fn new(num_questions: usize, candidates: usize, vocab_size: usize) -> Self {
        Self {
            num_questions,
            candidates,
            vocab_size,
            keyword_fraction: 0.25,
            question_fillers: 1,
            answer_fillers: 2,
        }
    }

    fn split_vocab(&self) -> Result<(usize, usize)> {
        let keywords = (self.vocab_size as f64 * self.keyword_fraction).round() as usize;
        let fillers = self.vocab_size.saturating_sub(keywords);
        if keywords < self.candidates.max(2) || fillers < 1 {
            return Err(Error::contract(format!(
                "vocabulary of {} cannot plant {} distinct keywords plus fillers",
                self.vocab_size, self.candidates
            )));
        }
        Ok((keywords, fillers))
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<RankingInstance>> {
        if self.num_questions == 0 || self.candidates == 0 {
            return Err(Error::contract("synthetic sizes must be at least 1"));
        }
        let (keywords, fillers) = self.split_vocab()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentence = |rng: &mut ChaCha8Rng, keyword: usize, n_fill: usize| {
            let mut toks: Vec<String> = (0..n_fill).map(|_| format!("f{}", rng.gen_range(0..fillers))).collect();
            let at = rng.gen_range(0..=toks.len());
            toks.insert(at, format!("k{keyword}"));
            toks
        };
        (0..self.num_questions)
            .map(|qi| {
                let kws: Vec<usize> = sample(&mut rng, keywords, self.candidates).into_vec();
                let question = sentence(&mut rng, kws[0], self.question_fillers);
                let correct = rng.gen_range(0..self.candidates);
                let mut others = kws[1..].iter();
                let mut candidates = Vec::with_capacity(self.candidates);
                let mut relevance = Vec::with_capacity(self.candidates);
                for c in 0..self.candidates {
                    let kw = if c == correct { kws[0] } else { *others.next().expect("distinct keywords") };
                    candidates.push(sentence(&mut rng, kw, self.answer_fillers));
                    relevance.push(u8::from(c == correct));
                }
                RankingInstance::new(format!("q{qi}"), question, candidates, Some(relevance))
            })
            .collect()
    }
}

pub fn synth_ranking(num_questions: usize, candidates: usize, vocab_size: usize, seed: u64) -> Result<Vec<RankingInstance>> {
    RankingSynth::new(num_questions, candidates, vocab_size).generate(seed)
}

/// Planted-token classification task.
///
/// Each class owns a disjoint set of marker tokens; every sentence contains
/// markers of its own class only, mixed with shared filler tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSynth {
    pub num_instances: usize,
    pub n_classes: usize,
    pub vocab_size: usize,
    /// Share of the vocabulary used as class markers.
    pub marker_fraction: f64,
    pub markers_per_sentence: usize,
    pub fillers: usize,
}

impl ClassSynth {
    pub fn new(num_instances: usize, n_classes: usize, vocab_size: usize) -> Self {
        Self {
            num_instances,
            n_classes,
            vocab_size,
            marker_fraction: 0.3,
            markers_per_sentence: 3,
            fillers: 4,
        }
    }

    /// Marker tokens per class and filler pool size.
    pub fn layout(&self) -> Result<(usize, usize)> {
        if self.n_classes < 2 {
            return Err(Error::contract("synthetic classification needs at least 2 classes"));
        }
        let per_class = (self.vocab_size as f64 * self.marker_fraction / self.n_classes as f64).floor() as usize;
        let fillers = self.vocab_size.saturating_sub(per_class * self.n_classes);
        if per_class < 1 || fillers < 1 {
            return Err(Error::contract(format!(
                "vocabulary of {} cannot hold markers for {} classes plus fillers",
                self.vocab_size, self.n_classes
            )));
        }
        Ok((per_class, fillers))
    }

    pub fn marker(class: usize, i: usize) -> String {
        format!("c{class}m{i}")
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<ClassificationInstance>> {
        if self.num_instances == 0 || self.markers_per_sentence == 0 {
            return Err(Error::contract("synthetic sizes must be at least 1"));
        }
        let (per_class, fillers) = self.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..self.num_instances)
            .map(|_| {
                let label = rng.gen_range(0..self.n_classes);
                let mut toks: Vec<String> = (0..self.fillers).map(|_| format!("f{}", rng.gen_range(0..fillers))).collect();
                for _ in 0..self.markers_per_sentence {
                    toks.push(Self::marker(label, rng.gen_range(0..per_class)));
                }
                toks.shuffle(&mut rng);
                ClassificationInstance::new(toks, Some(label))
            })
            .collect())
    }
}

pub fn synth_classification(num_instances: usize, n_classes: usize, vocab_size: usize, seed: u64) -> Result<Vec<ClassificationInstance>> {
    ClassSynth::new(num_instances, n_classes, vocab_size).generate(seed)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture.tsv")
    }

    #[test]
    fn loads_single_question_fixture() {
        let text = "q1\tWho wrote it?\tShe did\t1\nq1\tWho wrote it?\tNobody\t0\nq1\tWho wrote it?\tA dog\t0";
        let loaded = parse_qa_lines(p(), text.lines()).unwrap();
        assert_eq!(loaded.instances.len(), 1);
        let q = &loaded.instances[0];
        assert_eq!(q.num_candidates(), 3);
        assert_eq!(q.relevance(), Some(&[1, 0, 0][..]));
        assert_eq!(q.question, vec!["who", "wrote", "it?"]);
    }

    #[test]
    fn bad_label_names_the_line() {
        let text = "q1\tq\ta\t1\nq1\tq\tb\t2";
        let err = parse_qa_lines(p(), text.lines()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn wrong_column_count_is_a_parse_error() {
        let err = parse_qa_lines(p(), "q1\tq\t1".lines()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn questions_without_positives_are_excluded() {
        let text = "q1\tq\ta\t0\nq1\tq\tb\t0\nq2\tq\tc\t1";
        let loaded = parse_qa_lines(p(), text.lines()).unwrap();
        assert_eq!(loaded.instances.len(), 1);
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.instances[0].id, "q2");
    }

    #[test]
    fn classification_fixture_infers_two_classes() {
        let loaded = parse_cls_lines(p(), "good film\t1\nbad film\t0".lines()).unwrap();
        assert_eq!(infer_num_classes(&loaded.instances), 2);
    }

    #[test]
    fn empty_sentence_becomes_unk() {
        let loaded = parse_cls_lines(p(), "\t1\nok\t0".lines()).unwrap();
        assert_eq!(loaded.instances[0].tokens, vec![UNK_TOKEN]);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn full_train_size_leaves_no_unlabeled() {
        let data = synth_classification(30, 2, 60, 1).unwrap();
        let s = split_semisup(&data, 30, 5).unwrap();
        assert!(s.unlabeled.is_empty());
        assert_eq!(s.labeled, data);
    }

    #[test]
    fn split_rejects_out_of_range_k() {
        let data = synth_classification(5, 2, 60, 1).unwrap();
        assert!(split_semisup(&data, 0, 1).is_err());
        assert!(split_semisup(&data, 6, 1).is_err());
    }

    #[test]
    fn different_seeds_pick_different_labeled_sets() {
        let data = synth_ranking(800, 3, 80, 2).unwrap();
        for s in 0..10u64 {
            let a = split_semisup(&data, 10, 2 * s).unwrap();
            let b = split_semisup(&data, 10, 2 * s + 1).unwrap();
            let ids = |x: &SemiSupSplit<RankingInstance>| x.labeled.iter().map(|q| q.id.clone()).collect::<Vec<_>>();
            assert_ne!(ids(&a), ids(&b));
        }
    }

    #[test]
    fn split_is_exact_disjoint_and_deterministic() {
        let data = synth_ranking(900, 3, 80, 3).unwrap();
        for k in [10, 50, 100, 500] {
            let a = split_semisup(&data, k, 42).unwrap();
            let b = split_semisup(&data, k, 42).unwrap();
            assert_eq!(a.labeled.len(), k);
            assert_eq!(a.labeled.len() + a.unlabeled.len(), data.len());
            assert_eq!(a.labeled, b.labeled);
            assert_eq!(a.unlabeled, b.unlabeled);
            let lab: HashSet<_> = a.labeled.iter().map(|q| &q.id).collect();
            assert!(a.unlabeled.iter().all(|q| !lab.contains(&q.id)));
            assert!(a.unlabeled.iter().all(|q| q.relevance().is_none() && !q.is_labeled()));
        }
    }

    #[test]
    fn keyword_matcher_ranks_synthetic_data_perfectly() {
        let data = synth_ranking(200, 4, 100, 7).unwrap();
        for q in &data {
            let kw: Vec<&String> = q.question.iter().filter(|t| t.starts_with('k')).collect();
            assert_eq!(kw.len(), 1);
            let hits: Vec<u8> = q.candidates.iter().map(|c| u8::from(c.contains(kw[0]))).collect();
            assert_eq!(Some(hits.as_slice()), q.relevance());
        }
    }

    #[test]
    fn marker_rule_classifies_synthetic_data_perfectly() {
        let data = synth_classification(300, 2, 100, 8).unwrap();
        for x in &data {
            let classes: HashSet<usize> = x
                .tokens
                .iter()
                .filter_map(|t| t.strip_prefix('c').and_then(|r| r.split('m').next()).and_then(|c| c.parse().ok()))
                .collect();
            assert_eq!(classes.len(), 1);
            assert_eq!(classes.into_iter().next(), x.label());
        }
    }

    #[test]
    fn synthetic_generation_is_seeded() {
        assert_eq!(synth_ranking(20, 4, 60, 3).unwrap(), synth_ranking(20, 4, 60, 3).unwrap());
        assert_ne!(synth_ranking(20, 4, 60, 3).unwrap(), synth_ranking(20, 4, 60, 4).unwrap());
        assert_eq!(
            synth_classification(20, 2, 60, 3).unwrap(),
            synth_classification(20, 2, 60, 3).unwrap()
        );
    }

    #[test]
    fn tiny_vocabulary_is_rejected() {
        assert!(synth_ranking(5, 4, 6, 0).is_err());
        assert!(synth_classification(5, 3, 4, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn qa_tsv_round_trips(n in 1usize..20, m in 1usize..6, seed in 0u64..1000) {
            let data = synth_ranking(n, m.max(2), 60, seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("qa.tsv");
            write_qa_tsv(&path, &data).unwrap();
            prop_assert_eq!(load_qa_tsv(&path).unwrap().instances, data);
        }

        #[test]
        fn cls_tsv_round_trips(n in 1usize..40, seed in 0u64..1000) {
            let data = synth_classification(n, 3, 90, seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("cls.tsv");
            write_cls_tsv(&path, &data).unwrap();
            prop_assert_eq!(load_cls_tsv(&path).unwrap().instances, data);
        }
    }
}
