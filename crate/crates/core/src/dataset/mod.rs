//! Sentences, labelled pairs, the pair-class taxonomy, and file formats.
//!
//! Files:
//! - `sentences.tsv`: header `id\tlang\tgroup_id\ttext`; tabs, newlines and
//!   backslashes inside `text` are backslash-escaped.
//! - `pairs.tsv`: header `anchor_id\tcandidate_id\tlabel\tsplit`.
//! - `embeddings.bin` + `embeddings.ids`: frozen base vectors, see
//!   [`BaseEmbeddings`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticConfig};

pub const SENTENCES_FILE: &str = "sentences.tsv";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const EMBEDDING_IDS_FILE: &str = "embeddings.ids";

const SENTENCES_HEADER: &str = "id\tlang\tgroup_id\ttext";
const PAIRS_HEADER: &str = "anchor_id\tcandidate_id\tlabel\tsplit";
const EMBEDDINGS_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub lang: String,
    /// Sentences sharing a group are translations of one another.
    pub group_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub anchor_id: String,
    pub candidate_id: String,
    /// `true` for paraphrases, `false` for labelled hard negatives.
    pub label: bool,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairClass {
    IntraLingual,
    InterLingualTranslation,
    InterLingualParaphrase,
}

impl PairClass {
    pub const ALL: [PairClass; 3] = [
        PairClass::IntraLingual,
        PairClass::InterLingualTranslation,
        PairClass::InterLingualParaphrase,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairClass::IntraLingual => "intra",
            PairClass::InterLingualTranslation => "inter_translation",
            PairClass::InterLingualParaphrase => "inter_paraphrase",
        }
    }
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PairClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown pair class `{s}`"))
    }
}

pub fn classify_pair(a: &Sentence, b: &Sentence) -> PairClass {
    if a.lang == b.lang {
        PairClass::IntraLingual
    } else if a.group_id == b.group_id {
        PairClass::InterLingualTranslation
    } else {
        PairClass::InterLingualParaphrase
    }
}

/// Sentences indexed by id, kept in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { sentences, index })
    }

    pub fn get(&self, id: &str) -> Option<&Sentence> {
        self.index.get(id).map(|&i| &self.sentences[i])
    }

    pub fn require(&self, id: &str) -> Result<&Sentence> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.sentences.iter().map(|s| s.lang.clone()).collect()
    }

    pub fn classify(&self, rec: &PairRecord) -> Result<PairClass> {
        Ok(classify_pair(
            self.require(&rec.anchor_id)?,
            self.require(&rec.candidate_id)?,
        ))
    }
}

/// Record counts per split and label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCounts {
    counts: [[usize; 2]; 3],
}

impl PairCounts {
    pub fn from_records(records: &[PairRecord]) -> Self {
        let mut counts = [[0; 2]; 3];
        for r in records {
            counts[r.split as usize][r.label as usize] += 1;
        }
        Self { counts }
    }

    pub fn get(&self, split: Split, label: bool) -> usize {
        self.counts[split as usize][label as usize]
    }

    pub fn split_total(&self, split: Split) -> usize {
        self.counts[split as usize].iter().sum()
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn malformed(file: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        file: file.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Yields `(line_no, fields)` for each data line after checking the header.
fn tsv_rows<R: BufRead>(
    reader: R,
    file: &str,
    header: &str,
    width: usize,
    mut row: impl FnMut(usize, Vec<&str>) -> Result<()>,
) -> Result<()> {
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end_matches('\r') == header => {}
        Some(Err(e)) => return Err(Error::io(file, e)),
        _ => {
            return Err(malformed(
                file,
                1,
                format!("expected header `{}`", header.replace('\t', "<TAB>")),
            ))
        }
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(file, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(malformed(
                file,
                line_no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        row(line_no, fields)?;
    }
    Ok(())
}

pub fn read_sentences<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut seen = HashMap::new();
    tsv_rows(reader, SENTENCES_FILE, SENTENCES_HEADER, 4, |line, f| {
        if f[0].is_empty() || f[1].is_empty() {
            return Err(malformed(
                SENTENCES_FILE,
                line,
                "id and lang must be non-empty",
            ));
        }
        if seen.insert(f[0].to_string(), line).is_some() {
            return Err(Error::DuplicateId(f[0].to_string()));
        }
        sentences.push(Sentence {
            id: f[0].to_string(),
            lang: f[1].to_string(),
            group_id: f[2].to_string(),
            text: unescape(f[3]),
        });
        Ok(())
    })?;
    Corpus::new(sentences)
}

pub fn read_pairs<R: BufRead>(reader: R, corpus: &Corpus) -> Result<Vec<PairRecord>> {
    let mut records = Vec::new();
    tsv_rows(reader, PAIRS_FILE, PAIRS_HEADER, 4, |line, f| {
        let label = match f[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(malformed(
                    PAIRS_FILE,
                    line,
                    format!("label must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let split = f[3]
            .parse::<Split>()
            .map_err(|e| malformed(PAIRS_FILE, line, e))?;
        if f[0] == f[1] {
            return Err(malformed(
                PAIRS_FILE,
                line,
                "anchor and candidate are the same sentence",
            ));
        }
        for id in &f[..2] {
            corpus.require(id)?;
        }
        records.push(PairRecord {
            anchor_id: f[0].to_string(),
            candidate_id: f[1].to_string(),
            label,
            split,
        });
        Ok(())
    })?;
    Ok(records)
}

/// Reads a sentence file and a pair file whose ids must resolve against it.
pub fn parse_pairs<S: BufRead, P: BufRead>(
    sentences: S,
    pairs: P,
) -> Result<(Corpus, Vec<PairRecord>)> {
    let corpus = read_sentences(sentences)?;
    let records = read_pairs(pairs, &corpus)?;
    Ok((corpus, records))
}

pub fn write_sentences<W: Write>(mut w: W, corpus: &Corpus) -> std::io::Result<()> {
    writeln!(w, "{SENTENCES_HEADER}")?;
    for s in &corpus.sentences {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            s.id,
            s.lang,
            s.group_id,
            escape(&s.text)
        )?;
    }
    Ok(())
}

pub fn write_pairs<W: Write>(mut w: W, records: &[PairRecord]) -> std::io::Result<()> {
    writeln!(w, "{PAIRS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.anchor_id, r.candidate_id, r.label as u8, r.split
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub records: Vec<PairRecord>,
    pub dropped: usize,
}

/// Keeps records whose two sentences are both in `include`.
pub fn filter_languages(
    records: &[PairRecord],
    corpus: &Corpus,
    include: &BTreeSet<String>,
) -> Result<Filtered> {
    if include.is_empty() {
        return Err(Error::InvalidParams("language include set is empty".into()));
    }
    let mut kept = Vec::new();
    for r in records {
        let a = corpus.require(&r.anchor_id)?;
        let b = corpus.require(&r.candidate_id)?;
        if include.contains(&a.lang) && include.contains(&b.lang) {
            kept.push(r.clone());
        }
    }
    if kept.is_empty() {
        let langs: Vec<&str> = include.iter().map(String::as_str).collect();
        return Err(Error::EmptyResult(format!(
            "no pair has both languages in {{{}}}",
            langs.join(",")
        )));
    }
    Ok(Filtered {
        dropped: records.len() - kept.len(),
        records: kept,
    })
}

/// Frozen base vectors, one per sentence id. Stored as `f32` to match the
/// on-disk format exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbeddings {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
}

impl BaseEmbeddings {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "{} ids with dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            index,
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn vector(&self, id: &str) -> Result<Vec<f64>> {
        self.get(id)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn write_bin<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(EMBEDDINGS_MAGIC)?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_ids<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }

    pub fn read<R: Read, I: BufRead>(mut bin: R, ids: I) -> Result<Self> {
        let mut bytes = Vec::new();
        bin.read_to_end(&mut bytes)
            .map_err(|e| Error::io(EMBEDDINGS_FILE, e))?;
        if bytes.len() < 12 || &bytes[..4] != EMBEDDINGS_MAGIC {
            return Err(Error::Format(format!(
                "{EMBEDDINGS_FILE}: missing EMB1 header"
            )));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
        let (count, dim) = (word(4), word(8));
        let body = &bytes[12..];
        if body.len() != count * dim * 4 {
            return Err(Error::Format(format!(
                "{EMBEDDINGS_FILE}: header declares {count}x{dim} floats but body has {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ids: Vec<String> = ids
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(EMBEDDING_IDS_FILE, e))?;
        let ids: Vec<String> = ids.into_iter().filter(|s| !s.is_empty()).collect();
        if ids.len() != count {
            return Err(Error::Format(format!(
                "{EMBEDDING_IDS_FILE} lists {} ids but {EMBEDDINGS_FILE} holds {count}",
                ids.len()
            )));
        }
        Self::new(ids, dim, data)
    }
}

/// Everything in one data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub records: Vec<PairRecord>,
    pub embeddings: BaseEmbeddings,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let (corpus, records) = parse_pairs(
            open(&dir.join(SENTENCES_FILE))?,
            open(&dir.join(PAIRS_FILE))?,
        )?;
        let embeddings = BaseEmbeddings::read(
            open(&dir.join(EMBEDDINGS_FILE))?,
            open(&dir.join(EMBEDDING_IDS_FILE))?,
        )?;
        for s in corpus.sentences() {
            if embeddings.get(&s.id).is_none() {
                return Err(Error::MissingEmbedding(s.id.clone()));
            }
        }
        Ok(Self {
            corpus,
            records,
            embeddings,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let io = |path: &Path, r: std::io::Result<()>| r.map_err(|e| Error::io(path, e));
        let p = dir.join(SENTENCES_FILE);
        let mut w = create(&p)?;
        io(
            &p,
            write_sentences(&mut w, &self.corpus).and_then(|_| w.flush()),
        )?;
        let p = dir.join(PAIRS_FILE);
        let mut w = create(&p)?;
        io(
            &p,
            write_pairs(&mut w, &self.records).and_then(|_| w.flush()),
        )?;
        let p = dir.join(EMBEDDINGS_FILE);
        let mut w = create(&p)?;
        io(
            &p,
            self.embeddings.write_bin(&mut w).and_then(|_| w.flush()),
        )?;
        let p = dir.join(EMBEDDING_IDS_FILE);
        let mut w = create(&p)?;
        io(
            &p,
            self.embeddings.write_ids(&mut w).and_then(|_| w.flush()),
        )?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<PairRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(id: &str, lang: &str, group: &str) -> Sentence {
        Sentence {
            id: id.into(),
            lang: lang.into(),
            group_id: group.into(),
            text: String::new(),
        }
    }

    #[test]
    fn classify_examples() {
        let en1 = s("a", "en", "g1");
        assert_eq!(
            classify_pair(&en1, &s("b", "en", "g1")),
            PairClass::IntraLingual
        );
        assert_eq!(
            classify_pair(&en1, &s("c", "de", "g1")),
            PairClass::InterLingualTranslation
        );
        assert_eq!(
            classify_pair(&en1, &s("d", "de", "g2")),
            PairClass::InterLingualParaphrase
        );
        assert_eq!(
            classify_pair(&en1, &s("e", "en", "g2")),
            PairClass::IntraLingual
        );
    }

    #[test]
    fn classify_is_symmetric() {
        let all = [
            s("a", "en", "g1"),
            s("b", "de", "g1"),
            s("c", "de", "g2"),
            s("d", "en", "g2"),
        ];
        for x in &all {
            for y in &all {
                assert_eq!(classify_pair(x, y), classify_pair(y, x));
            }
        }
    }

    const MINIMAL_SENTENCES: &str =
        "id\tlang\tgroup_id\ttext\ns1\ten\tg1\tHello there\ns2\tde\tg1\tHallo\n";

    #[test]
    fn parse_minimal_files() {
        let pairs = "anchor_id\tcandidate_id\tlabel\tsplit\ns1\ts2\t1\ttrain\n";
        let (corpus, records) =
            parse_pairs(MINIMAL_SENTENCES.as_bytes(), pairs.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(records.len(), 1);
        assert!(records[0].label);
        assert_eq!(
            corpus.classify(&records[0]).unwrap(),
            PairClass::InterLingualTranslation
        );
        let counts = PairCounts::from_records(&records);
        assert_eq!(counts.get(Split::Train, true), 1);
        assert_eq!(counts.split_total(Split::Dev), 0);
    }

    #[test]
    fn parse_errors_carry_location() {
        let unknown = "anchor_id\tcandidate_id\tlabel\tsplit\ns1\tzz\t1\ttrain\n";
        assert!(matches!(
            parse_pairs(MINIMAL_SENTENCES.as_bytes(), unknown.as_bytes()),
            Err(Error::UnknownId(id)) if id == "zz"
        ));

        let short = "anchor_id\tcandidate_id\tlabel\tsplit\ns1\ts2\t1\ttrain\ns2\ts1\t0\n";
        assert!(matches!(
            parse_pairs(MINIMAL_SENTENCES.as_bytes(), short.as_bytes()),
            Err(Error::MalformedLine { line: 3, .. })
        ));

        let dup = "id\tlang\tgroup_id\ttext\ns1\ten\tg1\t\ns1\tde\tg1\t\n";
        assert!(
            matches!(read_sentences(dup.as_bytes()), Err(Error::DuplicateId(id)) if id == "s1")
        );

        let bad_label = "anchor_id\tcandidate_id\tlabel\tsplit\ns1\ts2\t2\ttrain\n";
        assert!(matches!(
            parse_pairs(MINIMAL_SENTENCES.as_bytes(), bad_label.as_bytes()),
            Err(Error::MalformedLine { line: 2, .. })
        ));

        assert!(matches!(
            read_sentences("id\tlang\ttext\n".as_bytes()),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn filter_examples() {
        let corpus = Corpus::new(vec![
            s("a", "en", "g1"),
            s("b", "en", "g2"),
            s("c", "de", "g1"),
            s("d", "fr", "g3"),
        ])
        .unwrap();
        let rec = |a: &str, b: &str| PairRecord {
            anchor_id: a.into(),
            candidate_id: b.into(),
            label: true,
            split: Split::Train,
        };
        let records = vec![rec("a", "b"), rec("a", "c"), rec("c", "d")];
        let all = filter_languages(&records, &corpus, &corpus.languages()).unwrap();
        assert_eq!(all.records, records);
        assert_eq!(all.dropped, 0);

        let en: BTreeSet<String> = ["en".to_string()].into();
        let only = filter_languages(&records, &corpus, &en).unwrap();
        assert_eq!(only.records, vec![rec("a", "b")]);
        assert_eq!(only.dropped, 2);

        assert!(filter_languages(&records, &corpus, &BTreeSet::new()).is_err());
        let ko: BTreeSet<String> = ["ko".to_string()].into();
        assert!(matches!(
            filter_languages(&records, &corpus, &ko),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn embeddings_binary_layout() {
        let emb = BaseEmbeddings::new(vec!["x".into(), "y".into()], 2, vec![1.0, 0.5, -2.0, 0.25])
            .unwrap();
        let mut bin = Vec::new();
        emb.write_bin(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"EMB1");
        assert_eq!(&bin[4..12], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bin[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bin.len(), 12 + 16);
        let mut ids = Vec::new();
        emb.write_ids(&mut ids).unwrap();
        assert_eq!(ids, b"x\ny\n");
        let back = BaseEmbeddings::read(&bin[..], &ids[..]).unwrap();
        assert_eq!(back, emb);
        assert_eq!(back.get("y").unwrap(), &[-2.0, 0.25]);

        assert!(matches!(
            BaseEmbeddings::read(&bin[..20], &ids[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            BaseEmbeddings::read(&b"EMB2"[..], &ids[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            BaseEmbeddings::read(&bin[..], &b"x\n"[..]),
            Err(Error::Format(_))
        ));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop::sample::select(vec!['a', 'b', ' ', '\t', '\n', '\\', 'é', 't', 'n']),
            0..20,
        )
        .prop_map(|cs| cs.into_iter().collect())
    }

    proptest! {
        #[test]
        fn sentences_round_trip(texts in prop::collection::vec(arb_text(), 1..8)) {
            let sentences: Vec<Sentence> = texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| Sentence { id: format!("s{i}"), lang: "en".into(), group_id: format!("g{}", i / 2), text })
                .collect();
            let corpus = Corpus::new(sentences).unwrap();
            let mut buf = Vec::new();
            write_sentences(&mut buf, &corpus).unwrap();
            let back = read_sentences(&buf[..]).unwrap();
            prop_assert_eq!(&back, &corpus);
            let mut again = Vec::new();
            write_sentences(&mut again, &back).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn pairs_round_trip(rows in prop::collection::vec((0usize..4, 0usize..4, any::<bool>(), 0usize..3), 0..20)) {
            let corpus = Corpus::new((0..4).map(|i| s(&format!("s{i}"), "en", "g")).collect()).unwrap();
            let records: Vec<PairRecord> = rows
                .into_iter()
                .filter(|(a, b, _, _)| a != b)
                .map(|(a, b, label, k)| PairRecord {
                    anchor_id: format!("s{a}"),
                    candidate_id: format!("s{b}"),
                    label,
                    split: Split::ALL[k],
                })
                .collect();
            let mut buf = Vec::new();
            write_pairs(&mut buf, &records).unwrap();
            prop_assert_eq!(read_pairs(&buf[..], &corpus).unwrap(), records);
        }
    }
}
