//! Retrieval-augmented baseline: recursive character splitting, an exact
//! cosine index over chunk embeddings, and Q&A prompting.

use std::collections::VecDeque;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{cosine, ChatRequest, EmbeddingVector, GatewayError, Provider};
use crate::synth::{parse_seed_response, SyntheticRecord};

pub const DEFAULT_SEPARATORS: [&str; 4] = ["\n\n", "\n", " ", ""];

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("invalid splitter configuration: {0}")]
    InvalidConfig(String),
    #[error("no chunks to index")]
    EmptyChunks,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding dimension {found} differs from index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("provider returned {found} embeddings for {expected} texts")]
    CountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    /// Character (not byte) offset of `text` in the source document.
    pub source_offset: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub separators: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self::new(1000, 100)
    }
}

impl SplitConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Self {
        Self {
            chunk_size,
            overlap,
            separators: DEFAULT_SEPARATORS.map(String::from).to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), RagError> {
        if self.chunk_size == 0 {
            return Err(RagError::InvalidConfig("chunk_size must be positive".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(RagError::InvalidConfig(format!(
                "overlap {} must be smaller than chunk_size {}",
                self.overlap, self.chunk_size
            )));
        }
        if self.separators.is_empty() {
            return Err(RagError::InvalidConfig("separator list is empty".into()));
        }
        Ok(())
    }
}

/// Split with the default separator hierarchy.
pub fn recursive_split(doc: &str, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, RagError> {
    split_with(doc, &SplitConfig::new(chunk_size, overlap))
}

/// Recursive character splitting.
///
/// The coarsest separator present in the text cuts it into pieces, each
/// separator staying at the start of the piece after it. Pieces shorter than
/// `chunk_size` are greedily merged; when a merged chunk is emitted, trailing
/// pieces totalling at most `overlap` characters are carried into the next
/// one. Oversize pieces are split again with the finer separators. Chunks are
/// trimmed of surrounding whitespace and empty ones dropped, so gaps between
/// consecutive chunks contain only whitespace. Lengths count characters.
pub fn split_with(doc: &str, cfg: &SplitConfig) -> Result<Vec<Chunk>, RagError> {
    cfg.validate()?;
    let splitter = Splitter { doc, cfg };
    let ranges = splitter.split(0, doc.len(), &cfg.separators);
    let mut chars_before = 0;
    let mut last_byte = 0;
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            // ranges are ordered by start, so count incrementally
            chars_before += doc[last_byte..start].chars().count();
            last_byte = start;
            Chunk {
                text: doc[start..end].to_string(),
                source_offset: chars_before,
                index,
            }
        })
        .collect())
}

struct Splitter<'a> {
    doc: &'a str,
    cfg: &'a SplitConfig,
}

type Range = (usize, usize);

impl Splitter<'_> {
    fn len(&self, r: Range) -> usize {
        self.doc[r.0..r.1].chars().count()
    }

    fn split(&self, start: usize, end: usize, separators: &[String]) -> Vec<Range> {
        let text = &self.doc[start..end];
        let mut separator = separators.last().map(String::as_str).unwrap_or("");
        let mut finer: &[String] = &[];
        for (i, s) in separators.iter().enumerate() {
            if s.is_empty() {
                separator = "";
                break;
            }
            if text.contains(s.as_str()) {
                separator = s;
                finer = &separators[i + 1..];
                break;
            }
        }

        let mut out = Vec::new();
        let mut good = Vec::new();
        for piece in pieces(text, start, separator) {
            if self.len(piece) < self.cfg.chunk_size {
                good.push(piece);
                continue;
            }
            if !good.is_empty() {
                out.extend(self.merge(&good));
                good.clear();
            }
            if finer.is_empty() {
                out.push(piece);
            } else {
                out.extend(self.split(piece.0, piece.1, finer));
            }
        }
        if !good.is_empty() {
            out.extend(self.merge(&good));
        }
        out
    }

    fn merge(&self, splits: &[Range]) -> Vec<Range> {
        let (size, overlap) = (self.cfg.chunk_size, self.cfg.overlap);
        let mut docs = Vec::new();
        let mut current: VecDeque<(Range, usize)> = VecDeque::new();
        let mut total = 0;
        for &d in splits {
            let len = self.len(d);
            if total + len > size && !current.is_empty() {
                docs.extend(self.join(&current));
                while total > overlap || (total + len > size && total > 0) {
                    let (_, first_len) = current.pop_front().expect("total > 0 implies non-empty");
                    total -= first_len;
                }
            }
            current.push_back((d, len));
            total += len;
        }
        docs.extend(self.join(&current));
        docs
    }

    /// Pieces are contiguous, so the join is their hull, trimmed.
    fn join(&self, parts: &VecDeque<(Range, usize)>) -> Option<Range> {
        let start = parts.front()?.0 .0;
        let end = parts.back()?.0 .1;
        let text = &self.doc[start..end];
        let lead = text.len() - text.trim_start().len();
        let trimmed = text.trim();
        (!trimmed.is_empty()).then(|| (start + lead, start + lead + trimmed.len()))
    }
}

/// Cut `text` (which starts at byte `base` of the document) before every
/// occurrence of `sep`; an empty separator cuts between characters.
fn pieces(text: &str, base: usize, sep: &str) -> Vec<Range> {
    if sep.is_empty() {
        return text
            .char_indices()
            .map(|(i, c)| (base + i, base + i + c.len_utf8()))
            .collect();
    }
    let mut cuts: Vec<usize> = text.match_indices(sep).map(|(i, _)| i).collect();
    cuts.push(text.len());
    let mut out = Vec::with_capacity(cuts.len());
    let mut prev = 0;
    for cut in cuts {
        if cut > prev {
            out.push((base + prev, base + cut));
        }
        prev = cut;
    }
    out
}

/// Rebuild a document from its chunks: overlapping parts are taken once and
/// the whitespace `gap` callback fills uncovered stretches.
pub fn stitch(chunks: &[Chunk], mut gap: impl FnMut(usize, usize) -> String) -> String {
    let mut out = String::new();
    let mut covered = 0;
    for c in chunks {
        let len = c.text.chars().count();
        let end = c.source_offset + len;
        if c.source_offset > covered {
            out.push_str(&gap(covered, c.source_offset));
            covered = c.source_offset;
        }
        if end > covered {
            out.extend(c.text.chars().skip(covered - c.source_offset));
            covered = end;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: Chunk,
    pub vector: EmbeddingVector,
}

/// Chunks with their embeddings. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    entries: Vec<IndexEntry>,
    dimension: usize,
    provider_id: String,
}

const EMBED_BATCH: usize = 64;

pub fn build_index<P: Provider + ?Sized>(chunks: &[Chunk], provider: &P) -> Result<VectorIndex, RagError> {
    if chunks.is_empty() {
        return Err(RagError::EmptyChunks);
    }
    let batches: Vec<Vec<EmbeddingVector>> = chunks
        .par_chunks(EMBED_BATCH)
        .map(|batch| {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            let vectors = provider.embed(&texts)?;
            if vectors.len() != texts.len() {
                return Err(RagError::CountMismatch {
                    expected: texts.len(),
                    found: vectors.len(),
                });
            }
            Ok(vectors)
        })
        .collect::<Result<_, RagError>>()?;
    let vectors: Vec<EmbeddingVector> = batches.into_iter().flatten().collect();
    let mut entries: Vec<IndexEntry> = chunks
        .iter()
        .cloned()
        .zip(vectors)
        .map(|(chunk, vector)| IndexEntry { chunk, vector })
        .collect();
    entries.sort_by_key(|e| e.chunk.index);
    VectorIndex::from_entries(entries, provider.id())
}

impl VectorIndex {
    pub fn from_entries(entries: Vec<IndexEntry>, provider_id: impl Into<String>) -> Result<Self, RagError> {
        let first = entries.first().ok_or(RagError::EmptyChunks)?;
        let dimension = first.vector.dimension();
        for e in &entries {
            if e.vector.dimension() != dimension {
                return Err(RagError::DimensionMismatch {
                    expected: dimension,
                    found: e.vector.dimension(),
                });
            }
        }
        if entries.windows(2).any(|w| w[0].chunk.index >= w[1].chunk.index) {
            return Err(RagError::Format("entries are not ordered by chunk index".into()));
        }
        Ok(Self {
            entries,
            dimension,
            provider_id: provider_id.into(),
        })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    /// Exact top-k by cosine, ties broken by lower chunk index.
    pub fn rank(&self, query: &[f64], k: usize) -> Result<Vec<(&Chunk, f64)>, RagError> {
        if k == 0 {
            return Err(RagError::ZeroK);
        }
        if query.len() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        let mut scored: Vec<(&Chunk, f64)> = self
            .entries
            .iter()
            .map(|e| (&e.chunk, cosine(e.vector.values(), query)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index.cmp(&b.0.index)));
        scored.truncate(k);
        Ok(scored)
    }

    /// SHA-256 of the persisted form.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        format!("{:x}", Sha256::digest(&buf))
    }

    /// Little-endian binary layout:
    /// magic, version u32, dimension u32, count u32, provider id, then per
    /// entry: chunk index u64, source offset u64, text, `dimension` f64 values.
    /// Strings are a u32 byte length followed by UTF-8.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RagError> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u32::<LittleEndian>(self.dimension as u32)?;
        w.write_u32::<LittleEndian>(self.entries.len() as u32)?;
        write_str(&mut w, &self.provider_id)?;
        for e in &self.entries {
            w.write_u64::<LittleEndian>(e.chunk.index as u64)?;
            w.write_u64::<LittleEndian>(e.chunk.source_offset as u64)?;
            write_str(&mut w, &e.chunk.text)?;
            for v in e.vector.values() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RagError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(RagError::Format("not an index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != INDEX_VERSION {
            return Err(RagError::Format(format!("unsupported version {version}")));
        }
        let dimension = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let provider_id = read_str(&mut r)?;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let index = r.read_u64::<LittleEndian>()? as usize;
            let source_offset = r.read_u64::<LittleEndian>()? as usize;
            let text = read_str(&mut r)?;
            let mut values = vec![0.0; dimension];
            r.read_f64_into::<LittleEndian>(&mut values)?;
            let vector = EmbeddingVector::new(values, provider_id.clone()).map_err(|e| RagError::Format(e.to_string()))?;
            entries.push(IndexEntry {
                chunk: Chunk {
                    text,
                    source_offset,
                    index,
                },
                vector,
            });
        }
        Self::from_entries(entries, provider_id)
    }
}

const INDEX_MAGIC: &[u8; 8] = b"NEFVIDX\0";
const INDEX_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, RagError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| RagError::Format("text is not UTF-8".into()))
}

/// Embed the query and rank the index against it.
pub fn retrieve<'a, P: Provider + ?Sized>(
    index: &'a VectorIndex,
    query: &str,
    k: usize,
    provider: &P,
) -> Result<Vec<(&'a Chunk, f64)>, RagError> {
    if k == 0 {
        return Err(RagError::ZeroK);
    }
    let q = provider.embed(&[query.to_string()])?;
    let q = q.first().ok_or(RagError::CountMismatch { expected: 1, found: 0 })?;
    index.rank(q.values(), k)
}

pub const QA_INSTRUCTION: &str = "You are an assistant for 5G Network Exposure Function (NEF) API questions. \
Use the retrieved context below to find the API call that serves the user's question. \
Answer with a single JSON object with exactly these fields: \"request\" (the question), \
\"api_call\" (the endpoint path), \"description\", \"method\" (lowercase HTTP method), \
\"operation\" (the operationId) and \"parameters\" (an object of parameter names to example values). \
Do not add any other text.";

pub fn build_qa_prompt(context: &[&Chunk], query: &str) -> ChatRequest {
    let ctx: Vec<&str> = context.iter().map(|c| c.text.as_str()).collect();
    let user = format!("Context:\n{}\n\nQuestion: {query}\nAnswer:", ctx.join("\n\n"));
    ChatRequest::new(QA_INSTRUCTION, user).structured()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RagAnswer {
    pub raw_text: String,
    pub record: Option<SyntheticRecord>,
    /// The reply did not contain a six-field object.
    pub malformed: bool,
    /// (chunk index, score) in rank order.
    pub retrieved: Vec<(usize, f64)>,
}

pub fn answer_query<P: Provider + ?Sized>(
    index: &VectorIndex,
    query: &str,
    k: usize,
    provider: &P,
) -> Result<RagAnswer, RagError> {
    let hits = retrieve(index, query, k, provider)?;
    let chunks: Vec<&Chunk> = hits.iter().map(|(c, _)| *c).collect();
    let reply = provider.chat(&build_qa_prompt(&chunks, query))?;
    let record = parse_seed_response(&reply.text)
        .ok()
        .and_then(|p| p.records.into_iter().next());
    Ok(RagAnswer {
        malformed: record.is_none(),
        record,
        raw_text: reply.text,
        retrieved: hits.iter().map(|(c, s)| (c.index, *s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockProvider;
    use proptest::prelude::*;

    fn texts(chunks: &[Chunk]) -> Vec<&str> {
        chunks.iter().map(|c| c.text.as_str()).collect()
    }

    fn whitespace_gaps(doc: &str) -> impl FnMut(usize, usize) -> String + '_ {
        move |a, b| {
            let gap: String = doc.chars().skip(a).take(b - a).collect();
            assert!(gap.chars().all(char::is_whitespace), "non-whitespace gap {gap:?}");
            gap
        }
    }

    #[test]
    fn short_doc_single_chunk() {
        let c = recursive_split("hello world", 100, 10).unwrap();
        assert_eq!(texts(&c), ["hello world"]);
        assert_eq!(c[0].source_offset, 0);
    }

    #[test]
    fn paragraph_split() {
        let c = recursive_split("aaaa\n\nbbbb", 6, 0).unwrap();
        assert_eq!(texts(&c), ["aaaa", "bbbb"]);
        assert_eq!(c[1].source_offset, 6);
    }

    #[test]
    fn forced_split_with_overlap() {
        let c = recursive_split("abcdefghij", 4, 2).unwrap();
        assert_eq!(texts(&c), ["abcd", "cdef", "efgh", "ghij"]);
    }

    #[test]
    fn config_validation() {
        assert!(recursive_split("x", 5, 5).is_err());
        assert!(recursive_split("x", 0, 0).is_err());
        assert!(recursive_split("", 5, 0).unwrap().is_empty());
    }

    #[test]
    fn multibyte_offsets_are_characters() {
        let doc = "ééé ééé ééé";
        let c = recursive_split(doc, 4, 0).unwrap();
        assert_eq!(texts(&c), ["ééé", "ééé", "ééé"]);
        assert_eq!(c.iter().map(|c| c.source_offset).collect::<Vec<_>>(), [0, 4, 8]);
    }

    proptest! {
        #[test]
        fn split_reconstructs(doc in "[ab \n]{0,120}", size in 2usize..30, overlap_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * overlap_frac) as usize % size;
            let chunks = recursive_split(&doc, size, overlap).unwrap();
            for w in chunks.windows(2) {
                prop_assert!(w[0].source_offset <= w[1].source_offset);
            }
            for c in &chunks {
                prop_assert!(c.text.chars().count() <= size);
                let at: String = doc.chars().skip(c.source_offset).take(c.text.chars().count()).collect();
                prop_assert_eq!(&at, &c.text);
            }
            let rebuilt = stitch(&chunks, whitespace_gaps(&doc));
            let covered = chunks.last().map_or(0, |c| c.source_offset + c.text.chars().count());
            let tail: String = doc.chars().skip(covered).collect();
            prop_assert!(tail.chars().all(char::is_whitespace));
            prop_assert_eq!(rebuilt + &tail, doc);
        }
    }

    fn mock() -> MockProvider {
        MockProvider::embeddings(7, 64).unwrap()
    }

    fn chunks(items: &[&str]) -> Vec<Chunk> {
        items
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                text: t.to_string(),
                source_offset: i * 100,
                index: i,
            })
            .collect()
    }

    #[test]
    fn index_shapes() {
        let idx = build_index(&chunks(&["alpha beta", "gamma", "alpha beta"]), &mock()).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.dimension(), 64);
        assert_eq!(idx.entries()[0].vector, idx.entries()[2].vector);
        assert!(matches!(build_index(&[], &mock()), Err(RagError::EmptyChunks)));
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = build_index(&chunks(&["one two", "three four five", "six"]), &mock()).unwrap();
        let hits = retrieve(&idx, "three four five", 10, &mock()).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].0.index, 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert!(matches!(retrieve(&idx, "x", 0, &mock()), Err(RagError::ZeroK)));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let idx = build_index(&chunks(&["same", "other", "same"]), &mock()).unwrap();
        let hits = retrieve(&idx, "same", 2, &mock()).unwrap();
        assert_eq!(hits.iter().map(|h| h.0.index).collect::<Vec<_>>(), [0, 2]);
    }

    #[test]
    fn persistence_round_trip_and_hash() {
        let idx = build_index(&chunks(&["a b c", "d e", "ü ñ"]), &mock()).unwrap();
        let hash = idx.content_hash();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = VectorIndex::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        retrieve(&idx, "a", 2, &mock()).unwrap();
        assert_eq!(idx.content_hash(), hash);
        buf[0] = b'X';
        assert!(matches!(VectorIndex::read_from(buf.as_slice()), Err(RagError::Format(_))));
    }

    #[test]
    fn answer_parses_or_flags() {
        let rec = r#"{"request":"q","api_call":"/api/v1/users/me","description":"Get current user.","method":"GET","operation":"read_user_me_api_v1_users_me_get","parameters":{}}"#;
        let chat = MockProvider::new(7, [("who am i", rec), ("prose", "Well, you could try the users endpoint.")], 64).unwrap();
        let idx = build_index(&chunks(&["users me endpoint", "login"]), &chat).unwrap();
        let ok = answer_query(&idx, "who am i", 1, &chat).unwrap();
        assert!(!ok.malformed);
        assert_eq!(ok.record.unwrap().method, "get");
        assert_eq!(ok.retrieved.len(), 1);
        let bad = answer_query(&idx, "prose please", 2, &chat).unwrap();
        assert!(bad.malformed);
        assert_eq!(bad.raw_text, "Well, you could try the users endpoint.");
        assert!(answer_query(&idx, "x", 0, &chat).is_err());
    }
}
