//! On-disk formats for corpora.
//!
//! Feature files (`IMGF`): magic, `u32` version = 1, `u32` count, `u32` dim,
//! `count × dim` little-endian `f32` values row-major, then `count`
//! NUL-terminated image ids. Captions and translations are JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{CaptionRecord, CaptionedCorpus, Provenance, Split};
use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"IMGF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionLine {
    pub caption_id: String,
    pub image_id: String,
    pub language: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "is_original")]
    pub provenance: Provenance,
}

fn is_original(p: &Provenance) -> bool {
    *p == Provenance::Original
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationLine {
    pub source_caption_id: String,
    pub language: String,
    pub text: String,
}

pub fn write_features(path: &Path, image_ids: &[String], features: &Tensor<f32>) -> Result<()> {
    let (rows, dim) = features.require_matrix("write_features")?;
    if rows != image_ids.len() {
        return Err(Error::Dimension {
            expected: image_ids.len(),
            found: rows,
            context: "feature rows vs image ids".into(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16 + features.numel() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for id in image_ids {
        if id.as_bytes().contains(&0) {
            return Err(Error::malformed(path, format!("image id {id:?} contains NUL")));
        }
        buf.extend_from_slice(id.as_bytes());
        buf.push(0);
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(Vec<String>, Tensor<f32>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "IMGF".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(Error::BadVersion {
            path: path.into(),
            version,
        });
    }
    let count = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let data_end = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::malformed(path, "truncated feature data"))?;
    let data: Vec<f32> = bytes[16..data_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut ids = Vec::with_capacity(count);
    let mut rest = &bytes[data_end..];
    for _ in 0..count {
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::malformed(path, "missing NUL-terminated image id"))?;
        let id = std::str::from_utf8(&rest[..nul]).map_err(|_| Error::malformed(path, "image id is not UTF-8"))?;
        ids.push(id.to_owned());
        rest = &rest[nul + 1..];
    }
    if !rest.is_empty() {
        return Err(Error::malformed(path, "trailing bytes after image ids"));
    }
    Ok((ids, Tensor::new(vec![count, dim], data)?))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.join(format!("line {}", lineno + 1)),
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Loads a corpus from a feature file and a captions file. The corpus is
/// named after the captions file stem.
pub fn load_corpus(features_path: &Path, captions_path: &Path) -> Result<CaptionedCorpus> {
    let (image_ids, features) = read_features(features_path)?;
    let lines: Vec<CaptionLine> = read_jsonl(captions_path)?;
    let captions = lines
        .into_iter()
        .map(|l| CaptionRecord::new(l.caption_id, l.image_id, l.language, l.text, l.provenance))
        .collect::<Result<Vec<_>>>()?;
    let name = captions_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_owned();
    CaptionedCorpus::new(name, Split::Train, image_ids, features, captions)
}

pub fn caption_lines(corpus: &CaptionedCorpus) -> Vec<CaptionLine> {
    corpus
        .captions()
        .iter()
        .map(|c| CaptionLine {
            caption_id: c.caption_id.clone(),
            image_id: c.image_id.clone(),
            language: c.language.clone(),
            text: c.text.clone(),
            provenance: c.provenance,
        })
        .collect()
}

pub fn write_corpus(corpus: &CaptionedCorpus, features_path: &Path, captions_path: &Path) -> Result<()> {
    write_features(features_path, corpus.image_ids(), corpus.features())?;
    write_jsonl(captions_path, &caption_lines(corpus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> CaptionedCorpus {
        let ids: Vec<String> = (0..3).map(|i| format!("img{i}")).collect();
        let feats = Tensor::new(vec![3, 2048], (0..3 * 2048).map(|i| i as f32 * 0.5 - 7.0).collect()).unwrap();
        let mut caps = Vec::new();
        for i in 0..3 {
            for j in 0..5 {
                caps.push(
                    CaptionRecord::new(
                        format!("c{i}-{j}"),
                        format!("img{i}"),
                        "en",
                        format!("A dog number {j}, on grass."),
                        Provenance::Original,
                    )
                    .unwrap(),
                );
            }
        }
        CaptionedCorpus::new("caps", Split::Train, ids, feats, caps).unwrap()
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (f, c) = (dir.path().join("f.imgf"), dir.path().join("caps.jsonl"));
        let original = corpus();
        write_corpus(&original, &f, &c).unwrap();
        let loaded = load_corpus(&f, &c).unwrap();
        assert_eq!(loaded.captions().len(), 15);
        assert_eq!(loaded, original);
    }

    #[test]
    fn bad_magic_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.imgf");
        std::fs::write(&f, b"NOPE\x01\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&f), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_features_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.imgf");
        let mut bytes = b"IMGF".to_vec();
        for v in [1u32, 2, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&f, bytes).unwrap();
        assert!(matches!(read_features(&f), Err(Error::Malformed { .. })));
    }

    #[test]
    fn dangling_reference_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let (f, c) = (dir.path().join("f.imgf"), dir.path().join("caps.jsonl"));
        write_features(&f, &["a".to_string()], &Tensor::zeros(&[1, 4])).unwrap();
        std::fs::write(
            &c,
            r#"{"caption_id":"x","image_id":"ghost","language":"en","text":"hi"}"#,
        )
        .unwrap();
        match load_corpus(&f, &c) {
            Err(Error::DanglingImage { image_id, .. }) => assert_eq!(image_id, "ghost"),
            other => panic!("{other:?}"),
        }
    }
}
