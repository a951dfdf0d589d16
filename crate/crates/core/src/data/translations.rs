use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::corpus::{CaptionRecord, CaptionedCorpus, Provenance};
use super::io::{read_jsonl, TranslationLine};
use crate::error::{Error, Result};

/// Id given to the translation of `source_caption_id` into `language`.
pub fn translated_caption_id(source_caption_id: &str, language: &str) -> String {
    format!("{source_caption_id}@{language}")
}

/// Adds machine-translated captions, each attached to the image of the
/// caption it was translated from.
pub fn ingest_translations(
    corpus: CaptionedCorpus,
    translations_path: &Path,
    language: &str,
) -> Result<CaptionedCorpus> {
    let lines: Vec<TranslationLine> = read_jsonl(translations_path)?;
    add_translations(corpus, &lines, language)
}

/// Lines whose `language` differs from `language` are skipped.
pub fn add_translations(corpus: CaptionedCorpus, lines: &[TranslationLine], language: &str) -> Result<CaptionedCorpus> {
    let by_id: HashMap<&str, &CaptionRecord> = corpus.captions().iter().map(|c| (c.caption_id.as_str(), c)).collect();
    let mut seen = HashSet::new();
    let mut extra = Vec::new();
    for line in lines.iter().filter(|l| l.language == language) {
        let source = by_id
            .get(line.source_caption_id.as_str())
            .ok_or_else(|| Error::UnknownCaption(line.source_caption_id.clone()))?;
        if !seen.insert(line.source_caption_id.as_str()) {
            return Err(Error::DuplicateTranslation(line.source_caption_id.clone()));
        }
        extra.push(CaptionRecord::new(
            translated_caption_id(&line.source_caption_id, language),
            source.image_id.clone(),
            language,
            line.text.clone(),
            Provenance::Translated,
        )?);
    }
    if extra.is_empty() {
        return Ok(corpus);
    }
    corpus.with_captions(extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::c2c::build_c2c_pairs;
    use crate::data::corpus::Split;
    use crate::grad::Tensor;

    fn de_corpus() -> CaptionedCorpus {
        let caps = (0..5)
            .map(|j| {
                CaptionRecord::new(
                    format!("de{j}"),
                    "img",
                    "de",
                    format!("ein hund {j}"),
                    Provenance::Original,
                )
                .unwrap()
            })
            .collect();
        CaptionedCorpus::new("d", Split::Train, vec!["img".into()], Tensor::zeros(&[1, 3]), caps).unwrap()
    }

    fn line(src: &str, text: &str) -> TranslationLine {
        TranslationLine {
            source_caption_id: src.into(),
            language: "en".into(),
            text: text.into(),
        }
    }

    #[test]
    fn five_translations_enable_twenty_five_pairs() {
        let lines: Vec<_> = (0..5).map(|j| line(&format!("de{j}"), &format!("a dog {j}"))).collect();
        let c = add_translations(de_corpus(), &lines, "en").unwrap();
        assert_eq!(c.captions().len(), 10);
        let t = c.find_caption("de3@en").unwrap();
        assert_eq!(t.provenance, Provenance::Translated);
        assert_eq!(t.image_id, "img");
        assert_eq!(build_c2c_pairs(&c, "en", "de").len(), 25);
    }

    #[test]
    fn empty_file_leaves_corpus_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, "").unwrap();
        let before = de_corpus();
        let after = ingest_translations(before.clone(), &p, "en").unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn duplicates_and_unknown_sources_fail() {
        let dup = [line("de0", "a"), line("de0", "b")];
        assert!(matches!(
            add_translations(de_corpus(), &dup, "en"),
            Err(Error::DuplicateTranslation(_))
        ));
        let unknown = [line("zz", "a")];
        assert!(matches!(
            add_translations(de_corpus(), &unknown, "en"),
            Err(Error::UnknownCaption(_))
        ));
    }
}
