use super::corpus::CaptionedCorpus;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct C2CPair {
    /// Index into the corpus captions, language ℓ1.
    pub left: usize,
    /// Index into the corpus captions, language ℓ2.
    pub right: usize,
    pub left_caption_id: String,
    pub right_caption_id: String,
    pub image_id: String,
}

/// Cross-lingual caption pairs that share an image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct C2CPairSet {
    pub left_language: String,
    pub right_language: String,
    pub pairs: Vec<C2CPair>,
}

impl C2CPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Every (ℓ1 caption, ℓ2 caption) combination on each image. A corpus lacking
/// either language yields an empty set.
pub fn build_c2c_pairs(corpus: &CaptionedCorpus, left: &str, right: &str) -> C2CPairSet {
    let mut set = C2CPairSet {
        left_language: left.to_owned(),
        right_language: right.to_owned(),
        pairs: Vec::new(),
    };
    if left == right {
        return set;
    }
    let lefts = corpus.captions_by_image(Some(left));
    let rights = corpus.captions_by_image(Some(right));
    let captions = corpus.captions();
    for (row, (ls, rs)) in lefts.iter().zip(&rights).enumerate() {
        for &l in ls {
            for &r in rs {
                set.pairs.push(C2CPair {
                    left: l,
                    right: r,
                    left_caption_id: captions[l].caption_id.clone(),
                    right_caption_id: captions[r].caption_id.clone(),
                    image_id: corpus.image_ids()[row].clone(),
                });
            }
        }
    }
    set
}
