use grounded_rank::data::{generate_synthetic, CaptionRecord, CaptionedCorpus, Provenance, Split, SynthSpec};
use grounded_rank::encoders::{build_vocabulary, Model, ModelConfig};
use grounded_rank::grad::Tensor;
use grounded_rank::pseudopairs::{
    apply_filter, augment_with_pseudopairs, diagnostics, generate, generate_from_embeddings, pseudopair_caption_id,
    FilterPolicy, PseudoPair,
};
use proptest::prelude::*;

fn spec() -> SynthSpec {
    SynthSpec {
        concepts: 8,
        images: 40,
        val_images: 10,
        test_images: 10,
        feature_dim: 16,
        ..SynthSpec::default()
    }
}

#[test]
fn oracle_embeddings_always_match_concept() {
    let data = generate_synthetic(&spec()).unwrap();
    let src: Vec<&CaptionRecord> = data.aligned.captions().iter().filter(|c| c.language == "en").collect();
    let tgt: Vec<&CaptionRecord> = data.disjoint.captions().iter().filter(|c| c.language == "de").collect();
    let embed = |caps: &[&CaptionRecord]| {
        let rows: Vec<Vec<f32>> = caps
            .iter()
            .map(|c| data.centers.row(data.caption_concepts[&c.caption_id]).to_vec())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    let pairs = generate_from_embeddings(&src, &embed(&src), &tgt, &embed(&tgt)).unwrap();
    assert_eq!(pairs.len(), tgt.len());
    let d = diagnostics(&pairs, src.len(), None, Some(&data.caption_concepts));
    assert_eq!(d.concept_agreement, Some(1.0));
}

#[test]
fn ties_resolve_to_lowest_source_id() {
    let caps = |ids: &[&str], lang: &str| -> Vec<CaptionRecord> {
        ids.iter()
            .map(|id| CaptionRecord::new(*id, "img", lang, "w", Provenance::Original).unwrap())
            .collect()
    };
    let src = caps(&["s3", "s1", "s2"], "en");
    let tgt = caps(&["t1"], "de");
    let se = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let te = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let s: Vec<&CaptionRecord> = src.iter().collect();
    let t: Vec<&CaptionRecord> = tgt.iter().collect();
    let pairs = generate_from_embeddings(&s, &se, &t, &te).unwrap();
    assert_eq!(pairs[0].source_caption_id, "s1");
    assert_eq!(pairs[0].similarity, 1.0);
}

fn setup() -> (CaptionedCorpus, CaptionedCorpus, Model) {
    let data = generate_synthetic(&spec()).unwrap();
    let vocab = build_vocabulary(&[&data.aligned, &data.disjoint], 1).unwrap();
    let cfg = ModelConfig {
        word_dim: 8,
        hidden_dim: 8,
        image_dim: 16,
    };
    (data.aligned, data.disjoint, Model::new(vocab, &cfg, 5))
}

#[test]
fn similarities_round_trip_through_encoder() {
    let (source, target, model) = setup();
    let pairs = generate(&model, &source, "en", &target, "de").unwrap();
    let targets = target.captions().iter().filter(|c| c.language == "de").count();
    assert_eq!(pairs.len(), targets);
    for p in pairs.iter().take(20) {
        let s = source.find_caption(&p.source_caption_id).unwrap();
        let t = target.find_caption(&p.target_caption_id).unwrap();
        assert_eq!(t.image_id, p.target_image_id);
        let e = model.encode_captions(&[s, t]).unwrap();
        let dot: f32 = e.vectors.row(0).iter().zip(e.vectors.row(1)).map(|(a, b)| a * b).sum();
        assert!((dot - p.similarity).abs() <= 1e-6, "{dot} vs {}", p.similarity);
    }
}

#[test]
fn generation_is_deterministic() {
    let (source, target, model) = setup();
    let a = generate(&model, &source, "en", &target, "de").unwrap();
    let b = generate(&model, &source, "en", &target, "de").unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_tokens_give_unit_similarity() {
    let (source, target, model) = setup();
    let en = source.captions().iter().find(|c| c.language == "en").unwrap();
    let image = target.image_ids()[0].clone();
    let copy = CaptionRecord::new("copy", image, "de", en.text.clone(), Provenance::Original).unwrap();
    let target = CaptionedCorpus::new(
        "t",
        Split::Train,
        target.image_ids().to_vec(),
        target.features().clone(),
        vec![copy],
    )
    .unwrap();
    let pairs = generate(&model, &source, "en", &target, "de").unwrap();
    assert!((pairs[0].similarity - 1.0).abs() <= 1e-6);
}

#[test]
fn augmented_corpus_carries_pseudopair_captions() {
    let (source, target, model) = setup();
    let pairs = generate(&model, &source, "en", &target, "de").unwrap();
    let aug = augment_with_pseudopairs(&target, &source, &pairs).unwrap();
    assert_eq!(aug.captions().len(), target.captions().len() + pairs.len());
    let p = &pairs[0];
    let added = aug.find_caption(&pseudopair_caption_id(p)).unwrap();
    assert_eq!(added.provenance, Provenance::Pseudopair);
    assert_eq!(added.language, "en");
    assert_eq!(added.image_id, p.target_image_id);
    assert_eq!(added.text, source.find_caption(&p.source_caption_id).unwrap().text);
}

fn pairs_from(sims: &[f32]) -> Vec<PseudoPair> {
    sims.iter()
        .enumerate()
        .map(|(i, &s)| PseudoPair {
            target_caption_id: format!("t{i:04}"),
            source_caption_id: format!("s{}", i % 7),
            target_image_id: format!("i{i}"),
            similarity: s,
        })
        .collect()
}

/// Values ≥ the element at zero-based position ⌊p·N/100⌋ of the ascending sort.
fn sort_oracle(sims: &[f32], p: f64) -> usize {
    let mut sorted = sims.to_vec();
    sorted.sort_by(f32::total_cmp);
    let idx = ((p * sorted.len() as f64 / 100.0).floor() as usize).min(sorted.len() - 1);
    sims.iter().filter(|&&s| s >= sorted[idx]).count()
}

#[test]
fn hundred_distinct_values_keep_25_and_75() {
    let sims: Vec<f32> = (1..=100).map(|i| i as f32 / 100.0).collect();
    let pairs = pairs_from(&sims);
    assert_eq!(apply_filter(&pairs, FilterPolicy::KeepTop25).len(), 25);
    assert_eq!(apply_filter(&pairs, FilterPolicy::RemoveBottom25).len(), 75);
    assert_eq!(apply_filter(&pairs, FilterPolicy::None).len(), 100);
}

proptest! {
    #[test]
    fn filters_are_nested(sims in prop::collection::vec(-1.0f32..1.0, 1..300)) {
        let pairs = pairs_from(&sims);
        let top = apply_filter(&pairs, FilterPolicy::KeepTop25);
        let mid = apply_filter(&pairs, FilterPolicy::RemoveBottom25);
        let all = apply_filter(&pairs, FilterPolicy::None);
        prop_assert!(top.iter().all(|p| mid.contains(p)));
        prop_assert!(mid.iter().all(|p| all.contains(p)));
        prop_assert_eq!(top.len(), sort_oracle(&sims, 75.0));
        prop_assert_eq!(mid.len(), sort_oracle(&sims, 25.0));
    }
}
