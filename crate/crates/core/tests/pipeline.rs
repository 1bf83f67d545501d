use pcgkit::byol::encode_frozen;
use pcgkit::mel::MelConfig;
use pcgkit::nn::{Encoder, EncoderShape};
use pcgkit::quality::{gate_with_scores, load_recordings, manifest_labels, stratified_split, train_quality, QualityConfig, QualityModel};
use pcgkit::screen::{head_inputs, train_head, AcBmiCutoffs, Fusion, HeadConfig};
use pcgkit::select::SelectionConfig;
use pcgkit::signal_io::{read_manifest, write_manifest};
use pcgkit::synth::{make_corpus, CorpusConfig};
use pcgkit::tabular::ClassifierConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: pcgkit::signal_io::Manifest,
    model: QualityModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = make_corpus(40, &CorpusConfig::default(), 5, dir.path()).unwrap();
        let model = train_quality(&manifest, &SelectionConfig::default(), &ClassifierConfig::default(), &QualityConfig::default(), 1).unwrap();
        Fixture {
            _dir: dir,
            manifest,
            model,
        }
    })
}

#[test]
fn synthetic_manifest_survives_a_write_read_cycle() {
    let f = fixture();
    let on_disk = read_manifest(&f.manifest.base_dir.join("manifest.csv")).unwrap();
    assert_eq!(on_disk.rows, f.manifest.rows);
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.csv");
    write_manifest(&on_disk, &copy).unwrap();
    let again = std::fs::read(&copy).unwrap();
    assert_eq!(again, std::fs::read(f.manifest.base_dir.join("manifest.csv")).unwrap());
}

#[test]
fn quality_model_json_round_trip_scores_identically() {
    let f = fixture();
    let json = serde_json::to_string(&f.model).unwrap();
    let back: QualityModel = serde_json::from_str(&json).unwrap();
    let recs = load_recordings(&f.manifest).unwrap();
    for rec in recs.iter().take(5) {
        assert_eq!(f.model.score_quality(rec).unwrap(), back.score_quality(rec).unwrap());
    }
}

#[test]
fn split_then_train_keeps_classes_on_both_sides() {
    let f = fixture();
    let (train, test) = stratified_split(&f.manifest, 0.2, 3).unwrap();
    assert_eq!(train.len() + test.len(), f.manifest.len());
    for part in [&train, &test] {
        let y = manifest_labels(part).unwrap();
        assert!(y.contains(&0) && y.contains(&1));
    }
}

#[test]
fn frozen_embeddings_feed_a_fused_head() {
    let f = fixture();
    let recs = load_recordings(&f.manifest).unwrap();
    let enc = Encoder::new(EncoderShape::spectrogram(8), &mut ChaCha8Rng::seed_from_u64(2));
    let emb = encode_frozen(&enc, &MelConfig::default(), &recs[..12]).unwrap();
    assert_eq!(emb.dim(), (12, 8));
    let demo: Vec<_> = f.manifest.rows[..12].iter().map(|r| r.demographics.clone()).collect();
    let x = head_inputs(emb.view(), Some(&demo), Fusion::AudioDemo, &AcBmiCutoffs::default()).unwrap();
    let y: Vec<u8> = f.manifest.rows[..12].iter().map(|r| r.outcome.unwrap().class_index()).collect();
    let cfg = HeadConfig {
        hidden: 8,
        epochs: 3,
        ..Default::default()
    };
    let (head, log) = train_head(x.view(), &y, 8, Fusion::AudioDemo, &cfg, 0).unwrap();
    assert_eq!(log.epoch_loss.len(), 3);
    let p = head.predict_proba(x.view()).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_partitions_any_score_vector(p in proptest::collection::vec(0.0f64..=1.0, 40)) {
        let f = fixture();
        let g = gate_with_scores(&f.model, &f.manifest, &p);
        prop_assert_eq!(g.kept.len() + g.removed.len(), f.manifest.len());
        prop_assert_eq!(g.kept.len(), p.iter().filter(|&&v| v > f.model.decision_threshold).count());
        let mut all: Vec<_> = g.kept.rows.iter().chain(&g.removed.rows).map(|r| r.path.clone()).collect();
        all.sort();
        let mut want: Vec<_> = f.manifest.rows.iter().map(|r| r.path.clone()).collect();
        want.sort();
        prop_assert_eq!(all, want);
        let counted: usize = g.report.per_outcome_counts.values().map(|c| c.kept).sum();
        prop_assert_eq!(counted, g.report.kept);
    }
}
