mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vhem::io::{
    load_model, model_from_str, model_to_string, read_dataset, save_dataset, save_model, LabeledSequence, Model,
    ModelFile,
};
use vhem::{two_population_dataset, CovarianceType, H3m, H3m64};

fn random_h3m(seed: u64, k: usize, kind: CovarianceType) -> H3m64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..k).map(|_| common::random_hmm(&mut rng, 3, 2, 3, kind)).collect();
    H3m::new(common::stochastic(&mut rng, k), comps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn model_text_round_trip_is_exact(seed in any::<u64>(), full in any::<bool>(), with_seed in any::<bool>()) {
        let kind = if full { CovarianceType::Full } else { CovarianceType::Diagonal };
        let file = ModelFile { model: Model::H3m(random_h3m(seed, 4, kind)), seed: with_seed.then_some(seed) };
        let text = model_to_string(&file);
        let back: ModelFile<f64> = model_from_str(&text, "mem").unwrap();
        prop_assert_eq!(back, file);
    }
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let file = ModelFile { model: Model::H3m(random_h3m(7, 4, CovarianceType::Full)), seed: Some(7) };
    save_model(&path, &file).unwrap();
    assert_eq!(load_model::<f64>(&path).unwrap(), file);

    // The single-precision lane reads the same file.
    let narrow = load_model::<f32>(&path).unwrap().model.into_h3m();
    let wide = match &file.model {
        Model::H3m(m) => m,
        Model::Hmm(_) => unreachable!(),
    };
    for (a, b) in narrow.weights().iter().zip(wide.weights()) {
        assert!((*a as f64 - b).abs() < 1e-7);
    }
}

#[test]
fn single_hmm_file_loads_as_one_component_mixture() {
    let h = random_h3m(3, 1, CovarianceType::Diagonal).components()[0].clone();
    let text = model_to_string(&ModelFile { model: Model::Hmm(h.clone()), seed: None });
    let mixture = model_from_str::<f64>(&text, "mem").unwrap().model.into_h3m();
    assert_eq!(mixture.len(), 1);
    assert_eq!(mixture.components()[0], h);
}

#[test]
fn dataset_file_round_trip() {
    let (seqs, labels) = two_population_dataset::<f64, _>(3, 12, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let records: Vec<LabeledSequence<f64>> = seqs
        .into_iter()
        .zip(labels)
        .map(|(sequence, l)| LabeledSequence { sequence, label: Some(format!("pop-{l}")) })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    save_dataset(&path, &records).unwrap();
    assert_eq!(read_dataset::<f64>(&path).unwrap(), records);
}

#[test]
fn malformed_files_are_rejected_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"schema_version\": \"vhem-model/1\", \"kind\": ").unwrap();
    let err = load_model::<f64>(&path).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(err.to_string().contains("bad.json"), "{err}");
}
