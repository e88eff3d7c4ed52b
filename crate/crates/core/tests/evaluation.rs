use nmf_core::dataset::{generate_synthetic, split_associations, SynthParams};
use nmf_core::encoder::LatentTable;
use nmf_core::evaluator::{auc, aupr, build_test_pairs, evaluate, rank_candidates, ScoredPair, ScoredPairs};
use nmf_core::scorer::LinkForm;
use nmf_core::trainer::{fit, FrozenModel};
use nmf_core::{Exec, Pair, TrainConfig, Variant};
use proptest::prelude::*;

#[test]
fn test_pairs_cover_test_positives_and_unknowns_only() {
    let s = generate_synthetic(SynthParams { n_drugs: 20, n_diseases: 15, ..SynthParams::standard(0.0, 1) }).unwrap();
    let assoc = &s.bundle.associations;
    let split = split_associations(assoc, 0.7, 1).unwrap();
    let cfg = TrainConfig { latent_dim: 4, epochs: 2, ..TrainConfig::default() };
    let out = fit(&s.bundle, &split, &cfg).unwrap();
    let train = assoc.restricted_to(&split.train_positives).unwrap();
    let frozen = out.state.freeze(&train, Exec::default());

    let scored = build_test_pairs(&frozen, &s.bundle, &split, Exec::Parallel).unwrap();
    assert_eq!(scored.n_pos(), split.test_positives.len());
    assert_eq!(scored.n_neg(), assoc.n_zeros());
    assert_eq!(scored.len(), assoc.n_cells() - split.train_positives.len());
    assert!(scored.pairs.windows(2).all(|w| w[0].pair < w[1].pair), "row-major order");
    assert_eq!(scored, build_test_pairs(&frozen, &s.bundle, &split, Exec::Sequential).unwrap());

    let report = evaluate(&frozen, &s.bundle, &split, cfg.latent_dim, Exec::default()).unwrap();
    report.check().unwrap();

    let drug = assoc.drug_ids()[0].clone();
    let all = rank_candidates(&frozen, &s.bundle, &drug, usize::MAX, false).unwrap();
    assert_eq!(all.len(), assoc.n_diseases());
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    let fresh = rank_candidates(&frozen, &s.bundle, &drug, 5, true).unwrap();
    assert!(fresh.len() <= 5 && fresh.iter().all(|r| !r.known));
    assert!(rank_candidates(&frozen, &s.bundle, "no-such-drug", 5, true).is_err());
}

#[test]
fn trained_model_beats_chance_on_planted_data() {
    let s = generate_synthetic(SynthParams { n_drugs: 60, n_diseases: 50, ..SynthParams::standard(0.0, 3) }).unwrap();
    let split = split_associations(&s.bundle.associations, 0.7, 3).unwrap();
    let cfg = TrainConfig { variant: Variant::NmfOh, latent_dim: 8, epochs: 60, ..TrainConfig::default() };
    let out = fit(&s.bundle, &split, &cfg).unwrap();
    let train = s.bundle.associations.restricted_to(&split.train_positives).unwrap();
    let r = evaluate(&out.state.freeze(&train, Exec::default()), &s.bundle, &split, 8, Exec::default()).unwrap();
    assert!(r.auc > 0.6, "auc {}", r.auc);
}

/// Scores pairs by their planted distance, the ground truth of the generator.
fn planted_model(s: &nmf_core::dataset::SyntheticBundle) -> FrozenModel {
    FrozenModel {
        variant: Variant::NmfOh,
        link: LinkForm::Decreasing,
        drugs: LatentTable { points: s.drug_points.clone() },
        diseases: LatentTable { points: s.disease_points.clone() },
        weights: Some(vec![1.0; s.params.latent_dim]),
    }
}

#[test]
fn planted_geometry_is_a_perfect_oracle() {
    let s = generate_synthetic(SynthParams::standard(0.0, 4)).unwrap();
    let assoc = &s.bundle.associations;
    let model = planted_model(&s);
    let all = ScoredPairs {
        pairs: (0..assoc.n_cells())
            .map(|k| {
                let pair = Pair::new(k / assoc.n_diseases(), k % assoc.n_diseases());
                ScoredPair { pair, score: model.score(pair.drug, pair.disease), label: assoc.contains(pair) }
            })
            .collect(),
    };
    assert_eq!(auc(&all).unwrap(), 1.0);

    let hits = (0..assoc.n_drugs())
        .filter(|&i| {
            let top = rank_candidates(&model, &s.bundle, &assoc.drug_ids()[i], 1, false).unwrap();
            top[0].disease == s.nearest_disease(i)
        })
        .count();
    assert!(hits * 10 >= assoc.n_drugs() * 9, "{hits} / {}", assoc.n_drugs());
}

#[test]
fn trained_top_prediction_is_a_planted_positive() {
    // Binary labels say which diseases are within the planted radius, not which
    // one is closest, so the identifiable target is the positive set.
    let s = generate_synthetic(SynthParams { n_drugs: 50, n_diseases: 40, ..SynthParams::standard(0.0, 3) }).unwrap();
    let assoc = &s.bundle.associations;
    let split = split_associations(assoc, 0.7, 0).unwrap();
    let cfg = TrainConfig { latent_dim: 8, learning_rate: 1e-2, epochs: 300, ..TrainConfig::default() };
    let out = fit(&s.bundle, &split, &cfg).unwrap();
    let model = out.state.freeze(&assoc.restricted_to(&split.train_positives).unwrap(), Exec::default());
    let mut dense: Vec<usize> = (0..assoc.n_drugs()).collect();
    dense.sort_by_key(|&i| (std::cmp::Reverse(assoc.drug_profile(i).iter().sum::<f64>() as usize), i));
    for &i in &dense[..10] {
        let top = rank_candidates(&model, &s.bundle, &assoc.drug_ids()[i], 1, false).unwrap();
        assert!(assoc.get(i, top[0].disease), "drug {i}: top disease {} is not planted", top[0].disease);
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(any::<bool>(), n).prop_map(|mut l| {
                l[0] = true;
                l[1] = false;
                l
            }),
        )
    })
}

proptest! {
    #[test]
    fn metrics_are_invariant_under_monotone_transforms((scores, labels) in instance()) {
        let a = ScoredPairs::from_scores(&scores, &labels);
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let b = ScoredPairs::from_scores(&mapped, &labels);
        prop_assert!((auc(&a).unwrap() - auc(&b).unwrap()).abs() < 1e-12);
        prop_assert!((aupr(&a).unwrap() - aupr(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reversing_scores_complements_auc((scores, labels) in instance()) {
        let a = ScoredPairs::from_scores(&scores, &labels);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = ScoredPairs::from_scores(&neg, &labels);
        prop_assert!((auc(&a).unwrap() + auc(&b).unwrap() - 1.0).abs() < 1e-12);
        let ap = aupr(&a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}
