//! Split, sampling and ingestion properties over synthetic datasets.

use std::collections::BTreeSet;

use oneshot_core::bitmap::Dihedral;
use oneshot_core::data::synthetic::{synthetic_dataset, write_omniglot_tree, SyntheticSpec};
use oneshot_core::data::{
    load_omniglot_with, make_context_batches, make_weak_split, read_cache, sample_episode, write_cache,
};
use oneshot_core::Error;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = SyntheticSpec> {
    (prop::collection::vec(4usize..9, 1..6), any::<u64>()).prop_map(|(alphabets, seed)| SyntheticSpec {
        alphabets,
        samples_per_concept: 3,
        seed,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_split_is_disjoint_and_per_alphabet(spec in spec_strategy(), seed in any::<u64>()) {
        let ds = synthetic_dataset(&spec);
        let (train, test) = make_weak_split(&ds, 3, seed).unwrap();
        let tr: BTreeSet<_> = train.concept_ids().into_iter().collect();
        prop_assert!(test.concept_ids().iter().all(|c| !tr.contains(c)));
        prop_assert_eq!(train.len() + test.len(), ds.len());
        for ids in test.alphabets().values() {
            prop_assert_eq!(ids.len(), 3);
        }
        let again = make_weak_split(&ds, 3, seed).unwrap().1;
        prop_assert_eq!(again.concept_ids(), test.concept_ids());
    }

    #[test]
    fn episodes_are_well_formed(spec in spec_strategy(), ways in 2usize..5, seed in any::<u64>()) {
        let ds = synthetic_dataset(&spec);
        prop_assume!(ds.len() >= ways);
        let e = sample_episode(&ds, ways, 1, 2, seed).unwrap();
        prop_assert_eq!(e.support.len(), ways);
        prop_assert_eq!(e.query.len(), 2 * ways);
        let labels: BTreeSet<_> = e.support.iter().map(|s| s.label).collect();
        prop_assert!(e.query.iter().all(|q| labels.contains(&q.label)));
        for q in &e.query {
            prop_assert!(!e.support.iter().any(|s| s.concept_id == q.concept_id && s.sample_index == q.sample_index));
        }
    }

    #[test]
    fn context_batches_share_a_concept(size in 1usize..=20, seed in any::<u64>()) {
        let ds = synthetic_dataset(&SyntheticSpec { alphabets: vec![2], samples_per_concept: 20, seed: 1 });
        let batches: Vec<_> = make_context_batches(&ds, size, seed).unwrap().collect();
        prop_assert_eq!(batches.len(), 2 * (20 / size));
        for b in &batches {
            prop_assert_eq!(b.context_size(), size);
            prop_assert!(b.images.iter().all(|i| i.concept_id == b.concept_id));
        }
    }
}

#[test]
fn standard_scale_split_counts() {
    // 50 alphabets with the standard character counts, two drawings each.
    let layout = oneshot_core::data::OmniglotLayout::standard();
    let ds = synthetic_dataset(&SyntheticSpec {
        alphabets: layout.alphabets.iter().map(|a| a.characters).collect(),
        samples_per_concept: 2,
        seed: 0,
    });
    assert_eq!(ds.len(), 1623);
    let (train, test) = make_weak_split(&ds, 3, 0).unwrap();
    assert_eq!((train.len(), test.len()), (1473, 150));
    let aug = train.augment_classes_rotations_reflections(&Dihedral::ROTATIONS);
    assert_eq!(aug.len(), 4 * 1473);
    let tags: BTreeSet<_> = aug.concepts().map(|c| c.transform.label()).collect();
    assert_eq!(tags.len(), 4);
    let e = sample_episode(&train, 60, 1, 1, 4).unwrap();
    assert_eq!(e.support.len(), 60);
}

#[test]
fn loading_twice_is_bit_identical_and_missing_alphabet_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        alphabets: vec![3, 4],
        samples_per_concept: 5,
        seed: 3,
    };
    write_omniglot_tree(tmp.path(), &spec).unwrap();
    let a = load_omniglot_with(tmp.path(), &spec.layout()).unwrap();
    let b = load_omniglot_with(tmp.path(), &spec.layout()).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    for c in a.concepts() {
        for s in c.samples() {
            assert!(s.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s.as_slice().len(), 50 * 50);
        }
    }

    let victim = tmp.path().join("images_background").join(&spec.layout().alphabets[1].name);
    std::fs::remove_dir_all(&victim).unwrap();
    match load_omniglot_with(tmp.path(), &spec.layout()) {
        Err(Error::MissingAlphabets(names)) => assert_eq!(names, vec![spec.layout().alphabets[1].name.clone()]),
        other => panic!("expected missing alphabet, got {other:?}"),
    }
}

#[test]
fn corrupt_drawing_names_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        alphabets: vec![2],
        samples_per_concept: 2,
        seed: 3,
    };
    write_omniglot_tree(tmp.path(), &spec).unwrap();
    let dir = tmp.path().join("images_background").join(&spec.layout().alphabets[0].name).join("character01");
    let file = std::fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
    std::fs::write(&file, b"not a png").unwrap();
    let err = load_omniglot_with(tmp.path(), &spec.layout()).unwrap_err();
    assert!(err.to_string().contains(&file.display().to_string()), "{err}");
}

#[test]
fn cache_round_trip_preserves_split() {
    let ds = synthetic_dataset(&SyntheticSpec {
        alphabets: vec![5, 6],
        samples_per_concept: 4,
        seed: 8,
    });
    let (train, test) = make_weak_split(&ds, 3, 21).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_cache(tmp.path(), &train, &test, 21, 3).unwrap();
    let (m, tr, te) = read_cache(tmp.path()).unwrap();
    assert_eq!(m.split_seed, 21);
    assert_eq!(tr.concept_ids(), train.concept_ids());
    assert_eq!(te.content_hash(), test.content_hash());
}
