use std::fs;

use smfnet::dataset::{load_all, load_dataset, load_sample, Split};
use smfnet::error::Error;
use smfnet::fixtures::make_fixture;
use smfnet_core::fixture::{render, FixtureSpec};

fn spec(frames: usize) -> FixtureSpec {
    FixtureSpec {
        frames,
        ..FixtureSpec::default()
    }
}

#[test]
fn test_split_drops_the_last_frame() {
    let dir = tempfile::tempdir().unwrap();
    make_fixture(&spec(5), 1, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path(), Split::Train).unwrap().len(), 5);
    let test = load_dataset(dir.path(), Split::Test).unwrap();
    assert_eq!(test.len(), 4);
    let last = test.frames().last().unwrap().1;
    assert_eq!(last.frame_index, 3);
}

#[test]
fn single_frame_sequence_has_nothing_to_test() {
    let dir = tempfile::tempdir().unwrap();
    make_fixture(&spec(1), 1, dir.path()).unwrap();
    assert!(matches!(load_dataset(dir.path(), Split::Test), Err(Error::NoTestableFrames)));
    assert_eq!(load_dataset(dir.path(), Split::Train).unwrap().len(), 1);
}

#[test]
fn missing_gt_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let index = make_fixture(&spec(4), 1, dir.path()).unwrap();
    let gt = &index.sequences[0].frames[2].gt;
    fs::remove_file(gt).unwrap();
    let err = load_dataset(dir.path(), Split::Train).unwrap_err();
    match &err {
        Error::MissingFrame { frame, modality, .. } => {
            assert_eq!(frame, &index.sequences[0].frames[2].name);
            assert_eq!(*modality, "GT");
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains(&index.sequences[0].frames[2].name));
}

#[test]
fn empty_roots_and_sequences_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), Split::Train), Err(Error::NoSequences(_))));
    fs::create_dir_all(dir.path().join("seq").join("RGB")).unwrap();
    assert!(matches!(load_dataset(dir.path(), Split::Train), Err(Error::EmptySequence(_))));
}

#[test]
fn png_round_trip_is_lossless_at_native_size() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(3);
    make_fixture(&s, 9, dir.path()).unwrap();
    let loaded = load_all(&load_dataset(dir.path(), Split::Train).unwrap(), (64, 64)).unwrap();
    assert_eq!(loaded, render(&s, 9).unwrap());
}

#[test]
fn resized_samples_stay_valid() {
    let dir = tempfile::tempdir().unwrap();
    make_fixture(&spec(2), 2, dir.path()).unwrap();
    let index = load_dataset(dir.path(), Split::Train).unwrap();
    for size in [(32, 32), (96, 64)] {
        let s = load_sample(&index, 1, size).unwrap();
        s.validate().unwrap();
        assert_eq!((s.height(), s.width()), size);
        assert!(s.gt.is_binary());
        assert_eq!(s.depth.min(), 0.0);
        assert_eq!(s.depth.max(), 1.0);
    }
    assert!(load_sample(&index, 0, (40, 40)).is_err());
    assert!(matches!(load_sample(&index, 2, (32, 32)), Err(Error::FrameIndex { .. })));
}

#[test]
fn sequences_are_ordered_by_name() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["b", "a", "c"] {
        let s = FixtureSpec {
            sequence_id: id.into(),
            frames: 2,
            ..FixtureSpec::default()
        };
        make_fixture(&s, 0, dir.path()).unwrap();
    }
    let index = load_dataset(dir.path(), Split::Train).unwrap();
    let ids: Vec<&str> = index.sequences.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(index.len(), 6);
}
