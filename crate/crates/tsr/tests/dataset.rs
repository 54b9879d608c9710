use std::fs;
use std::path::Path;

use tsr::dataset::{frame_name, ingest, name_sequences, split_ids, write_lr_mirror, write_sequences, DatasetError};
use tsr::pgm::{read_pgm, write_pgm, PgmImage};
use tsr_core::degradation::{synth_thermal_corpus, DegradationParams};

fn write_corpus(root: &Path, sequences: usize, frames: usize, size: usize, maxval: u16) {
    let corpus = synth_thermal_corpus(sequences, frames, size, 5).unwrap();
    write_sequences(root, &name_sequences(corpus), maxval).unwrap();
}

fn flagged(root: &Path) -> Vec<(String, String)> {
    match ingest(root) {
        Err(DatasetError::Invalid(report)) => {
            report.issues.into_iter().map(|i| (i.sequence, i.problem)).collect()
        }
        other => panic!("expected a validation failure, got {other:?}"),
    }
}

#[test]
fn synthetic_corpus_validates_clean() {
    let dir = tempfile::tempdir().unwrap();
    for maxval in [255, 65535] {
        let root = dir.path().join(format!("m{maxval}"));
        write_corpus(&root, 4, 3, 16, maxval);
        let index = ingest(&root).unwrap();
        assert_eq!(index.sequences.len(), 4);
        assert_eq!(index.total_frames(), 12);
        assert_eq!((index.width, index.height, index.maxval), (16, 16, maxval));
        let loaded = index.load(&index.ids()).unwrap();
        assert!(loaded.iter().all(|s| s.frames.len() == 3));
    }
}

#[test]
fn deleted_frame_flags_its_sequence() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 6, 8, 255);
    fs::remove_file(dir.path().join("seq_0001").join(frame_name(3))).unwrap();
    let issues = flagged(dir.path());
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].0, "seq_0001");
    assert!(issues[0].1.contains("frame_003"), "{}", issues[0].1);
}

#[test]
fn every_problem_is_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_corpus(root, 4, 3, 8, 255);
    // inconsistent size in one sequence
    write_pgm(&PgmImage::new(9, 8, 255, vec![0; 72]).unwrap(), &root.join("seq_0000").join(frame_name(1))).unwrap();
    // empty sequence
    for i in 0..3 {
        fs::remove_file(root.join("seq_0002").join(frame_name(i))).unwrap();
    }
    // corrupt frame
    fs::write(root.join("seq_0003").join(frame_name(0)), b"P6 1 1 255\n\0\0\0").unwrap();
    // listed but absent
    let mut index = fs::read_to_string(root.join("index.txt")).unwrap();
    index.push_str("seq_9999\n");
    fs::write(root.join("index.txt"), index).unwrap();

    let issues = flagged(root);
    let ids: Vec<&str> = issues.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["seq_0000", "seq_0002", "seq_0003", "seq_9999"]);
    assert!(issues[0].1.contains("9x8"));
    assert!(issues[1].1.contains("no frames"));
    assert!(issues[3].1.contains("missing"));
}

#[test]
fn missing_index_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let issues = flagged(dir.path());
    assert_eq!(issues[0].0, "index.txt");
}

#[test]
fn thirty_six_sequences_split_thirty_six() {
    let ids: Vec<String> = (0..36).map(|i| format!("subject_{i:02}")).collect();
    let split = split_ids(&ids, 0.83, 7);
    assert_eq!((split.train.len(), split.val.len()), (30, 6));
    let mut all: Vec<String> = split.train.iter().chain(&split.val).cloned().collect();
    all.sort();
    assert_eq!(all, ids);
    assert_eq!(split_ids(&ids, 0.83, 7), split);
    assert_ne!(split_ids(&ids, 0.83, 8).val, split.val);
    // the split depends on the set of ids, not their listing order
    let mut reversed = ids.clone();
    reversed.reverse();
    assert_eq!(split_ids(&reversed, 0.83, 7), split);
}

#[test]
fn lr_mirror_has_scaled_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, 2, 32, 65535);
    let index = ingest(dir.path()).unwrap();
    for scale in [2, 4] {
        let params = DegradationParams { scale, ..DegradationParams::default() };
        let mirror = write_lr_mirror(&index, &params).unwrap();
        let lr = ingest(&mirror).unwrap();
        assert_eq!(lr.ids(), index.ids());
        assert_eq!((lr.width, lr.height, lr.maxval), (32 / scale, 32 / scale, 65535));
        let first = read_pgm(&mirror.join("seq_0000").join(frame_name(0))).unwrap();
        assert_eq!(first.width, 32 / scale);
    }
}
