//! On-disk formats, dataset directories and augmentation invariants.

use std::fs;

use dynconv::data::augment::{apply, AugmentParams};
use dynconv::data::{
    augment, gen_synth_timeseries, load_dataset, read_idx, read_ucr_pair, write_idx, write_ucr_tsv, AugmentConfig,
    IdxData, IdxPayload,
};
use dynconv::layers::Task;
use dynconv::{Prng, Tensor};
use proptest::prelude::*;

fn write_split(dir: &std::path::Path, split: &str, n: usize, masks: bool) {
    let pixels: Vec<f32> = (0..n * 16).map(|i| (i % 7) as f32 / 7.0).collect();
    write_idx(&IdxData::new(vec![n, 4, 4], IdxPayload::F32(pixels)).unwrap(), &dir.join(format!("{split}-images.idx"))).unwrap();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    write_idx(&IdxData::new(vec![n], IdxPayload::U8(labels)).unwrap(), &dir.join(format!("{split}-labels.idx"))).unwrap();
    if masks {
        let m: Vec<u8> = (0..n * 16).map(|i| (i % 3) as u8).collect();
        write_idx(&IdxData::new(vec![n, 4, 4], IdxPayload::U8(m)).unwrap(), &dir.join(format!("{split}-masks.idx"))).unwrap();
    }
}

#[test]
fn idx_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = IdxData::new(vec![2, 3], IdxPayload::F32(vec![0.5, -1.0, 2.25, 0.0, 1e-3, 7.0])).unwrap();
    let path = dir.path().join("x.idx");
    write_idx(&data, &path).unwrap();
    assert_eq!(read_idx(&path).unwrap(), data);
    fs::write(&path, &data.encode()[..10]).unwrap();
    assert!(read_idx(&path).is_err());
}

#[test]
fn idx_directory_loads_with_manifest_classes() {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "train", 6, true);
    write_split(dir.path(), "test", 2, true);
    let (train, test) = load_dataset(dir.path(), Task::Classify).unwrap();
    assert_eq!(train.inputs.shape(), &[6, 1, 4, 4]);
    assert_eq!((train.num_classes, test.len()), (2, 2));
    assert!(train.masks.is_none());

    fs::write(dir.path().join("manifest.json"), r#"{"num_classes": 5}"#).unwrap();
    let (train, _) = load_dataset(dir.path(), Task::Segment).unwrap();
    assert_eq!(train.num_classes, 5);
    assert_eq!(train.masks.as_ref().unwrap().len(), 6 * 16);
}

#[test]
fn segment_task_requires_masks() {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "train", 4, false);
    write_split(dir.path(), "test", 2, false);
    assert!(load_dataset(dir.path(), Task::Classify).is_ok());
    let err = load_dataset(dir.path(), Task::Segment).unwrap_err().to_string();
    assert!(err.contains("masks"), "{err}");
}

#[test]
fn ucr_pair_shares_labels_and_loads_as_series() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_synth_timeseries(4, 20, 3, 0.1, &mut Prng::new(2)).unwrap();
    let labels: Vec<i64> = ds.labels.iter().map(|&l| ds.label_table[l]).collect();
    write_ucr_tsv(&dir.path().join("S_TRAIN.tsv"), &labels, &ds.series).unwrap();
    write_ucr_tsv(&dir.path().join("S_TEST.tsv"), &labels[..5], &ds.series.select(&[0, 1, 2, 3, 4]).unwrap()).unwrap();
    let (a, b) = read_ucr_pair(&dir.path().join("S_TRAIN.tsv"), &dir.path().join("S_TEST.tsv")).unwrap();
    assert_eq!(a.label_table, b.label_table);
    assert_eq!(a.labels, ds.labels);
    let (train, test) = load_dataset(dir.path(), Task::Timeseries).unwrap();
    assert_eq!(train.inputs.shape(), &[12, 1, 20]);
    assert_eq!((train.num_classes, test.len()), (3, 5));
}

#[test]
fn ragged_series_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("R_TRAIN.tsv"), "1\t0.1\t0.2\n2\t0.3\n").unwrap();
    fs::write(dir.path().join("R_TEST.tsv"), "1\t0.1\t0.2\n").unwrap();
    assert!(load_dataset(dir.path(), Task::Timeseries).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn augmentation_keeps_ranges_and_mask_alignment(seed in 0u64..10_000, size in 4usize..12) {
        let mut rng = Prng::new(seed);
        let image = Tensor::uniform(&[1, size, size], 0.0, 1.0, &mut rng);
        let mask: Vec<usize> = (0..size * size).map(|i| 1 + i % 2).collect();
        let (out, out_mask) = augment(&image, Some(&mask), &AugmentConfig::default(), &mut rng).unwrap();
        let out_mask = out_mask.unwrap();
        prop_assert_eq!(out.shape(), image.shape());
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Zero-filled pixels carry background in both the image and the mask.
        for (v, m) in out.data().iter().zip(&out_mask) {
            prop_assert!(*m <= 2);
            if *m == 0 {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn identity_parameters_leave_images_untouched(seed in 0u64..10_000) {
        let image = Tensor::uniform(&[2, 6, 6], 0.0, 1.0, &mut Prng::new(seed));
        let p = AugmentParams { flip: false, angle_deg: 0.0, zoom: 1.0, brightness: 1.0 };
        let (out, _) = apply(&image, None, &p);
        prop_assert_eq!(out, image);
    }
}
