//! `gen-data`: synthetic datasets in the on-disk formats `train` reads.

use std::path::Path;

use dynconv::data::{
    gen_oriented_bars, gen_shapes_seg, gen_synth_timeseries, rotate_bars_90, write_idx, write_ucr_tsv, IdxData, IdxPayload,
    Samples,
};
use dynconv::Prng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, write_json, SCHEMA_VERSION};
use crate::{Cli, DataKind, GenDataArgs};

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    kind: &'static str,
    seed: u64,
    num_classes: usize,
    train_count: usize,
    test_count: usize,
    sample_shape: Vec<usize>,
    noise: f64,
    rotated_test: bool,
    files: Vec<String>,
}

fn write_image_split(dir: &Path, split: &str, data: &Samples, files: &mut Vec<String>) -> CliResult<()> {
    let s = data.inputs.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let images = IdxData::new(vec![n, h, w], IdxPayload::F32(data.inputs.data().iter().map(|&v| v as f32).collect()))?;
    let labels = IdxData::new(vec![n], IdxPayload::U8(data.labels.iter().map(|&l| l as u8).collect()))?;
    for (name, idx) in [("images", &images), ("labels", &labels)] {
        let file = format!("{split}-{name}.idx");
        write_idx(idx, &dir.join(&file))?;
        files.push(file);
    }
    if let Some(m) = &data.masks {
        let masks = IdxData::new(vec![n, h, w], IdxPayload::U8(m.iter().map(|&l| l as u8).collect()))?;
        let file = format!("{split}-masks.idx");
        write_idx(&masks, &dir.join(&file))?;
        files.push(file);
    }
    Ok(())
}

pub fn run(cli: &Cli, args: &GenDataArgs) -> CliResult<()> {
    let out = cli.out.clone().ok_or_else(|| CliError::Usage("gen-data needs --out DIR".into()))?;
    let seed = cli.seed.unwrap_or(0);
    if !(args.noise >= 0.0) {
        return Err(CliError::Failure(format!("noise must be non-negative, got {}", args.noise)));
    }
    let root = Prng::new(seed);
    let (mut train_rng, mut test_rng) = (root.derive(1), root.derive(2));
    let mut files = Vec::new();
    let manifest = match args.kind {
        DataKind::OrientedBars => {
            let classes = args.classes.unwrap_or(4);
            let size = args.size.unwrap_or(16);
            let train = gen_oriented_bars(args.per_class.unwrap_or(50), size, classes, args.noise, &mut train_rng)?;
            let mut test = gen_oriented_bars(args.test_per_class.unwrap_or(10), size, classes, args.noise, &mut test_rng)?;
            if args.rotated_test {
                test = rotate_bars_90(&test)?;
            }
            prepare_out_dir(&out, cli.force)?;
            write_image_split(&out, "train", &train, &mut files)?;
            write_image_split(&out, "test", &test, &mut files)?;
            Manifest {
                schema_version: SCHEMA_VERSION,
                kind: "oriented_bars",
                seed,
                num_classes: classes,
                train_count: train.len(),
                test_count: test.len(),
                sample_shape: vec![1, size, size],
                noise: args.noise,
                rotated_test: args.rotated_test,
                files,
            }
        }
        DataKind::ShapesSeg => {
            let size = args.size.unwrap_or(32);
            let train = gen_shapes_seg(args.count.unwrap_or(100), size, args.noise, &mut train_rng)?;
            let test = gen_shapes_seg(args.test_count.unwrap_or(20), size, args.noise, &mut test_rng)?;
            prepare_out_dir(&out, cli.force)?;
            write_image_split(&out, "train", &train, &mut files)?;
            write_image_split(&out, "test", &test, &mut files)?;
            Manifest {
                schema_version: SCHEMA_VERSION,
                kind: "shapes_seg",
                seed,
                num_classes: 3,
                train_count: train.len(),
                test_count: test.len(),
                sample_shape: vec![1, size, size],
                noise: args.noise,
                rotated_test: false,
                files,
            }
        }
        DataKind::SynthTimeseries => {
            let classes = args.classes.unwrap_or(3);
            let length = args.length.unwrap_or(64);
            let train = gen_synth_timeseries(args.per_class.unwrap_or(30), length, classes, args.noise, &mut train_rng)?;
            let test = gen_synth_timeseries(args.test_per_class.unwrap_or(10), length, classes, args.noise, &mut test_rng)?;
            prepare_out_dir(&out, cli.force)?;
            for (name, ds) in [("SYNTH_TRAIN.tsv", &train), ("SYNTH_TEST.tsv", &test)] {
                let labels: Vec<i64> = ds.labels.iter().map(|&l| ds.label_table[l]).collect();
                write_ucr_tsv(&out.join(name), &labels, &ds.series)?;
                files.push(name.to_string());
            }
            Manifest {
                schema_version: SCHEMA_VERSION,
                kind: "synth_timeseries",
                seed,
                num_classes: classes,
                train_count: train.len(),
                test_count: test.len(),
                sample_shape: vec![1, length],
                noise: args.noise,
                rotated_test: false,
                files,
            }
        }
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} train / {} test samples to {}", manifest.train_count, manifest.test_count, out.display());
    Ok(())
}
