//! Readers against files written by an independent encoder.

use std::path::PathBuf;

use advcf_core::image::cifar::{load_cifar10, parse_records, read_batch, write_batch};
use advcf_core::image::ppm::{decode_ppm, encode_ppm, read_ppm};
use advcf_core::synthetic::write_synthetic_cifar;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn cifar_records_match_reference_pixels() {
    let records = read_batch(fixture("two_records.bin")).unwrap();
    assert_eq!(records.len(), 2);
    for (rec, label) in records.iter().zip([3, 9]) {
        assert_eq!(rec.label, label);
        let reference = read_ppm(fixture(&format!("record_label{label}.ppm"))).unwrap();
        assert_eq!(rec.image, reference);
    }
}

#[test]
fn cifar_batch_round_trips_byte_for_byte() {
    let bytes = std::fs::read(fixture("two_records.bin")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.bin");
    write_batch(&parse_records(&bytes).unwrap(), &path).unwrap();
    assert_eq!(std::fs::read(path).unwrap(), bytes);
}

#[test]
fn ppm_bytes_are_canonical() {
    let bytes = std::fs::read(fixture("scene.ppm")).unwrap();
    let image = decode_ppm(&bytes).unwrap();
    assert_eq!(image.dims(), (32, 32));
    assert_eq!(encode_ppm(&image), bytes);
}

#[test]
fn synthetic_batches_load_as_cifar() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_cifar(dir.path(), 60, 520, 1).unwrap();
    let (train, val, test) = load_cifar10(dir.path()).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (60, 500, 20));
}
