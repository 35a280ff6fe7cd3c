mod common;

use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbm_core::store::{
    decode_basis, encode_basis, payload_float_count, write_basis, BasisReader, BasisStore, SectionKind,
};
use rbm_core::strategies::{Reordering, SnapshotSource};
use rbm_core::{BasisMode, Error, ReducedBasis};

use common::{problem, random_basis};

fn same_bits(a: &ReducedBasis, b: &ReducedBasis) {
    assert_eq!(a.identifier(), b.identifier());
    assert_eq!(a.params(), b.params());
    assert_eq!(a.mode(), b.mode());
    assert_eq!(a.quality(), b.quality());
    let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.snapshots()), bits(b.snapshots()));
    assert_eq!(a.system(), b.system());
}

#[test]
fn round_trip_is_bitwise() {
    let p = problem(8, 0.5);
    for mode in [BasisMode::Orthonormal, BasisMode::NormalizedOnly] {
        let basis = random_basis(&p, 5, mode, 4);
        let decoded = decode_basis(&encode_basis(&basis)).unwrap();
        same_bits(&basis, &decoded);
    }
    let dir = tempfile::tempdir().unwrap();
    let basis = random_basis(&p, 3, BasisMode::Orthonormal, 1);
    let path = dir.path().join("b.rbb");
    let written = write_basis(&basis, &path).unwrap();
    assert_eq!(written, std::fs::metadata(&path).unwrap().len());
    same_bits(&basis, &BasisReader::open(&path).unwrap().load_full().unwrap());
}

#[test]
fn payload_float_count_sweep() {
    for dd in [6usize, 8] {
        let p = problem(dd, 1.0);
        for n in [0usize, 1, 5] {
            let basis = random_basis(&p, n, BasisMode::Orthonormal, n as u64);
            let bytes = encode_basis(&basis);
            let reader = BasisReader::new(Cursor::new(&bytes)).unwrap();
            let h = reader.header();
            let floats = payload_float_count(n, dd * dd, 4, 1);
            assert_eq!(bytes.len() as u64, h.header_bytes + 8 * floats as u64);
            let section_sum: u64 = h.sections.iter().map(|s| s.length).sum();
            assert_eq!(section_sum, 8 * floats as u64);
        }
    }
}

#[test]
fn formula_sweep_including_large_grids() {
    // the file layout is a fixed function of (n, d, S_A, S_f)
    for n in [1usize, 5, 15, 32] {
        for dd in [8usize, 64, 256] {
            let d = dd * dd;
            let f = payload_float_count(n, d, 4, 1);
            assert_eq!(f, n * d + 4 * n * n + n + 16 * n * n + 8 * n + 1);
        }
    }
    // snapshot section at n = 15, D = 256
    assert_eq!(15 * 256 * 256, 983_040);
}

#[test]
fn empty_basis_file_has_no_snapshot_bytes() {
    let p = problem(8, 1.0);
    let basis = ReducedBasis::empty(&p, BasisMode::Orthonormal).unwrap();
    let bytes = encode_basis(&basis);
    let mut reader = BasisReader::new(Cursor::new(&bytes)).unwrap();
    assert_eq!(reader.header().section(SectionKind::Snapshots).length, 0);
    assert_eq!(bytes.len() as u64, reader.header().header_bytes + 8);
    let back = reader.load_full().unwrap();
    assert_eq!(back.n(), 0);
    assert_eq!(back.identifier(), basis.identifier());
}

#[test]
fn metadata_load_reads_exactly_the_non_snapshot_sections() {
    let p = problem(8, 1.0);
    let basis = random_basis(&p, 6, BasisMode::Orthonormal, 2);
    let bytes = encode_basis(&basis);
    let mut reader = BasisReader::new(Cursor::new(&bytes)).unwrap();
    let meta = reader.load_metadata().unwrap();
    assert_eq!(meta, basis.metadata());
    let h = reader.header().clone();
    // replay: header plus each non-snapshot section once
    let replay: u64 = h.header_bytes
        + SectionKind::ALL
            .iter()
            .filter(|k| **k != SectionKind::Snapshots)
            .map(|k| h.section(*k).length)
            .sum::<u64>();
    assert_eq!(reader.stats().bytes_read, replay);
    assert_eq!(reader.stats().bytes_read, h.metadata_bytes());
    assert_eq!(h.total_bytes() - reader.stats().bytes_read, 6 * 64 * 8);
}

#[test]
fn partial_snapshot_loads_are_accounted() {
    let p = problem(8, 1.0);
    let basis = random_basis(&p, 8, BasisMode::NormalizedOnly, 6);
    let bytes = encode_basis(&basis);
    let d = 64u64;

    let mut reader = BasisReader::new(Cursor::new(&bytes)).unwrap();
    let before = reader.stats();
    let prefix = reader.load_snapshots(5, None).unwrap();
    let io = reader.stats().since(&before);
    assert_eq!(prefix, basis.snapshots().columns(0, 5).into_owned());
    assert_eq!(
        (io.bytes_read, io.seeks, io.bulk_reads, io.random_reads),
        (5 * d * 8, 1, 1, 0)
    );

    let before = reader.stats();
    assert_eq!(reader.load_snapshots(0, None).unwrap().ncols(), 0);
    assert_eq!(reader.stats().since(&before).bytes_read, 0);

    let before = reader.stats();
    let full = reader.load_snapshots(8, None).unwrap();
    assert_eq!(&full, basis.snapshots());
    assert_eq!(reader.stats().since(&before).reads, 1);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut order: Vec<usize> = (0..8).collect();
    order.shuffle(&mut rng);
    let perm = Reordering::new(order.clone()).unwrap();
    let before = reader.stats();
    let picked = reader.load_snapshots(3, Some(&perm)).unwrap();
    let io = reader.stats().since(&before);
    assert_eq!(picked, basis.snapshots().select_columns(&order[..3]));
    assert_eq!(
        (io.bytes_read, io.seeks, io.random_reads, io.bulk_reads),
        (3 * d * 8, 3, 3, 0)
    );

    assert!(matches!(reader.load_prefix(9), Err(Error::SubspaceOutOfRange { .. })));
}

#[test]
fn damaged_files_are_rejected() {
    let p = problem(6, 1.0);
    let basis = random_basis(&p, 3, BasisMode::Orthonormal, 0);
    let bytes = encode_basis(&basis);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_basis(&bad_magic), Err(Error::Corrupt(_))));

    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    assert!(matches!(decode_basis(&bad_version), Err(Error::Corrupt(_))));

    let truncated = &bytes[..bytes.len() - 9];
    assert!(matches!(decode_basis(truncated), Err(Error::Corrupt(_))));
    assert!(matches!(decode_basis(&bytes[..20]), Err(Error::Corrupt(_))));

    // flip a parameter: identifier no longer matches
    let mut bad_param = bytes.clone();
    let h = BasisReader::new(Cursor::new(&bytes)).unwrap().header().clone();
    let param_offset = (h.header_bytes as usize) - 4 - 20 * 7 - 24 * 3;
    bad_param[param_offset] ^= 1;
    assert!(decode_basis(&bad_param).is_err());

    // r3 must mirror r2
    let mut bad_r3 = bytes.clone();
    let r3 = h.section(SectionKind::R3);
    bad_r3[r3.offset as usize] ^= 0x40;
    assert!(matches!(decode_basis(&bad_r3), Err(Error::Corrupt(_))));
}

#[test]
fn store_layout_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let store = BasisStore::open(dir.path().join("bases")).unwrap();
    let p = problem(6, 1.0);
    let basis = random_basis(&p, 2, BasisMode::Orthonormal, 5);
    let path = store.save(&basis).unwrap();
    assert_eq!(path, store.dir().join(format!("{}.rbb", basis.identifier())));
    assert!(store.contains(&basis.identifier()));
    assert_eq!(store.identifiers().unwrap(), vec![basis.identifier()]);
    same_bits(&basis, &store.load(&basis.identifier()).unwrap());
    assert!(store.load("rb-missing").is_err());
}
