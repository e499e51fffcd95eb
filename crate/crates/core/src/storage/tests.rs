use super::*;
use alloc::boxed::Box;
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store_with_block(block_size: u32) -> FileStore {
    FileStore::new(CodecRegistry::default(), block_size, LatencyModel::default())
}

#[test]
fn zeros_compress_below_five_percent() {
    let mut s = FileStore::default();
    let f = s.put_file(&vec![0u8; 1 << 20], CodecId::REFERENCE_LZ).unwrap();
    assert_eq!(f.logical_size, 1 << 20);
    assert!(
        (f.physical_size as f64) < 0.05 * (1u64 << 20) as f64,
        "physical {}",
        f.physical_size
    );
    assert_eq!(s.read(f.file_id, 0, 1 << 20).unwrap(), vec![0u8; 1 << 20]);
}

#[test]
fn identity_codec_costs_exactly_the_header() {
    let mut s = FileStore::default();
    let data: Vec<u8> = (0..100_000u32).map(|i| (i * 7) as u8).collect();
    let f = s.put_file(&data, CodecId::NONE).unwrap();
    let blocks = data.len().div_ceil(DEFAULT_BLOCK_SIZE as usize);
    assert_eq!(f.blocks.len(), blocks);
    assert_eq!(
        f.physical_size,
        data.len() as u64 + format::header_len(blocks) as u64
    );
}

#[test]
fn empty_and_unknown_codec_rejected() {
    let mut s = FileStore::default();
    assert_eq!(s.put_file(&[], CodecId::NONE), Err(StorageError::Empty));
    assert_eq!(
        s.put_file(b"x", CodecId(9)),
        Err(StorageError::CodecUnavailable(CodecId(9)))
    );
}

#[test]
fn frame_cover_is_minimal() {
    let mut s = store_with_block(1024);
    let data = vec![7u8; 10 * 1024];
    let f = s.put_file(&data, CodecId::REFERENCE_LZ).unwrap();
    assert_eq!(s.read_blocks(f.file_id, 0, 1).unwrap().frames.len(), 1);
    let three = s.read_blocks(f.file_id, 1000, 2 * 1024).unwrap();
    assert_eq!(
        three.frames.iter().map(|f| f.index).collect::<Vec<_>>(),
        [0, 1, 2]
    );
    assert_eq!(s.read_blocks(f.file_id, 0, 0).unwrap().frames.len(), 0);
    assert_eq!(
        s.read_blocks(f.file_id, 10 * 1024 - 1, 2),
        Err(StorageError::Range {
            offset: 10 * 1024 - 1,
            len: 2,
            size: 10 * 1024
        })
    );
    assert_eq!(s.read_blocks(999, 0, 1), Err(StorageError::NotResident(999)));
}

#[test]
fn frames_are_shipped_compressed() {
    let mut s = store_with_block(4096);
    let f = s.put_file(&vec![1u8; 4096], CodecId::REFERENCE_LZ).unwrap();
    let frames = s.read_blocks(f.file_id, 0, 4096).unwrap();
    assert_eq!(frames.frames[0].bytes.len(), f.blocks[0].compressed_len as usize);
    assert!(frames.wire_len() < 4096);
}

#[test]
fn empty_range_decompresses_to_nothing() {
    let mut s = FileStore::default();
    let f = s.put_file(b"hello", CodecId::REFERENCE_LZ).unwrap();
    assert_eq!(s.read(f.file_id, 2, 0).unwrap(), Vec::<u8>::new());
}

fn random_bytes(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(1..20_000);
    let alphabet = rng.gen_range(1..=256u32);
    (0..len).map(|_| rng.gen_range(0..alphabet) as u8).collect()
}

#[test]
fn thousand_random_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = store_with_block(4096);
    for _ in 0..1000 {
        let data = random_bytes(&mut rng);
        let codec = if rng.gen_bool(0.5) {
            CodecId::REFERENCE_LZ
        } else {
            CodecId::NONE
        };
        let f = s.put_file(&data, codec).unwrap();
        assert_eq!(s.read(f.file_id, 0, data.len() as u64).unwrap(), data);
    }
}

#[test]
fn every_single_bit_flip_is_detected_on_small_files() {
    for codec in [CodecId::REFERENCE_LZ, CodecId::NONE] {
        let mut s = store_with_block(64);
        let data: Vec<u8> = (0..200u32).map(|i| (i % 13) as u8).collect();
        let f = s.put_file(&data, codec).unwrap();
        let pristine = s.disk.image(f.file_id).unwrap().to_vec();
        for bit in 0..pristine.len() * 8 {
            s.disk.install(f.file_id, pristine.clone());
            s.disk.flip_bit(f.file_id, bit);
            match s.read(f.file_id, 0, data.len() as u64) {
                Err(e) => assert!(e.is_corruption(), "bit {bit}: {e:?}"),
                Ok(bytes) => panic!("bit {bit} undetected (equal: {})", bytes == data),
            }
        }
    }
}

#[test]
fn sampled_bit_flips_on_large_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = FileStore::default();
    let data: Vec<u8> = (0..300_000u32).map(|i| (i / 7 % 251) as u8).collect();
    let f = s.put_file(&data, CodecId::REFERENCE_LZ).unwrap();
    let pristine = s.disk.image(f.file_id).unwrap().to_vec();
    for _ in 0..300 {
        let bit = rng.gen_range(0..pristine.len() * 8);
        s.disk.install(f.file_id, pristine.clone());
        s.disk.flip_bit(f.file_id, bit);
        assert!(s.read(f.file_id, 0, data.len() as u64).is_err(), "bit {bit}");
    }
}

#[test]
fn flipped_frame_bit_fails_client_side() {
    let mut s = FileStore::default();
    let f = s.put_file(&vec![3u8; 1000], CodecId::REFERENCE_LZ).unwrap();
    let mut frames = s.read_blocks(f.file_id, 0, 1000).unwrap();
    frames.frames[0].bytes[0] ^= 0x10;
    assert_eq!(
        client_decompress(&frames, &s.codecs, 0, 1000),
        Err(StorageError::ChecksumMismatch { block: Some(0) })
    );
}

#[test]
fn tertiary_latency_formula() {
    let m = LatencyModel {
        base: Duration::from_secs(1),
        per_gib: Duration::from_secs(2),
    };
    assert_eq!(m.fetch_time(1 << 30), Duration::from_secs(3));
    assert_eq!(m.fetch_time(0), Duration::from_secs(1));
}

use core::time::Duration;

#[test]
fn fetch_missing_file() {
    let mut s = FileStore::default();
    assert_eq!(
        s.fetch_from_tertiary(5, Timestamp(0)).map(|_| ()),
        Err(StorageError::NotInTertiary(5))
    );
}

#[test]
fn concurrent_fetches_share_one_staging() {
    let mut s = FileStore::new(
        CodecRegistry::default(),
        DEFAULT_BLOCK_SIZE,
        LatencyModel {
            base: Duration::from_secs(1),
            per_gib: Duration::from_secs(2),
        },
    );
    let f = s.put_file(&vec![9u8; 5000], CodecId::REFERENCE_LZ).unwrap();
    s.disk.remove(f.file_id);
    let (_, a) = s
        .fetch_from_tertiary(f.file_id, Timestamp::from_secs(10))
        .unwrap();
    let (_, b) = s
        .fetch_from_tertiary(f.file_id, Timestamp::from_secs(10) + Duration::from_millis(300))
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(s.tertiary.in_flight(), 1);
    assert!(s.poll(a - Duration::from_millis(1)).is_empty());
    assert!(s.read(f.file_id, 0, 1).is_err());
    assert_eq!(s.poll(a), vec![f.file_id]);
    assert_eq!(s.read(f.file_id, 0, 5000).unwrap(), vec![9u8; 5000]);
}

#[test]
fn torn_write_detected_then_repaired_by_restaging() {
    let mut s = store_with_block(1024);
    let data: Vec<u8> = (0..4096u32).map(|i| (i % 97) as u8).collect();
    let f = s.put_file(&data, CodecId::REFERENCE_LZ).unwrap();
    s.inject_torn_write(f.file_id, 2);
    assert_eq!(
        s.read(f.file_id, 2048, 10),
        Err(StorageError::ChecksumMismatch { block: Some(2) })
    );
    // other blocks stay readable
    assert_eq!(s.read(f.file_id, 0, 1024).unwrap(), data[..1024]);
    let (_, done) = s.fetch_from_tertiary(f.file_id, Timestamp(0)).unwrap();
    s.poll(done);
    assert_eq!(s.read(f.file_id, 0, 4096).unwrap(), data);
}

#[test]
fn torn_write_on_absent_file_is_noop() {
    let mut s = FileStore::default();
    s.inject_torn_write(42, 0);
    assert!(!s.disk.is_resident(42));
}

/// A second codec plugged in without touching the read path.
struct Rle;

impl BlockCodec for Rle {
    fn id(&self) -> CodecId {
        CodecId(7)
    }

    fn compress(&self, block: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for chunk in block.chunk_by(|a, b| a == b) {
            for piece in chunk.chunks(255) {
                out.push(piece.len() as u8);
                out.push(piece[0]);
            }
        }
        out
    }

    fn decompress(&self, frame: &[u8], logical_len: usize) -> Result<Vec<u8>, codec::DecodeFailed> {
        let mut out = Vec::with_capacity(logical_len);
        for pair in frame.chunks(2) {
            let [n, b] = pair else {
                return Err(codec::DecodeFailed);
            };
            out.extend(core::iter::repeat_n(*b, usize::from(*n)));
        }
        if out.len() == logical_len {
            Ok(out)
        } else {
            Err(codec::DecodeFailed)
        }
    }
}

#[test]
fn pluggable_codec_uses_unchanged_read_path() {
    let mut codecs = CodecRegistry::default();
    codecs.register(Box::new(Rle));
    let mut s = FileStore::new(codecs, 512, LatencyModel::default());
    let data: Vec<u8> = (0..3000u32).map(|i| (i / 100) as u8).collect();
    let f = s.put_file(&data, CodecId(7)).unwrap();
    assert_eq!(f.codec, CodecId(7));
    assert!(f.physical_size < f.logical_size);
    assert_eq!(s.read(f.file_id, 100, 2000).unwrap(), data[100..2100]);
}

proptest! {
    #[test]
    fn any_range_round_trips(
        data in proptest::collection::vec(any::<u8>(), 1..5000),
        lz in any::<bool>(),
        block in 1u32..700,
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
    ) {
        let mut s = store_with_block(block);
        let codec = if lz { CodecId::REFERENCE_LZ } else { CodecId::NONE };
        let f = s.put_file(&data, codec).unwrap();
        let (x, y) = (a.index(data.len() + 1), b.index(data.len() + 1));
        let (lo, hi) = (x.min(y), x.max(y));
        let got = s.read(f.file_id, lo as u64, (hi - lo) as u64).unwrap();
        prop_assert_eq!(&got[..], &data[lo..hi]);
        prop_assert_eq!(parse_image(f.file_id, s.disk.image(f.file_id).unwrap()).unwrap(), f);
    }
}
