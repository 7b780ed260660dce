//! Reference byte sequences for the on-disk formats, compared against files
//! in `tests/fixtures`. Setting `LBC_BLESS=1` rewrites the files.

use std::path::PathBuf;

use lbc::codec::{BitstreamHeader, FORMAT_VERSION, HEADER_LEN};
use lbc::layers::{HyperParams, Model};
use lbc::quant::{build_cdf_table, TABLE_PRECISION};
use lbc::rans::SymbolStream;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn compare(name: &str, bytes: &[u8]) -> Result<(), String> {
    let path = fixture(name);
    if std::env::var_os("LBC_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if bytes != expected.as_slice() {
        return Err(format!("{name} differs from its golden file"));
    }
    Ok(())
}

pub fn sample_header() -> BitstreamHeader {
    BitstreamHeader {
        version: FORMAT_VERSION,
        hps_id: 0,
        lambda_index: 3,
        block: 8,
        orig_h: 13,
        orig_w: 21,
        padded_h: 16,
        padded_w: 24,
        model_checksum: 0x0123_4567_89ab_cdef,
        payload_len: 7,
    }
}

/// The encoding of [`sample_header`], written out field by field.
pub fn hand_built_header() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"LBC1");
    b.extend_from_slice(&[1, 0, 3]);
    b.extend_from_slice(&[8, 0]);
    b.extend_from_slice(&[13, 0, 0, 0, 21, 0, 0, 0, 16, 0, 0, 0, 24, 0, 0, 0]);
    b.extend_from_slice(&[0xef, 0xcd, 0xab, 0x89, 0x67, 0x45, 0x23, 0x01]);
    b.extend_from_slice(&[7, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(b.len(), HEADER_LEN);
    b
}

pub fn sample_model() -> Model {
    Model::init(HyperParams::new(4, 8, 2, 1, 0.0067).unwrap(), 2024).unwrap()
}

/// 200 symbols over a handful of Gaussian tables, including escapes.
pub fn sample_stream() -> SymbolStream {
    let mut stream = SymbolStream::new();
    let params = [(0.0, 0.5), (1.25, 2.0), (-3.5, 0.3), (10.0, 40.0), (0.4, 0.04)];
    for i in 0..200i32 {
        let (mu, sigma) = params[i as usize % params.len()];
        let table = build_cdf_table(mu, sigma, TABLE_PRECISION).unwrap();
        let value = (mu.round() as i32) + (i % 7) - 3 + if i % 50 == 0 { 400 } else { 0 };
        stream.push(value, table);
    }
    stream
}
