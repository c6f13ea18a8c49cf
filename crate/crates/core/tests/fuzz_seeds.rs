//! Replays the checked-in fuzz corpus through the same decoders the fuzz targets drive.

use std::fs;
use std::path::PathBuf;

use optistack_core::nn::checkpoint::decode_json;
use optistack_core::objective::TaskSpec;
use optistack_core::optics::{MaterialCatalog, Stack};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn catalog_seeds() {
    for (name, bytes) in seeds("catalog_json") {
        let parsed = MaterialCatalog::from_json(text(&bytes));
        assert_eq!(parsed.is_ok(), name == "default.json", "{name}");
    }
}

#[test]
fn task_seeds() {
    for (name, bytes) in seeds("task_json") {
        let parsed = TaskSpec::from_json(text(&bytes));
        assert_eq!(parsed.is_ok(), name.starts_with("task"), "{name}");
    }
}

#[test]
fn stack_seeds() {
    for (name, bytes) in seeds("stack_json") {
        let parsed = Stack::from_json(text(&bytes));
        assert_eq!(parsed.is_ok(), name != "negative.json", "{name}");
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint_decode") {
        let n = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let manifest = text(&bytes[2..2 + n]);
        let params = &bytes[2 + n..];
        let (net, _) = decode_json::<f64>(manifest, params).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(net.params_flat().len() * 8, params.len());
        // a truncated blob is refused, not misread
        assert!(decode_json::<f64>(manifest, &params[..params.len() - 1]).is_err());
    }
}
