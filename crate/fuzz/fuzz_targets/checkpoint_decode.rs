#![no_main]

use libfuzzer_sys::fuzz_target;
use optistack_core::nn::checkpoint::decode_json;

// input: u16 LE manifest length, manifest JSON, raw parameter bytes
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if n > rest.len() {
        return;
    }
    let Ok(manifest) = std::str::from_utf8(&rest[..n]) else { return };
    let _ = decode_json::<f64>(manifest, &rest[n..]);
    let _ = decode_json::<f32>(manifest, &rest[n..]);
});
