#![no_main]

use libfuzzer_sys::fuzz_target;
use optistack_core::optics::{reflectivity, MaterialCatalog, Polarization, Stack};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(stack) = Stack::from_json(text) else { return };
    if stack.layers.len() <= 64 {
        let cat = MaterialCatalog::default();
        if let Ok(r) = reflectivity(&stack, &cat, 550.0, 30.0, Polarization::S) {
            assert!((-1e-9..=1.0 + 1e-9).contains(&r), "R = {r}");
        }
    }
});
