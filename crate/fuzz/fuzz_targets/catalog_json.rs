#![no_main]

use libfuzzer_sys::fuzz_target;
use optistack_core::optics::MaterialCatalog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cat) = MaterialCatalog::from_json(text) {
        // accepted catalogs must survive a round trip
        let again = MaterialCatalog::from_json(&cat.to_json()).expect("re-encoded catalog parses");
        assert_eq!(again.to_json(), cat.to_json());
    }
});
