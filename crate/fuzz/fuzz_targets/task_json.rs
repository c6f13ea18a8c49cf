#![no_main]

use libfuzzer_sys::fuzz_target;
use optistack_core::objective::TaskSpec;
use optistack_core::optics::MaterialCatalog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(task) = TaskSpec::from_json(text) {
        let _ = task.validate(Some(&MaterialCatalog::default()));
        TaskSpec::from_json(&task.to_json()).expect("re-encoded task parses");
    }
});
