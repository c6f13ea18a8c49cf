#![no_main]

use libfuzzer_sys::fuzz_target;
use optistack_cli::store::{parse_journal, parse_run_number};

fuzz_target!(|data: &[u8]| {
    for h in parse_journal(data) {
        assert!(parse_run_number(&h.run_id).is_some());
    }
});
