//! Verbosity-gated logging to stderr, controlled by the `METASLOT_LOG`
//! environment variable: 0 silent, 1 progress (default), 2 debug.

use std::sync::OnceLock;

fn level() -> u8 {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        std::env::var("METASLOT_LOG")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(1)
    })
}

pub fn info(msg: &str) {
    if level() >= 1 {
        eprintln!("{msg}");
    }
}

pub fn debug(msg: &str) {
    if level() >= 2 {
        eprintln!("{msg}");
    }
}
