//! Line-oriented `key=value` logging on stderr.

use log::{Level, LevelFilter, Log, Metadata, Record};

struct KvLogger;

impl Log for KvLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let level = match record.level() {
            Level::Error => "error",
            Level::Warn => "warn",
            Level::Info => "info",
            Level::Debug => "debug",
            Level::Trace => "trace",
        };
        eprintln!("level={level} {}", record.args());
    }

    fn flush(&self) {}
}

static LOGGER: KvLogger = KvLogger;

/// Installs the logger once; later calls only adjust the level.
pub fn init(verbose: bool) {
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(if verbose { LevelFilter::Debug } else { LevelFilter::Info });
}

/// Quotes a value if it contains whitespace, `"` or `=`.
pub fn kv_value(v: &str) -> String {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}
