//! Merging of command-line flags with an optional flat `key=value` config
//! file. Flags always win; config supplies what flags left unset; defaults
//! fill the rest. Unconsumed config keys are an error, so typos surface.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use nmfem::{Error, Result};

/// Parse a flat `key=value` config file: one pair per line, `#` comments and
/// blank lines ignored, keys matching the long flag names without `--`.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::invalid(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::invalid(format!(
                "{}:{}: empty key",
                path.display(),
                idx + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::invalid(format!(
                "{}:{}: duplicate key {key:?}",
                path.display(),
                idx + 1
            )));
        }
    }
    Ok(map)
}

/// Resolves each setting from (flag, config, default) in that order and
/// records the effective value for the run manifest.
pub struct Resolver {
    config: BTreeMap<String, String>,
    consumed: RefCell<std::collections::BTreeSet<String>>,
    snapshot: RefCell<BTreeMap<String, String>>,
}

impl Resolver {
    pub fn new(config: BTreeMap<String, String>) -> Self {
        Resolver {
            config,
            consumed: RefCell::new(Default::default()),
            snapshot: RefCell::new(BTreeMap::new()),
        }
    }

    fn config_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.config.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::invalid(format!("config key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    fn record<T: Display>(&self, key: &str, value: &T) {
        self.snapshot
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
    }

    /// A setting named `key` exists, whatever its source — the config file
    /// may legitimately carry it even when a flag overrides it.
    fn mark_consumed(&self, key: &str) {
        self.consumed.borrow_mut().insert(key.to_string());
    }

    /// Optional setting with a default.
    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.mark_consumed(key);
        let value = match flag {
            Some(v) => v,
            None => self.config_value::<T>(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Setting that must come from a flag or the config file.
    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.mark_consumed(key);
        let value = match flag {
            Some(v) => Some(v),
            None => self.config_value::<T>(key)?,
        };
        match value {
            Some(v) => {
                self.record(key, &v);
                Ok(v)
            }
            None => Err(Error::invalid(format!(
                "missing required setting --{key} (flag or config file)"
            ))),
        }
    }

    /// Optional setting with no default; absent is fine.
    pub fn optional<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.mark_consumed(key);
        let value = match flag {
            Some(v) => Some(v),
            None => self.config_value::<T>(key)?,
        };
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    /// The effective settings of this run, for the manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.snapshot.borrow().clone()
    }

    /// Fails if the config file contained keys no setting consumed —
    /// a misspelled key would otherwise be silently ignored.
    pub fn finish(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let leftover: Vec<&str> = self
            .config
            .keys()
            .filter(|k| !consumed.contains(*k))
            .map(|k| k.as_str())
            .collect();
        if leftover.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "config file has keys this command does not understand: {}",
                leftover.join(", ")
            )))
        }
    }
}

/// Parse a sweep range: either an inclusive `lo..hi` span or an explicit
/// comma-separated list; single values are a list of one.
pub fn parse_range(raw: &str) -> Result<Vec<usize>> {
    let raw = raw.trim();
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad range start {lo:?}")))?;
        let hi: usize = hi
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad range end {hi:?}")))?;
        if hi < lo {
            return Err(Error::invalid(format!(
                "range end {hi} is below range start {lo}"
            )));
        }
        return Ok((lo..=hi).collect());
    }
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad range element {part:?}")))
        })
        .collect()
}
