//! Option resolution: command-line flag, then config file, then default.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Every key a config file may set. Keys use the long flag spelling.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "timezone",
    "strict",
    "format",
    "window",
    "exclude-mcc",
    "dedup-same-day",
    "measures",
    "level",
    "scanner",
    "quintile",
    "bin-width",
    "rank-range",
    "rank-average",
    "resamples",
    "poor-max",
    "wealthy-min",
    "fano",
    "mode",
    "runs",
    "sample",
    "monte-carlo",
];

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    effective: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    /// Reads a flat `key = value` file. `#` starts a comment line.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected key = value", i + 1))
            })?;
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "config line {}: unknown key `{key}`; valid keys: {}",
                    i + 1,
                    KNOWN_KEYS.join(", ")
                )));
            }
            file.insert(key, v.trim().to_owned());
        }
        Ok(Settings {
            file,
            effective: RefCell::default(),
        })
    }

    /// Raw string for `key`, or `None` when neither the flag nor the file
    /// sets it.
    pub fn raw(&self, key: &str, cli: Option<&str>) -> Option<String> {
        let v = cli
            .map(str::to_owned)
            .or_else(|| self.file.get(key).cloned());
        if let Some(v) = &v {
            self.effective
                .borrow_mut()
                .insert(key.to_owned(), v.clone());
        }
        v
    }

    pub fn get<T>(&self, key: &str, cli: Option<&str>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.raw(key, cli) {
            Some(v) => parse_value(key, &v),
            None => {
                self.effective
                    .borrow_mut()
                    .insert(key.to_owned(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn get_opt<T>(&self, key: &str, cli: Option<&str>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key, cli).map(|v| parse_value(key, &v)).transpose()
    }

    /// Values that shaped this run, for the manifest.
    pub fn effective(&self) -> BTreeMap<String, String> {
        self.effective.borrow().clone()
    }
}

fn parse_value<T>(key: &str, v: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::usage(format!("invalid value {v:?} for `{key}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let s = Settings::parse("# comment\nruns = 50\nbin_width=0.5\n").unwrap();
        assert_eq!(s.get("runs", Some("7"), 10usize).unwrap(), 7);
        assert_eq!(s.get("runs", None, 10usize).unwrap(), 50);
        assert_eq!(s.get("sample", None, 2000usize).unwrap(), 2000);
        assert_eq!(s.get("bin-width", None, 0.1f64).unwrap(), 0.5);
        assert_eq!(s.effective()["sample"], "2000");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = Settings::parse("runz = 5").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("runz"));
        let s = Settings::parse("runs = many").unwrap();
        assert!(s
            .get("runs", None, 1usize)
            .unwrap_err()
            .message
            .contains("runs"));
    }
}
