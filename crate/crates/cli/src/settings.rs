use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use normball::seed::config_hash;

/// Failure of a subcommand, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown keys or unparsable values (exit 2).
    Usage(String),
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(normball::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<normball::Error> for CliError {
    fn from(e: normball::Error) -> Self {
        match e {
            normball::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_assignments(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => return usage(format!("line {}: expected `key = value`, got `{line}`", n + 1)),
        }
    }
    Ok(out)
}

/// Resolved settings of one subcommand. Only keys present in the defaults can
/// be set, so typos fail loudly.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(defaults: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            values: defaults.into_iter().collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => usage(format!("unknown setting `{key}`")),
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_assignments(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies one `KEY=VALUE` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        match assignment.split_once('=') {
            Some((k, v)) => self.set(k.trim(), v.trim()),
            None => usage(format!("--set expects KEY=VALUE, got `{assignment}`")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map_or("", String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{v}`")))
    }

    pub fn required_path(&self, key: &str) -> CliResult<&Path> {
        match self.get(key) {
            "" => usage(format!("`{key}` is required")),
            p => Ok(Path::new(p)),
        }
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Vec<(String, String)> {
        let p = format!("{prefix}.");
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest.to_string(), v.clone())))
            .collect()
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn hash(&self) -> String {
        config_hash(&self.entries())
    }

    /// Hash over the listed keys and sections only.
    pub fn hash_of(&self, keys: &[&str]) -> String {
        let kv: Vec<(String, String)> = self
            .values
            .iter()
            .filter(|(k, _)| keys.iter().any(|p| k.as_str() == *p || k.starts_with(&format!("{p}."))))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        config_hash(&kv)
    }

    pub fn snapshot(&self, command: &str) -> String {
        let mut s = format!("# resolved settings of `normball {command}`\n");
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

pub fn prefixed(prefix: &str, kv: Vec<(String, String)>) -> Vec<(String, String)> {
    kv.into_iter().map(|(k, v)| (format!("{prefix}.{k}"), v)).collect()
}
