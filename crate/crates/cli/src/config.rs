//! Line-oriented `key = value` settings files.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! a ` #` on a value line. Keys may use `-` or `_` interchangeably.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn empty() -> Self {
        ConfigFile::default()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let bad = |line: usize, reason: String| CliError::Config {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected `key = value`, got {line:?}")))?;
            let value = value.split(" #").next().unwrap_or("").trim();
            let key = normalize(key);
            if key.is_empty() || value.is_empty() {
                return Err(bad(i + 1, "empty key or value".into()));
            }
            if let Some((first, _)) = entries.insert(key.clone(), (i + 1, value.to_owned())) {
                return Err(bad(i + 1, format!("`{key}` already set on line {first}")));
            }
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(&normalize(key)) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e| CliError::Config {
                path: self.path.clone(),
                line,
                reason: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<(), CliError> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(CliError::Config {
                path: self.path,
                line,
                reason: format!("unknown key `{key}`"),
            }),
        }
    }
}

/// `flag`, else the config value, else `default`.
pub fn pick<T: FromStr>(flag: Option<T>, config: &mut ConfigFile, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let from_file = config.take(key)?;
    Ok(flag.or(from_file).unwrap_or(default))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let mut c = ConfigFile::parse(
            "# training\nlearning-rate = 0.05\n\nmax_epochs = 12  # short run\n",
            Path::new("a.cfg"),
        )
        .unwrap();
        assert_eq!(c.take::<f64>("learning_rate").unwrap(), Some(0.05));
        assert_eq!(c.take::<usize>("max-epochs").unwrap(), Some(12));
        assert_eq!(c.take::<usize>("seed").unwrap(), None);
        c.finish().unwrap();
    }

    #[test]
    fn flags_win_over_file() {
        let mut c = ConfigFile::parse("seed = 3\ndropout = 0.1\n", Path::new("a.cfg")).unwrap();
        assert_eq!(pick(Some(9u64), &mut c, "seed", 1).unwrap(), 9);
        assert_eq!(pick(None, &mut c, "dropout", 0.2).unwrap(), 0.1);
        assert_eq!(pick(None::<usize>, &mut c, "threads", 4).unwrap(), 4);
    }

    #[test]
    fn errors_name_file_and_line() {
        let err = ConfigFile::parse("seed = 1\nseed = 2\n", Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().starts_with("x.cfg:2"), "{err}");
        assert!(ConfigFile::parse("just words\n", Path::new("x.cfg")).is_err());

        let mut c = ConfigFile::parse("seed = many\n", Path::new("x.cfg")).unwrap();
        assert!(c.take::<u64>("seed").is_err());

        let c = ConfigFile::parse("a = 1\nsede = 2\n", Path::new("x.cfg")).unwrap();
        let err = c.finish().unwrap_err();
        assert!(
            err.to_string().contains("x.cfg:1") && err.to_string().contains("`a`"),
            "{err}"
        );
    }
}
