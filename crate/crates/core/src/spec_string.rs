//! `kind:key=value,key=value` option strings used by the command line.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KvSpec {
    pub kind: String,
    pub options: BTreeMap<String, String>,
}

impl KvSpec {
    pub fn parse(text: &str) -> Result<KvSpec> {
        let (kind, rest) = match text.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => (text.trim(), ""),
        };
        if kind.is_empty() {
            return Err(Error::invalid(format!("missing kind in `{text}`")));
        }
        let mut options = BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got `{part}`")))?;
            options.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvSpec {
            kind: kind.to_string(),
            options,
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.options
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::invalid(format!("bad value for `{key}`: `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fail on keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.options.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::invalid(format!(
                "unknown option `{k}` for `{}` (expected one of: {})",
                self.kind,
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }
}
