//! Settings resolution and run manifests.
//!
//! Precedence, highest first: command-line flags (`--seed`, `--out`, `--set`
//! and the typed per-command flags), the `SENTIDIAL_SEED` environment
//! variable (seed only), the `--config` file, built-in defaults.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sentidial_core::{Error, KeyValues, Result};

use crate::Common;

pub const MANIFEST_VERSION: u32 = 1;
pub const SEED_ENV: &str = "SENTIDIAL_SEED";
pub const DEFAULT_SEED: u64 = 1;

/// Command-line input of one invocation.
#[derive(Debug, Clone)]
pub struct Overrides {
    common: Common,
    flags: Vec<(&'static str, String)>,
}

impl Overrides {
    pub fn new(common: Common) -> Self {
        Overrides {
            common,
            flags: Vec::new(),
        }
    }

    pub fn with(mut self, key: &'static str, value: Option<String>) -> Self {
        if let Some(v) = value {
            self.flags.push((key, v));
        }
        self
    }
}

/// Settings of one run. Keys are consumed as the command reads them;
/// whatever is left over at [`Run::begin`] is an error.
#[derive(Debug)]
pub struct Run {
    pub command: &'static str,
    pub seed: u64,
    pub out: PathBuf,
    kv: KeyValues,
    resolved: KeyValues,
}

impl Run {
    pub fn start(command: &'static str, input: &Overrides) -> Result<Run> {
        let mut kv = match &input.common.config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::new(),
        };
        if let Some(v) = kv.take::<u32>("manifest_version")? {
            if v != MANIFEST_VERSION {
                return Err(Error::Config(format!(
                    "manifest version {v} is not supported (expected {MANIFEST_VERSION})"
                )));
            }
        }
        if let Some(c) = kv.take::<String>("command")? {
            if c != command {
                return Err(Error::Config(format!("config was written for `{c}`, not `{command}`")));
            }
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            kv.set("seed", s);
        }
        for (k, v) in &input.flags {
            kv.set(*k, v);
        }
        for item in &input.common.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
            kv.set(k.trim(), v.trim());
        }
        if let Some(seed) = input.common.seed {
            kv.set("seed", seed);
        }
        if let Some(out) = &input.common.out {
            kv.set("out", out.display());
        }
        let seed = kv.take_or("seed", DEFAULT_SEED)?;
        let out = kv
            .take::<String>("out")?
            .map_or_else(|| Path::new("runs").join(command), PathBuf::from);
        let mut resolved = KeyValues::new();
        resolved.set("seed", seed);
        resolved.set("out", out.display());
        Ok(Run {
            command,
            seed,
            out,
            kv,
            resolved,
        })
    }

    /// Raw access for settings structs with their own `from_kv`; pair with [`Run::record`].
    pub fn kv(&mut self) -> &mut KeyValues {
        &mut self.kv
    }

    pub fn record(&mut self, kv: KeyValues) {
        self.resolved.overlay(kv);
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.kv.take_or(key, default)?;
        self.resolved.set(key, &v);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.kv.take::<T>(key)?;
        if let Some(v) = &v {
            self.resolved.set(key, v);
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key)?
            .ok_or_else(|| Error::Config(format!("`{}` needs the `{key}` setting", self.command)))
    }

    pub fn optional_path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.optional::<String>(key)?.map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str) -> Result<PathBuf> {
        self.required::<String>(key).map(PathBuf::from)
    }

    /// Rejects unknown keys, creates the output directory and writes the manifest.
    pub fn begin(self) -> Result<Started> {
        self.kv.finish()?;
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let text = format!(
            "# sentidial run manifest; rerun with --config\nmanifest_version = {MANIFEST_VERSION}\ncommand = {}\n{}",
            self.command,
            self.resolved.to_text()
        );
        let path = self.out.join("manifest.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Started {
            seed: self.seed,
            out: self.out,
        })
    }
}

/// A run whose settings are final.
#[derive(Debug)]
pub struct Started {
    pub seed: u64,
    pub out: PathBuf,
}

impl Started {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Serializes `rows` to `name` as CSV with a header.
    pub fn write_csv<R: serde::Serialize>(&self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    }
}
