//! Flat `key=value` run configuration with per-command key sets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::exit::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainGan,
    TrainLsnet,
    Eval,
    Screen,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::GenData, Command::TrainGan, Command::TrainLsnet, Command::Eval, Command::Screen];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainGan => "train-gan",
            Command::TrainLsnet => "train-lsnet",
            Command::Eval => "eval",
            Command::Screen => "screen",
        }
    }

    /// Accepted keys and their defaults; an empty default means "unset".
    pub fn schema(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::GenData => &[("out", "data"), ("seed", "1"), ("side", "32"), ("n_per_class", "100")],
            Command::TrainGan => &[
                ("data", "data"),
                ("out", "runs/gan"),
                ("seed", "1"),
                ("side", "32"),
                ("epochs", "30"),
                ("batch", "8"),
                ("lr", "0.0002"),
                ("lambda", "10"),
                ("mu", "5"),
                ("grl_gamma", "5"),
                ("weighting", "grouped"),
                ("gen_adversarial", "non-saturating"),
                ("base", "8"),
                ("feature", "16"),
                ("private_blocks", "2"),
            ],
            Command::TrainLsnet => &[
                ("data", "data"),
                ("out", "runs/lsnet"),
                ("seed", "1"),
                ("side", "32"),
                ("modality", "us"),
                ("epochs", "30"),
                ("batch", "8"),
                ("lr", "0.0002"),
                ("attention", "sparse"),
                ("k_rule", "n25"),
                ("tau", "0.5"),
                ("alpha_fuse", "0.7"),
                ("alpha_ema", "0.9"),
                ("lambda_schedule", "linear"),
                ("distill_weight", "1"),
                ("temperature", "2"),
                ("pretrain_gan", ""),
                ("pretrain_epochs", "10"),
            ],
            Command::Eval => &[
                ("data", "data"),
                ("out", "runs/eval"),
                ("seed", "1"),
                ("checkpoint", ""),
                ("predictions", ""),
                ("split", "test"),
                ("modality", "us"),
                ("resamples", "10000"),
                ("threshold", "0.5"),
            ],
            Command::Screen => &[
                ("out", "runs/screen"),
                ("sensitivity", "0.9950"),
                ("specificity", "0.9722"),
                ("prevalence", "0.0002,0.09,0.308,0.40"),
            ],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CliError::config(format!("unknown command '{s}'")))
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns `--key value` / `--key=value` pairs into (key, value); dashes in
/// keys become underscores.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| CliError::config(format!("expected --key, got '{a}'")))?;
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::config(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

/// Resolved configuration: every schema key with its final value.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, then file pairs, then overrides. Unknown keys are rejected.
    pub fn resolve(command: Command, layers: &[Vec<(String, String)>]) -> Result<Self, CliError> {
        let schema = command.schema();
        let mut values: BTreeMap<String, String> = schema.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for layer in layers {
            for (k, v) in layer {
                if !values.contains_key(k) {
                    let known: Vec<&str> = schema.iter().map(|(k, _)| *k).collect();
                    return Err(CliError::config(format!(
                        "unknown key '{k}' for {command}; accepted keys: {}",
                        known.join(", ")
                    )));
                }
                values.insert(k.clone(), v.clone());
            }
        }
        Ok(Self { command, values })
    }

    pub fn defaults(command: Command) -> Self {
        Self::resolve(command, &[]).expect("defaults are valid")
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} not in schema"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>().map_err(|e| CliError::config(format!("{key}: cannot parse '{raw}': {e}")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.optional_path(key).ok_or_else(|| CliError::config(format!("{key} must be set")))
    }

    /// Comma-separated list of numbers.
    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>().map_err(|e| CliError::config(format!("{key}: cannot parse '{s}': {e}")))
            })
            .collect()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        assert!(self.values.contains_key(key), "key {key} not in schema");
        self.values.insert(key.to_string(), value.into());
    }

    /// Canonical text form, one sorted `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# lab {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_override_layers() {
        let file = parse_pairs("# comment\nepochs = 3 # trailing\n\nseed=9\n").unwrap();
        let over = parse_overrides(&["--epochs".into(), "5".into(), "--k-rule=n50".into()]).unwrap();
        let cfg = RunConfig::resolve(Command::TrainLsnet, &[file, over]).unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), 5);
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 9);
        assert_eq!(cfg.raw("k_rule"), "n50");
        assert_eq!(cfg.raw("tau"), "0.5");
    }

    #[test]
    fn unknown_keys_and_bad_lines_fail() {
        let e = RunConfig::resolve(Command::Screen, &[vec![("epochs".into(), "1".into())]]).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("epochs"));
        assert!(parse_pairs("no equals sign").is_err());
        assert!(parse_overrides(&["--dangling".into()]).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let cfg = RunConfig::defaults(Command::Eval);
        let back = RunConfig::resolve(Command::Eval, &[parse_pairs(&cfg.to_text()).unwrap()]).unwrap();
        assert_eq!(back, cfg);
    }
}
