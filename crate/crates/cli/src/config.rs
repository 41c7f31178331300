//! `--config FILE` support.
//!
//! A config file holds one `key = value` pair per line, where `key` is a
//! long flag name without the leading dashes. Blank lines and lines starting
//! with `#` are ignored. Boolean flags take `true` or `false`. The pairs are
//! spliced in right after the subcommand; a key that is also given on the
//! command line is dropped, so the command line always wins.
//!
//! ```text
//! # isolet sweep
//! dataset = isolet
//! dim = 1000,2000,4000
//! precision = 1,2,3
//! seed = 7
//! retrain = true
//! ```

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`, got `{line}`", origin.display(), no + 1);
        };
        let key = key.trim().trim_start_matches("--");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key `{key}`", origin.display(), no + 1);
        }
        match value {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            _ => args.push(format!("--{key}={value}").into()),
        }
    }
    Ok(args)
}

fn flag_name(arg: &str) -> Option<String> {
    let name = arg.strip_prefix("--")?;
    Some(name.split_once('=').map_or(name, |(k, _)| k).to_string())
}

/// Replaces `--config FILE` / `--config=FILE` with the file's flags, placed
/// directly after the subcommand name.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let path = iter.next().context("--config needs a file path")?;
            files.push(path);
        } else if let Some(path) = s.strip_prefix("--config=") {
            files.push(path.into());
        } else {
            out.push(arg);
        }
    }
    if files.is_empty() {
        return Ok(out);
    }
    if out.len() < 2 || out[1].to_string_lossy().starts_with('-') {
        bail!("--config must follow a subcommand");
    }
    let given: HashSet<String> = out[2..].iter().filter_map(|a| flag_name(&a.to_string_lossy())).collect();
    let mut injected = Vec::new();
    for f in files {
        let path = Path::new(&f);
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        injected.extend(
            parse_config(&text, path)?
                .into_iter()
                .filter(|a| flag_name(&a.to_string_lossy()).is_none_or(|k| !given.contains(&k))),
        );
    }
    out.splice(2..2, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[OsString]) -> Vec<String> {
        v.iter().map(|s| s.to_string_lossy().into_owned()).collect()
    }

    #[test]
    fn parses_pairs_comments_and_booleans() {
        let text = "# c\n\ndim = 2000\nretrain = true\nverbose=false\n--seed=3\n";
        let args = parse_config(text, Path::new("x")).unwrap();
        assert_eq!(strs(&args), ["--dim=2000", "--retrain", "--seed=3"]);
        assert!(parse_config("dim 3", Path::new("x")).is_err());
    }

    #[test]
    fn command_line_replaces_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "dim = 1000\nseed = 4\n").unwrap();
        let args: Vec<OsString> = ["mimhd", "sweep", "--dim", "2000", "--config"]
            .iter()
            .map(OsString::from)
            .chain([cfg.clone().into_os_string()])
            .collect();
        let out = expand_args(args).unwrap();
        assert_eq!(strs(&out), ["mimhd", "sweep", "--seed=4", "--dim", "2000"]);
    }
}
