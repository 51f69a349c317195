//! Flat `key = value` config files. Keys are long flag names without the
//! leading dashes, `#` starts a comment. Entries become extra arguments
//! unless the same flag was given on the command line, so flags always win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') || k.contains(char::is_whitespace) {
            return Err(format!("line {}: bad key {k:?}", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// The value of `--config` if present.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn given(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

/// Appends config entries the command line does not already set. `true`
/// and `false` values toggle switches.
pub fn merge(mut args: Vec<OsString>, entries: &[(String, String)]) -> Vec<OsString> {
    let explicit = args.clone();
    for (k, v) in entries {
        if given(&explicit, k) {
            continue;
        }
        match v.as_str() {
            "true" => args.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{k}").into());
                args.push(v.into());
            }
        }
    }
    args
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_blanks() {
        let c = parse_config("# tuning\nvoxel = 0.02\n\n stat-alpha=3 # looser\n").unwrap();
        assert_eq!(c, vec![("voxel".into(), "0.02".into()), ("stat-alpha".into(), "3".into())]);
        assert!(parse_config("voxel 0.02").is_err());
        assert!(parse_config("--voxel = 1").is_err());
    }

    #[test]
    fn command_line_wins() {
        let args = os(&["stabilens", "reconstruct", "--voxel=0.05", "--config", "c.txt"]);
        assert_eq!(config_path(&args), Some("c.txt".into()));
        let cfg = parse_config("voxel = 0.02\nradius = 0.1\ncheck-images = true\nquiet = false").unwrap();
        let merged = merge(args, &cfg);
        assert_eq!(
            merged[5..].iter().map(|s| s.to_str().unwrap()).collect::<Vec<_>>(),
            ["--radius", "0.1", "--check-images"]
        );
    }
}
