//! Flat `key = value` configuration files.
//!
//! Each key is a long flag name without the leading dashes. The pairs are
//! spliced into the argument list right after the subcommand, so flags given
//! on the command line come later and win.

use std::path::Path;

/// Parse a config file into `--key value` arguments.
pub fn config_args(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim();
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(format!("line {}: bad key `{key}`", i + 1));
        }
        args.push(format!("--{key}"));
        args.push(value.trim().to_string());
    }
    Ok(args)
}

/// Pull `--config PATH` (or `--config=PATH`) out of `args` and splice the
/// file's pairs in after the subcommand at index 1.
pub fn expand(mut args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            args.remove(i);
        } else if args[i] == "--config" {
            if i + 1 >= args.len() {
                return Err("--config needs a path".into());
            }
            path = Some(args.remove(i + 1));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    if args.len() < 2 {
        return Err("--config must follow a subcommand".into());
    }
    let extra = config_args(Path::new(&path))?;
    args.splice(2..2, extra);
    Ok(args)
}
