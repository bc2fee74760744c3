use semg::{Error, Result};

/// Config sections that accept dotted overrides.
const SECTIONS: [&str; 5] = ["data", "augment", "model", "loss", "train"];

/// Top-level config keys that accept overrides.
const TOP_LEVEL: [&str; 2] = ["experiment_id", "output_dir"];

/// Splits `--section.key value`, `--section.key=value` and the top-level
/// `--experiment_id` / `--output_dir` pairs out of argv.
///
/// Returns the remaining arguments for clap and the `(path, value)` overrides
/// in command-line order.
pub fn extract(argv: &[String]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut sets = Vec::new();
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (path, inline) = match flag.split_once('=') {
            Some((p, v)) => (p, Some(v.to_string())),
            None => (flag, None),
        };
        let is_override = TOP_LEVEL.contains(&path)
            || path.split_once('.').is_some_and(|(section, key)| SECTIONS.contains(&section) && !key.is_empty());
        if !is_override {
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("override --{path} needs a value")))?,
        };
        sets.push((path.to_string(), value));
    }
    Ok((rest, sets))
}
