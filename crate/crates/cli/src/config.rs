//! Folds a flat JSON config file into the argument list.

use std::ffi::OsString;

/// Removes `--config FILE` from `argv` and appends `--key value` for every
/// config entry whose flag is not already given on the command line.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            rest.push(a);
            rest.extend(it.by_ref());
            break;
        }
        if s == "--config" {
            path = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.to_string_lossy()))?;
    let serde_json::Value::Object(map) = doc else {
        return Err("config must be a JSON object".into());
    };
    let given: Vec<String> = rest
        .iter()
        .filter_map(|a| a.to_str())
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if given.contains(&flag) {
            continue;
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            _ => Err(format!("config key {key:?}: expected a string or number")),
        };
        match &value {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                extra.push(flag);
                extra.push(parts.join(","));
            }
            serde_json::Value::Object(_) => return Err(format!("config key {key:?}: nested objects are not allowed")),
            v => {
                extra.push(flag);
                extra.push(scalar(v)?);
            }
        }
    }
    rest.extend(extra.into_iter().map(OsString::from));
    Ok(rest)
}
