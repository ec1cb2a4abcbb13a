//! The `name(key=value,...)` mini-language shared by policy and generator
//! specs. Values may themselves be calls, e.g. `roe_to_eor(sub=fixed_threshold(t=1))`.

use crate::error::{LabError, Result};

/// A parsed `name(key=value,...)` call.
#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub name: String,
    pub args: Vec<(String, String)>,
}

/// Parses `name` or `name(k=v,...)`.
pub fn parse_call(spec: &str) -> Result<Call> {
    let spec = spec.trim();
    let Some(open) = spec.find('(') else {
        if spec.is_empty() || !spec.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(LabError::bad(format!("malformed spec {spec:?}")));
        }
        return Ok(Call { name: spec.to_string(), args: Vec::new() });
    };
    if !spec.ends_with(')') {
        return Err(LabError::bad(format!("unbalanced parentheses in {spec:?}")));
    }
    let name = spec[..open].trim().to_string();
    let body = &spec[open + 1..spec.len() - 1];
    let mut args = Vec::new();
    for part in split_top_level(body)? {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| LabError::bad(format!("argument {part:?} is not key=value")))?;
        args.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(Call { name, args })
}

fn split_top_level(body: &str) -> Result<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(LabError::bad(format!("unbalanced parentheses in {body:?}")));
                }
            }
            ',' if depth == 0 => {
                parts.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(LabError::bad(format!("unbalanced parentheses in {body:?}")));
    }
    parts.push(&body[start..]);
    Ok(parts)
}

/// Parses a number; also accepts `e`, `1/e` and other `a/b` forms.
pub fn parse_number(s: &str) -> Result<f64> {
    let atom = |t: &str| -> Result<f64> {
        match t.trim() {
            "e" => Ok(std::f64::consts::E),
            "inf" => Ok(f64::INFINITY),
            t => t.parse::<f64>().map_err(|_| LabError::bad(format!("not a number: {t:?}"))),
        }
    };
    match s.split_once('/') {
        Some((a, b)) => Ok(atom(a)? / atom(b)?),
        None => atom(s),
    }
}

impl Call {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), parse_number)
    }

    pub fn f64_required(&self, key: &str) -> Result<f64> {
        let v = self.get(key).ok_or_else(|| LabError::bad(format!("{} needs {key}=...", self.name)))?;
        parse_number(v)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| LabError::bad(format!("{key} must be a non-negative integer, got {v:?}"))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(LabError::bad(format!("{} does not take {k}", self.name))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_calls() {
        let c = parse_call("roe_to_eor(sub=fixed_threshold(t=1,at=0.5), gamma=0.5)").unwrap();
        assert_eq!(c.name, "roe_to_eor");
        assert_eq!(c.get("sub"), Some("fixed_threshold(t=1,at=0.5)"));
        assert_eq!(c.f64_or("gamma", 0.0).unwrap(), 0.5);
        assert_eq!(parse_call("always_first").unwrap().args.len(), 0);
        assert!(parse_call("x(a=1").is_err());
        assert!(parse_call("x(a)").is_err());
        assert!(parse_call("").is_err());
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number("1e6").unwrap(), 1e6);
        assert!((parse_number("1/e").unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(parse_number("3/4").unwrap(), 0.75);
        assert!(parse_number("abc").is_err());
    }
}
