//! Flat `key = value` parameter files.
//!
//! Keys are `r`, `g`, `sigma`, `rho`, `c1`, `c2`, `lambda.i` for each
//! regime and `q.i.j` for the off-diagonal generator entries, with regimes
//! numbered from 1. The file is read as TOML, so `#` comments work and
//! dotted keys need no quoting.

use std::collections::BTreeMap;
use std::path::Path;

use corridor_core::ModelParams;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Flat = BTreeMap<String, f64>;

fn flatten(prefix: &str, table: &toml::Table, out: &mut Flat) -> Result<(), ConfigError> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            toml::Value::Float(x) => {
                out.insert(key, *x);
            }
            toml::Value::Integer(i) => {
                out.insert(key, *i as f64);
            }
            other => return Err(ConfigError(format!("key {key}: expected a number, got {}", other.type_str()))),
        }
    }
    Ok(())
}

pub fn parse_str(text: &str) -> Result<Flat, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
    let mut flat = Flat::new();
    flatten("", &table, &mut flat)?;
    Ok(flat)
}

pub fn read_file(path: &Path) -> Result<Flat, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// The flat form of existing parameters; `--set` overrides start from this
/// when no file is given.
pub fn to_flat(p: &ModelParams) -> Flat {
    let mut f = Flat::new();
    for (k, v) in [("r", p.r), ("g", p.g), ("sigma", p.sigma), ("rho", p.rho), ("c1", p.c1), ("c2", p.c2)] {
        f.insert(k.to_string(), v);
    }
    for (i, l) in p.lambdas.iter().enumerate() {
        f.insert(format!("lambda.{}", i + 1), *l);
    }
    for (i, row) in p.q.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                f.insert(format!("q.{}.{}", i + 1, j + 1), *v);
            }
        }
    }
    f
}

/// Apply one `key=value` override.
pub fn apply_set(flat: &mut Flat, item: &str) -> Result<(), ConfigError> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--set expects key=value, got {item:?}")))?;
    let key = k.trim();
    let value: f64 = v
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("key {key}: {:?} is not a number", v.trim())))?;
    flat.insert(key.to_string(), value);
    Ok(())
}

pub fn to_params(flat: &Flat, allow_sparse_q: bool) -> Result<ModelParams, ConfigError> {
    let get = |key: &str| flat.get(key).copied().ok_or_else(|| ConfigError(format!("missing key {key}")));

    let mut n = 0;
    for key in flat.keys() {
        let index = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| ConfigError(format!("key {key}: regime indices start at 1")))
        };
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["r" | "g" | "sigma" | "rho" | "c1" | "c2"] => {}
            ["lambda", i] => n = n.max(index(i)?),
            ["q", i, j] => {
                let (i, j) = (index(i)?, index(j)?);
                if i == j {
                    return Err(ConfigError(format!("key {key}: the generator diagonal is implied")));
                }
                n = n.max(i).max(j);
            }
            _ => return Err(ConfigError(format!("unknown key {key}"))),
        }
    }
    if n == 0 {
        return Err(ConfigError("missing key lambda.1".into()));
    }

    let lambdas = (1..=n).map(|i| get(&format!("lambda.{i}"))).collect::<Result<Vec<_>, _>>()?;
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let key = format!("q.{}.{}", i + 1, j + 1);
            q[i][j] = match flat.get(&key) {
                Some(&v) => v,
                None if allow_sparse_q && i.abs_diff(j) > 1 => 0.0,
                None => return Err(ConfigError(format!("missing key {key}"))),
            };
        }
        q[i][i] = -q[i].iter().sum::<f64>();
    }

    Ok(ModelParams {
        r: get("r")?,
        g: get("g")?,
        sigma: get("sigma")?,
        rho: get("rho")?,
        lambdas,
        q,
        c1: get("c1")?,
        c2: get("c2")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "
        # reference calibration
        r = 0.012
        g = 0.015
        sigma = 0.15
        rho = 0.25
        c1 = 2
        c2 = 1.25
        lambda.1 = 0.1
        lambda.2 = 0.0
        q.1.2 = 0.02
        q.2.1 = 0.02
    ";

    #[test]
    fn reads_the_reference_file() {
        let p = to_params(&parse_str(TABLE).unwrap(), false).unwrap();
        assert_eq!(p, ModelParams::reference());
    }

    #[test]
    fn round_trips_through_the_flat_form() {
        let p = ModelParams::reference();
        assert_eq!(to_params(&to_flat(&p), false).unwrap(), p);
    }

    #[test]
    fn missing_keys_are_named() {
        let text = TABLE.replace("c1 = 2", "");
        let err = to_params(&parse_str(&text).unwrap(), false).unwrap_err();
        assert!(err.0.contains("c1"), "{err}");
        let text = TABLE.replace("q.2.1 = 0.02", "");
        let err = to_params(&parse_str(&text).unwrap(), false).unwrap_err();
        assert!(err.0.contains("q.2.1"), "{err}");
    }

    #[test]
    fn sparse_generators_need_the_flag() {
        let mut f = Flat::new();
        for (k, v) in [("r", 0.012), ("g", 0.015), ("sigma", 0.15), ("rho", 0.25), ("c1", 2.0), ("c2", 1.25)] {
            f.insert(k.into(), v);
        }
        for i in 1..=3 {
            f.insert(format!("lambda.{i}"), 0.05 * (3 - i) as f64);
        }
        for (i, j) in [(1, 2), (2, 1), (2, 3), (3, 2)] {
            f.insert(format!("q.{i}.{j}"), 0.02);
        }
        assert!(to_params(&f, false).is_err());
        let p = to_params(&f, true).unwrap();
        assert_eq!(p.q[0], vec![-0.02, 0.02, 0.0]);
        assert_eq!(p.q[1], vec![0.02, -0.04, 0.02]);
    }

    #[test]
    fn overrides_and_bad_keys() {
        let mut f = to_flat(&ModelParams::reference());
        apply_set(&mut f, "rho=0.2").unwrap();
        assert_eq!(to_params(&f, false).unwrap().rho, 0.2);
        assert!(apply_set(&mut f, "rho").is_err());
        assert!(apply_set(&mut f, "rho=abc").is_err());
        apply_set(&mut f, "kappa=1").unwrap();
        assert!(to_params(&f, false).is_err());
        assert!(parse_str("r = \"high\"").is_err());
        assert!(to_params(&parse_str("lambda.0 = 1").unwrap(), false).is_err());
    }
}
