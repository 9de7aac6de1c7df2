//! Parameter grids given as `start:stop:step` or `lo:hi[:count]`.

use crate::error::CliError;

const DEFAULT_LOG_POINTS: usize = 50;

fn numbers(spec: &str) -> Result<Vec<f64>, CliError> {
    spec.split(':')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Input(format!("bad grid `{spec}`: `{p}` is not a finite number")))
        })
        .collect()
}

/// Inclusive linear grid `start:stop:step`, or a single value.
pub fn linear(spec: &str) -> Result<Vec<f64>, CliError> {
    let v = numbers(spec)?;
    match v.as_slice() {
        [x] => Ok(vec![*x]),
        [a, b, step] => {
            if *step <= 0.0 || b < a {
                return Err(CliError::Input(format!("bad grid `{spec}`: need start ≤ stop and step > 0")));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            if count > 1_000_000 {
                return Err(CliError::Input(format!("grid `{spec}` has too many points")));
            }
            Ok((0..count).map(|i| a + step * i as f64).collect())
        }
        _ => Err(CliError::Input(format!("bad grid `{spec}`: expected `start:stop:step`"))),
    }
}

/// Log-spaced grid `lo:hi[:count]`, or a single value.
pub fn logarithmic(spec: &str) -> Result<Vec<f64>, CliError> {
    let v = numbers(spec)?;
    let (lo, hi, count) = match v.as_slice() {
        [x] => return if *x > 0.0 { Ok(vec![*x]) } else { Err(CliError::Input(format!("bad grid `{spec}`: values must be positive"))) },
        [a, b] => (*a, *b, DEFAULT_LOG_POINTS),
        [a, b, c] if c.fract() == 0.0 && *c >= 1.0 => (*a, *b, *c as usize),
        _ => return Err(CliError::Input(format!("bad grid `{spec}`: expected `lo:hi[:count]`"))),
    };
    if !(lo > 0.0 && hi >= lo) {
        return Err(CliError::Input(format!("bad grid `{spec}`: need 0 < lo ≤ hi")));
    }
    if count == 1 || lo == hi {
        return Ok(vec![lo]);
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grids() {
        assert_eq!(linear("0:0.99:0.01").unwrap().len(), 100);
        assert_eq!(linear("0.5").unwrap(), vec![0.5]);
        assert_eq!(linear("0.5:0.5:0.1").unwrap(), vec![0.5]);
        assert!(linear("1:0:0.1").is_err());
        assert!(linear("0:1:0").is_err());
        assert!(linear("a:1:0.1").is_err());
    }

    #[test]
    fn log_grids() {
        let g = logarithmic("0.1:100").unwrap();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[49] - 100.0).abs() < 1e-12);
        assert_eq!(logarithmic("0.1:100:4").unwrap().len(), 4);
        assert!(logarithmic("0:1").is_err());
        assert!(logarithmic("-1").is_err());
    }
}
