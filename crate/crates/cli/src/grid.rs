//! Sweep grid syntax: `a:b` is an inclusive integer range, `a:b:s` a
//! stepped real range, and items may be joined with commas, e.g.
//! `1:5,8,10` or `0.1:0.5:0.1`.

pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(format!("empty item in grid `{text}`"));
        }
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(number(v)?),
            [a, b] => {
                let (a, b) = (integer(a)?, integer(b)?);
                if a > b {
                    return Err(format!("range `{item}` is empty"));
                }
                out.extend((a..=b).map(|v| v as f64));
            }
            [a, b, s] => {
                let (a, b, s) = (number(a)?, number(b)?, number(s)?);
                if !(s > 0.0) || a > b {
                    return Err(format!("range `{item}` needs a positive step and start <= end"));
                }
                let count = ((b - a) / s + 1e-9).floor() as usize;
                // Multiply rather than accumulate, then trim the binary noise
                // so 0.1:0.3:0.1 prints as 0.1, 0.2, 0.3.
                out.extend((0..=count).map(|i| tidy(a + i as f64 * s)));
            }
            _ => return Err(format!("cannot parse grid item `{item}`")),
        }
    }
    Ok(out)
}

fn number(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{s}` is not a finite number"))
}

fn integer(s: &str) -> Result<i64, String> {
    s.trim().parse::<i64>().map_err(|_| format!("`{s}` is not an integer"))
}

fn tidy(v: f64) -> f64 {
    format!("{v:.12e}").parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_range_is_inclusive() {
        assert_eq!(parse_grid("1:10").unwrap(), (1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(parse_grid("3:3").unwrap(), vec![3.0]);
    }

    #[test]
    fn stepped_real_range() {
        assert_eq!(parse_grid("0.1:0.5:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_grid("1:2:0.4").unwrap(), vec![1.0, 1.4, 1.8]);
    }

    #[test]
    fn comma_lists_mix_items() {
        assert_eq!(parse_grid("1:3, 8,0.5").unwrap(), vec![1.0, 2.0, 3.0, 8.0, 0.5]);
    }

    #[test]
    fn malformed_grids() {
        for bad in ["", "a", "5:1", "1:2:0", "1:2:-1", "1.5:3", "1:2:3:4", "1,,2", "nan"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
