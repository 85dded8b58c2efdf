//! Turbofan run-to-failure text files: whitespace-separated rows of
//! `unit cycle v1 … v24`, grouped by unit with ascending cycles.

use std::io::BufRead;

use super::MultivariateSeries;
use crate::error::{Error, Result};

pub const CMAPSS_COLUMNS: usize = 26;

pub fn parse_cmapss<R: BufRead>(reader: R) -> Result<Vec<MultivariateSeries>> {
    let mut out = Vec::new();
    let mut current: Option<(i64, Vec<i64>, Vec<Vec<f64>>)> = None;
    let mut seen = std::collections::HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != CMAPSS_COLUMNS {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {CMAPSS_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let unit = parse_int(fields[0], lineno)?;
        let cycle = parse_int(fields[1], lineno)?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("bad sensor value {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;

        match &mut current {
            Some((u, cycles, rows)) if *u == unit => {
                if cycle <= *cycles.last().unwrap() {
                    return Err(Error::Format(format!(
                        "unit {unit}: cycle {cycle} at line {lineno} does not increase"
                    )));
                }
                cycles.push(cycle);
                rows.push(values);
            }
            _ => {
                if let Some(done) = current.take() {
                    out.push(finish_unit(done)?);
                }
                if !seen.insert(unit) {
                    return Err(Error::Format(format!(
                        "unit {unit} reappears at line {lineno}; rows must be grouped by unit"
                    )));
                }
                current = Some((unit, vec![cycle], vec![values]));
            }
        }
    }
    if let Some(done) = current.take() {
        out.push(finish_unit(done)?);
    }
    Ok(out)
}

fn finish_unit((unit, cycles, rows): (i64, Vec<i64>, Vec<Vec<f64>>)) -> Result<MultivariateSeries> {
    let first = cycles[0];
    let ts = cycles.iter().map(|&c| (c - first) as f64).collect();
    MultivariateSeries::fully_observed(unit.to_string(), ts, rows)
}

fn parse_int(field: &str, line: usize) -> Result<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    // Some copies of the files write integer columns as "1.0".
    match field.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("expected integer, found {field:?}"),
        }),
    }
}

/// One non-negative integer per line; blank lines are ignored.
pub fn parse_rul_file<R: BufRead>(reader: R) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t.parse::<u64>().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("expected non-negative integer, found {t:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(unit: usize, cycle: usize) -> String {
        let vals: Vec<String> = (0..24).map(|j| format!("{}.5", j + cycle)).collect();
        format!("{unit} {cycle} {}", vals.join(" "))
    }

    #[test]
    fn single_row() {
        let s = parse_cmapss(row(1, 1).as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 1);
        assert_eq!(s[0].timestamps(), &[0.0]);
        assert_eq!(s[0].dim(), 24);
        assert_eq!(s[0].readings()[0][0], 1.5);
    }

    #[test]
    fn two_units() {
        let text = [row(1, 1), row(1, 2), row(1, 3), row(2, 1), row(2, 2)].join("\n");
        let s = parse_cmapss(text.as_bytes()).unwrap();
        let lens: Vec<usize> = s.iter().map(|x| x.len()).collect();
        assert_eq!(lens, vec![3, 2]);
        assert_eq!(s[1].instance_id, "2");
        assert_eq!(s[0].timestamps(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn trailing_whitespace_tolerated() {
        let text = format!("{}  \n{} \n", row(3, 1), row(3, 2));
        assert_eq!(parse_cmapss(text.as_bytes()).unwrap()[0].len(), 2);
    }

    #[test]
    fn ragged_row_reports_line() {
        let text = format!("{}\n1 2 0.5 0.5\n", row(1, 1));
        match parse_cmapss(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotone_cycles() {
        let text = [row(1, 2), row(1, 1)].join("\n");
        assert!(matches!(parse_cmapss(text.as_bytes()), Err(Error::Format(_))));
        let text = [row(1, 1), row(2, 1), row(1, 2)].join("\n");
        assert!(matches!(parse_cmapss(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn rul_file() {
        assert_eq!(parse_rul_file("112\n98\n".as_bytes()).unwrap(), vec![112, 98]);
        assert!(parse_rul_file("".as_bytes()).unwrap().is_empty());
        assert!(matches!(
            parse_rul_file("1\nx\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_rul_file("-3\n".as_bytes()).is_err());
    }
}
