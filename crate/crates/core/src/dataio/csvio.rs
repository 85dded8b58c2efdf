//! Generic CSV with header `instance,timestamp,s1,…,sn`. An empty cell is a
//! missing reading. Timestamps are rebased so each instance starts at 0.

use std::io::{Read, Write};

use super::MultivariateSeries;
use crate::error::{Error, Result};

pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<MultivariateSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.len() < 3
        || !headers[0].eq_ignore_ascii_case("instance")
        || !headers[1].eq_ignore_ascii_case("timestamp")
    {
        return Err(Error::Format(
            "csv header must be `instance,timestamp,s1,...,sn`".into(),
        ));
    }
    let n = headers.len() - 2;

    struct Acc {
        id: String,
        ts: Vec<f64>,
        rows: Vec<Vec<f64>>,
        present: Vec<Vec<bool>>,
    }
    let mut order: Vec<Acc> = Vec::new();
    let mut index = std::collections::HashMap::new();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", n + 2, rec.len()),
            });
        }
        let id = rec[0].to_string();
        let ts: f64 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp {:?}", &rec[1]),
        })?;
        let mut row = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for cell in rec.iter().skip(2) {
            if cell.is_empty() {
                row.push(0.0);
                flags.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad value {cell:?}"),
                })?;
                row.push(v);
                flags.push(true);
            }
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Acc {
                id: id.clone(),
                ts: Vec::new(),
                rows: Vec::new(),
                present: Vec::new(),
            });
            order.len() - 1
        });
        let acc = &mut order[slot];
        if let Some(&last) = acc.ts.last() {
            if ts <= last {
                return Err(Error::Format(format!(
                    "instance {id}: timestamp {ts} at line {line} does not increase"
                )));
            }
        }
        acc.ts.push(ts);
        acc.rows.push(row);
        acc.present.push(flags);
    }

    order
        .into_iter()
        .map(|a| {
            let t0 = a.ts[0];
            let ts = a.ts.iter().map(|t| t - t0).collect();
            MultivariateSeries::new(a.id, ts, a.rows, a.present)
        })
        .collect()
}

pub fn write_series_csv<W: Write>(writer: W, series: &[MultivariateSeries]) -> Result<()> {
    let n = series.first().map_or(0, |s| s.dim());
    if series.iter().any(|s| s.dim() != n) {
        return Err(Error::invalid("all series must have the same dimension"));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["instance".to_string(), "timestamp".to_string()];
    header.extend((1..=n).map(|j| format!("s{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in series {
        for t in 0..s.len() {
            let mut rec = vec![s.instance_id.clone(), s.timestamps()[t].to_string()];
            for j in 0..n {
                rec.push(if s.is_present(t, j) {
                    s.readings()[t][j].to_string()
                } else {
                    String::new()
                });
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}
