use std::io::Write;

use crate::real::Real;

/// One line of the long-format results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow<T> {
    pub estimand: String,
    /// `None` for the crude fraction, which has no time axis.
    pub time: Option<T>,
    pub estimate: Option<T>,
    pub lower: Option<T>,
    pub upper: Option<T>,
    /// `separate` or `supermodel` for landmark rows.
    pub model: Option<String>,
}

fn cell<T: Real>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `estimand,time_or_landmark,estimate,lower,upper`, plus a `model` column when
/// any row carries one. Undefined values are written as `NA`.
pub fn write_results<T: Real, W: Write>(rows: &[ResultRow<T>], writer: W) -> Result<(), csv::Error> {
    let with_model = rows.iter().any(|r| r.model.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["estimand", "time_or_landmark", "estimate", "lower", "upper"];
    if with_model {
        header.push("model");
    }
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.estimand.clone(),
            r.time.map(|t| t.to_string()).unwrap_or_default(),
            cell(r.estimate),
            cell(r.lower),
            cell(r.upper),
        ];
        if with_model {
            rec.push(r.model.clone().unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
