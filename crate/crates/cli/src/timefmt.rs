//! Conversion of time fields to integer indices.
//!
//! Integers pass through unchanged and are taken to be in the unit of the
//! chosen granularity. Calendar dates map to days since 1970-01-01 (daily)
//! or to `12·year + month − 1` (monthly); `YYYY-MM` is accepted for monthly.

use chrono::{Datelike, NaiveDate};
use nowcast_core::{Error, Granularity, Result};

pub fn parse_time(raw: &str, granularity: Granularity) -> Result<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(match granularity {
            Granularity::Daily => {
                let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
                (d - epoch).num_days()
            }
            Granularity::Monthly => month_index(d),
        });
    }
    if granularity == Granularity::Monthly {
        if let Ok(d) = NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d") {
            return Ok(month_index(d));
        }
    }
    Err(Error::Parse(format!("time '{s}' is neither an integer nor a {granularity} date")))
}

fn month_index(d: NaiveDate) -> i64 {
    i64::from(d.year()) * 12 + i64::from(d.month0())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_and_dates() {
        assert_eq!(parse_time(" 42 ", Granularity::Daily).unwrap(), 42);
        assert_eq!(parse_time("1970-01-03", Granularity::Daily).unwrap(), 2);
        let jan = parse_time("2020-01-31", Granularity::Monthly).unwrap();
        assert_eq!(parse_time("2020-02", Granularity::Monthly).unwrap(), jan + 1);
        assert_eq!(parse_time("2019-12-01", Granularity::Monthly).unwrap(), jan - 1);
        assert!(parse_time("2020-02", Granularity::Daily).is_err());
        assert!(parse_time("soon", Granularity::Monthly).is_err());
    }
}
