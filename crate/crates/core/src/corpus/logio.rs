//! Tab-separated log files:
//! `user_id  timestamp_ms  kind  text  [category]  [prefix]`.

use std::io::{BufRead, Write};

use super::{BehaviorKind, CorpusError, LogRecord};

pub fn parse_line(line: &str, line_no: usize) -> Result<LogRecord, CorpusError> {
    let err = |reason: String| CorpusError::Parse {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if !(4..=6).contains(&fields.len()) {
        return Err(err(format!("expected 4-6 fields, found {}", fields.len())));
    }
    let timestamp: i64 = fields[1]
        .parse()
        .map_err(|_| err(format!("bad timestamp `{}`", fields[1])))?;
    if timestamp <= 0 {
        return Err(err(format!("timestamp must be positive, got {timestamp}")));
    }
    let kind = fields[2].parse::<BehaviorKind>().map_err(err)?;
    let optional = |i: usize| {
        fields
            .get(i)
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
    };
    Ok(LogRecord {
        user_id: fields[0].to_string(),
        timestamp,
        kind,
        text: fields[3].to_string(),
        category: optional(4),
        prefix: optional(5),
    })
}

/// Reads every record; blank lines and `#` comments are skipped.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_line(line, i + 1)?);
    }
    Ok(out)
}

pub fn write_record<W: Write>(w: &mut W, r: &LogRecord) -> std::io::Result<()> {
    write!(w, "{}\t{}\t{}\t{}", r.user_id, r.timestamp, r.kind, r.text)?;
    match (&r.category, &r.prefix) {
        (None, None) => {}
        (Some(c), None) => write!(w, "\t{c}")?,
        (c, Some(p)) => write!(w, "\t{}\t{p}", c.as_deref().unwrap_or(""))?,
    }
    writeln!(w)
}

pub fn write_log<W: Write>(mut w: W, records: &[LogRecord]) -> std::io::Result<()> {
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Parses `YYYY-MM-DD HH:MM:SS` as UTC milliseconds.
pub fn parse_datetime_ms(s: &str) -> Option<i64> {
    let (date, time) = s.trim().split_once(' ')?;
    let mut dp = date.split('-').map(|p| p.parse::<i64>().ok());
    let (y, mo, d) = (dp.next()??, dp.next()??, dp.next()??);
    let mut tp = time.split(':').map(|p| p.parse::<i64>().ok());
    let (h, mi, se) = (tp.next()??, tp.next()??, tp.next()??);
    if !(1..=12).contains(&mo) || !(1..=31).contains(&d) || h > 23 || mi > 59 || se > 60 {
        return None;
    }
    Some(((days_from_civil(y, mo, d) * 24 + h) * 60 + mi) * 60_000 + se * 1000)
}

/// Converts the public AOL query log layout
/// (`AnonID  Query  QueryTime  ItemRank  ClickURL`, with header) into
/// searched-query records.
pub fn read_aol<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 && line.starts_with("AnonID") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(CorpusError::Parse {
                line: i + 1,
                reason: format!("expected at least 3 AOL fields, found {}", fields.len()),
            });
        }
        let timestamp = parse_datetime_ms(fields[2]).ok_or_else(|| CorpusError::Parse {
            line: i + 1,
            reason: format!("bad QueryTime `{}`", fields[2]),
        })?;
        out.push(LogRecord {
            user_id: fields[0].to_string(),
            timestamp,
            kind: BehaviorKind::SearchedQuery,
            text: fields[1].to_string(),
            category: None,
            prefix: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_optional_layouts() {
        let recs = vec![
            LogRecord {
                user_id: "u1".into(),
                timestamp: 10,
                kind: BehaviorKind::SearchedQuery,
                text: "lamp cheap".into(),
                category: None,
                prefix: None,
            },
            LogRecord {
                user_id: "u1".into(),
                timestamp: 11,
                kind: BehaviorKind::ClickedItem,
                text: "lamp cheap set".into(),
                category: Some("lighting".into()),
                prefix: None,
            },
            LogRecord {
                user_id: "u2".into(),
                timestamp: 12,
                kind: BehaviorKind::SearchedQuery,
                text: "kettle mini".into(),
                category: None,
                prefix: Some("ke".into()),
            },
        ];
        let mut buf = Vec::new();
        write_log(&mut buf, &recs).unwrap();
        let back = read_log(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_line("u\t0\tsearched_query\tx", 1).is_err());
        assert!(parse_line("u\t5\tbrowsed\tx", 1).is_err());
        assert!(parse_line("u\t5\tsearched_query", 1).is_err());
        let e = read_log("u\t1\tsearched_query\tx\nbad\n".as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 2"), "{e}");
    }

    #[test]
    fn aol_adapter() {
        let text = "AnonID\tQuery\tQueryTime\tItemRank\tClickURL\n\
                    142\trentdirect.com\t2006-03-01 07:17:12\t\t\n\
                    142\twww.prescriptionfortime.com\t2006-03-12 12:31:06\t1\thttp://x\n";
        let recs = read_aol(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].user_id, "142");
        assert_eq!(recs[0].timestamp, 1_141_197_432_000);
        assert_eq!(parse_datetime_ms("1970-01-01 00:00:01"), Some(1000));
        assert_eq!(parse_datetime_ms("2000-03-01 00:00:00"), Some(951_868_800_000));
        assert_eq!(parse_datetime_ms("2006-13-01 00:00:00"), None);
    }
}
