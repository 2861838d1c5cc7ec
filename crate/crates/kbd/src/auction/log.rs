//! Impression-log and hourly-log file formats.
//!
//! Impressions travel as delimited text, one per line, header required:
//!
//! ```text
//! id,hour,pCTR,pCVR,ppay,wp
//! ```
//!
//! Hourly logs are emitted as line-delimited JSON records.

use super::{AuctionError, HourLog, Impression};
use std::io::{BufRead, BufReader, Read, Write};

pub const IMPRESSION_HEADER: &str = "id,hour,pCTR,pCVR,ppay,wp";

pub fn write_impressions<W: Write>(mut w: W, impressions: &[Impression]) -> Result<(), AuctionError> {
    let io_err = |e: std::io::Error| AuctionError::Io(e.to_string());
    writeln!(w, "{IMPRESSION_HEADER}").map_err(io_err)?;
    for i in impressions {
        writeln!(w, "{},{},{},{},{},{}", i.id, i.hour, i.pctr, i.pcvr, i.ppay, i.wp).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_impressions<R: Read>(r: R) -> Result<Vec<Impression>, AuctionError> {
    let reader = BufReader::new(r);
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();

    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == IMPRESSION_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(AuctionError::Csv {
                line: 1,
                message: format!("expected header '{IMPRESSION_HEADER}', got '{header}'"),
            })
        }
        Some((_, Err(e))) => return Err(AuctionError::Io(e.to_string())),
        None => {
            return Err(AuctionError::Csv {
                line: 1,
                message: "empty impression log".into(),
            })
        }
    }

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| AuctionError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 6 {
            return Err(AuctionError::Csv {
                line: lineno,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| AuctionError::Csv {
            line: lineno,
            message: format!("bad {what}"),
        };
        let id: u64 = fields[0].parse().map_err(|_| parse_err("id"))?;
        let hour: u8 = fields[1].parse().map_err(|_| parse_err("hour"))?;
        let pctr: f64 = fields[2].parse().map_err(|_| parse_err("pCTR"))?;
        let pcvr: f64 = fields[3].parse().map_err(|_| parse_err("pCVR"))?;
        let ppay: f64 = fields[4].parse().map_err(|_| parse_err("ppay"))?;
        let wp: f64 = fields[5].parse().map_err(|_| parse_err("wp"))?;
        out.push(
            Impression::new(id, hour, pctr, pcvr, ppay, wp).map_err(|e| AuctionError::Csv {
                line: lineno,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_hour_logs<W: Write>(mut w: W, logs: &[HourLog]) -> Result<(), AuctionError> {
    for log in logs {
        let line = serde_json::to_string(log).map_err(|e| AuctionError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| AuctionError::Io(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_missing_header() {
        let err = read_impressions("1,0,0.1,0.1,10,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AuctionError::Csv { line: 1, .. }));
    }

    #[test]
    fn rejects_bad_field_count_with_line_number() {
        let text = format!("{IMPRESSION_HEADER}\n1,0,0.1,0.1,10\n");
        let err = read_impressions(text.as_bytes()).unwrap_err();
        assert!(matches!(err, AuctionError::Csv { line: 2, .. }));
    }

    #[test]
    fn rejects_out_of_range_values() {
        let text = format!("{IMPRESSION_HEADER}\n1,0,1.5,0.1,10,0.5\n");
        assert!(read_impressions(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn impression_log_round_trips(
            rows in proptest::collection::vec(
                (0u64..1_000_000, 0u8..24, 1e-6f64..0.999, 1e-6f64..0.999, 1e-3f64..1e4, 1e-3f64..1e3),
                0..40,
            )
        ) {
            let imps: Vec<Impression> = rows
                .into_iter()
                .map(|(id, hour, pctr, pcvr, ppay, wp)| Impression::new(id, hour, pctr, pcvr, ppay, wp).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_impressions(&mut buf, &imps).unwrap();
            let back = read_impressions(buf.as_slice()).unwrap();
            prop_assert_eq!(imps, back);
        }
    }
}
