//! Day-record dataset: file format, cross-strategy target conversion, and
//! training-sample assembly.
//!
//! Records travel as delimited text, one campaign-day per line:
//!
//! ```text
//! campaign_id,day,strategy,target_value,cost,gmv,avg_pcvr,listed_price
//! ```

use super::IeformerError;
use crate::auction::Strategy;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

pub const DAY_RECORD_HEADER: &str =
    "campaign_id,day,strategy,target_value,cost,gmv,avg_pcvr,listed_price";

/// Weight given to samples converted from non-tCPA strategies.
pub const AUGMENTED_WEIGHT: f64 = 0.1;

/// One campaign-day of logged bidding outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct DayRecord {
    pub campaign_id: u64,
    pub day: u32,
    pub strategy: Strategy,
    /// tCPA, tROI, or tCPC value depending on `strategy`.
    pub target_value: f64,
    pub cost: f64,
    pub gmv: f64,
    /// Campaign-average conversion rate (used for tCPC conversion).
    pub avg_pcvr: f64,
    /// Listed item price (used for tROI conversion).
    pub listed_price: f64,
}

/// tCPA-equivalent target plus its training weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvertedTarget {
    pub tcpa: f64,
    pub weight: f64,
}

/// Converts a tROI or tCPC record to an equivalent tCPA sample at weight 0.1
/// via the shared eCPM identity: tCPA = ppay/tROI = tCPC/pCVR, with ppay
/// instantiated by the listed price and pCVR by the campaign average.
pub fn convert_to_tcpa(record: &DayRecord) -> Result<ConvertedTarget, IeformerError> {
    let reject = |reason: String| IeformerError::RecordRejected {
        campaign_id: record.campaign_id,
        day: record.day,
        reason,
    };
    let tcpa = match record.strategy {
        Strategy::TCpa => {
            return Err(reject("convert_to_tcpa expects a tROI or tCPC record".into()))
        }
        Strategy::TRoi => {
            if !(record.target_value > 0.0) {
                return Err(reject(format!("tROI {} not positive", record.target_value)));
            }
            record.listed_price / record.target_value
        }
        Strategy::TCpc => {
            if !(record.avg_pcvr > 0.0) {
                return Err(reject(format!("avg pCVR {} not positive", record.avg_pcvr)));
            }
            record.target_value / record.avg_pcvr
        }
    };
    if !(tcpa > 0.0 && tcpa.is_finite()) {
        return Err(reject(format!("converted tCPA {tcpa} not positive")));
    }
    Ok(ConvertedTarget { tcpa, weight: AUGMENTED_WEIGHT })
}

/// tCPA-equivalent target for any record; native records keep weight 1.
pub fn record_target(record: &DayRecord) -> Result<ConvertedTarget, IeformerError> {
    match record.strategy {
        Strategy::TCpa => {
            if !(record.target_value > 0.0) {
                return Err(IeformerError::RecordRejected {
                    campaign_id: record.campaign_id,
                    day: record.day,
                    reason: format!("tCPA {} not positive", record.target_value),
                });
            }
            Ok(ConvertedTarget { tcpa: record.target_value, weight: 1.0 })
        }
        _ => convert_to_tcpa(record),
    }
}

/// One day of campaign history as seen by the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryDay {
    pub cost: f64,
    pub tcpa: f64,
    pub strategy: Strategy,
}

/// Supervised pair: campaign history, observed cost, tCPA-equivalent target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub campaign_id: u64,
    pub day: u32,
    pub history: Vec<HistoryDay>,
    pub cost: f64,
    pub target_tcpa: f64,
    pub weight: f64,
}

impl TrainingSample {
    pub fn is_native(&self) -> bool {
        self.weight == 1.0
    }
}

/// Assembles training samples from day records. History for a sample is the
/// campaign's earlier days (most recent `max_history`), each converted to its
/// tCPA equivalent. Unconvertible records are dropped with a warning. With
/// `use_augmented` off, converted (non-tCPA) samples are excluded from the
/// supervised set but still appear in histories.
pub fn build_samples(
    records: &[DayRecord],
    max_history: usize,
    use_augmented: bool,
) -> (Vec<TrainingSample>, Vec<String>) {
    let mut by_campaign: BTreeMap<u64, Vec<&DayRecord>> = BTreeMap::new();
    for r in records {
        by_campaign.entry(r.campaign_id).or_default().push(r);
    }
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for (campaign_id, mut days) in by_campaign {
        days.sort_by_key(|r| r.day);
        let mut history: Vec<HistoryDay> = Vec::new();
        for record in days {
            match record_target(record) {
                Ok(target) => {
                    if use_augmented || record.strategy == Strategy::TCpa {
                        let start = history.len().saturating_sub(max_history);
                        samples.push(TrainingSample {
                            campaign_id,
                            day: record.day,
                            history: history[start..].to_vec(),
                            cost: record.cost,
                            target_tcpa: target.tcpa,
                            weight: target.weight,
                        });
                    }
                    history.push(HistoryDay {
                        cost: record.cost,
                        tcpa: target.tcpa,
                        strategy: record.strategy,
                    });
                }
                Err(e) => warnings.push(e.to_string()),
            }
        }
    }
    (samples, warnings)
}

/// Splits samples into train and held-out sets; the held-out set is the last
/// day per campaign, restricted to native tCPA samples.
pub fn split_last_day(samples: Vec<TrainingSample>) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    let mut last_day: BTreeMap<u64, u32> = BTreeMap::new();
    for s in &samples {
        let e = last_day.entry(s.campaign_id).or_insert(s.day);
        if s.day > *e {
            *e = s.day;
        }
    }
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for s in samples {
        if s.day == last_day[&s.campaign_id] && s.is_native() {
            heldout.push(s);
        } else if s.day != last_day[&s.campaign_id] {
            train.push(s);
        }
        // Non-native samples on the last day are dropped: they belong to
        // neither the train window nor the native evaluation set.
    }
    (train, heldout)
}

pub fn write_day_records<W: Write>(mut w: W, records: &[DayRecord]) -> Result<(), IeformerError> {
    let io_err = |e: std::io::Error| IeformerError::Io(e.to_string());
    writeln!(w, "{DAY_RECORD_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.campaign_id, r.day, r.strategy, r.target_value, r.cost, r.gmv, r.avg_pcvr, r.listed_price
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn read_day_records<R: Read>(r: R) -> Result<Vec<DayRecord>, IeformerError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == DAY_RECORD_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(IeformerError::Csv {
                line: 1,
                message: format!("expected header '{DAY_RECORD_HEADER}', got '{h}'"),
            })
        }
        Some((_, Err(e))) => return Err(IeformerError::Io(e.to_string())),
        None => return Err(IeformerError::Csv { line: 1, message: "empty dataset".into() }),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| IeformerError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(IeformerError::Csv {
                line: lineno,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str| IeformerError::Csv { line: lineno, message: format!("bad {what}") };
        out.push(DayRecord {
            campaign_id: fields[0].parse().map_err(|_| bad("campaign_id"))?,
            day: fields[1].parse().map_err(|_| bad("day"))?,
            strategy: Strategy::parse(fields[2]).ok_or_else(|| bad("strategy"))?,
            target_value: fields[3].parse().map_err(|_| bad("target_value"))?,
            cost: fields[4].parse().map_err(|_| bad("cost"))?,
            gmv: fields[5].parse().map_err(|_| bad("gmv"))?,
            avg_pcvr: fields[6].parse().map_err(|_| bad("avg_pcvr"))?,
            listed_price: fields[7].parse().map_err(|_| bad("listed_price"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Strategy;
    use proptest::prelude::*;

    fn record(strategy: Strategy, target_value: f64) -> DayRecord {
        DayRecord {
            campaign_id: 7,
            day: 3,
            strategy,
            target_value,
            cost: 120.0,
            gmv: 300.0,
            avg_pcvr: 0.04,
            listed_price: 100.0,
        }
    }

    #[test]
    fn troi_conversion_divides_listed_price() {
        let c = convert_to_tcpa(&record(Strategy::TRoi, 5.0)).unwrap();
        assert_eq!(c.tcpa, 20.0);
        assert_eq!(c.weight, 0.1);
    }

    #[test]
    fn tcpc_conversion_divides_by_average_pcvr() {
        let c = convert_to_tcpa(&record(Strategy::TCpc, 2.0)).unwrap();
        assert_eq!(c.tcpa, 50.0);
        assert_eq!(c.weight, 0.1);
    }

    #[test]
    fn zero_troi_is_rejected() {
        assert!(convert_to_tcpa(&record(Strategy::TRoi, 0.0)).is_err());
    }

    #[test]
    fn zero_pcvr_is_rejected() {
        let mut r = record(Strategy::TCpc, 2.0);
        r.avg_pcvr = 0.0;
        assert!(convert_to_tcpa(&r).is_err());
    }

    #[test]
    fn native_records_are_not_convertible() {
        assert!(convert_to_tcpa(&record(Strategy::TCpa, 30.0)).is_err());
        let t = record_target(&record(Strategy::TCpa, 30.0)).unwrap();
        assert_eq!(t.tcpa, 30.0);
        assert_eq!(t.weight, 1.0);
    }

    proptest! {
        /// Round-trip consistency: a tROI record built with tROI = ppay/tCPA
        /// converts back to the original tCPA exactly (up to fp division).
        #[test]
        fn troi_round_trip_recovers_native_tcpa(tcpa in 0.5f64..500.0, ppay in 1.0f64..1e4) {
            let mut r = record(Strategy::TRoi, ppay / tcpa);
            r.listed_price = ppay;
            let c = convert_to_tcpa(&r).unwrap();
            prop_assert!((c.tcpa - tcpa).abs() <= 1e-12 * tcpa);
        }
    }

    fn mini_records() -> Vec<DayRecord> {
        vec![
            DayRecord { campaign_id: 1, day: 1, strategy: Strategy::TCpa, target_value: 30.0, cost: 100.0, gmv: 200.0, avg_pcvr: 0.05, listed_price: 80.0 },
            DayRecord { campaign_id: 1, day: 2, strategy: Strategy::TRoi, target_value: 4.0, cost: 150.0, gmv: 260.0, avg_pcvr: 0.05, listed_price: 80.0 },
            DayRecord { campaign_id: 1, day: 3, strategy: Strategy::TCpa, target_value: 34.0, cost: 180.0, gmv: 300.0, avg_pcvr: 0.05, listed_price: 80.0 },
            DayRecord { campaign_id: 2, day: 1, strategy: Strategy::TCpc, target_value: 1.5, cost: 60.0, gmv: 90.0, avg_pcvr: 0.03, listed_price: 50.0 },
            DayRecord { campaign_id: 2, day: 2, strategy: Strategy::TCpa, target_value: 45.0, cost: 90.0, gmv: 120.0, avg_pcvr: 0.03, listed_price: 50.0 },
        ]
    }

    #[test]
    fn histories_grow_within_each_campaign() {
        let (samples, warnings) = build_samples(&mini_records(), 28, true);
        assert!(warnings.is_empty());
        assert_eq!(samples.len(), 5);
        let c1: Vec<_> = samples.iter().filter(|s| s.campaign_id == 1).collect();
        assert_eq!(c1[0].history.len(), 0);
        assert_eq!(c1[1].history.len(), 1);
        assert_eq!(c1[2].history.len(), 2);
        // The tROI day enters history with its converted tCPA (80/4 = 20).
        assert_eq!(c1[2].history[1].tcpa, 20.0);
    }

    #[test]
    fn augmentation_toggle_drops_converted_samples_but_keeps_history() {
        let (samples, _) = build_samples(&mini_records(), 28, false);
        assert_eq!(samples.len(), 3); // only the native tCPA days
        assert!(samples.iter().all(|s| s.is_native()));
        let c1_last = samples.iter().find(|s| s.campaign_id == 1 && s.day == 3).unwrap();
        assert_eq!(c1_last.history.len(), 2); // tROI day still visible as history
    }

    #[test]
    fn history_window_is_bounded() {
        let mut records = Vec::new();
        for day in 1..=40 {
            records.push(DayRecord {
                campaign_id: 9,
                day,
                strategy: Strategy::TCpa,
                target_value: 20.0 + day as f64,
                cost: 100.0,
                gmv: 100.0,
                avg_pcvr: 0.05,
                listed_price: 10.0,
            });
        }
        let (samples, _) = build_samples(&records, 28, true);
        assert_eq!(samples.last().unwrap().history.len(), 28);
    }

    #[test]
    fn split_holds_out_last_day_per_campaign() {
        let (samples, _) = build_samples(&mini_records(), 28, true);
        let (train, heldout) = split_last_day(samples);
        assert_eq!(heldout.len(), 2);
        assert!(heldout.iter().all(|s| s.is_native()));
        assert!(heldout.iter().any(|s| s.campaign_id == 1 && s.day == 3));
        assert!(heldout.iter().any(|s| s.campaign_id == 2 && s.day == 2));
        assert_eq!(train.len(), 3);
    }

    #[test]
    fn day_record_file_round_trips() {
        let records = mini_records();
        let mut buf = Vec::new();
        write_day_records(&mut buf, &records).unwrap();
        let back = read_day_records(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn day_record_reader_rejects_bad_input() {
        assert!(read_day_records("nope\n".as_bytes()).is_err());
        let text = format!("{DAY_RECORD_HEADER}\n1,2,tCPA,30\n");
        assert!(matches!(
            read_day_records(text.as_bytes()).unwrap_err(),
            IeformerError::Csv { line: 2, .. }
        ));
    }
}
