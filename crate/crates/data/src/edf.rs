//! Plain EDF (no EDF+ annotations): fixed-width ASCII headers followed by
//! data records of 16-bit little-endian samples.

use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use crate::error::{io_err, DataError, Result};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version_tag: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_datetime: NaiveDateTime,
    pub header_bytes: usize,
    pub reserved: String,
    pub n_data_records: usize,
    /// Seconds per data record.
    pub record_duration: f64,
    pub n_signals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalSpec {
    fn validate(&self) -> Result<()> {
        if self.digital_min >= self.digital_max {
            return Err(DataError::Calibration(self.label.clone()));
        }
        if self.physical_min == self.physical_max || !self.physical_min.is_finite() || !self.physical_max.is_finite() {
            return Err(DataError::Calibration(self.label.clone()));
        }
        if self.digital_min < i16::MIN as i32 || self.digital_max > i16::MAX as i32 {
            return Err(DataError::Header(format!("{:?}: digital range exceeds 16 bits", self.label)));
        }
        if self.samples_per_record == 0 {
            return Err(DataError::Header(format!("{:?}: zero samples per record", self.label)));
        }
        Ok(())
    }

    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, d: i16) -> f64 {
        self.physical_min + (d as i32 - self.digital_min) as f64 * self.gain()
    }

    /// Nearest representable digital value, clamped to the digital range.
    pub fn to_digital(&self, x: f64) -> i16 {
        let d = ((x - self.physical_min) / self.gain()).round() + self.digital_min as f64;
        d.clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }
}

/// A parsed EDF file; `samples[s]` holds the raw digital samples of signal
/// `s` across all records.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
    pub samples: Vec<Vec<i16>>,
}

/// One calibrated signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub label: String,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl EdfFile {
    /// Build a file from calibrated specs and digital payloads, filling the
    /// derived header fields.
    pub fn new(
        patient_id: &str,
        recording_id: &str,
        start: NaiveDateTime,
        record_duration: f64,
        signals: Vec<SignalSpec>,
        samples: Vec<Vec<i16>>,
    ) -> Result<Self> {
        if signals.len() != samples.len() || signals.is_empty() {
            return Err(DataError::Header("signal specs and payloads disagree".into()));
        }
        let n_records = samples[0].len() / signals[0].samples_per_record;
        for (spec, s) in signals.iter().zip(&samples) {
            spec.validate()?;
            if s.len() != n_records * spec.samples_per_record {
                return Err(DataError::Header(format!("{:?}: payload is not {n_records} whole records", spec.label)));
            }
        }
        let header = EdfHeader {
            version_tag: "0".into(),
            patient_id: patient_id.into(),
            recording_id: recording_id.into(),
            start_datetime: start,
            header_bytes: FIXED_HEADER + SIGNAL_HEADER * signals.len(),
            reserved: String::new(),
            n_data_records: n_records,
            record_duration,
            n_signals: signals.len(),
        };
        Ok(Self { header, signals, samples })
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label)
    }

    pub fn physical(&self, index: usize) -> Vec<f64> {
        let spec = &self.signals[index];
        self.samples[index].iter().map(|&d| spec.to_physical(d)).collect()
    }

    pub fn sample_rate(&self, index: usize) -> f64 {
        self.signals[index].samples_per_record as f64 / self.header.record_duration
    }

    pub fn signal(&self, label: &str) -> Option<Signal> {
        let i = self.find(label)?;
        Some(Signal { label: label.to_string(), sample_rate: self.sample_rate(i), samples: self.physical(i) })
    }

    pub fn duration(&self) -> f64 {
        self.header.n_data_records as f64 * self.header.record_duration
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        write_edf(self)
    }
}

fn field(bytes: &[u8], at: &mut usize, width: usize) -> Result<String> {
    let raw = &bytes[*at..*at + width];
    *at += width;
    if !raw.iter().all(|b| (0x20..0x7f).contains(b)) {
        return Err(DataError::Header("non-ASCII header byte".into()));
    }
    Ok(String::from_utf8_lossy(raw).trim_end().to_string())
}

fn number<T: std::str::FromStr>(text: &str, what: &str) -> Result<T> {
    text.trim().parse().map_err(|_| DataError::Header(format!("{what}: cannot parse {text:?}")))
}

fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime> {
    let part = |s: &str, what| -> Result<Vec<u32>> {
        let v: Vec<u32> = s.split('.').map(|p| number(p, what)).collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(DataError::Header(format!("{what}: expected three dot-separated fields, got {s:?}")));
        }
        Ok(v)
    };
    let (d, t) = (part(date, "start date")?, part(time, "start time")?);
    // two-digit years: 85-99 are 1985-1999, the rest 2000-2084
    let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] } as i32;
    NaiveDate::from_ymd_opt(year, d[1], d[0])
        .and_then(|day| day.and_hms_opt(t[0], t[1], t[2]))
        .ok_or_else(|| DataError::Header(format!("invalid start {date} {time}")))
}

pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    if bytes.len() < FIXED_HEADER {
        return Err(DataError::Truncated { expected: FIXED_HEADER, got: bytes.len() });
    }
    let mut at = 0;
    let version_tag = field(bytes, &mut at, 8)?;
    let patient_id = field(bytes, &mut at, 80)?;
    let recording_id = field(bytes, &mut at, 80)?;
    let date = field(bytes, &mut at, 8)?;
    let time = field(bytes, &mut at, 8)?;
    let header_bytes: usize = number(&field(bytes, &mut at, 8)?, "header bytes")?;
    let reserved = field(bytes, &mut at, 44)?;
    let records: i64 = number(&field(bytes, &mut at, 8)?, "data records")?;
    let record_duration: f64 = number(&field(bytes, &mut at, 8)?, "record duration")?;
    let n_signals: usize = number(&field(bytes, &mut at, 4)?, "signal count")?;

    if records < 0 {
        return Err(DataError::Header(format!("unsupported data record count {records}")));
    }
    if !(record_duration > 0.0 && record_duration.is_finite()) {
        return Err(DataError::Header(format!("record duration {record_duration} must be positive")));
    }
    if n_signals == 0 {
        return Err(DataError::Header("no signals".into()));
    }
    if header_bytes != FIXED_HEADER * (n_signals + 1) {
        return Err(DataError::Header(format!("header bytes {header_bytes} inconsistent with {n_signals} signals")));
    }
    if bytes.len() < header_bytes {
        return Err(DataError::Truncated { expected: header_bytes, got: bytes.len() });
    }
    let start_datetime = parse_start(&date, &time)?;

    let ns = n_signals;
    let mut columns = |width: usize| -> Result<Vec<String>> { (0..ns).map(|_| field(bytes, &mut at, width)).collect() };
    let labels = columns(16)?;
    let transducers = columns(80)?;
    let dims = columns(8)?;
    let pmin = columns(8)?;
    let pmax = columns(8)?;
    let dmin = columns(8)?;
    let dmax = columns(8)?;
    let prefilter = columns(80)?;
    let spr = columns(8)?;
    let sig_reserved = columns(32)?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let spec = SignalSpec {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: number(&pmin[i], "physical minimum")?,
            physical_max: number(&pmax[i], "physical maximum")?,
            digital_min: number(&dmin[i], "digital minimum")?,
            digital_max: number(&dmax[i], "digital maximum")?,
            prefiltering: prefilter[i].clone(),
            samples_per_record: number(&spr[i], "samples per record")?,
            reserved: sig_reserved[i].clone(),
        };
        spec.validate()?;
        signals.push(spec);
    }

    let record_samples: usize = signals.iter().map(|s| s.samples_per_record).sum();
    let records = records as usize;
    let expected = header_bytes + records * record_samples * 2;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::Header(format!("{} bytes past the last data record", bytes.len() - expected)));
    }

    let mut samples: Vec<Vec<i16>> = signals.iter().map(|s| Vec::with_capacity(records * s.samples_per_record)).collect();
    let mut pos = header_bytes;
    for _ in 0..records {
        for (spec, out) in signals.iter().zip(&mut samples) {
            let chunk = &bytes[pos..pos + 2 * spec.samples_per_record];
            out.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += chunk.len();
        }
    }

    let header = EdfHeader {
        version_tag,
        patient_id,
        recording_id,
        start_datetime,
        header_bytes,
        reserved,
        n_data_records: records,
        record_duration,
        n_signals,
    };
    Ok(EdfFile { header, signals, samples })
}

pub fn read_edf(path: &Path) -> Result<EdfFile> {
    parse_edf(&std::fs::read(path).map_err(io_err(path))?)
}

fn put(out: &mut Vec<u8>, text: &str, width: usize) -> Result<()> {
    if text.len() > width || !text.bytes().all(|b| (0x20..0x7f).contains(&b)) {
        return Err(DataError::Header(format!("{text:?} does not fit an ASCII field of {width}")));
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Shortest decimal rendering of `x` that fits 8 characters.
fn short_number(x: f64) -> Result<String> {
    let s = format!("{x}");
    if s.len() <= 8 {
        return Ok(s);
    }
    for p in (0..8).rev() {
        let s = format!("{x:.p$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s.len() <= 8 {
            return Ok(s);
        }
    }
    Err(DataError::Header(format!("{x} does not fit an 8-character field")))
}

pub fn write_edf(f: &EdfFile) -> Result<Vec<u8>> {
    let h = &f.header;
    let ns = f.signals.len();
    if ns != h.n_signals || f.samples.len() != ns {
        return Err(DataError::Header("signal count disagrees with header".into()));
    }
    let record_samples: usize = f.signals.iter().map(|s| s.samples_per_record).sum();
    let mut out = Vec::with_capacity(FIXED_HEADER * (ns + 1) + 2 * record_samples * h.n_data_records);
    let t = h.start_datetime;
    put(&mut out, &h.version_tag, 8)?;
    put(&mut out, &h.patient_id, 80)?;
    put(&mut out, &h.recording_id, 80)?;
    put(&mut out, &format!("{:02}.{:02}.{:02}", t.day(), t.month(), t.year() % 100), 8)?;
    put(&mut out, &format!("{:02}.{:02}.{:02}", t.hour(), t.minute(), t.second()), 8)?;
    put(&mut out, &(FIXED_HEADER * (ns + 1)).to_string(), 8)?;
    put(&mut out, &h.reserved, 44)?;
    put(&mut out, &h.n_data_records.to_string(), 8)?;
    put(&mut out, &short_number(h.record_duration)?, 8)?;
    put(&mut out, &ns.to_string(), 4)?;
    for s in &f.signals {
        put(&mut out, &s.label, 16)?;
    }
    for s in &f.signals {
        put(&mut out, &s.transducer, 80)?;
    }
    for s in &f.signals {
        put(&mut out, &s.physical_dimension, 8)?;
    }
    for s in &f.signals {
        put(&mut out, &short_number(s.physical_min)?, 8)?;
    }
    for s in &f.signals {
        put(&mut out, &short_number(s.physical_max)?, 8)?;
    }
    for s in &f.signals {
        put(&mut out, &s.digital_min.to_string(), 8)?;
    }
    for s in &f.signals {
        put(&mut out, &s.digital_max.to_string(), 8)?;
    }
    for s in &f.signals {
        put(&mut out, &s.prefiltering, 80)?;
    }
    for s in &f.signals {
        put(&mut out, &s.samples_per_record.to_string(), 8)?;
    }
    for s in &f.signals {
        put(&mut out, &s.reserved, 32)?;
    }
    for (s, data) in f.signals.iter().zip(&f.samples) {
        if data.len() != s.samples_per_record * h.n_data_records {
            return Err(DataError::Header(format!("{:?}: payload length {} is not whole records", s.label, data.len())));
        }
    }
    for r in 0..h.n_data_records {
        for (s, data) in f.signals.iter().zip(&f.samples) {
            let n = s.samples_per_record;
            data[r * n..(r + 1) * n].iter().for_each(|d| out.extend_from_slice(&d.to_le_bytes()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_signal() -> EdfFile {
        let spec = SignalSpec {
            label: "C3".into(),
            transducer: "AgAgCl".into(),
            physical_dimension: "uV".into(),
            physical_min: -500.0,
            physical_max: 500.0,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: 4,
            reserved: String::new(),
        };
        let start = NaiveDate::from_ymd_opt(1998, 3, 7).unwrap().and_hms_opt(22, 5, 0).unwrap();
        EdfFile::new("X", "Y", start, 1.0, vec![spec], vec![vec![-32768, 0, 1, 32767, 5, -5, 7, 9]]).unwrap()
    }

    #[test]
    fn header_byte_field_must_match() {
        let mut bytes = one_signal().to_bytes().unwrap();
        assert_eq!(&bytes[184..192], b"512     ");
        assert!(parse_edf(&bytes).is_ok());
        bytes[184..192].copy_from_slice(b"513     ");
        assert!(matches!(parse_edf(&bytes), Err(DataError::Header(_))));
    }

    #[test]
    fn digital_min_maps_to_physical_min() {
        let f = parse_edf(&one_signal().to_bytes().unwrap()).unwrap();
        let x = f.physical(0);
        assert_eq!(x[0], -500.0);
        assert_eq!(f.header.start_datetime.year(), 1998);
        assert_eq!(f.sample_rate(0), 4.0);
    }

    #[test]
    fn rejects_unknown_record_count_and_truncation() {
        let bytes = one_signal().to_bytes().unwrap();
        let mut unknown = bytes.clone();
        unknown[236..244].copy_from_slice(b"-1      ");
        assert!(matches!(parse_edf(&unknown), Err(DataError::Header(_))));
        assert!(matches!(parse_edf(&bytes[..bytes.len() - 1]), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_edf(&bytes[..100]), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn rejects_degenerate_calibration() {
        let mut f = one_signal();
        f.signals[0].digital_max = f.signals[0].digital_min;
        assert!(matches!(f.to_bytes().and_then(|b| parse_edf(&b)), Err(DataError::Calibration(_))));
    }

    #[test]
    fn numbers_fit_their_fields() {
        assert_eq!(short_number(1.0).unwrap(), "1");
        assert_eq!(short_number(-3276.8).unwrap(), "-3276.8");
        assert_eq!(short_number(1.0 / 3.0).unwrap(), "0.333333");
        assert!(short_number(1e12).is_err());
    }
}
