//! QBTT, the click time-tag file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "QBTT"                      4 bytes
//! format version (u16)               2 bytes
//! header length N (u32)              4 bytes
//! JSON header                        N bytes
//! records                            16 bytes each
//! ```
//!
//! A record is `trigger_index: u64 | channel: u8 | pad: [0u8; 3] |
//! delta: u32`, where `delta` is the timestamp in ps relative to the previous
//! record of the same trigger (relative to 0 for the first record of a
//! trigger). A delta that does not fit in a u32 is written as the sentinel
//! `0xFFFF_FFFF` immediately followed by the absolute timestamp as a bare
//! u64 (8 extra bytes).
//!
//! Readers reject malformed input with the byte offset of the first
//! offending byte, so corrupted files can be diagnosed exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const QBTT_MAGIC: [u8; 4] = *b"QBTT";
pub const QBTT_VERSION: u16 = 1;
const DELTA_SENTINEL: u32 = u32::MAX;

/// Hardware channel of a time tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// The 393-nm photomultiplier behind the analyzer.
    Detector393,
    /// The sequence trigger itself.
    Sync,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Detector393 => 0,
            Channel::Sync => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Channel> {
        match code {
            0 => Some(Channel::Detector393),
            1 => Some(Channel::Sync),
            _ => None,
        }
    }
}

/// One detection event, timed in integer picoseconds relative to its
/// sequence trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickRecord {
    pub trigger_index: u64,
    pub channel: Channel,
    pub timestamp_ps: u64,
}

/// JSON header stored in every QBTT file. Unknown keys are preserved-ignored
/// on read so the format can grow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QbttHeader {
    #[serde(default)]
    pub scenario_hash: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_triggers: u64,
    /// Suggested histogram bin width for this stream.
    #[serde(default)]
    pub bin_hint_ns: f64,
}

/// Serialize records to a QBTT stream. Records must arrive grouped by
/// non-decreasing trigger index with non-decreasing timestamps inside each
/// trigger. Returns the number of bytes written.
pub fn write_timetags<W: Write>(
    mut sink: W,
    header: &QbttHeader,
    records: impl IntoIterator<Item = ClickRecord>,
) -> Result<u64> {
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::config(format!("header not serializable: {e}")))?;
    if header_json.len() > u32::MAX as usize {
        return Err(Error::config("header too large".to_string()));
    }
    let io_err = |e: std::io::Error| Error::Io { path: "<sink>".into(), source: e };
    sink.write_all(&QBTT_MAGIC).map_err(io_err)?;
    sink.write_all(&QBTT_VERSION.to_le_bytes()).map_err(io_err)?;
    sink.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    sink.write_all(&header_json).map_err(io_err)?;
    let mut written = 10 + header_json.len() as u64;

    let mut prev: Option<ClickRecord> = None;
    for rec in records {
        let base = match prev {
            Some(p) if p.trigger_index == rec.trigger_index => {
                if rec.timestamp_ps < p.timestamp_ps {
                    return Err(Error::domain(format!(
                        "timestamps regress within trigger {}: {} ps after {} ps",
                        rec.trigger_index, rec.timestamp_ps, p.timestamp_ps
                    )));
                }
                p.timestamp_ps
            }
            Some(p) if p.trigger_index > rec.trigger_index => {
                return Err(Error::domain(format!(
                    "trigger indices regress: {} after {}",
                    rec.trigger_index, p.trigger_index
                )));
            }
            _ => 0,
        };
        let delta = rec.timestamp_ps - base;
        let mut buf = [0u8; 16];
        buf[..8].copy_from_slice(&rec.trigger_index.to_le_bytes());
        buf[8] = rec.channel.code();
        if delta < DELTA_SENTINEL as u64 {
            buf[12..].copy_from_slice(&(delta as u32).to_le_bytes());
            sink.write_all(&buf).map_err(io_err)?;
            written += 16;
        } else {
            buf[12..].copy_from_slice(&DELTA_SENTINEL.to_le_bytes());
            sink.write_all(&buf).map_err(io_err)?;
            sink.write_all(&rec.timestamp_ps.to_le_bytes()).map_err(io_err)?;
            written += 24;
        }
        prev = Some(rec);
    }
    sink.flush().map_err(io_err)?;
    Ok(written)
}

/// Parse a QBTT stream. Malformed input yields a format error carrying the
/// byte offset of the problem.
pub fn read_timetags<R: Read>(source: R) -> Result<(QbttHeader, Vec<ClickRecord>)> {
    let mut reader = OffsetReader { inner: source, offset: 0 };

    let mut magic = [0u8; 4];
    reader.read_exact_at(&mut magic, "magic")?;
    if magic != QBTT_MAGIC {
        return Err(Error::format(0, format!("bad magic {:02x?}, expected \"QBTT\"", magic)));
    }
    let mut version = [0u8; 2];
    reader.read_exact_at(&mut version, "format version")?;
    let version = u16::from_le_bytes(version);
    if version != QBTT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {QBTT_VERSION}")));
    }
    let mut hlen = [0u8; 4];
    reader.read_exact_at(&mut hlen, "header length")?;
    let hlen = u32::from_le_bytes(hlen) as usize;
    let header_offset = reader.offset;
    let mut header_json = vec![0u8; hlen];
    reader.read_exact_at(&mut header_json, "JSON header")?;
    let header: QbttHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::format(header_offset, format!("header is not valid JSON: {e}")))?;

    let mut records = Vec::new();
    let mut prev: Option<ClickRecord> = None;
    loop {
        let record_offset = reader.offset;
        let mut buf = [0u8; 16];
        match reader.read_for_record(&mut buf)? {
            ReadOutcome::Eof => break,
            ReadOutcome::Partial(got) => {
                return Err(Error::format(
                    record_offset,
                    format!("truncated record: got {got} of 16 bytes"),
                ));
            }
            ReadOutcome::Full => {}
        }
        let trigger_index = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let channel = Channel::from_code(buf[8]).ok_or_else(|| {
            Error::format(record_offset + 8, format!("unknown channel code {}", buf[8]))
        })?;
        if buf[9..12] != [0, 0, 0] {
            return Err(Error::format(
                record_offset + 9,
                format!("nonzero record padding {:02x?}", &buf[9..12]),
            ));
        }
        let delta = u32::from_le_bytes(buf[12..].try_into().unwrap());
        let timestamp_ps = if delta == DELTA_SENTINEL {
            let tail_offset = reader.offset;
            let mut wide = [0u8; 8];
            match reader.read_for_record(&mut wide)? {
                ReadOutcome::Full => {}
                ReadOutcome::Eof | ReadOutcome::Partial(_) => {
                    return Err(Error::format(
                        tail_offset,
                        "truncated wide-timestamp record".to_string(),
                    ));
                }
            }
            u64::from_le_bytes(wide)
        } else {
            let base = match prev {
                Some(p) if p.trigger_index == trigger_index => p.timestamp_ps,
                _ => 0,
            };
            base + delta as u64
        };
        if let Some(p) = prev {
            if trigger_index < p.trigger_index {
                return Err(Error::format(
                    record_offset,
                    format!("trigger indices regress: {} after {}", trigger_index, p.trigger_index),
                ));
            }
            if trigger_index == p.trigger_index && timestamp_ps < p.timestamp_ps {
                return Err(Error::format(
                    record_offset,
                    format!(
                        "timestamps regress within trigger {trigger_index}: {timestamp_ps} ps after {} ps",
                        p.timestamp_ps
                    ),
                ));
            }
        }
        let rec = ClickRecord { trigger_index, channel, timestamp_ps };
        records.push(rec);
        prev = Some(rec);
    }
    Ok((header, records))
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

enum ReadOutcome {
    Full,
    Partial(usize),
    Eof,
}

impl<R: Read> OffsetReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.read_for_record(buf)? {
            ReadOutcome::Full => Ok(()),
            ReadOutcome::Partial(got) => Err(Error::format(
                self.offset - got as u64,
                format!("truncated {what}: got {got} of {} bytes", buf.len()),
            )),
            ReadOutcome::Eof => {
                Err(Error::format(self.offset, format!("missing {what}: unexpected end of file")))
            }
        }
    }

    /// Fill `buf` completely, reporting clean EOF (no bytes) separately from
    /// a torn read.
    fn read_for_record(&mut self, buf: &mut [u8]) -> Result<ReadOutcome> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    self.offset += got as u64;
                    return Ok(if got == 0 { ReadOutcome::Eof } else { ReadOutcome::Partial(got) });
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Io { path: "<source>".into(), source: e }),
            }
        }
        self.offset += got as u64;
        Ok(ReadOutcome::Full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(records: &[ClickRecord]) -> (QbttHeader, Vec<ClickRecord>) {
        let header = QbttHeader {
            scenario_hash: "abc123".into(),
            seed: 7,
            n_triggers: 100,
            bin_hint_ns: 2.0,
        };
        let mut buf = Vec::new();
        write_timetags(&mut buf, &header, records.iter().copied()).unwrap();
        read_timetags(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_stream_is_exactly_preamble_plus_header() {
        let header = QbttHeader::default();
        let json_len = serde_json::to_vec(&header).unwrap().len();
        let mut buf = Vec::new();
        let written = write_timetags(&mut buf, &header, std::iter::empty()).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 4 + json_len);
        assert_eq!(written as usize, buf.len());
        let (h, recs) = read_timetags(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert!(recs.is_empty());
    }

    #[test]
    fn roundtrip_preserves_records_and_header() {
        let records = vec![
            ClickRecord { trigger_index: 0, channel: Channel::Sync, timestamp_ps: 0 },
            ClickRecord { trigger_index: 0, channel: Channel::Detector393, timestamp_ps: 5_123 },
            ClickRecord { trigger_index: 0, channel: Channel::Detector393, timestamp_ps: 5_123 },
            ClickRecord { trigger_index: 3, channel: Channel::Detector393, timestamp_ps: 999 },
            ClickRecord { trigger_index: 4, channel: Channel::Detector393, timestamp_ps: 1 },
        ];
        let (header, got) = roundtrip(&records);
        assert_eq!(got, records);
        assert_eq!(header.seed, 7);
    }

    #[test]
    fn wide_timestamps_survive_the_sentinel_path() {
        let records = vec![
            ClickRecord { trigger_index: 1, channel: Channel::Detector393, timestamp_ps: 2 },
            // delta beyond u32 within the same trigger
            ClickRecord {
                trigger_index: 1,
                channel: Channel::Detector393,
                timestamp_ps: 2 + u32::MAX as u64 + 17,
            },
            // first record of a trigger already out of u32 range
            ClickRecord { trigger_index: 2, channel: Channel::Detector393, timestamp_ps: u64::MAX / 3 },
        ];
        let (_, got) = roundtrip(&records);
        assert_eq!(got, records);
    }

    #[test]
    fn large_stream_roundtrips_bitwise() {
        // deterministic synthetic generator, ~1e6 records
        let mut records = Vec::with_capacity(1_000_000);
        let mut state = 0x2545_F491_4F6C_DD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for trigger in 0..500_000u64 {
            let t1 = next() % 2_000_000;
            records.push(ClickRecord {
                trigger_index: trigger,
                channel: Channel::Detector393,
                timestamp_ps: t1,
            });
            records.push(ClickRecord {
                trigger_index: trigger,
                channel: Channel::Detector393,
                timestamp_ps: t1 + next() % 10_000_000,
            });
        }
        let header = QbttHeader::default();
        let mut buf = Vec::new();
        write_timetags(&mut buf, &header, records.iter().copied()).unwrap();
        let mut buf2 = Vec::new();
        write_timetags(&mut buf2, &header, records.iter().copied()).unwrap();
        assert_eq!(buf, buf2, "writer must be deterministic");
        let (_, got) = read_timetags(buf.as_slice()).unwrap();
        assert_eq!(got.len(), records.len());
        assert_eq!(got, records);
    }

    #[test]
    fn bad_magic_is_reported_at_offset_zero() {
        let err = read_timetags(&b"QXTT\x01\x00"[..]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_version_is_reported_at_offset_four() {
        let mut buf = Vec::new();
        write_timetags(&mut buf, &QbttHeader::default(), std::iter::empty()).unwrap();
        buf[4] = 0xEE;
        match read_timetags(buf.as_slice()).unwrap_err() {
            Error::Format { offset, message } => {
                assert_eq!(offset, 4);
                assert!(message.contains("version"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_record_names_its_offset() {
        let records = vec![ClickRecord {
            trigger_index: 9,
            channel: Channel::Detector393,
            timestamp_ps: 50,
        }];
        let header = QbttHeader::default();
        let mut buf = Vec::new();
        write_timetags(&mut buf, &header, records.iter().copied()).unwrap();
        let record_offset = (buf.len() - 16) as u64;
        buf.truncate(buf.len() - 5); // tear the record
        match read_timetags(buf.as_slice()).unwrap_err() {
            Error::Format { offset, message } => {
                assert_eq!(offset, record_offset);
                assert!(message.contains("truncated record"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_channel_and_padding_report_exact_offsets() {
        let records = vec![ClickRecord {
            trigger_index: 0,
            channel: Channel::Detector393,
            timestamp_ps: 1,
        }];
        let mut buf = Vec::new();
        write_timetags(&mut buf, &QbttHeader::default(), records.iter().copied()).unwrap();
        let rec = buf.len() - 16;

        let mut bad_channel = buf.clone();
        bad_channel[rec + 8] = 42;
        match read_timetags(bad_channel.as_slice()).unwrap_err() {
            Error::Format { offset, message } => {
                assert_eq!(offset, (rec + 8) as u64);
                assert!(message.contains("channel code 42"));
            }
            other => panic!("unexpected error {other:?}"),
        }

        let mut bad_pad = buf.clone();
        bad_pad[rec + 10] = 1;
        match read_timetags(bad_pad.as_slice()).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, (rec + 9) as u64),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corrupt_header_json_is_reported_at_header_offset() {
        let mut buf = Vec::new();
        write_timetags(&mut buf, &QbttHeader::default(), std::iter::empty()).unwrap();
        buf[10] = b'}'; // break the JSON
        match read_timetags(buf.as_slice()).unwrap_err() {
            Error::Format { offset, message } => {
                assert_eq!(offset, 10);
                assert!(message.contains("JSON"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn writer_rejects_disordered_input() {
        let header = QbttHeader::default();
        let backwards_triggers = vec![
            ClickRecord { trigger_index: 2, channel: Channel::Detector393, timestamp_ps: 1 },
            ClickRecord { trigger_index: 1, channel: Channel::Detector393, timestamp_ps: 1 },
        ];
        assert!(write_timetags(Vec::new(), &header, backwards_triggers).is_err());
        let backwards_times = vec![
            ClickRecord { trigger_index: 1, channel: Channel::Detector393, timestamp_ps: 10 },
            ClickRecord { trigger_index: 1, channel: Channel::Detector393, timestamp_ps: 9 },
        ];
        assert!(write_timetags(Vec::new(), &header, backwards_times).is_err());
    }
}
