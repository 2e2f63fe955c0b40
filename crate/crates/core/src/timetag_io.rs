//! Tag stream serialization.
//!
//! The `.ttg` layout is little-endian throughout:
//!
//! ```text
//! header (20 bytes)
//!   0..4    magic  "TTG1"
//!   4..6    u16    version (1)
//!   6..8    u16    channel count (4)
//!   8..12   u32    time unit, ps per LSB (1)
//!   12..20  u64    record count
//! record (16 bytes each)
//!   0       u8     channel (0 row_pos, 1 row_neg, 2 col_pos, 3 col_neg)
//!   1..8    -      reserved, zero
//!   8..16   i64    timestamp, ps
//! ```
//!
//! CSV tags use a `channel,timestamp_ps` header with channel names.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::ops::Range;

use crate::bus::{Channel, Tag};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TTG1";
pub const VERSION: u16 = 1;
pub const CHANNEL_COUNT: u16 = 4;
pub const TIME_UNIT_PS: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub version: u16,
    pub channel_count: u16,
    pub time_unit_ps: u32,
    pub record_count: u64,
}

impl TagFileHeader {
    pub fn new(record_count: u64) -> Self {
        Self {
            version: VERSION,
            channel_count: CHANNEL_COUNT,
            time_unit_ps: TIME_UNIT_PS,
            record_count,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.channel_count.to_le_bytes());
        b[8..12].copy_from_slice(&self.time_unit_ps.to_le_bytes());
        b[12..20].copy_from_slice(&self.record_count.to_le_bytes());
        b
    }

    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                message: format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len()),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad magic {:02x?}, expected \"TTG1\"", &bytes[0..4]),
            });
        }
        let header = Self {
            version: u16::from_le_bytes([bytes[4], bytes[5]]),
            channel_count: u16::from_le_bytes([bytes[6], bytes[7]]),
            time_unit_ps: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
            record_count: u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")),
        };
        if header.version != VERSION {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unsupported version {}", header.version),
            });
        }
        if header.channel_count != CHANNEL_COUNT {
            return Err(Error::Parse {
                offset: 6,
                message: format!("channel count {} (expected 4)", header.channel_count),
            });
        }
        if header.time_unit_ps != TIME_UNIT_PS {
            return Err(Error::Parse {
                offset: 8,
                message: format!("time unit {} ps (expected 1)", header.time_unit_ps),
            });
        }
        Ok(header)
    }
}

/// Checks that each channel's timestamps are non-decreasing.
pub fn check_sorted_per_channel(tags: &[Tag]) -> Result<()> {
    let mut last = [i64::MIN; 4];
    for (i, t) in tags.iter().enumerate() {
        let slot = &mut last[t.channel.code() as usize];
        if t.time_ps < *slot {
            return Err(Error::Data(format!(
                "tag {i} on {} goes back in time ({} < {})",
                t.channel.name(),
                t.time_ps,
                slot
            )));
        }
        *slot = t.time_ps;
    }
    Ok(())
}

/// Writes `tags` as a `.ttg` stream; returns the byte count.
pub fn write_tags<W: Write>(tags: &[Tag], mut dest: W) -> Result<u64> {
    check_sorted_per_channel(tags)?;
    dest.write_all(&TagFileHeader::new(tags.len() as u64).to_bytes())?;
    let mut record = [0u8; RECORD_LEN];
    for t in tags {
        record[0] = t.channel.code();
        record[8..16].copy_from_slice(&t.time_ps.to_le_bytes());
        dest.write_all(&record)?;
    }
    dest.flush()?;
    Ok((HEADER_LEN + RECORD_LEN * tags.len()) as u64)
}

/// Reads a complete `.ttg` stream.
pub fn read_tags<R: Read>(mut source: R) -> Result<Vec<Tag>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let view = TagFileView::new(&bytes)?;
    view.records(0..view.len())
}

/// Validated, borrow-only view of `.ttg` bytes. Records can be decoded in
/// independent ranges, so chunks may be read from several threads.
#[derive(Debug, Clone, Copy)]
pub struct TagFileView<'a> {
    header: TagFileHeader,
    body: &'a [u8],
}

impl<'a> TagFileView<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let header = TagFileHeader::parse(bytes)?;
        let body = &bytes[HEADER_LEN..];
        let expected = header
            .record_count
            .checked_mul(RECORD_LEN as u64)
            .ok_or_else(|| Error::Parse {
                offset: 12,
                message: "record count overflows".into(),
            })?;
        if body.len() as u64 != expected {
            let kind = if (body.len() as u64) < expected { "truncated" } else { "trailing data in" };
            return Err(Error::Parse {
                offset: (HEADER_LEN + body.len()) as u64,
                message: format!(
                    "{kind} file: expected {} bytes for {} records, found {}",
                    HEADER_LEN as u64 + expected,
                    header.record_count,
                    HEADER_LEN + body.len()
                ),
            });
        }
        Ok(Self { header, body })
    }

    pub fn header(&self) -> TagFileHeader {
        self.header
    }

    pub fn len(&self) -> usize {
        self.header.record_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&self, index: usize) -> Result<Tag> {
        let offset = index * RECORD_LEN;
        let rec = self.body.get(offset..offset + RECORD_LEN).ok_or_else(|| Error::Parse {
            offset: (HEADER_LEN + offset) as u64,
            message: format!("record {index} out of range"),
        })?;
        let file_offset = (HEADER_LEN + offset) as u64;
        let channel = Channel::from_code(rec[0]).ok_or_else(|| Error::Parse {
            offset: file_offset,
            message: format!("invalid channel {}", rec[0]),
        })?;
        if rec[1..8].iter().any(|&b| b != 0) {
            return Err(Error::Parse {
                offset: file_offset + 1,
                message: "reserved bytes are not zero".into(),
            });
        }
        Ok(Tag {
            channel,
            time_ps: i64::from_le_bytes(rec[8..16].try_into().expect("8 bytes")),
        })
    }

    pub fn records(&self, range: Range<usize>) -> Result<Vec<Tag>> {
        range.map(|i| self.record(i)).collect()
    }
}

/// Writes tags as CSV (`channel,timestamp_ps`).
pub fn write_tags_csv<W: Write>(tags: &[Tag], dest: W) -> Result<()> {
    check_sorted_per_channel(tags)?;
    let mut w = csv::Writer::from_writer(dest);
    w.write_record(["channel", "timestamp_ps"])?;
    for t in tags {
        w.write_record([t.channel.name(), &t.time_ps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV tags; channels may be given by name or numeric code.
pub fn read_tags_csv<R: Read>(source: R) -> Result<Vec<Tag>> {
    let mut r = csv::Reader::from_reader(source);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "channel" || &headers[1] != "timestamp_ps" {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected header `channel,timestamp_ps`, got {:?}", headers),
        });
    }
    let mut tags = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let field = rec.get(0).unwrap_or_default().trim();
        let channel = Channel::from_name(field)
            .or_else(|| field.parse::<u8>().ok().and_then(Channel::from_code))
            .ok_or_else(|| Error::Parse {
                offset,
                message: format!("invalid channel `{field}`"),
            })?;
        let time_ps = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse::<i64>()
            .map_err(|e| Error::Parse {
                offset,
                message: format!("bad timestamp: {e}"),
            })?;
        tags.push(Tag { channel, time_ps });
    }
    Ok(tags)
}

/// Merges time-sorted streams into one; equal timestamps keep stream order.
pub fn merge_streams(streams: &[Vec<Tag>]) -> Result<Vec<Tag>> {
    for (s, stream) in streams.iter().enumerate() {
        if let Some(i) = stream.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
            return Err(Error::Data(format!("stream {s} is not time sorted at record {}", i + 1)));
        }
    }
    let total = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut heap: BinaryHeap<Reverse<(i64, usize, usize)>> = streams
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(s, stream)| Reverse((stream[0].time_ps, s, 0)))
        .collect();
    while let Some(Reverse((_, s, i))) = heap.pop() {
        out.push(streams[s][i]);
        if let Some(next) = streams[s].get(i + 1) {
            heap.push(Reverse((next.time_ps, s, i + 1)));
        }
    }
    Ok(out)
}

/// Tags of one channel, in stream order.
pub fn channel_times(tags: &[Tag], channel: Channel) -> Vec<i64> {
    tags.iter().filter(|t| t.channel == channel).map(|t| t.time_ps).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag(c: Channel, t: i64) -> Tag {
        Tag { channel: c, time_ps: t }
    }

    #[test]
    fn empty_stream_is_header_only() {
        let mut buf = Vec::new();
        assert_eq!(write_tags(&[], &mut buf).unwrap(), 20);
        assert_eq!(buf.len(), 20);
        assert_eq!(&buf[0..4], b"TTG1");
        assert_eq!(&buf[12..20], &[0u8; 8]);
        assert!(read_tags(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn single_record_layout() {
        let mut buf = Vec::new();
        assert_eq!(write_tags(&[tag(Channel::ColPos, 1000)], &mut buf).unwrap(), 36);
        assert_eq!(
            &buf[..20],
            &[b'T', b'T', b'G', b'1', 1, 0, 4, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(&buf[20..], &[2, 0, 0, 0, 0, 0, 0, 0, 0xE8, 0x03, 0, 0, 0, 0, 0, 0]);
        assert_eq!(read_tags(&buf[..]).unwrap(), vec![tag(Channel::ColPos, 1000)]);
    }

    #[test]
    fn corrupted_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        write_tags(&[tag(Channel::RowPos, 5)], &mut buf).unwrap();
        buf[1] = b'X';
        match read_tags(&buf[..]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_names_lengths() {
        let mut buf = Vec::new();
        write_tags(&[tag(Channel::RowPos, 5), tag(Channel::RowNeg, 6)], &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        match read_tags(&buf[..]) {
            Err(Error::Parse { message, .. }) => {
                assert!(message.contains("expected 52"), "{message}");
                assert!(message.contains("found 47"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_channel_and_reserved_bytes() {
        let mut buf = Vec::new();
        write_tags(&[tag(Channel::RowPos, 5)], &mut buf).unwrap();
        let mut bad_channel = buf.clone();
        bad_channel[20] = 7;
        assert!(matches!(read_tags(&bad_channel[..]), Err(Error::Parse { offset: 20, .. })));
        let mut bad_reserved = buf.clone();
        bad_reserved[23] = 1;
        assert!(matches!(read_tags(&bad_reserved[..]), Err(Error::Parse { offset: 21, .. })));
        let mut bad_version = buf;
        bad_version[4] = 2;
        assert!(matches!(read_tags(&bad_version[..]), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn unsorted_channel_is_rejected_on_write() {
        let tags = [tag(Channel::RowPos, 10), tag(Channel::RowNeg, 3), tag(Channel::RowPos, 9)];
        assert!(matches!(write_tags(&tags, Vec::new()), Err(Error::Data(_))));
        // interleaved channels may be out of global order
        let ok = [tag(Channel::RowPos, 10), tag(Channel::RowNeg, 3)];
        write_tags(&ok, Vec::new()).unwrap();
    }

    #[test]
    fn csv_round_trip_accepts_codes() {
        let tags = vec![tag(Channel::RowNeg, -4), tag(Channel::ColNeg, 77)];
        let mut buf = Vec::new();
        write_tags_csv(&tags, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "channel,timestamp_ps\nrow_neg,-4\ncol_neg,77\n");
        assert_eq!(read_tags_csv(&buf[..]).unwrap(), tags);
        let numeric = "channel,timestamp_ps\n2,15\n";
        assert_eq!(read_tags_csv(numeric.as_bytes()).unwrap(), vec![tag(Channel::ColPos, 15)]);
        assert!(read_tags_csv("channel,timestamp_ps\nfoo,1\n".as_bytes()).is_err());
        assert!(read_tags_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn merge_examples() {
        let a = vec![tag(Channel::RowPos, 1), tag(Channel::RowPos, 5), tag(Channel::RowPos, 9)];
        let b = vec![tag(Channel::ColPos, 2), tag(Channel::ColPos, 5), tag(Channel::ColPos, 20)];
        assert_eq!(merge_streams(std::slice::from_ref(&a)).unwrap(), a);
        let merged = merge_streams(&[a.clone(), b.clone()]).unwrap();
        let times: Vec<i64> = merged.iter().map(|t| t.time_ps).collect();
        assert_eq!(times, vec![1, 2, 5, 5, 9, 20]);
        // tie at 5: first stream first
        assert_eq!(merged[2].channel, Channel::RowPos);
        assert_eq!(merged[3].channel, Channel::ColPos);
        let unsorted = vec![tag(Channel::RowPos, 3), tag(Channel::RowPos, 1)];
        assert!(merge_streams(&[a, unsorted]).is_err());
    }

    #[test]
    fn view_reads_chunks() {
        let tags: Vec<Tag> = (0..100).map(|i| tag(Channel::ALL[i % 4], i as i64 * 3)).collect();
        let mut buf = Vec::new();
        write_tags(&tags, &mut buf).unwrap();
        let view = TagFileView::new(&buf).unwrap();
        assert_eq!(view.len(), 100);
        let chunks: Vec<Tag> = [0..30, 30..77, 77..100]
            .into_iter()
            .flat_map(|r| view.records(r).unwrap())
            .collect();
        assert_eq!(chunks, tags);
    }

    fn arb_sorted_stream() -> impl Strategy<Value = Vec<Tag>> {
        prop::collection::vec((0u8..4, -1_000_000i64..1_000_000_000), 0..300).prop_map(|mut v| {
            v.sort_by_key(|&(_, t)| t);
            v.into_iter()
                .map(|(c, t)| tag(Channel::from_code(c).unwrap(), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip(tags in arb_sorted_stream()) {
            let mut buf = Vec::new();
            let n = write_tags(&tags, &mut buf).unwrap();
            prop_assert_eq!(n as usize, buf.len());
            prop_assert_eq!(buf.len(), 20 + 16 * tags.len());
            prop_assert_eq!(read_tags(&buf[..]).unwrap(), tags);
        }

        #[test]
        fn merge_agrees_with_stable_sort(a in arb_sorted_stream(), b in arb_sorted_stream(), c in arb_sorted_stream()) {
            let merged = merge_streams(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let mut concat: Vec<Tag> = a.iter().chain(&b).chain(&c).copied().collect();
            concat.sort_by_key(|t| t.time_ps);
            prop_assert_eq!(&merged, &concat);
            let ab = merge_streams(&[a.clone(), b.clone()]).unwrap();
            prop_assert_eq!(merge_streams(&[ab, c]).unwrap(), merged);
        }
    }
}
