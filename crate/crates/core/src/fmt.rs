use std::io::{self, Write};

use chrono::{DateTime, Datelike, Timelike, Utc};

/// Writes `ts` as `YYYY-MM-DDTHH:MM:SS.mmmZ`.
pub(crate) fn write_timestamp<W: Write + ?Sized>(w: &mut W, ts: &DateTime<Utc>) -> io::Result<()> {
    let mut buf = [0u8; 24];
    fill_timestamp(&mut buf, ts);
    w.write_all(&buf)
}

#[cfg(test)]
pub(crate) fn timestamp_string(ts: &DateTime<Utc>) -> String {
    let mut buf = [0u8; 24];
    fill_timestamp(&mut buf, ts);
    // Only ASCII digits and separators are written.
    String::from_utf8(buf.to_vec()).expect("ascii timestamp")
}

fn fill_timestamp(buf: &mut [u8; 24], ts: &DateTime<Utc>) {
    fn put(buf: &mut [u8], mut v: u32) {
        for slot in buf.iter_mut().rev() {
            *slot = b'0' + (v % 10) as u8;
            v /= 10;
        }
    }
    let year = ts.year().clamp(0, 9999) as u32;
    put(&mut buf[0..4], year);
    buf[4] = b'-';
    put(&mut buf[5..7], ts.month());
    buf[7] = b'-';
    put(&mut buf[8..10], ts.day());
    buf[10] = b'T';
    put(&mut buf[11..13], ts.hour());
    buf[13] = b':';
    put(&mut buf[14..16], ts.minute());
    buf[16] = b':';
    put(&mut buf[17..19], ts.second());
    buf[19] = b'.';
    put(&mut buf[20..23], ts.timestamp_subsec_millis().min(999));
    buf[23] = b'Z';
}
