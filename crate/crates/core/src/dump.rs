//! Raw frame dumps for debugging and golden files.
//!
//! Layout (little endian): magic `MNPL`, version `u32`, sample count `u64`,
//! sample rate `f64`, then `(re, im)` pairs of `f64`.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use crate::waveform::SampledSignal;

pub const MAGIC: [u8; 4] = *b"MNPL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn write_frame<W: Write>(mut w: W, signal: &SampledSignal) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(signal.samples.len() as u64).to_le_bytes())?;
    w.write_all(&signal.sample_rate_hz.to_le_bytes())?;
    for z in &signal.samples {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()
}

/// Reads a dump back. Duration is recomputed from count and rate.
pub fn read_frame<R: Read>(mut r: R) -> io::Result<SampledSignal> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported dump version {version}"),
        ));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * 16 {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("expected {} sample bytes, found {}", count * 16, body.len()),
        ));
    }
    let samples = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(SampledSignal {
        samples,
        sample_rate_hz: rate,
        duration_s: if rate > 0.0 { count as f64 / rate } else { 0.0 },
        cyclic_prefix_len: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let s = SampledSignal {
            samples: vec![Complex64::new(1.5, -2.0), Complex64::new(0.0, 3.25)],
            sample_rate_hz: 4.0,
            duration_s: 0.5,
            cyclic_prefix_len: 0,
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 32);
        assert_eq!(&buf[..4], b"MNPL");
        assert_eq!(buf[8], 2);
        assert_eq!(read_frame(&buf[..]).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_frame(&b"XXXX\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        let s = SampledSignal {
            samples: vec![Complex64::new(1.0, 0.0)],
            sample_rate_hz: 1.0,
            duration_s: 1.0,
            cyclic_prefix_len: 0,
        };
        write_frame(&mut buf, &s).unwrap();
        buf.pop();
        assert_eq!(read_frame(&buf[..]).unwrap_err().kind(), io::ErrorKind::UnexpectedEof);
    }
}
