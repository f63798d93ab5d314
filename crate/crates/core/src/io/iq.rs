//! Binary IQ container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PNCE" | version u16 | nt nr p l m c n_batch frame_count (u32 each) | seed u64
//! then frame_count records of nr * p interleaved f32 (I, Q) pairs,
//! receiver-major then sample order.
//! ```
//!
//! A record is one batch as seen by every receiver; a complete pilot frame
//! spans `ceil(nt / n_batch)` consecutive records.

use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};

use super::{io_err, FormatError};
use crate::channel::ReceivedFrame;
use crate::pilot::PilotConfig;

pub const MAGIC: [u8; 4] = *b"PNCE";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 * 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IqHeader {
    pub nt: u32,
    pub nr: u32,
    pub p: u32,
    pub l: u32,
    pub m: u32,
    pub c: u32,
    pub n_batch: u32,
    pub frame_count: u32,
    pub seed: u64,
}

impl IqHeader {
    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::InvalidHeader(m));
        if self.p as u64 != self.c as u64 + self.m as u64 {
            return bad(format!("P={} but C+M={}", self.p, self.c as u64 + self.m as u64));
        }
        if self.nt == 0 || self.nr == 0 || self.m == 0 || self.n_batch == 0 || self.l == 0 {
            return bad("zero dimension".into());
        }
        Ok(())
    }

    /// Records that make up one complete pilot frame.
    pub fn records_per_frame(&self) -> u32 {
        self.nt.div_ceil(self.n_batch)
    }

    pub fn record_bytes(&self) -> u64 {
        self.nr as u64 * self.p as u64 * 8
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.frame_count as u64 * self.record_bytes()
    }

    pub fn pilot_config(&self, fs: f64) -> PilotConfig {
        PilotConfig {
            m: self.m as usize,
            c: self.c as usize,
            nt: self.nt as usize,
            n_batch: self.n_batch as usize,
            l: self.l as usize,
            fs,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.nt, self.nr, self.p, self.l, self.m, self.c, self.n_batch, self.frame_count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
    }

    fn decode(buf: &[u8]) -> Result<Self, FormatError> {
        if buf.len() >= 4 && buf[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                found: buf[..4].try_into().unwrap(),
            });
        }
        if buf.len() < HEADER_LEN {
            return Err(FormatError::TruncatedFile {
                offset: buf.len() as u64,
                expected: HEADER_LEN as u64,
            });
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(FormatError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let u = |i: usize| u32::from_le_bytes(buf[6 + 4 * i..10 + 4 * i].try_into().unwrap());
        let h = IqHeader {
            nt: u(0),
            nr: u(1),
            p: u(2),
            l: u(3),
            m: u(4),
            c: u(5),
            n_batch: u(6),
            frame_count: u(7),
            seed: u64::from_le_bytes(buf[38..46].try_into().unwrap()),
        };
        h.validate()?;
        Ok(h)
    }
}

/// Header plus `records[record][receiver][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFile {
    pub header: IqHeader,
    pub records: Vec<Vec<Vec<Complex32>>>,
}

fn dim(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::InvalidHeader(format!("{what}={v} exceeds u32")))
}

impl IqFile {
    /// Pack `frames[batch][receiver]`, keeping the first `P` samples of each.
    pub fn from_received(cfg: &PilotConfig, frames: &[Vec<ReceivedFrame>], seed: u64) -> Result<Self, FormatError> {
        let p = cfg.pilot_len();
        let nr = frames.first().map_or(0, Vec::len);
        let mut records = Vec::with_capacity(frames.len());
        for per_rx in frames {
            if per_rx.len() != nr {
                return Err(FormatError::InvalidHeader("receiver count varies across records".into()));
            }
            let rec = per_rx
                .iter()
                .map(|f| {
                    if f.samples.len() < p {
                        return Err(FormatError::InvalidHeader(format!(
                            "frame has {} samples, need {p}",
                            f.samples.len()
                        )));
                    }
                    Ok(f.samples[..p].iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect())
                })
                .collect::<Result<Vec<_>, _>>()?;
            records.push(rec);
        }
        let header = IqHeader {
            nt: dim(cfg.nt, "N_t")?,
            nr: dim(nr, "N_r")?,
            p: dim(p, "P")?,
            l: dim(cfg.l, "L")?,
            m: dim(cfg.m, "M")?,
            c: dim(cfg.c, "C")?,
            n_batch: dim(cfg.n_batch, "N_batch")?,
            frame_count: dim(records.len(), "frame count")?,
            seed,
        };
        header.validate()?;
        Ok(Self { header, records })
    }

    /// Unpack into complete pilot frames, `[frame][batch][receiver]`.
    pub fn to_received(&self) -> Result<Vec<Vec<Vec<ReceivedFrame>>>, FormatError> {
        let per = self.header.records_per_frame() as usize;
        if !self.records.len().is_multiple_of(per) {
            return Err(FormatError::InvalidHeader(format!(
                "{} records is not a multiple of {per} batches per frame",
                self.records.len()
            )));
        }
        Ok(self
            .records
            .chunks(per)
            .map(|frame| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(b, rec)| {
                        rec.iter()
                            .enumerate()
                            .map(|(r, s)| ReceivedFrame {
                                receiver: r,
                                batch: b,
                                pilot_len: self.header.p as usize,
                                samples: s.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect(),
                                noise_variance: f64::NAN,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let h = &self.header;
        h.validate()?;
        if self.records.len() != h.frame_count as usize
            || self
                .records
                .iter()
                .any(|r| r.len() != h.nr as usize || r.iter().any(|s| s.len() != h.p as usize))
        {
            return Err(FormatError::InvalidHeader("record shape disagrees with header".into()));
        }
        let mut out = Vec::with_capacity(h.file_len() as usize);
        h.encode(&mut out);
        for z in self.records.iter().flatten().flatten() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, FormatError> {
        let header = IqHeader::decode(buf)?;
        let expected = header.file_len();
        if (buf.len() as u64) < expected {
            // offset of the first sample that cannot be read whole
            let body = buf.len() - HEADER_LEN;
            return Err(FormatError::TruncatedFile {
                offset: (HEADER_LEN + body / 8 * 8) as u64,
                expected,
            });
        }
        if buf.len() as u64 > expected {
            return Err(FormatError::InvalidHeader(format!(
                "{} trailing bytes after {expected}",
                buf.len() as u64 - expected
            )));
        }
        let f = |i: usize| f32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
        let (nr, p) = (header.nr as usize, header.p as usize);
        let mut off = HEADER_LEN;
        let records = (0..header.frame_count)
            .map(|_| {
                (0..nr)
                    .map(|_| {
                        (0..p)
                            .map(|_| {
                                let z = Complex32::new(f(off), f(off + 4));
                                off += 8;
                                z
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { header, records })
    }
}

pub fn write_iq(path: &Path, file: &IqFile) -> Result<(), FormatError> {
    fs::write(path, file.to_bytes()?).map_err(io_err(path))
}

pub fn read_iq(path: &Path) -> Result<IqFile, FormatError> {
    IqFile::from_bytes(&fs::read(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_frame, ChannelSpec, SnrSpec};
    use crate::pn::PnSequence;
    use proptest::prelude::*;

    fn sample() -> IqFile {
        let cfg = PilotConfig::new(31, 4, 3, 2, 1e6).unwrap();
        let seq = PnSequence::builtin(31).unwrap();
        let chan = ChannelSpec {
            l: 4,
            l_nz: 2,
            nt: 3,
            nr: 2,
            seed: 5,
        };
        let (_, frames) = simulate_frame(&cfg, &chan, &SnrSpec { snr_db: 10.0, seed: 1 }, &seq).unwrap();
        IqFile::from_received(&cfg, &frames, 77).unwrap()
    }

    #[test]
    fn header_layout() {
        let f = sample();
        let b = f.to_bytes().unwrap();
        assert_eq!(&b[..4], b"PNCE");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[14..18].try_into().unwrap()), 35);
        assert_eq!(u32::from_le_bytes(b[34..38].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[38..46].try_into().unwrap()), 77);
        assert_eq!(b.len(), HEADER_LEN + 2 * 2 * 35 * 8);
        let z = f.records[0][0][0];
        assert_eq!(f32::from_le_bytes(b[46..50].try_into().unwrap()), z.re);
        assert_eq!(f32::from_le_bytes(b[50..54].try_into().unwrap()), z.im);
        let z = f.records[0][1][0];
        assert_eq!(f32::from_le_bytes(b[46 + 35 * 8..50 + 35 * 8].try_into().unwrap()), z.re);
    }

    #[test]
    fn round_trip_and_unpack() {
        let f = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.iq");
        write_iq(&path, &f).unwrap();
        let g = read_iq(&path).unwrap();
        assert_eq!(g, f);
        assert_eq!(g.to_bytes().unwrap(), fs::read(&path).unwrap());
        let frames = g.to_received().unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].len(), 2);
        assert_eq!(frames[0][1][1].samples.len(), 35);
    }

    #[test]
    fn error_cases() {
        let mut b = sample().to_bytes().unwrap();
        let mut bad = b.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(IqFile::from_bytes(&bad), Err(FormatError::BadMagic { found }) if &found == b"XXXX"));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(
            IqFile::from_bytes(&v2),
            Err(FormatError::VersionMismatch { found: 2, expected: 1 })
        ));
        b.truncate(HEADER_LEN + 8 * 10 + 3);
        assert!(matches!(
            IqFile::from_bytes(&b),
            Err(FormatError::TruncatedFile { offset, .. }) if offset == (HEADER_LEN + 80) as u64
        ));
        assert!(matches!(
            IqFile::from_bytes(&b[..20]),
            Err(FormatError::TruncatedFile { offset: 20, .. })
        ));
        let mut pc = sample().to_bytes().unwrap();
        pc[14] = 99;
        assert!(matches!(IqFile::from_bytes(&pc), Err(FormatError::InvalidHeader(_))));
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(bits in proptest::collection::vec(any::<u32>(), 2 * 2 * 9 * 2), seed in any::<u64>()) {
            let mut it = bits.chunks(2).map(|c| Complex32::new(f32::from_bits(c[0]), f32::from_bits(c[1])));
            let records: Vec<Vec<Vec<Complex32>>> =
                (0..2).map(|_| (0..2).map(|_| it.by_ref().take(9).collect()).collect()).collect();
            let header = IqHeader { nt: 2, nr: 2, p: 9, l: 2, m: 7, c: 2, n_batch: 1, frame_count: 2, seed };
            let f = IqFile { header, records };
            let b = f.to_bytes().unwrap();
            let g = IqFile::from_bytes(&b).unwrap();
            prop_assert_eq!(g.to_bytes().unwrap(), b);
            let same = f.records.iter().flatten().flatten().zip(g.records.iter().flatten().flatten())
                .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits());
            prop_assert!(same);
        }
    }
}
