//! Time-tag text files.
//!
//! ```text
//! timestamp_ps,party,basis,outcome
//! 1200,A,HV,0
//! 1337,A,DA,1
//! ```
//!
//! Records are sorted ascending by timestamp. Paths ending in `.gz` are
//! gzip-compressed transparently.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::montecarlo::{Basis, Party, TimeTag};

pub const HEADER: &str = "timestamp_ps,party,basis,outcome";

#[derive(Debug, Error)]
pub enum TagIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp} precedes the previous record")]
    Unsorted { line: usize, timestamp: i64 },
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn write_tags<W: Write>(tags: &[TimeTag], mut out: W) -> Result<(), TagIoError> {
    if let Some(line) = tags.windows(2).position(|w| w[1].timestamp_ps < w[0].timestamp_ps) {
        return Err(TagIoError::Unsorted {
            line: line + 3,
            timestamp: tags[line + 1].timestamp_ps,
        });
    }
    writeln!(out, "{HEADER}")?;
    for t in tags {
        let party = match t.party {
            Party::A => 'A',
            Party::B => 'B',
        };
        writeln!(out, "{},{},{},{}", t.timestamp_ps, party, t.basis.as_str(), t.outcome)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tags<R: BufRead>(input: R) -> Result<Vec<TimeTag>, TagIoError> {
    let mut lines = input.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim_end() != HEADER {
                return Err(TagIoError::Parse {
                    line: 1,
                    message: format!("expected header `{HEADER}`, found `{header}`"),
                });
            }
        }
        None => {
            return Err(TagIoError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }

    let mut tags = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tag = parse_record(&line).map_err(|message| TagIoError::Parse { line: line_no, message })?;
        if tags
            .last()
            .is_some_and(|prev: &TimeTag| tag.timestamp_ps < prev.timestamp_ps)
        {
            return Err(TagIoError::Unsorted {
                line: line_no,
                timestamp: tag.timestamp_ps,
            });
        }
        tags.push(tag);
    }
    Ok(tags)
}

fn parse_record(line: &str) -> Result<TimeTag, String> {
    let mut fields = line.trim_end().split(',');
    let mut next = |name: &str| fields.next().ok_or_else(|| format!("missing field `{name}`"));
    let timestamp_ps: i64 = next("timestamp_ps")?
        .parse()
        .map_err(|e| format!("bad timestamp: {e}"))?;
    if timestamp_ps < 0 {
        return Err(format!("negative timestamp {timestamp_ps}"));
    }
    let party = match next("party")? {
        "A" => Party::A,
        "B" => Party::B,
        other => return Err(format!("bad party `{other}`")),
    };
    let basis = match next("basis")? {
        "HV" => Basis::HV,
        "DA" => Basis::DA,
        other => return Err(format!("bad basis `{other}`")),
    };
    let outcome = match next("outcome")? {
        "0" => 0,
        "1" => 1,
        other => return Err(format!("bad outcome `{other}`")),
    };
    if fields.next().is_some() {
        return Err("too many fields".into());
    }
    Ok(TimeTag {
        timestamp_ps,
        party,
        basis,
        outcome,
    })
}

pub fn write_tags_file(tags: &[TimeTag], path: &Path) -> Result<(), TagIoError> {
    let file = BufWriter::new(File::create(path)?);
    if is_gzip(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        write_tags(tags, &mut enc)?;
        enc.finish()?.flush()?;
        Ok(())
    } else {
        write_tags(tags, file)
    }
}

pub fn read_tags_file(path: &Path) -> Result<Vec<TimeTag>, TagIoError> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    read_tags(BufReader::new(reader))
}
