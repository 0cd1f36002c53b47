//! Binary (P5) greymaps with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;

pub fn encode_pgm(map: &SaliencyMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.pixels());
    out
}

/// Splits off the next whitespace-delimited header token, skipping comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader("header ended early".into()));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse::<u32>().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad {what}: {:?}", String::from_utf8_lossy(t))))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<SaliencyMap> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P5" {
        return Err(Error::MalformedHeader("magic is not P5".into()));
    }
    let width = number(bytes, &mut pos, "width")? as usize;
    let height = number(bytes, &mut pos, "height")? as usize;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::TruncatedPayload {
            expected: width * height,
            got: 0,
        });
    }
    let payload = &bytes[pos + 1..];
    let expected = width * height;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    SaliencyMap::new(width, height, payload[..expected].to_vec())
}

pub fn read_pgm(path: &Path) -> Result<SaliencyMap> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(map: &SaliencyMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}
