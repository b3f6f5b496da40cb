//! Line-delimited JSON trace files.
//!
//! Line 1 is the header object; every following line is one instruction.
//! Initial page contents live in an optional sidecar JSON object mapping
//! page id to hex bytes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::isa::{validate_instrs, PageId, Trace, TraceHeader, VecInstr, TRACE_VERSION};

pub fn encode_trace<W: Write>(trace: &Trace, mut out: W) -> Result<()> {
    let header = serde_json::to_string(&trace.header).expect("header serializes");
    writeln!(out, "{header}")?;
    for ins in &trace.instrs {
        let line = serde_json::to_string(ins).expect("instruction serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn encode_trace_to_vec(trace: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Decodes and validates a trace. Contents are not part of the stream.
pub fn decode_trace<R: BufRead>(input: R) -> Result<Trace> {
    let mut lines = input.lines().enumerate();
    let header: TraceHeader = loop {
        match lines.next() {
            None => {
                return Err(Error::TraceDecode { line: 1, reason: "missing header".into() })
            }
            Some((n, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line)
                    .map_err(|e| Error::TraceDecode { line: n + 1, reason: e.to_string() })?;
                if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
                    if v as u32 != TRACE_VERSION {
                        return Err(Error::SchemaVersion { found: v as u32, expected: TRACE_VERSION });
                    }
                }
                break serde_json::from_value(value)
                    .map_err(|e| Error::TraceDecode { line: n + 1, reason: e.to_string() })?;
            }
        }
    };
    let mut instrs = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ins: VecInstr = serde_json::from_str(&line)
            .map_err(|e| Error::TraceDecode { line: n + 1, reason: e.to_string() })?;
        instrs.push(ins);
    }
    validate_instrs(&header, &instrs)?;
    Ok(Trace { header, instrs, contents: None })
}

pub fn decode_trace_bytes(bytes: &[u8]) -> Result<Trace> {
    decode_trace(bytes)
}

pub fn encode_contents(contents: &BTreeMap<PageId, Vec<u8>>) -> String {
    let map: BTreeMap<String, String> =
        contents.iter().map(|(k, v)| (k.to_string(), hex::encode(v))).collect();
    serde_json::to_string_pretty(&map).expect("contents serialize")
}

pub fn decode_contents(text: &str) -> Result<BTreeMap<PageId, Vec<u8>>> {
    let map: BTreeMap<String, String> = serde_json::from_str(text)
        .map_err(|e| Error::TraceDecode { line: 0, reason: format!("contents: {e}") })?;
    map.into_iter()
        .map(|(k, v)| {
            let page = k.parse::<PageId>().map_err(|e| Error::TraceDecode {
                line: 0,
                reason: format!("contents key {k}: {e}"),
            })?;
            let bytes = hex::decode(&v).map_err(|e| Error::TraceDecode {
                line: 0,
                reason: format!("contents page {k}: {e}"),
            })?;
            Ok((page, bytes))
        })
        .collect()
}

/// Sidecar path for a trace file: `<trace>.contents.json`.
pub fn contents_path(trace_path: &Path) -> std::path::PathBuf {
    let mut name = trace_path.as_os_str().to_owned();
    name.push(".contents.json");
    name.into()
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    encode_trace(trace, &mut w)?;
    w.flush()?;
    if let Some(contents) = &trace.contents {
        std::fs::write(contents_path(path), encode_contents(contents))?;
    }
    Ok(())
}

/// Reads a trace and, when present, its contents sidecar.
pub fn read_trace_file(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path)?;
    let mut trace = decode_trace(std::io::BufReader::new(file))?;
    let side = contents_path(path);
    if side.exists() {
        trace.contents = Some(decode_contents(&std::fs::read_to_string(side)?)?);
        trace.validate()?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{ScalarOp, VecOpType};

    fn header() -> TraceHeader {
        TraceHeader::new(64, 8, "unit")
    }

    #[test]
    fn empty_trace_is_header_only() {
        let t = Trace::new(header());
        let bytes = encode_trace_to_vec(&t);
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(decode_trace_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn instruction_line_uses_short_keys() {
        let mut t = Trace::new(header());
        t.instrs.push(VecInstr {
            id: 0,
            op: VecOpType::CmpGt,
            src_pages: vec![1, 2],
            dst_page: 3,
            vector_length: 64,
            element_width: 8,
            producer_ids: vec![],
            offset: 0,
            scalar: None,
        });
        let text = String::from_utf8(encode_trace_to_vec(&t)).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(
            line,
            r#"{"id":0,"op":"CMP_GT","srcs":[1,2],"dst":3,"len":64,"width":8,"deps":[]}"#
        );
    }

    #[test]
    fn scalar_payload_round_trips() {
        let mut t = Trace::new(header());
        t.instrs.push(VecInstr {
            id: 0,
            op: VecOpType::Scalar,
            src_pages: vec![1, 1],
            dst_page: 1,
            vector_length: 1,
            element_width: 8,
            producer_ids: vec![],
            offset: 0,
            scalar: Some(ScalarOp { inner: VecOpType::Add, elems: vec![3, 2, 1] }),
        });
        let back = decode_trace_bytes(&encode_trace_to_vec(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn forward_producer_rejected() {
        let text = concat!(
            r#"{"version":1,"vector_width":64,"element_width":8,"page_size":64,"profile":"x"}"#,
            "\n",
            r#"{"id":0,"op":"NOT","srcs":[1],"dst":2,"len":64,"width":8,"deps":[0]}"#,
            "\n"
        );
        assert!(matches!(
            decode_trace_bytes(text.as_bytes()),
            Err(Error::InvalidTrace { id: 0, .. })
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = r#"{"version":9,"vector_width":64,"element_width":8,"page_size":64,"profile":"x"}"#;
        assert!(matches!(
            decode_trace_bytes(text.as_bytes()),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn contents_round_trip() {
        let mut c = BTreeMap::new();
        c.insert(7, vec![0xde, 0xad, 0xbe, 0xef]);
        c.insert(1, vec![0; 4]);
        assert_eq!(decode_contents(&encode_contents(&c)).unwrap(), c);
    }
}
