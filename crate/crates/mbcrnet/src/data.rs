//! ECG record file format and the preprocessing pipeline: validity
//! filtering, label mapping, decimation, lead selection, and windowing.
//!
//! Record file layout (text, one record per file):
//!   line 1: id,sample_rate_hz,n_leads,n_samples,label_text
//!           (label_text may contain commas only when double-quoted)
//!   line 2: comma-separated lead names
//!   lines 3..n_samples+2: n_leads comma-separated decimal values per line,
//!           time-major (one line per instant).

use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The eight mutually non-derivable leads, in canonical order.
pub const CANONICAL_LEADS: [&str; 8] = ["II", "III", "V1", "V2", "V3", "V4", "V5", "V6"];

/// The twelve clinical leads in conventional order.
pub const CLINICAL_LEADS: [&str; 12] =
    ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// One multi-lead recording. `samples` is lead-major: `samples[lead][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub sample_rate_hz: u32,
    pub lead_names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub label_text: String,
    pub label: Option<u8>,
}

impl EcgRecord {
    pub fn n_leads(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, |l| l.len())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz as f64
    }
}

// ── Parsing and writing ─────────────────────────────────────────────────

/// Split a header line into id, rate, leads, samples, label. The label is
/// the remainder after the fourth comma; if double-quoted it may contain
/// commas, with "" as an escaped quote.
fn split_header(line: &str) -> Option<(&str, &str, &str, &str, String)> {
    let mut rest = line;
    let mut fields = Vec::with_capacity(4);
    for _ in 0..4 {
        let (field, tail) = rest.split_once(',')?;
        fields.push(field);
        rest = tail;
    }
    let label = if let Some(stripped) = rest.strip_prefix('"') {
        let inner = stripped.strip_suffix('"')?;
        // A lone '"' inside must be doubled.
        let mut out = String::new();
        let mut chars = inner.chars().peekable();
        while let Some(c) = chars.next() {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    out.push('"');
                } else {
                    return None;
                }
            } else {
                out.push(c);
            }
        }
        out
    } else {
        rest.to_string()
    };
    Some((fields[0], fields[1], fields[2], fields[3], label))
}

/// Parse one record from a text stream. Errors carry 1-based line numbers.
pub fn parse_record<R: BufRead>(reader: R) -> Result<EcgRecord> {
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let header = header.map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let header = header.trim_end_matches('\r');
    let (id, rate, n_leads, n_samples, label_text) = split_header(header)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header must be id,sample_rate_hz,n_leads,n_samples,label_text".into(),
        })?;
    if id.is_empty() {
        return Err(Error::Parse { line: 1, msg: "empty record id".into() });
    }
    let sample_rate_hz: u32 = rate
        .trim()
        .parse()
        .ok()
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("bad sample rate {rate:?}") })?;
    let n_leads: usize = n_leads
        .trim()
        .parse()
        .ok()
        .filter(|&n| (1..=64).contains(&n))
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("bad lead count {n_leads:?}") })?;
    let n_samples: usize = n_samples
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("bad sample count {n_samples:?}") })?;

    let (_, names_line) = lines
        .next()
        .ok_or(Error::Parse { line: 2, msg: "missing lead-name line".into() })?;
    let names_line = names_line.map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?;
    let lead_names: Vec<String> = names_line
        .trim_end_matches('\r')
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    if lead_names.len() != n_leads || lead_names.iter().any(|n| n.is_empty()) {
        return Err(Error::Parse {
            line: 2,
            msg: format!("expected {n_leads} lead names, got {}", lead_names.len()),
        });
    }

    // Guard the preallocation against hostile headers: grow per row instead.
    let mut samples: Vec<Vec<f64>> =
        (0..n_leads).map(|_| Vec::with_capacity(n_samples.min(1 << 16))).collect();
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() && rows == n_samples {
            continue; // tolerate trailing blank lines
        }
        if rows == n_samples {
            return Err(Error::Parse { line: line_no, msg: "trailing data after samples".into() });
        }
        let mut count = 0;
        for (li, cell) in line.split(',').enumerate() {
            count += 1;
            if count > n_leads {
                break;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            samples[li].push(v);
        }
        if count != n_leads {
            // Undo the partial row so every lead stays equal-length.
            for lead in samples.iter_mut() {
                lead.truncate(rows);
            }
            return Err(Error::Parse {
                line: line_no,
                msg: format!("ragged row: expected {n_leads} values, got {count}"),
            });
        }
        rows += 1;
    }
    if rows != n_samples {
        return Err(Error::Parse {
            line: rows + 2,
            msg: format!("expected {n_samples} sample rows, got {rows}"),
        });
    }

    Ok(EcgRecord {
        id: id.to_string(),
        sample_rate_hz,
        lead_names,
        samples,
        label_text,
        label: None,
    })
}

/// Write a record in the text format; floats use the shortest representation
/// that round-trips, so write -> parse is exact.
pub fn write_record<W: std::io::Write>(w: &mut W, rec: &EcgRecord) -> Result<()> {
    let label = if rec.label_text.contains(',') || rec.label_text.contains('"') {
        format!("\"{}\"", rec.label_text.replace('"', "\"\""))
    } else {
        rec.label_text.clone()
    };
    writeln!(
        w,
        "{},{},{},{},{}",
        rec.id,
        rec.sample_rate_hz,
        rec.n_leads(),
        rec.n_samples(),
        label
    )?;
    writeln!(w, "{}", rec.lead_names.join(","))?;
    let mut line = String::new();
    for t in 0..rec.n_samples() {
        line.clear();
        for (li, lead) in rec.samples.iter().enumerate() {
            if li > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", lead[t]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_record_file(path: &Path) -> Result<EcgRecord> {
    let file = std::fs::File::open(path)?;
    parse_record(std::io::BufReader::new(file))
}

pub fn write_record_file(path: &Path, rec: &EcgRecord) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_record(&mut w, rec)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// Manifest: one record path per line; blank lines and '#' comments are
/// skipped. Relative paths resolve against the manifest's directory.
pub fn parse_manifest(text: &str, base: &Path) -> Vec<PathBuf> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_manifest(&text, base))
}

// ── Preprocessing operations ────────────────────────────────────────────

/// Keep records that last at least 8 seconds, contain only finite samples,
/// and carry all eight canonical leads. Rejections are data, not errors.
pub fn filter_valid(records: Vec<EcgRecord>) -> (Vec<EcgRecord>, Vec<(String, String)>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    'rec: for rec in records {
        if rec.duration_seconds() < 8.0 {
            rejected.push((rec.id.clone(), "too short".to_string()));
            continue;
        }
        if rec.samples.iter().any(|lead| lead.iter().any(|v| !v.is_finite())) {
            rejected.push((rec.id.clone(), "invalid".to_string()));
            continue;
        }
        for need in CANONICAL_LEADS {
            if !rec.lead_names.iter().any(|n| n.eq_ignore_ascii_case(need)) {
                rejected.push((rec.id.clone(), format!("missing lead {need}")));
                continue 'rec;
            }
        }
        kept.push(rec);
    }
    (kept, rejected)
}

/// Map a diagnostic string to the binary label: the two normal phrasings go
/// to 0, everything else to 1. Matching is case-insensitive and trimmed.
pub fn map_label(label_text: &str) -> Result<u8> {
    let norm = label_text.trim().to_lowercase();
    if norm.is_empty() {
        return Err(Error::MissingLabel);
    }
    if norm == "normal electrocardiogram" || norm == "normal sinus rhythm" {
        Ok(0)
    } else {
        Ok(1)
    }
}

/// Integer decimation: keep every k-th sample starting at index 0, where
/// k = sample_rate_hz / target_hz.
pub fn downsample(rec: &EcgRecord, target_hz: u32) -> Result<EcgRecord> {
    if target_hz == 0 || rec.sample_rate_hz % target_hz != 0 {
        return Err(Error::InvalidArg(format!(
            "sample rate {} is not an integer multiple of target {}",
            rec.sample_rate_hz, target_hz
        )));
    }
    let k = (rec.sample_rate_hz / target_hz) as usize;
    let samples: Vec<Vec<f64>> = rec
        .samples
        .iter()
        .map(|lead| lead.iter().step_by(k).copied().collect())
        .collect();
    Ok(EcgRecord { sample_rate_hz: target_hz, samples, ..rec.clone() })
}

/// Reorder to exactly the eight canonical leads. Name matching is
/// case-insensitive; the first occurrence wins.
pub fn select_leads(rec: &EcgRecord) -> Result<EcgRecord> {
    let mut samples = Vec::with_capacity(8);
    for need in CANONICAL_LEADS {
        let idx = rec
            .lead_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(need))
            .ok_or_else(|| Error::MissingLead(need.to_string()))?;
        samples.push(rec.samples[idx].clone());
    }
    Ok(EcgRecord {
        lead_names: CANONICAL_LEADS.iter().map(|s| s.to_string()).collect(),
        samples,
        ..rec.clone()
    })
}

/// Leading window: the first `n_samples` of every lead as a
/// [n_leads, n_samples] tensor.
pub fn window_samples(rec: &EcgRecord, n_samples: usize) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::InvalidArg("window must be positive".into()));
    }
    if rec.n_samples() < n_samples {
        return Err(Error::InvalidArg(format!(
            "record {} has {} samples, window needs {}",
            rec.id,
            rec.n_samples(),
            n_samples
        )));
    }
    let mut data = Vec::with_capacity(rec.n_leads() * n_samples);
    for lead in &rec.samples {
        data.extend_from_slice(&lead[..n_samples]);
    }
    Tensor::new(vec![rec.n_leads(), n_samples], data)
}

/// Window expressed in seconds at the record's own rate.
pub fn window_seconds(rec: &EcgRecord, seconds: f64) -> Result<Tensor> {
    let n = (seconds * rec.sample_rate_hz as f64).round() as usize;
    window_samples(rec, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<EcgRecord> {
        parse_record(Cursor::new(text.as_bytes()))
    }

    fn simple_record(rate: u32, n_samples: usize, leads: &[&str]) -> EcgRecord {
        EcgRecord {
            id: "r1".into(),
            sample_rate_hz: rate,
            lead_names: leads.iter().map(|s| s.to_string()).collect(),
            samples: (0..leads.len())
                .map(|li| (0..n_samples).map(|t| (li * 1000 + t) as f64 * 0.001).collect())
                .collect(),
            label_text: "normal sinus rhythm".into(),
            label: None,
        }
    }

    #[test]
    fn parse_minimal_file() {
        let rec = parse("a,250,1,4,normal electrocardiogram\nII\n1\n2\n3\n4\n").unwrap();
        assert_eq!(rec.id, "a");
        assert_eq!(rec.n_samples(), 4);
        assert_eq!(rec.samples[0], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rec.label_text, "normal electrocardiogram");
    }

    #[test]
    fn parse_twelve_lead_duration() {
        let rec = simple_record(500, 5000, &CLINICAL_LEADS);
        let mut text = Vec::new();
        write_record(&mut text, &rec).unwrap();
        let back = parse_record(Cursor::new(&text)).unwrap();
        assert_eq!(back.n_leads(), 12);
        assert!((back.duration_seconds() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn parse_quoted_label_with_comma() {
        let rec = parse("a,250,1,1,\"first degree block, mild\"\nII\n0.5\n").unwrap();
        assert_eq!(rec.label_text, "first degree block, mild");

        let rec = parse("a,250,1,1,\"says \"\"ok\"\"\"\nII\n0.5\n").unwrap();
        assert_eq!(rec.label_text, "says \"ok\"");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse("a,250,2,3,x\nII,III\n1,2\n3\n5,6\n") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("ragged"), "{msg}");
            }
            other => panic!("expected ragged-row error, got {other:?}"),
        }
        match parse("a,250,1,2,x\nII\n1\noops\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected non-numeric error, got {other:?}"),
        }
        assert!(matches!(parse(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("a,250,1\nII\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("a,0,1,1,x\nII\n1\n"), Err(Error::Parse { line: 1, .. })));
        // Missing rows.
        assert!(parse("a,250,1,3,x\nII\n1\n2\n").is_err());
        // NaN is a valid cell at parse time; filtering rejects it later.
        assert!(parse("a,250,1,1,x\nII\nNaN\n").is_ok());
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut rec = simple_record(500, 20, &["II", "III"]);
        rec.samples[0][3] = 0.1 + 0.2;
        rec.samples[1][7] = -1.0 / 3.0;
        rec.label_text = "irregular rhythm, suspected".into();
        let mut text = Vec::new();
        write_record(&mut text, &rec).unwrap();
        let back = parse_record(Cursor::new(&text)).unwrap();
        assert_eq!(back.lead_names, rec.lead_names);
        for (a, b) in back.samples.iter().flatten().zip(rec.samples.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn filter_examples() {
        let short = EcgRecord {
            id: "short".into(),
            ..simple_record(500, 3950, &CANONICAL_LEADS) // 7.9 s
        };
        let mut nan = simple_record(500, 5000, &CANONICAL_LEADS);
        nan.id = "nan".into();
        nan.samples[2][100] = f64::NAN;
        let mut boundary = simple_record(500, 4000, &CANONICAL_LEADS); // exactly 8 s
        boundary.id = "boundary".into();

        let (kept, rejected) = filter_valid(vec![short, nan, boundary]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "boundary");
        assert_eq!(rejected[0], ("short".to_string(), "too short".to_string()));
        assert_eq!(rejected[1], ("nan".to_string(), "invalid".to_string()));

        let mut missing = simple_record(500, 5000, &CANONICAL_LEADS);
        missing.id = "nolead".into();
        missing.lead_names[4] = "X".into(); // drop V3
        let (kept, rejected) = filter_valid(vec![missing]);
        assert!(kept.is_empty());
        assert_eq!(rejected[0].1, "missing lead V3");
    }

    #[test]
    fn label_mapping() {
        assert_eq!(map_label("normal electrocardiogram").unwrap(), 0);
        assert_eq!(map_label("normal sinus rhythm").unwrap(), 0);
        assert_eq!(map_label("  Normal Sinus Rhythm \t").unwrap(), 0);
        assert_eq!(map_label("atrial fibrillation").unwrap(), 1);
        assert_eq!(map_label("normal-ish").unwrap(), 1);
        assert!(matches!(map_label("   "), Err(Error::MissingLabel)));
    }

    #[test]
    fn downsample_decimates() {
        let mut rec = simple_record(500, 6, &["II"]);
        rec.samples[0] = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let down = downsample(&rec, 250).unwrap();
        assert_eq!(down.samples[0], vec![0.0, 2.0, 4.0]);
        assert_eq!(down.sample_rate_hz, 250);

        let rec = simple_record(500, 5000, &["II"]);
        assert_eq!(downsample(&rec, 250).unwrap().n_samples(), 2500);
        assert!(downsample(&rec, 300).is_err());
    }

    #[test]
    fn select_leads_reorders() {
        let rec = simple_record(500, 10, &CLINICAL_LEADS);
        let sel = select_leads(&rec).unwrap();
        assert_eq!(sel.n_leads(), 8);
        assert_eq!(sel.lead_names[0], "II");
        assert_eq!(sel.samples[0], rec.samples[1]); // II is row 1 clinically

        let eight = simple_record(500, 10, &CANONICAL_LEADS);
        let sel = select_leads(&eight).unwrap();
        assert_eq!(sel.samples, eight.samples);

        let mut missing = simple_record(500, 10, &CANONICAL_LEADS);
        missing.lead_names[4] = "X".into();
        match select_leads(&missing) {
            Err(Error::MissingLead(name)) => assert_eq!(name, "V3"),
            other => panic!("expected missing lead, got {other:?}"),
        }
    }

    #[test]
    fn window_boundaries() {
        let rec = simple_record(250, 2500, &CANONICAL_LEADS);
        let t = window_samples(&rec, 2000).unwrap();
        assert_eq!(t.shape(), &[8, 2000]);

        let exact = simple_record(250, 2000, &CANONICAL_LEADS);
        let t2 = window_samples(&exact, 2000).unwrap();
        assert_eq!(t2.data()[..2000], exact.samples[0][..]);

        let short = simple_record(250, 1999, &CANONICAL_LEADS);
        assert!(window_samples(&short, 2000).is_err());

        let t3 = window_seconds(&rec, 8.0).unwrap();
        assert_eq!(t3.shape(), &[8, 2000]);
    }

    #[test]
    fn pipeline_produces_8x2000_and_is_pure() {
        let rec = simple_record(500, 5000, &CLINICAL_LEADS);
        let run = |rec: &EcgRecord| {
            let (kept, _) = filter_valid(vec![rec.clone()]);
            let down = downsample(&kept[0], 250).unwrap();
            let sel = select_leads(&down).unwrap();
            window_samples(&sel, 2000).unwrap()
        };
        let a = run(&rec);
        assert_eq!(a.shape(), &[8, 2000]);
        let b = run(&rec);
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let paths = parse_manifest("a.ecg\n# comment\n\n/abs/b.ecg\n", Path::new("/data"));
        assert_eq!(paths, vec![PathBuf::from("/data/a.ecg"), PathBuf::from("/abs/b.ecg")]);
    }
}
