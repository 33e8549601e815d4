use std::path::Path;

use super::alphabet;
use super::DataError;

pub const FASTA_LINE_WIDTH: usize = 60;

/// Formats `(name, sequence)` records with 60 residues per line.
pub fn format_fasta<S: AsRef<str>>(records: &[(S, Vec<u8>)]) -> String {
    let mut out = String::new();
    for (name, sequence) in records {
        out.push('>');
        out.push_str(name.as_ref());
        out.push('\n');
        let letters = alphabet::decode(sequence);
        for chunk in letters.as_bytes().chunks(FASTA_LINE_WIDTH) {
            out.push_str(std::str::from_utf8(chunk).expect("ASCII letters"));
            out.push('\n');
        }
    }
    out
}

pub fn write_fasta<S: AsRef<str>>(records: &[(S, Vec<u8>)], path: &Path) -> Result<(), DataError> {
    std::fs::write(path, format_fasta(records)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_fasta(text: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(header) = line.strip_prefix('>') {
            out.push((header.trim().to_string(), String::new()));
        } else if let Some((_, seq)) = out.last_mut() {
            seq.push_str(line.trim());
        }
    }
    out.into_iter()
        .map(|(name, seq)| (name, alphabet::encode(&seq)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_residues_fit_on_one_line() {
        let text = format_fasta(&[("p1", vec![0, 1, 2])]);
        assert_eq!(text, ">p1\nACD\n");
    }

    #[test]
    fn sixty_one_residues_wrap() {
        let seq: Vec<u8> = (0..61).map(|i| (i % 20) as u8).collect();
        let text = format_fasta(&[("long", seq.clone())]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].len(), 60);
        assert_eq!(lines[2].len(), 1);
        assert_eq!(parse_fasta(&text), vec![("long".to_string(), seq)]);
    }
}
