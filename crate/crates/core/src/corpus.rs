//! JSONL corpus ingestion.
//!
//! Each non-blank line is either a text record `{"input": "...", "output": "..."}`,
//! encoded with a tokenizer, or a pre-tokenized record
//! `{"input_ids": [...], "output_ids": [...]}`. A file must use one kind only.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::token::{Document, TokenId};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Text,
    Ids,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    input: Option<String>,
    output: Option<String>,
    input_ids: Option<Vec<u32>>,
    output_ids: Option<Vec<u32>>,
}

/// Streams documents from JSONL. Documents are numbered from zero in file order.
pub struct CorpusReader<'t, R> {
    lines: std::io::Lines<R>,
    tokenizer: Option<&'t Tokenizer>,
    require_output: bool,
    source_name: String,
    kind: Option<RecordKind>,
    line_no: usize,
    doc_index: usize,
}

impl<'t> CorpusReader<'t, BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, tokenizer: Option<&'t Tokenizer>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            BufReader::new(file),
            tokenizer,
            path.display().to_string(),
        ))
    }
}

impl<'t, R: BufRead> CorpusReader<'t, R> {
    pub fn new(
        reader: R,
        tokenizer: Option<&'t Tokenizer>,
        source_name: impl Into<String>,
    ) -> Self {
        Self {
            lines: reader.lines(),
            tokenizer,
            require_output: true,
            source_name: source_name.into(),
            kind: None,
            line_no: 0,
            doc_index: 0,
        }
    }

    /// Accepts records without an output (inputs to select from).
    pub fn inputs_only(mut self) -> Self {
        self.require_output = false;
        self
    }

    /// Kind of the records seen so far.
    pub fn kind(&self) -> Option<RecordKind> {
        self.kind
    }

    fn parse_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source_name.clone(),
            line: self.line_no,
            column: 1,
            message: message.into(),
        }
    }

    fn parse_line(&mut self, line: &str) -> Result<Document> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| {
            let mut err = Error::json(self.source_name.clone(), e);
            if let Error::Parse { line, .. } = &mut err {
                *line = self.line_no;
            }
            err
        })?;
        let has_text = raw.input.is_some() || raw.output.is_some();
        let has_ids = raw.input_ids.is_some() || raw.output_ids.is_some();
        let kind = match (has_text, has_ids) {
            (true, false) => RecordKind::Text,
            (false, true) => RecordKind::Ids,
            (true, true) => return Err(self.parse_error("record mixes text and id fields")),
            (false, false) => return Err(self.parse_error("record has no input")),
        };
        match self.kind {
            None => self.kind = Some(kind),
            Some(k) if k != kind => {
                return Err(
                    self.parse_error("mixed corpus: text and pre-tokenized records in one file")
                )
            }
            _ => {}
        }
        let doc_index = self.doc_index;
        let (input, output) = match kind {
            RecordKind::Text => {
                let tokenizer = self
                    .tokenizer
                    .ok_or_else(|| Error::Config("text corpus records need a tokenizer".into()))?;
                let input = raw
                    .input
                    .ok_or_else(|| self.parse_error("missing \"input\""))?;
                let output = match raw.output {
                    Some(o) => o,
                    None if self.require_output => {
                        return Err(self.parse_error("missing \"output\""))
                    }
                    None => String::new(),
                };
                let enc = |s: &str| tokenizer.encode(s).map_err(|e| e.in_document(doc_index));
                (enc(&input)?, enc(&output)?)
            }
            RecordKind::Ids => {
                let input = raw
                    .input_ids
                    .ok_or_else(|| self.parse_error("missing \"input_ids\""))?;
                let output = match raw.output_ids {
                    Some(o) => o,
                    None if self.require_output => {
                        return Err(self.parse_error("missing \"output_ids\""))
                    }
                    None => Vec::new(),
                };
                let conv = |v: Vec<u32>| v.into_iter().map(TokenId).collect::<Vec<_>>();
                (conv(input), conv(output))
            }
        };
        let doc = Document::new(doc_index, input, output);
        if let Some(t) = self.tokenizer {
            doc.validate(t.size())?;
        }
        self.doc_index += 1;
        Ok(doc)
    }
}

impl<R: BufRead> Iterator for CorpusReader<'_, R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.source_name, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::ids;

    fn toy() -> Tokenizer {
        Tokenizer::from_json(
            r#"{"vocab": {"a":0,"b":1,"c":2,"d":3,"e":4,"f":5,"ab":6,"de":7}, "merges": ["a b", "d e"]}"#,
            "toy",
        )
        .unwrap()
    }

    fn read(text: &str, t: Option<&Tokenizer>) -> Result<Vec<Document>> {
        CorpusReader::new(text.as_bytes(), t, "mem").collect()
    }

    #[test]
    fn text_and_ids_agree() {
        let t = toy();
        let text =
            "{\"input\": \"aca\", \"output\": \"de\"}\n\n{\"input\": \"b\", \"output\": \"c\"}\n";
        let idl = "{\"input_ids\": [0, 2, 0], \"output_ids\": [7]}\n{\"input_ids\": [1], \"output_ids\": [2]}\n";
        let a = read(text, Some(&t)).unwrap();
        assert_eq!(a, read(idl, Some(&t)).unwrap());
        assert_eq!(a[0].input_ids, ids(&[0, 2, 0]));
        assert_eq!(a[1].doc_index, 1);
    }

    #[test]
    fn mixed_file_rejected() {
        let t = toy();
        let text =
            "{\"input\": \"a\", \"output\": \"b\"}\n{\"input_ids\": [0], \"output_ids\": [1]}\n";
        let err = read(text, Some(&t)).unwrap_err();
        assert!(
            matches!(err, Error::Parse { line: 2, ref message, .. } if message.contains("mixed"))
        );
    }

    #[test]
    fn encoding_errors_name_the_document() {
        let t = toy();
        let text =
            "{\"input\": \"a\", \"output\": \"b\"}\n{\"input\": \"az\", \"output\": \"b\"}\n";
        let err = read(text, Some(&t)).unwrap_err();
        assert!(matches!(
            err,
            Error::Encoding {
                ch: 'z',
                doc_index: Some(1)
            }
        ));
    }

    #[test]
    fn text_needs_tokenizer() {
        assert!(matches!(
            read("{\"input\": \"a\", \"output\": \"b\"}", None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inputs_only_mode() {
        let docs: Vec<_> = CorpusReader::new("{\"input_ids\": [3]}".as_bytes(), None, "mem")
            .inputs_only()
            .collect::<Result<_>>()
            .unwrap();
        assert!(docs[0].output_ids.is_empty());
        assert!(read("{\"input_ids\": [3]}", None).is_err());
    }

    #[test]
    fn bad_json_reports_line() {
        let err = read("{\"input_ids\": [1], \"output_ids\": [1]}\n{oops}\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn out_of_range_ids_with_tokenizer() {
        let t = toy();
        let err = read("{\"input_ids\": [99], \"output_ids\": []}", Some(&t)).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidToken {
                id: 99,
                doc_index: Some(0),
                ..
            }
        ));
    }
}
