//! Prompt rendering and completion parsing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmotionTaxonomy, LabelSet, LabeledExample};
use crate::error::{Error, Result};
use crate::sampling::Demonstration;

/// The default instruction template. A template has a header (containing `{labels}`)
/// followed by the demonstration block (the line holding `{text}` onwards, ending in
/// `{label}`).
pub const DEFAULT_TEMPLATE: &str = "Perform emotion classification in the following examples by selecting none, one, or multiple of the following emotions: {labels}\n\nInput: {text}\n{label}";

const EMPTY_WORDS: [&str; 2] = ["none", "neutral"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFormat {
    JsonObject,
    #[default]
    CommaSeparated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    label_format: LabelFormat,
    header: String,
    block: String,
    separator: String,
}

impl PromptTemplate {
    pub fn new(source: impl Into<String>, label_format: LabelFormat) -> Result<Self> {
        let source = source.into();
        for p in ["{labels}", "{text}", "{label}"] {
            if !source.contains(p) {
                return Err(Error::Template(format!("placeholder {p} missing")));
            }
        }
        let text_at = source.find("{text}").expect("checked above");
        let line_start = source[..text_at].rfind('\n').map_or(0, |i| i + 1);
        let (header, block) = source.split_at(line_start);
        if !header.contains("{labels}") {
            return Err(Error::Template(
                "{labels} must appear before the line holding {text}".into(),
            ));
        }
        match (block.find("{text}"), block.find("{label}")) {
            (Some(t), Some(l)) if l > t => {}
            _ => {
                return Err(Error::Template(
                    "{label} must follow {text} in the demonstration block".into(),
                ))
            }
        }
        let trailing = header.len() - header.trim_end_matches('\n').len();
        let separator = if trailing == 0 {
            "\n\n".to_owned()
        } else {
            "\n".repeat(trailing)
        };
        Ok(PromptTemplate {
            header: header.to_owned(),
            block: block.to_owned(),
            separator,
            source,
            label_format,
        })
    }

    pub fn default_with(label_format: LabelFormat) -> Self {
        Self::new(DEFAULT_TEMPLATE, label_format).expect("default template is valid")
    }

    /// Loads a template file; a single trailing newline is not part of the template.
    pub fn from_file(path: impl AsRef<Path>, label_format: LabelFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let text = text
            .strip_suffix("\r\n")
            .or_else(|| text.strip_suffix('\n'))
            .unwrap_or(&text);
        Self::new(text, label_format)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn label_format(&self) -> LabelFormat {
        self.label_format
    }

    /// Text between demonstration blocks.
    pub fn separator(&self) -> &str {
        &self.separator
    }

    /// Block prefix before `{text}`, e.g. `"Input: "`.
    pub fn input_marker(&self) -> &str {
        &self.block[..self.block.find("{text}").expect("validated")]
    }
}

/// A rendered prompt with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub demonstrations: Vec<Demonstration>,
    pub query: LabeledExample,
    pub rendered: String,
}

impl PromptInstance {
    pub fn build(
        template: &PromptTemplate,
        taxonomy: &EmotionTaxonomy,
        demonstrations: Vec<Demonstration>,
        query: LabeledExample,
    ) -> Result<Self> {
        let rendered = render_prompt(template, taxonomy, &demonstrations, &query)?;
        Ok(PromptInstance {
            demonstrations,
            query,
            rendered,
        })
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    taxonomy: &EmotionTaxonomy,
    demos: &[Demonstration],
    query: &LabeledExample,
) -> Result<String> {
    if !taxonomy.contains_set(query.gold) {
        return Err(Error::UnknownLabel {
            label: format!("{:?}", query.gold),
            taxonomy: taxonomy.name().to_owned(),
        });
    }
    let mut out = template
        .header
        .replace("{labels}", &taxonomy.labels().join(", "));
    for d in demos {
        if !taxonomy.contains_set(d.shown_labels) {
            return Err(Error::UnknownLabel {
                label: format!("{:?}", d.shown_labels),
                taxonomy: taxonomy.name().to_owned(),
            });
        }
        let labels = format_labels(taxonomy, d.shown_labels, template.label_format);
        out.push_str(&fill_block(&template.block, &d.text, Some(&labels)));
        out.push_str(&template.separator);
    }
    out.push_str(&fill_block(&template.block, &query.text, None));
    Ok(out)
}

/// Substitutes a block; with no label the block is cut at `{label}`.
fn fill_block(block: &str, text: &str, label: Option<&str>) -> String {
    let t = block.find("{text}").expect("validated");
    let l = block.find("{label}").expect("validated");
    let mut s = String::with_capacity(block.len() + text.len() + 32);
    s.push_str(&block[..t]);
    s.push_str(text);
    s.push_str(&block[t + "{text}".len()..l]);
    if let Some(label) = label {
        s.push_str(label);
        s.push_str(&block[l + "{label}".len()..]);
    }
    s
}

/// Renders a label set. JSON objects list every taxonomy label with a boolean; the
/// comma-separated form lists present labels, or `none` for the empty set.
pub fn format_labels(taxonomy: &EmotionTaxonomy, labels: LabelSet, format: LabelFormat) -> String {
    match format {
        LabelFormat::CommaSeparated => {
            if labels.is_empty() {
                "none".to_owned()
            } else {
                taxonomy.names(labels).join(", ")
            }
        }
        LabelFormat::JsonObject => {
            let body: Vec<String> = taxonomy
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    format!(
                        "{}: {}",
                        serde_json::to_string(l).expect("string"),
                        labels.contains(i)
                    )
                })
                .collect();
            format!("{{{}}}", body.join(", "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    FuzzyMatched,
    Partial,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub labels: LabelSet,
    pub status: ParseStatus,
    pub dropped_tokens: Vec<String>,
}

impl ParseOutcome {
    fn unparseable(dropped: Vec<String>) -> Self {
        ParseOutcome {
            labels: LabelSet::EMPTY,
            status: ParseStatus::Unparseable,
            dropped_tokens: dropped,
        }
    }
}

/// Per-run tally of parse statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub clean: usize,
    pub fuzzy_matched: usize,
    pub partial: usize,
    pub unparseable: usize,
}

impl ParseDiagnostics {
    pub fn record(&mut self, status: ParseStatus) {
        match status {
            ParseStatus::Clean => self.clean += 1,
            ParseStatus::FuzzyMatched => self.fuzzy_matched += 1,
            ParseStatus::Partial => self.partial += 1,
            ParseStatus::Unparseable => self.unparseable += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.clean + self.fuzzy_matched + self.partial + self.unparseable
    }
}

/// The answer part of a completion: models that keep generating start a new
/// `Input:` block or a blank line after their answer.
fn answer_span(raw: &str) -> &str {
    let s = raw.trim_start();
    let mut end = s.len();
    for stop in ["\n\n", "Input:", "\r\n\r\n"] {
        if let Some(i) = s.find(stop) {
            end = end.min(i);
        }
    }
    &s[..end]
}

fn is_trim_char(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation()
}

struct Tally {
    labels: LabelSet,
    fuzzy: bool,
    saw_empty_word: bool,
    dropped: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            labels: LabelSet::EMPTY,
            fuzzy: false,
            saw_empty_word: false,
            dropped: Vec::new(),
        }
    }

    fn finish(self) -> ParseOutcome {
        if self.labels.is_empty() && !self.saw_empty_word {
            return ParseOutcome::unparseable(self.dropped);
        }
        let status = if !self.dropped.is_empty() {
            ParseStatus::Partial
        } else if self.fuzzy {
            ParseStatus::FuzzyMatched
        } else {
            ParseStatus::Clean
        };
        ParseOutcome {
            labels: self.labels,
            status,
            dropped_tokens: self.dropped,
        }
    }
}

fn parse_comma(span: &str, taxonomy: &EmotionTaxonomy, tally: &mut Tally) {
    for raw_tok in span.split([',', '\n', ';']) {
        let tok = raw_tok.trim();
        if tok.is_empty() {
            continue;
        }
        let norm = tok.trim_matches(is_trim_char).to_lowercase();
        if let Some(i) = taxonomy.index_of(&norm) {
            tally.labels.insert(i);
            if tok != norm {
                tally.fuzzy = true;
            }
        } else if EMPTY_WORDS.contains(&norm.as_str()) {
            tally.saw_empty_word = true;
            if tok != norm {
                tally.fuzzy = true;
            }
        } else {
            tally.dropped.push(tok.to_owned());
        }
    }
}

/// The first balanced `{...}` in `s`, ignoring braces inside string literals.
fn first_object(s: &str) -> Option<&str> {
    let start = s.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&s[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn truthy(v: &serde_json::Value) -> Option<bool> {
    match v {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::Number(n) => n.as_f64().map(|x| x != 0.0),
        serde_json::Value::String(s) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn parse_json(raw: &str, taxonomy: &EmotionTaxonomy, tally: &mut Tally) -> bool {
    let s = raw.trim_start();
    let Some(obj) = first_object(s) else {
        return false;
    };
    let mut matched_any = false;
    match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(obj) {
        Ok(map) => {
            for (k, v) in map {
                let norm = k.trim_matches(is_trim_char).to_lowercase();
                match (taxonomy.index_of(&norm), truthy(&v)) {
                    (Some(i), Some(b)) => {
                        matched_any = true;
                        if b {
                            tally.labels.insert(i);
                        }
                        if k != norm || !v.is_boolean() {
                            tally.fuzzy = true;
                        }
                    }
                    _ => tally.dropped.push(k),
                }
            }
        }
        Err(_) => {
            // relaxed `key: value` pairs, e.g. single quotes or trailing commas
            tally.fuzzy = true;
            let body = obj.trim_start_matches('{').trim_end_matches('}');
            for pair in body.split(',') {
                let pair = pair.trim();
                if pair.is_empty() {
                    continue;
                }
                let Some((k, v)) = pair.split_once(':') else {
                    tally.dropped.push(pair.to_owned());
                    continue;
                };
                let norm = k.trim_matches(is_trim_char).to_lowercase();
                let val = v.trim().trim_matches(is_trim_char).to_lowercase();
                let b = match val.as_str() {
                    "true" | "yes" | "1" => Some(true),
                    "false" | "no" | "0" => Some(false),
                    _ => None,
                };
                match (taxonomy.index_of(&norm), b) {
                    (Some(i), Some(b)) => {
                        matched_any = true;
                        if b {
                            tally.labels.insert(i);
                        }
                    }
                    _ => tally.dropped.push(pair.to_owned()),
                }
            }
        }
    }
    if matched_any {
        // an all-false object is an explicit empty answer
        tally.saw_empty_word = true;
    }
    true
}

/// Parses a completion into a label set. Never fails: problems are reported through
/// [`ParseStatus`] and `dropped_tokens`.
pub fn parse_output(raw: &str, taxonomy: &EmotionTaxonomy, format: LabelFormat) -> ParseOutcome {
    let mut tally = Tally::new();
    match format {
        LabelFormat::CommaSeparated => parse_comma(answer_span(raw), taxonomy, &mut tally),
        LabelFormat::JsonObject => {
            if !parse_json(raw, taxonomy, &mut tally) {
                parse_comma(answer_span(raw), taxonomy, &mut tally);
                tally.fuzzy = true;
            }
        }
    }
    tally.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> EmotionTaxonomy {
        EmotionTaxonomy::new("t", ["anger", "joy", "fear"]).unwrap()
    }

    fn q(text: &str) -> LabeledExample {
        LabeledExample {
            id: "q".into(),
            text: text.into(),
            gold: LabelSet::EMPTY,
        }
    }

    #[test]
    fn zero_shot_is_instruction_plus_query() {
        let t = PromptTemplate::default_with(LabelFormat::CommaSeparated);
        let s = render_prompt(&t, &tax(), &[], &q("so happy")).unwrap();
        assert_eq!(
            s,
            "Perform emotion classification in the following examples by selecting none, one, or multiple of the following emotions: anger, joy, fear\n\nInput: so happy\n"
        );
    }

    #[test]
    fn demonstrations_are_separated_by_blank_line() {
        let t = PromptTemplate::default_with(LabelFormat::CommaSeparated);
        let d = vec![
            Demonstration {
                example_id: "a".into(),
                text: "grr".into(),
                shown_labels: LabelSet::from_indices([0]),
            },
            Demonstration {
                example_id: "b".into(),
                text: "meh".into(),
                shown_labels: LabelSet::EMPTY,
            },
        ];
        let s = render_prompt(&t, &tax(), &d, &q("yay")).unwrap();
        assert!(s.ends_with("\n\nInput: grr\nanger\n\nInput: meh\nnone\n\nInput: yay\n"));
        assert_eq!(s.matches("Input:").count(), 3);
        assert_eq!(s, render_prompt(&t, &tax(), &d, &q("yay")).unwrap());
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new("no placeholders", LabelFormat::CommaSeparated).is_err());
        assert!(PromptTemplate::new("{labels}\n{label} {text}", LabelFormat::CommaSeparated).is_err());
        assert!(PromptTemplate::new("Input: {text}\n{label} {labels}", LabelFormat::CommaSeparated).is_err());
        let t = PromptTemplate::new("Labels: {labels}\nQ: {text} A: {label}", LabelFormat::CommaSeparated).unwrap();
        assert_eq!(t.separator(), "\n");
        assert_eq!(t.input_marker(), "Q: ");
    }

    #[test]
    fn format_examples() {
        let t = tax();
        assert_eq!(format_labels(&t, LabelSet::EMPTY, LabelFormat::CommaSeparated), "none");
        assert_eq!(
            format_labels(&t, LabelSet::from_indices([1, 0]), LabelFormat::CommaSeparated),
            "anger, joy"
        );
        assert_eq!(
            format_labels(&t, LabelSet::from_indices([1]), LabelFormat::JsonObject),
            r#"{"anger": false, "joy": true, "fear": false}"#
        );
        assert_eq!(
            format_labels(&t, LabelSet::EMPTY, LabelFormat::JsonObject),
            r#"{"anger": false, "joy": false, "fear": false}"#
        );
    }

    #[test]
    fn parse_examples() {
        let t = tax();
        let o = parse_output("anger, joy", &t, LabelFormat::CommaSeparated);
        assert_eq!(o.labels, LabelSet::from_indices([0, 1]));
        assert_eq!(o.status, ParseStatus::Clean);

        let o = parse_output("Joy.", &t, LabelFormat::CommaSeparated);
        assert_eq!(o.labels, LabelSet::from_indices([1]));
        assert_eq!(o.status, ParseStatus::FuzzyMatched);

        let o = parse_output("I cannot classify this.", &t, LabelFormat::CommaSeparated);
        assert_eq!(o.labels, LabelSet::EMPTY);
        assert_eq!(o.status, ParseStatus::Unparseable);
        assert_eq!(o.dropped_tokens, ["I cannot classify this."]);

        let o = parse_output("neutral", &t, LabelFormat::CommaSeparated);
        assert_eq!((o.labels, o.status), (LabelSet::EMPTY, ParseStatus::Clean));

        let o = parse_output("joy, love", &t, LabelFormat::CommaSeparated);
        assert_eq!(o.labels, LabelSet::from_indices([1]));
        assert_eq!(o.status, ParseStatus::Partial);
        assert_eq!(o.dropped_tokens, ["love"]);

        assert_eq!(
            parse_output("", &t, LabelFormat::CommaSeparated).status,
            ParseStatus::Unparseable
        );
    }

    #[test]
    fn parse_stops_at_continuation() {
        let t = tax();
        let o = parse_output(" fear\n\nInput: next tweet\njoy", &t, LabelFormat::CommaSeparated);
        assert_eq!(o.labels, LabelSet::from_indices([2]));
        assert_eq!(o.status, ParseStatus::Clean);
    }

    #[test]
    fn parse_json_variants() {
        let t = tax();
        let o = parse_output(
            r#"{"anger": false, "joy": true, "fear": false}"#,
            &t,
            LabelFormat::JsonObject,
        );
        assert_eq!((o.labels, o.status), (LabelSet::from_indices([1]), ParseStatus::Clean));

        let o = parse_output(
            "Sure! {\"Anger\": true, \"joy\": \"yes\"} trailing {\"fear\": true}",
            &t,
            LabelFormat::JsonObject,
        );
        assert_eq!(o.labels, LabelSet::from_indices([0, 1]));
        assert_eq!(o.status, ParseStatus::FuzzyMatched);

        let o = parse_output("{'anger': True, 'joy': false,}", &t, LabelFormat::JsonObject);
        assert_eq!(o.labels, LabelSet::from_indices([0]));
        assert_eq!(o.status, ParseStatus::FuzzyMatched);

        let o = parse_output(r#"{"love": true}"#, &t, LabelFormat::JsonObject);
        assert_eq!(o.status, ParseStatus::Unparseable);
        assert_eq!(o.labels, LabelSet::EMPTY);

        let o = parse_output("joy", &t, LabelFormat::JsonObject);
        assert_eq!((o.labels, o.status), (LabelSet::from_indices([1]), ParseStatus::FuzzyMatched));

        let o = parse_output(r#"{"anger": false, "joy": true, "love": true}"#, &t, LabelFormat::JsonObject);
        assert_eq!(o.status, ParseStatus::Partial);
    }

    #[test]
    fn diagnostics_tally() {
        let mut d = ParseDiagnostics::default();
        for s in [ParseStatus::Clean, ParseStatus::Clean, ParseStatus::Unparseable] {
            d.record(s);
        }
        assert_eq!((d.clean, d.unparseable, d.total()), (2, 1, 3));
    }
}
