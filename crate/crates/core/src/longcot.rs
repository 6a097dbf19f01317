//! Sectioned reasoning traces.
//!
//! A trace is a sequence of `###` headed sections in a fixed order:
//!
//! ```text
//! ### Description
//! ### Rationale                  (optional)
//! ### Let's think step by step   (optional marker, no body)
//! ### Step 1 .. ### Step N       (zero or more, numbered from 1)
//! ### In Conclusion
//! ```
//!
//! The Description body is the descriptive segment; rationale, steps and
//! conclusion together form the reasoning segment.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::text;

pub const DESCRIPTION_HEADING: &str = "### Description";
pub const RATIONALE_HEADING: &str = "### Rationale";
pub const MARKER_HEADING: &str = "### Let's think step by step";
pub const STEP_HEADING_PREFIX: &str = "### Step ";
pub const CONCLUSION_HEADING: &str = "### In Conclusion";

/// The two functional parts of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Desc,
    Reason,
}

impl Segment {
    pub const BOTH: [Segment; 2] = [Segment::Desc, Segment::Reason];

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Desc => "desc",
            Segment::Reason => "reason",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LongCotError {
    #[error("empty document")]
    EmptyInput,
    #[error("line {line}: expected `### Description` as the first section")]
    MissingDescription { line: usize },
    #[error("line {line}: document ends without an `### In Conclusion` section")]
    MissingConclusion { line: usize },
    #[error("line {line}: step {found} follows step {}, expected step {expected}", expected - 1)]
    NonContiguousSteps { line: usize, expected: u32, found: u32 },
    #[error("line {line}: unknown heading `{heading}`")]
    UnknownHeading { line: usize, heading: String },
    #[error("line {line}: section `{heading}` is out of order")]
    SectionOrder { line: usize, heading: String },
    #[error("line {line}: the step-by-step marker carries body text")]
    MarkerBody { line: usize },
    #[error("invalid response: {0}")]
    InvariantViolation(String),
}

/// Non-fatal findings reported by the lenient parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    TrailingWhitespaceHeading { line: usize },
    MarkerBody { line: usize },
}

impl core::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParseWarning::TrailingWhitespaceHeading { line } => {
                write!(f, "line {line}: trailing whitespace after a heading was ignored")
            }
            ParseWarning::MarkerBody { line } => {
                write!(f, "line {line}: text under the step-by-step marker was ignored")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Description,
    Rationale,
    StepMarker,
    Step(u32),
    Conclusion,
}

impl SectionKind {
    pub fn heading(self) -> String {
        match self {
            SectionKind::Description => DESCRIPTION_HEADING.to_string(),
            SectionKind::Rationale => RATIONALE_HEADING.to_string(),
            SectionKind::StepMarker => MARKER_HEADING.to_string(),
            SectionKind::Step(n) => format!("{STEP_HEADING_PREFIX}{n}"),
            SectionKind::Conclusion => CONCLUSION_HEADING.to_string(),
        }
    }

    fn classify(line: &str) -> Option<SectionKind> {
        match line {
            DESCRIPTION_HEADING => Some(SectionKind::Description),
            RATIONALE_HEADING => Some(SectionKind::Rationale),
            MARKER_HEADING => Some(SectionKind::StepMarker),
            CONCLUSION_HEADING => Some(SectionKind::Conclusion),
            _ => {
                let digits = line.strip_prefix(STEP_HEADING_PREFIX)?;
                let canonical =
                    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && !digits.starts_with('0');
                if !canonical {
                    return None;
                }
                digits.parse().ok().map(SectionKind::Step)
            }
        }
    }
}

/// One headed section, as produced by a single search expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub body: String,
}

impl Section {
    pub fn render(&self) -> String {
        let mut out = self.kind.heading();
        out.push('\n');
        if !self.body.is_empty() {
            out.push_str(&self.body);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Tolerate trailing whitespace after headings and body text under the
    /// step-by-step marker.
    pub lenient: bool,
}

impl ParseOptions {
    pub const STRICT: ParseOptions = ParseOptions { lenient: false };
    pub const LENIENT: ParseOptions = ParseOptions { lenient: true };
}

/// A parsed reasoning trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongCoTResponse {
    pub raw_text: String,
    pub description: String,
    pub rationale: String,
    /// Whether the `### Let's think step by step` marker is present.
    pub step_marker: bool,
    /// Text found under the marker (lenient parsing only).
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub step_preamble: String,
    pub steps: Vec<Step>,
    pub conclusion: String,
    pub desc_segment: String,
    pub reason_segment: String,
}

impl LongCoTResponse {
    /// Builds a canonical response; `raw_text` is its rendering.
    pub fn new(
        description: impl Into<String>,
        rationale: impl Into<String>,
        steps: Vec<String>,
        conclusion: impl Into<String>,
    ) -> Self {
        let steps = steps
            .into_iter()
            .zip(1..)
            .map(|(text, index)| Step { index, text })
            .collect();
        let mut resp = LongCoTResponse {
            raw_text: String::new(),
            description: description.into(),
            rationale: rationale.into(),
            step_marker: false,
            step_preamble: String::new(),
            steps,
            conclusion: conclusion.into(),
            desc_segment: String::new(),
            reason_segment: String::new(),
        };
        resp.refresh();
        resp
    }

    pub fn with_step_marker(mut self) -> Self {
        self.step_marker = true;
        self.refresh();
        self
    }

    /// Recomputes the segments and re-renders `raw_text` after the section
    /// fields were edited.
    pub fn refresh(&mut self) {
        self.desc_segment = self.description.clone();
        self.reason_segment = compose_reason(self);
        self.raw_text = render_unchecked(self);
    }

    pub fn segment_text(&self, segment: Segment) -> &str {
        match segment {
            Segment::Desc => &self.desc_segment,
            Segment::Reason => &self.reason_segment,
        }
    }

    pub fn sections(&self) -> Vec<Section> {
        let mut out = Vec::with_capacity(self.steps.len() + 4);
        out.push(Section {
            kind: SectionKind::Description,
            body: self.description.clone(),
        });
        if !self.rationale.is_empty() {
            out.push(Section {
                kind: SectionKind::Rationale,
                body: self.rationale.clone(),
            });
        }
        if self.step_marker {
            out.push(Section {
                kind: SectionKind::StepMarker,
                body: self.step_preamble.clone(),
            });
        }
        out.extend(self.steps.iter().map(|s| Section {
            kind: SectionKind::Step(s.index),
            body: s.text.clone(),
        }));
        out.push(Section {
            kind: SectionKind::Conclusion,
            body: self.conclusion.clone(),
        });
        out
    }

    pub fn validate(&self) -> Result<(), LongCotError> {
        let violation = |msg: String| Err(LongCotError::InvariantViolation(msg));
        for (step, expected) in self.steps.iter().zip(1u32..) {
            if step.index != expected {
                return violation(format!(
                    "step indices must run 1..n, found {} at position {expected}",
                    step.index
                ));
            }
        }
        if !self.step_preamble.is_empty() && !self.step_marker {
            return violation("step preamble without the step marker".into());
        }
        for section in self.sections() {
            if let Err(msg) = check_body(&section.body) {
                return violation(format!("{}: {msg}", section.kind.heading()));
            }
        }
        if self.desc_segment != self.description {
            return violation("desc_segment differs from the Description body".into());
        }
        if self.reason_segment != compose_reason(self) {
            return violation("reason_segment differs from rationale + steps + conclusion".into());
        }
        Ok(())
    }
}

fn check_body(body: &str) -> Result<(), &'static str> {
    if body.is_empty() {
        return Ok(());
    }
    let mut lines = body.split('\n');
    if lines.clone().any(|l| l.starts_with("###")) {
        return Err("body line starts with `###`");
    }
    let first_blank = lines.next().is_some_and(is_blank);
    let last_blank = body.split('\n').next_back().is_some_and(is_blank);
    if first_blank || last_blank {
        return Err("body starts or ends with a blank line");
    }
    Ok(())
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

fn compose_reason(resp: &LongCoTResponse) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(resp.steps.len() + 3);
    parts.push(&resp.rationale);
    parts.push(&resp.step_preamble);
    parts.extend(resp.steps.iter().map(|s| s.text.as_str()));
    parts.push(&resp.conclusion);
    parts.retain(|p| !p.is_empty());
    parts.join("\n\n")
}

fn render_unchecked(resp: &LongCoTResponse) -> String {
    render_sections(&resp.sections())
}

/// Joins sections with one blank line between them.
pub fn render_sections(sections: &[Section]) -> String {
    let mut out = String::new();
    for (i, section) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&section.render());
    }
    out
}

/// Strict parse.
pub fn parse_longcot(text: &str) -> Result<LongCoTResponse, LongCotError> {
    parse_with(text, ParseOptions::STRICT).map(|(resp, _)| resp)
}

/// Canonical rendering. Fails when `resp` breaks its invariants.
pub fn render_longcot(resp: &LongCoTResponse) -> Result<String, LongCotError> {
    resp.validate()?;
    Ok(render_unchecked(resp))
}

/// `(desc, reason)` split of a response.
pub fn segment(resp: &LongCoTResponse) -> (&str, &str) {
    (&resp.desc_segment, &resp.reason_segment)
}

struct RawSection<'a> {
    kind: SectionKind,
    heading: &'a str,
    line: usize,
    body: Vec<&'a str>,
}

fn split_sections<'a>(
    text: &'a str,
    opts: ParseOptions,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Vec<RawSection<'a>>, LongCotError> {
    let mut sections: Vec<RawSection<'a>> = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        if line.starts_with("###") {
            let candidate = if opts.lenient { line.trim_end() } else { line };
            let kind = SectionKind::classify(candidate).ok_or_else(|| LongCotError::UnknownHeading {
                line: line_no,
                heading: line.to_string(),
            })?;
            if candidate.len() != line.len() {
                warnings.push(ParseWarning::TrailingWhitespaceHeading { line: line_no });
            }
            sections.push(RawSection {
                kind,
                heading: line,
                line: line_no,
                body: Vec::new(),
            });
        } else if let Some(current) = sections.last_mut() {
            current.body.push(line);
        } else if !is_blank(line) {
            return Err(LongCotError::MissingDescription { line: line_no });
        }
    }
    Ok(sections)
}

fn join_body(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !is_blank(l));
    let end = lines.iter().rposition(|l| !is_blank(l));
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Parses with explicit options, returning lenient-mode warnings.
pub fn parse_with(text: &str, opts: ParseOptions) -> Result<(LongCoTResponse, Vec<ParseWarning>), LongCotError> {
    if text.trim().is_empty() {
        return Err(LongCotError::EmptyInput);
    }
    let mut warnings = Vec::new();
    let sections = split_sections(text, opts, &mut warnings)?;

    // 0 start, 1 description, 2 rationale, 3 marker, 4 steps, 5 conclusion
    let mut stage = 0u8;
    let mut resp = LongCoTResponse {
        raw_text: text.to_string(),
        description: String::new(),
        rationale: String::new(),
        step_marker: false,
        step_preamble: String::new(),
        steps: Vec::new(),
        conclusion: String::new(),
        desc_segment: String::new(),
        reason_segment: String::new(),
    };
    for section in &sections {
        let out_of_order = || LongCotError::SectionOrder {
            line: section.line,
            heading: section.heading.to_string(),
        };
        if stage == 0 && section.kind != SectionKind::Description {
            return Err(LongCotError::MissingDescription { line: section.line });
        }
        let body = join_body(&section.body);
        match section.kind {
            SectionKind::Description => {
                if stage != 0 {
                    return Err(out_of_order());
                }
                resp.description = body;
                stage = 1;
            }
            SectionKind::Rationale => {
                if stage != 1 {
                    return Err(out_of_order());
                }
                resp.rationale = body;
                stage = 2;
            }
            SectionKind::StepMarker => {
                if !(1..=2).contains(&stage) {
                    return Err(out_of_order());
                }
                if !body.is_empty() {
                    if !opts.lenient {
                        return Err(LongCotError::MarkerBody { line: section.line });
                    }
                    warnings.push(ParseWarning::MarkerBody { line: section.line });
                }
                resp.step_marker = true;
                resp.step_preamble = body;
                stage = 3;
            }
            SectionKind::Step(found) => {
                if !(1..=4).contains(&stage) {
                    return Err(out_of_order());
                }
                let expected = resp.steps.len() as u32 + 1;
                if found != expected {
                    return Err(LongCotError::NonContiguousSteps {
                        line: section.line,
                        expected,
                        found,
                    });
                }
                resp.steps.push(Step {
                    index: found,
                    text: body,
                });
                stage = 4;
            }
            SectionKind::Conclusion => {
                if !(1..=4).contains(&stage) {
                    return Err(out_of_order());
                }
                resp.conclusion = body;
                stage = 5;
            }
        }
    }
    if stage != 5 {
        let last_line = text.split('\n').count();
        return Err(LongCotError::MissingConclusion { line: last_line });
    }
    resp.desc_segment = resp.description.clone();
    resp.reason_segment = compose_reason(&resp);
    Ok((resp, warnings))
}

/// Parses a single headed section such as `### Step 2\n...`.
pub fn parse_section(text: &str) -> Result<Section, LongCotError> {
    let mut warnings = Vec::new();
    let sections = split_sections(text, ParseOptions::STRICT, &mut warnings)?;
    match sections.as_slice() {
        [only] => Ok(Section {
            kind: only.kind,
            body: join_body(&only.body),
        }),
        [] => Err(LongCotError::MissingDescription { line: 1 }),
        [_, second, ..] => Err(LongCotError::SectionOrder {
            line: second.line,
            heading: second.heading.to_string(),
        }),
    }
}

/// The six recognised length units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    Millimeter,
    Centimeter,
    Meter,
    Kilometer,
    Inch,
    Foot,
}

impl LengthUnit {
    pub fn meters_per_unit(self) -> f64 {
        match self {
            LengthUnit::Millimeter => 0.001,
            LengthUnit::Centimeter => 0.01,
            LengthUnit::Meter => 1.0,
            LengthUnit::Kilometer => 1000.0,
            LengthUnit::Inch => 0.0254,
            LengthUnit::Foot => 0.3048,
        }
    }

    /// Converts a value in this unit to meters. Metric sub-units divide by
    /// a power of ten so that `95 cm` becomes exactly `0.95`.
    pub fn to_meters(self, value: f64) -> f64 {
        match self {
            LengthUnit::Millimeter => value / 1000.0,
            LengthUnit::Centimeter => value / 100.0,
            other => value * other.meters_per_unit(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            LengthUnit::Millimeter => "mm",
            LengthUnit::Centimeter => "cm",
            LengthUnit::Meter => "m",
            LengthUnit::Kilometer => "km",
            LengthUnit::Inch => "in",
            LengthUnit::Foot => "ft",
        }
    }

    /// Matches a lowercase unit word, abbreviated or spelled out.
    pub fn from_word(word: &str) -> Option<LengthUnit> {
        use LengthUnit::*;
        let unit = match word {
            "mm" | "millimeter" | "millimeters" | "millimetre" | "millimetres" => Millimeter,
            "cm" | "centimeter" | "centimeters" | "centimetre" | "centimetres" => Centimeter,
            "m" | "meter" | "meters" | "metre" | "metres" => Meter,
            "km" | "kilometer" | "kilometers" | "kilometre" | "kilometres" => Kilometer,
            "in" | "inch" | "inches" => Inch,
            "ft" | "foot" | "feet" => Foot,
            _ => return None,
        };
        Some(unit)
    }
}

/// A length found in the conclusion, normalised to meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConclusionValue {
    /// Value in meters.
    pub numeric_value: f64,
    /// Always `"m"`.
    pub unit: String,
    /// The literal as written, in `source_unit`.
    pub raw_value: f64,
    pub source_unit: LengthUnit,
    /// Digits after the decimal point in the literal.
    pub decimals: usize,
    /// Byte range of the numeric literal within the conclusion.
    pub span: (usize, usize),
    /// Byte offset just past the unit word.
    pub unit_end: usize,
}

/// Every `<number> <unit>` length in the conclusion, in text order.
///
/// A bare `in` only counts when it is not followed by another word, so
/// "2 in the corner" is not read as inches.
pub fn extract_conclusion_values(resp: &LongCoTResponse) -> Vec<ConclusionValue> {
    extract_lengths(&resp.conclusion)
}

pub fn extract_lengths(text: &str) -> Vec<ConclusionValue> {
    let mut out = Vec::new();
    for lit in text::number_literals(text) {
        let rest = &text[lit.end..];
        let after_space = rest.trim_start_matches(' ');
        let word_len = after_space
            .find(|c: char| !c.is_alphabetic())
            .unwrap_or(after_space.len());
        if word_len == 0 {
            continue;
        }
        let word = after_space[..word_len].to_lowercase();
        let Some(unit) = LengthUnit::from_word(&word) else {
            continue;
        };
        if unit == LengthUnit::Inch && word == "in" {
            let tail = &after_space[word_len..];
            let next_is_word = tail.trim_start().chars().next().is_some_and(char::is_alphabetic);
            if tail.starts_with(char::is_whitespace) && next_is_word {
                continue;
            }
        }
        let unit_end = text.len() - after_space.len() + word_len;
        let numeric_value = unit.to_meters(lit.value);
        if !numeric_value.is_finite() {
            continue;
        }
        out.push(ConclusionValue {
            numeric_value,
            unit: "m".to_string(),
            raw_value: lit.value,
            source_unit: unit,
            decimals: lit.decimals,
            span: (lit.start, lit.end),
            unit_end,
        });
    }
    out
}
