use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Expected tag set of one template's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagSchema {
    pub required: &'static [&'static str],
    pub optional: &'static [&'static str],
    /// Tag that opens a repeated group (e.g. `slot_name`).
    pub group_lead: Option<&'static str>,
    /// Numeric tag that must equal the number of groups.
    pub count_tag: Option<&'static str>,
}

impl TagSchema {
    pub fn knows(&self, tag: &str) -> bool {
        self.required.contains(&tag)
            || self.optional.contains(&tag)
            || self.group_lead == Some(tag)
            || self.count_tag == Some(tag)
    }
}

/// Tag contents in document order. Repeated tags are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedFields {
    pub entries: Vec<(String, String)>,
}

impl TaggedFields {
    pub fn first(&self, tag: &str) -> Option<&str> {
        self.entries.iter().find(|(t, _)| t == tag).map(|(_, v)| v.as_str())
    }

    pub fn all(&self, tag: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(t, _)| t == tag)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    pub fn count(&self, tag: &str) -> usize {
        self.entries.iter().filter(|(t, _)| t == tag).count()
    }

    /// Splits entries into groups each starting at `lead`. Entries before the
    /// first lead are not part of any group.
    pub fn groups(&self, lead: &str) -> Vec<BTreeMap<String, String>> {
        let mut out: Vec<BTreeMap<String, String>> = Vec::new();
        for (t, v) in &self.entries {
            if t == lead {
                out.push(BTreeMap::from([(t.clone(), v.clone())]));
            } else if let Some(g) = out.last_mut() {
                g.entry(t.clone()).or_insert_with(|| v.clone());
            }
        }
        out
    }

    /// Inverse of [`parse_tagged`] for well-formed content.
    pub fn to_tagged_text(&self) -> String {
        self.entries
            .iter()
            .map(|(t, v)| format!("<{t}>{v}</{t}>"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

enum Token<'a> {
    Open(&'a str),
    Close(&'a str),
}

/// Recognizes `<name>` / `</name>` with optional inner whitespace starting at
/// byte `i` (which holds `<`). Returns the token and the byte after `>`.
fn tag_at(s: &str, i: usize) -> Option<(Token<'_>, usize)> {
    let bytes = s.as_bytes();
    let mut j = i + 1;
    let skip_ws = |j: &mut usize| {
        while *j < bytes.len() && (bytes[*j] as char).is_ascii_whitespace() {
            *j += 1;
        }
    };
    skip_ws(&mut j);
    let closing = j < bytes.len() && bytes[j] == b'/';
    if closing {
        j += 1;
        skip_ws(&mut j);
    }
    let start = j;
    while j < bytes.len() && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_') {
        j += 1;
    }
    if j == start {
        return None;
    }
    let name = &s[start..j];
    skip_ws(&mut j);
    if j < bytes.len() && bytes[j] == b'>' {
        let tok = if closing { Token::Close(name) } else { Token::Open(name) };
        Some((tok, j + 1))
    } else {
        None
    }
}

/// Extracts the contents of the schema's tags in document order. Text outside
/// tags (prose, code fences) is ignored; tags not in the schema are treated as
/// plain text.
pub fn parse_tagged(raw: &str, schema: &TagSchema) -> Result<TaggedFields, GatewayError> {
    let mut entries = Vec::new();
    // (name, content start, depth)
    let mut open: Option<(&str, usize, usize)> = None;
    let mut i = 0;
    while let Some(off) = raw[i..].find('<') {
        let at = i + off;
        let Some((tok, next)) = tag_at(raw, at) else {
            i = at + 1;
            continue;
        };
        match (tok, &mut open) {
            (Token::Open(n), None) if schema.knows(n) => open = Some((n, next, 1)),
            (Token::Close(n), None) if schema.knows(n) => {
                return Err(GatewayError::MalformedTags(format!("unexpected </{n}>")))
            }
            (Token::Open(n), Some((cur, _, depth))) if n == *cur => *depth += 1,
            (Token::Close(n), Some((cur, start, depth))) if n == *cur => {
                *depth -= 1;
                if *depth == 0 {
                    entries.push((n.to_string(), raw[*start..at].trim().to_string()));
                    open = None;
                }
            }
            _ => {}
        }
        i = next;
    }
    if let Some((n, _, _)) = open {
        return Err(GatewayError::MalformedTags(format!("<{n}> is never closed")));
    }
    let fields = TaggedFields { entries };
    for tag in schema.required {
        if fields.first(tag).is_none() {
            return Err(GatewayError::SchemaViolation(format!("missing <{tag}>")));
        }
    }
    if let (Some(ct), Some(lead)) = (schema.count_tag, schema.group_lead) {
        if let Some(v) = fields.first(ct) {
            let declared: usize = v
                .trim()
                .parse()
                .map_err(|_| GatewayError::SchemaViolation(format!("<{ct}> is not a count: `{v}`")))?;
            let found = fields.count(lead);
            if declared != found {
                return Err(GatewayError::CountMismatch { declared, found });
            }
        }
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::TemplateId;

    const DIDI: &str = r#"```xml
<num>6</num>
<slot_name>app</slot_name><slot_value>Didi</slot_value><inquiry>null</inquiry>
<slot_name>Departure Location</slot_name><slot_value>Tianjin Binhai Airport</slot_value><inquiry>null</inquiry>
<slot_name>Destination</slot_name><slot_value>1 Shuishang Park East Road, Nankai</slot_value><inquiry>null</inquiry>
<slot_name>Departure Time</slot_name><slot_value>null</slot_value><inquiry>What time do you need to book the ride?</inquiry>
<slot_name>Vehicle Type</slot_name><slot_value>null</slot_value><inquiry>Which vehicle type do you prefer (e.g., economy, premium)?</inquiry>
<slot_name>Budget Range</slot_name><slot_value>null</slot_value><inquiry>What is your budget range?</inquiry>
```"#;

    #[test]
    fn didi_preprocess_output() {
        let f = parse_tagged(DIDI, &TemplateId::Preprocess.schema()).unwrap();
        let groups = f.groups("slot_name");
        assert_eq!(groups.len(), 6);
        assert_eq!(f.first("num"), Some("6"));
        assert_eq!(groups[3]["slot_name"], "Departure Time");
        assert_eq!(groups[3]["slot_value"], "null");
    }

    #[test]
    fn zero_new_slots_is_valid() {
        let raw = "<screen_description>list page</screen_description><thought>nothing</thought><num>0</num>";
        let f = parse_tagged(raw, &TemplateId::SlotGen.schema()).unwrap();
        assert!(f.groups("slot_name").is_empty());
        let f = parse_tagged("<num>0</num>", &TemplateId::SlotGen.schema()).unwrap();
        assert_eq!(f.count("slot_name"), 0);
    }

    #[test]
    fn count_mismatch() {
        let raw = "<num>2</num><slot_name>Phone Number</slot_name><inquiry>?</inquiry>";
        assert_eq!(
            parse_tagged(raw, &TemplateId::SlotGen.schema()).unwrap_err(),
            GatewayError::CountMismatch { declared: 2, found: 1 }
        );
    }

    #[test]
    fn malformed_and_missing() {
        let s = TemplateId::Decide.schema();
        assert!(matches!(
            parse_tagged("<state>a</state><plan>b", &s),
            Err(GatewayError::MalformedTags(_))
        ));
        assert!(matches!(
            parse_tagged("</plan><state>a</state>", &s),
            Err(GatewayError::MalformedTags(_))
        ));
        assert!(matches!(
            parse_tagged("<state>a</state><plan>b</plan>", &s),
            Err(GatewayError::SchemaViolation(_))
        ));
    }

    #[test]
    fn lenient_whitespace_prose_and_unknown_tags() {
        let raw =
            "Sure! Here you go:\n< state >page <b>bold</b></ state>\n<plan> p </plan>\n<action>BACK()</action> thanks";
        let f = parse_tagged(raw, &TemplateId::Decide.schema()).unwrap();
        assert_eq!(f.first("state"), Some("page <b>bold</b>"));
        assert_eq!(f.first("plan"), Some("p"));
        assert_eq!(f.first("action"), Some("BACK()"));
    }

    #[test]
    fn roundtrip() {
        let f = parse_tagged(DIDI, &TemplateId::Preprocess.schema()).unwrap();
        let again = parse_tagged(&f.to_tagged_text(), &TemplateId::Preprocess.schema()).unwrap();
        assert_eq!(f, again);
    }
}
