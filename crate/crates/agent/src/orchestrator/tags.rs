//! `<hr>value</hr>` tagging of numeric results in response text.

use std::sync::OnceLock;

use regex::Regex;

/// Values found by [`extract_tagged_values`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extracted {
    /// In document order; `NaN` for `<tag>NaN</tag>`.
    pub values: Vec<f64>,
    /// Spans whose content was not a number or `NaN`.
    pub skipped: usize,
}

fn span_regex(tag: &str) -> Regex {
    let t = regex::escape(tag);
    Regex::new(&format!(r"(?s)<{t}>(.*?)</{t}>")).expect("tag pattern compiles")
}

/// Parses every `<tag>...</tag>` span as a real number or NaN.
pub fn extract_tagged_values(text: &str, tag: &str) -> Extracted {
    static HR: OnceLock<Regex> = OnceLock::new();
    let owned;
    let re = if tag == "hr" {
        HR.get_or_init(|| span_regex("hr"))
    } else {
        owned = span_regex(tag);
        &owned
    };
    let mut out = Extracted::default();
    for cap in re.captures_iter(text) {
        let body = cap[1].trim();
        if body.eq_ignore_ascii_case("nan") {
            out.values.push(f64::NAN);
            continue;
        }
        match body.parse::<f64>() {
            Ok(v) if v.is_finite() => out.values.push(v),
            _ => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        tracing::warn!(skipped = out.skipped, tag, "unparseable tagged spans");
    }
    out
}

/// Text form of an HR value inside a tag: one decimal, or `NaN`.
pub fn format_hr(value: f64) -> String {
    if value.is_nan() {
        "NaN".to_string()
    } else {
        format!("{value:.1}")
    }
}

pub fn tag(value: &str) -> String {
    format!("<hr>{value}</hr>")
}

/// Makes sure `value` appears tagged in `text`.
///
/// An existing tagged occurrence is left alone; otherwise the first bare
/// occurrence (not part of a longer number) is wrapped. Returns `None` when
/// the value does not occur at all.
pub fn ensure_tagged(text: &str, value: &str) -> Option<String> {
    if text.contains(&tag(value)) {
        return Some(text.to_string());
    }
    let pattern = format!(
        r"(^|[^0-9.A-Za-z<>]){}($|[^0-9A-Za-z<])",
        regex::escape(value)
    );
    let re = Regex::new(&pattern).expect("value pattern compiles");
    let m = re.captures_iter(text).find(|c| {
        let whole = c.get(0).unwrap();
        // skip a trailing-dot match such as "72.4." only when followed by a digit
        !text[whole.end()..].starts_with(|ch: char| ch.is_ascii_digit())
    })?;
    let lead = m.get(1).unwrap();
    let start = lead.end();
    let end = start + value.len();
    Some(format!("{}{}{}", &text[..start], tag(value), &text[end..]))
}
