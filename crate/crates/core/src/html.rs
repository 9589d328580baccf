//! Static HTML rendering of token rationales.
//!
//! Tokens predicted as rationale are wrapped in `tp` (gold rationale too) or
//! `fp` spans; gold rationale tokens carry the `gold` class (underline).
//! Every token shows its score on hover. Without gold labels, predicted
//! tokens use the neutral `pred` class.

use std::fmt::Write;

use crate::data::Dataset;
use crate::error::Result;
use crate::eval::DocPrediction;

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.7}\
.doc{border-top:1px solid #ccc;padding:.5em 0}\
.meta{color:#555;font-size:.9em}\
.gold{text-decoration:underline;text-decoration-thickness:2px}\
.tp{background:#9be29b}\
.fp{background:#f3a6a6}\
.pred{background:#f5e08c}";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders one self-contained page. `preds` must already be aligned with
/// `ds` (see [`crate::eval::align_predictions`]).
pub fn render_report(title: &str, ds: &Dataset, preds: &[DocPrediction]) -> Result<String> {
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{t}</title><style>{STYLE}</style></head><body>\n<h1>{t}</h1>\n\
<p class=\"meta\">Legend: <span style=\"background:#9be29b\">true positive</span> <span style=\"background:#f3a6a6\">false positive</span> <span style=\"text-decoration:underline\">gold rationale</span></p>\n",
        t = escape(title)
    );
    for (doc, pred) in ds.documents.iter().zip(preds) {
        let gold = doc.flat_token_labels();
        let y = pred.y_hat.map_or("-".to_string(), |y| format!("{y:.4}"));
        let _ = write!(
            html,
            "<div class=\"doc\"><p class=\"meta\">{} &middot; label {} &middot; y&#770; {}</p><p>",
            escape(&doc.doc_id),
            doc.doc_label,
            y
        );
        let mut i = 0;
        for sentence in &doc.sentences {
            for (j, tok) in sentence.iter().enumerate() {
                if j > 0 || i > 0 {
                    html.push(' ');
                }
                let is_gold = gold.as_ref().is_some_and(|g| g[i] == 1);
                let predicted = pred.binary_rationale[i] == 1;
                let mut classes = Vec::new();
                if is_gold {
                    classes.push("gold");
                }
                if predicted {
                    classes.push(match (&gold, is_gold) {
                        (None, _) => "pred",
                        (Some(_), true) => "tp",
                        (Some(_), false) => "fp",
                    });
                }
                let title = format!("{:.4}", pred.token_scores[i]);
                if classes.is_empty() {
                    let _ = write!(html, "<span title=\"{title}\">{}</span>", escape(tok));
                } else {
                    let _ = write!(
                        html,
                        "<span class=\"{}\" title=\"{title}\">{}</span>",
                        classes.join(" "),
                        escape(tok)
                    );
                }
                i += 1;
            }
        }
        html.push_str("</p></div>\n");
    }
    html.push_str("</body></html>\n");
    Ok(html)
}
