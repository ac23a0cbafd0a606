use serde::{Deserialize, Serialize};

use super::ActionDistribution;

/// One decision in human-readable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub templates: Vec<(String, f64)>,
    pub objects: Vec<Vec<(String, f64)>>,
    pub mask_size: usize,
    pub action: String,
    pub valid: bool,
}

impl TraceEntry {
    pub fn new(
        step: u64,
        dist: &ActionDistribution,
        template_names: &[String],
        words: &[String],
        mask_size: usize,
        action: &str,
        valid: bool,
    ) -> Self {
        TraceEntry {
            step,
            templates: top_k(&dist.template_probs(), 5)
                .into_iter()
                .map(|(i, p)| (template_names[i].clone(), p))
                .collect(),
            objects: (0..dist.objects.len())
                .map(|slot| {
                    top_k(&dist.object_probs(slot), 5)
                        .into_iter()
                        .map(|(i, p)| (words[i].clone(), p))
                        .collect()
                })
                .collect(),
            mask_size,
            action: action.to_string(),
            valid,
        }
    }

    /// Lines in the form `Template probs: take OBJ: 0.41 ...`.
    pub fn render(&self) -> String {
        let list = |xs: &[(String, f64)]| {
            xs.iter()
                .map(|(n, p)| format!("{n}: {p:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = format!(
            "step {} (mask {})\n  Template probs: {}\n",
            self.step,
            self.mask_size,
            list(&self.templates)
        );
        for slot in &self.objects {
            out.push_str(&format!("  Object probs: {}\n", list(slot)));
        }
        out.push_str(&format!(
            "  Action: {}{}\n",
            self.action,
            if self.valid { "" } else { " (invalid)" }
        ));
        out
    }
}

/// The `k` largest entries, highest first, ties by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, values[i])).collect()
}
