//! Prompt text resources and the shared class listing.
//!
//! Templates are plain text files under `templates/` compiled into the
//! binary. Placeholders look like `{{name}}`; the file name carries the
//! template version, and golden files pin the rendered bytes.

use crate::data::ClassSpec;

pub const GENERATION_SYSTEM: &str = include_str!("../templates/generation_system_v1.txt");
pub const RELABEL_SYSTEM: &str = include_str!("../templates/relabel_system_v1.txt");
pub const GENERATION: &str = include_str!("../templates/generation_v1.txt");
pub const MIXUP_INSTRUCTION: &str = include_str!("../templates/mixup_instruction_v1.txt");
pub const SINGLE_INSTRUCTION: &str = include_str!("../templates/single_instruction_v1.txt");
pub const RELABEL: &str = include_str!("../templates/relabel_v1.txt");

/// Substitutes every `{{key}}`. Panics on a placeholder left unfilled,
/// since templates are compiled in and that is a programming error.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    assert!(!out.contains("{{"), "unfilled placeholder in template:\n{out}");
    out
}

/// Numbered class blocks preceded by a one-line header. Each block is the
/// class name, optionally its description, and its seed examples; every
/// block ends with a blank line.
pub fn class_listing<'a>(classes: impl IntoIterator<Item = &'a ClassSpec>, descriptions: bool) -> String {
    let classes: Vec<&ClassSpec> = classes.into_iter().collect();
    let with_examples = classes.iter().any(|c| !c.seed_examples.is_empty());
    let mut out = String::from("Consider the task of classifying between the following classes");
    out.push_str(if with_examples { " (along with some examples):\n\n" } else { ":\n\n" });
    for (i, class) in classes.iter().enumerate() {
        out.push_str(&format!("{}. {}", i + 1, class.name));
        if descriptions {
            out.push_str(&format!(": {}", class.description));
        }
        out.push('\n');
        if !class.seed_examples.is_empty() {
            out.push_str(&format!("Examples of {}:\n", class.name));
            for example in &class.seed_examples {
                out.push_str(&format!("- {example}\n"));
            }
        }
        out.push('\n');
    }
    out
}

/// Class names in listing order, recovered from a rendered listing.
pub fn listed_classes(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|line| {
            let (number, rest) = line.split_once(". ")?;
            if number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let name = rest.split_once(": ").map_or(rest, |(n, _)| n);
            Some(name.to_string())
        })
        .collect()
}
