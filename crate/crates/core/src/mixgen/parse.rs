/// Strips one leading list marker (`12.`, `3)` or `-`) and the whitespace
/// after it. A numeric marker must not be followed by a digit, so `1.5 m`
/// is not a marker.
pub fn strip_list_marker(line: &str) -> Option<&str> {
    let line = line.trim_start();
    if let Some(rest) = line.strip_prefix('-') {
        return Some(rest.trim_start());
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if rest.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    Some(rest.trim_start())
}

/// Extracts up to `n_max` list items from a completion. Only lines with a
/// list marker count. Markers are stripped (repeatedly, for `1. - text`),
/// and items with fewer than 3 whitespace-separated tokens are dropped.
pub fn parse_generations(completion: &str, n_max: usize) -> Vec<String> {
    completion
        .lines()
        .filter_map(|line| {
            let mut item = strip_list_marker(line)?;
            while let Some(rest) = strip_list_marker(item) {
                item = rest;
            }
            let item = item.trim();
            (item.split_whitespace().count() >= 3).then(|| item.to_string())
        })
        .take(n_max)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbered_list() {
        let out = parse_generations(
            "1. Can I open an account for a minor?\n2. What is the age limit?",
            10,
        );
        assert_eq!(out, vec!["Can I open an account for a minor?", "What is the age limit?"]);
    }

    #[test]
    fn dash_item() {
        let out = parse_generations(
            "- Can someone under 18 open an account with unlimited ATM withdrawal limit?",
            5,
        );
        assert_eq!(
            out,
            vec!["Can someone under 18 open an account with unlimited ATM withdrawal limit?"]
        );
    }

    #[test]
    fn chatter_without_list_is_empty() {
        assert!(parse_generations("Sure! Here you go:", 5).is_empty());
        assert!(parse_generations("", 5).is_empty());
    }

    #[test]
    fn mixed_markers_short_items_and_limit() {
        let text = "Here are some:\n\n1) first utterance is fine\n2. too short\n  3.  third one works too\n- 4. nested marker text here\n1.5 million is not a marker line\n5. fifth and final utterance";
        let out = parse_generations(text, 3);
        assert_eq!(
            out,
            vec!["first utterance is fine", "third one works too", "nested marker text here"]
        );
        assert_eq!(parse_generations(text, 10).len(), 4);
    }

    proptest! {
        #[test]
        fn outputs_never_start_with_a_marker(text in "([0-9]{0,2}[.)-]? ?[a-z ]{0,12}\n){0,8}") {
            for item in parse_generations(&text, 20) {
                prop_assert!(strip_list_marker(&item).is_none(), "{item:?}");
                prop_assert!(item.split_whitespace().count() >= 3);
            }
        }
    }
}
