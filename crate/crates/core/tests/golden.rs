mod common;

#[test]
fn prompts_match_golden_files() {
    let mismatched = common::check_goldens();
    assert!(mismatched.is_empty(), "prompts differ from golden files: {mismatched:?} (rerun with UPDATE_GOLDEN=1 after review)");
}

#[test]
fn golden_set_is_complete() {
    assert_eq!(common::golden_cases().len(), 12);
    let text: std::collections::HashMap<_, _> = common::golden_cases().into_iter().collect();
    assert!(text["generation_2shot_mixup_t2.txt"].contains("75% to the class age_limit and 25% to the class atm_support"));
    assert!(!text["generation_2shot_nomixup_t4.txt"].contains('%'));
    assert!(!text["generation_zeroshot_mixup_t4.txt"].contains("Examples of"));
    assert!(text["relabel_2shot_c2.txt"].contains(common::FIGURE_SENTENCE));
}
