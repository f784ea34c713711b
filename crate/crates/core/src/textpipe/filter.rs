use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unicode_categories::UnicodeCategories;

/// Full-width and ASCII marks that can end or separate a clause.
pub const DEFAULT_RETAINED: &[char] = &['。', '！', '？', '；', '，', '…', '.', '!', '?', ';', ','];

/// Which punctuation survives filtering. Everything else in the Unicode
/// punctuation and symbol categories is deleted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    retained: BTreeSet<char>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules::retaining(DEFAULT_RETAINED.iter().copied())
    }
}

impl FilterRules {
    pub fn retaining(marks: impl IntoIterator<Item = char>) -> Self {
        FilterRules { retained: marks.into_iter().collect() }
    }

    /// Rules parsed from a string listing every retained mark.
    pub fn from_marks(marks: &str) -> Self {
        FilterRules::retaining(marks.chars().filter(|c| !c.is_whitespace()))
    }

    pub fn retained(&self) -> &BTreeSet<char> {
        &self.retained
    }

    pub fn retains(&self, c: char) -> bool {
        self.retained.contains(&c)
    }
}

/// Unicode punctuation (P*) or symbol (S*) character.
pub fn is_punctuation(c: char) -> bool {
    c.is_punctuation() || c.is_symbol()
}

/// Removes every punctuation or symbol character not in the retained set.
/// All other characters, including whitespace, keep their order.
pub fn filter_text(raw: &str, rules: &FilterRules) -> String {
    raw.chars().filter(|&c| !is_punctuation(c) || rules.retains(c)).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn drops_decorative_marks() {
        let rules = FilterRules::from_marks("！，。？；");
        assert_eq!(filter_text("好看！！！~~~@@", &rules), "好看！！！");
    }

    #[test]
    fn plain_text_unchanged() {
        let rules = FilterRules::default();
        assert_eq!(filter_text("电影 很 好看", &rules), "电影 很 好看");
        assert_eq!(filter_text("", &rules), "");
    }

    #[test]
    fn all_retained_marks_survive() {
        let rules = FilterRules::from_marks("！，。？；");
        assert_eq!(filter_text("，。？；", &rules), "，。？；");
    }

    #[test]
    fn default_set_keeps_ascii_twins() {
        let rules = FilterRules::default();
        assert_eq!(filter_text("ok, fine. no? yes! a;b (x) #tag 《书》…", &rules), "ok, fine. no? yes! a;b x tag 书…");
        assert_eq!(rules.retained().len(), DEFAULT_RETAINED.len());
    }

    fn mixed_char() -> impl Strategy<Value = char> {
        prop_oneof![
            prop::sample::select(vec!['。', '！', '？', '；', '，', '…', '.', '!', '?', ';', ',']),
            prop::sample::select(vec!['~', '@', '#', '（', '）', '【', '】', '“', '”', '、', '：', '*', '^', '😀', '￥']),
            prop::sample::select(vec!['好', '看', '电', '影', 'a', 'Z', '3', ' ']),
        ]
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(chars in prop::collection::vec(mixed_char(), 0..60)) {
            let text: String = chars.into_iter().collect();
            let rules = FilterRules::default();
            let once = filter_text(&text, &rules);
            prop_assert_eq!(filter_text(&once, &rules), once.clone());
            prop_assert!(once.chars().all(|c| !is_punctuation(c) || rules.retains(c)));
        }
    }
}
