//! Seeded generator for the bundled toy sentiment corpus.
//!
//! Samples are pre-segmented Chinese comments. Sentiment comes from keyword
//! tokens, but word order decides the label in two ways: a negator flips a
//! sentiment word only when it directly precedes it (negators elsewhere sit
//! in harmless phrases such as `没有 想到`), and in `A ， 但是 B` comments the
//! clause after the contrast word wins. Noise punctuation that the default
//! filter strips is sprinkled in.

use crate::tensor::Generator;
use crate::textpipe::Label;

pub const POSITIVE: &[&str] = &["好看", "精彩", "感人", "喜欢", "推荐", "出色", "有趣", "满意", "经典", "震撼"];
pub const NEGATIVE: &[&str] = &["难看", "无聊", "失望", "糟糕", "烂", "拖沓", "尴尬", "后悔", "乏味", "敷衍"];
pub const NEGATORS: &[&str] = &["不", "没有"];
const INTENSIFIERS: &[&str] = &["很", "非常", "真的", "特别", "有点", "挺"];
const FILLERS: &[&str] = &[
    "电影", "剧情", "演员", "导演", "画面", "音乐", "故事", "这部", "今天", "朋友", "一起", "觉得", "我们", "晚上", "周末", "影院", "结局",
    "开头", "特效", "配乐", "角色", "台词", "节奏", "整体", "感觉", "第二遍", "原著", "主角",
];
/// Phrases that contain a negator without negating any sentiment word.
const NEGATED_FILLERS: &[&[&str]] = &[&["没有", "想到"], &["不", "知道"], &["不", "少"], &["没有", "字幕"], &["不", "过"]];
const CLAUSE_END: &[&str] = &["。", "！", "，", "…"];
const NOISE: &[&str] = &["~~", "@", "#", "（", "）", "【", "】", "*", "~", "~@~"];

/// Split sizes of the shipped corpus.
pub const SHIPPED_SPLITS: [usize; 3] = [3500, 500, 1000];
pub const SHIPPED_SEED: u64 = 20_240_901;

fn pick<'a>(g: &mut Generator, items: &[&'a str]) -> &'a str {
    items[g.below(items.len())]
}

fn fillers(g: &mut Generator, out: &mut Vec<String>, max: usize) {
    for _ in 0..g.below(max + 1) {
        if g.next_f64() < 0.15 {
            out.extend(NEGATED_FILLERS[g.below(NEGATED_FILLERS.len())].iter().map(|s| s.to_string()));
        } else {
            out.push(pick(g, FILLERS).to_string());
        }
    }
}

/// A clause whose overall polarity is `positive`.
fn clause(g: &mut Generator, positive: bool, out: &mut Vec<String>) {
    fillers(g, out, 3);
    let negate = g.next_f64() < 0.35;
    let word_positive = positive != negate;
    if g.next_f64() < 0.5 {
        out.push(pick(g, INTENSIFIERS).to_string());
    }
    if negate {
        out.push(pick(g, NEGATORS).to_string());
    }
    out.push(pick(g, if word_positive { POSITIVE } else { NEGATIVE }).to_string());
    fillers(g, out, 2);
}

/// One labelled sample as token list.
pub fn sample_tokens(g: &mut Generator) -> (Label, Vec<String>) {
    let positive = g.next_f64() < 0.5;
    let mut toks = Vec::new();
    let r = g.next_f64();
    if r < 0.4 {
        clause(g, positive, &mut toks);
    } else if r < 0.85 {
        let first = if g.next_f64() < 0.8 { !positive } else { positive };
        clause(g, first, &mut toks);
        toks.push("，".into());
        toks.push("但是".into());
        clause(g, positive, &mut toks);
    } else {
        clause(g, positive, &mut toks);
        toks.push("，".into());
        clause(g, positive, &mut toks);
    }
    toks.push(pick(g, CLAUSE_END).to_string());
    (positive as Label, toks)
}

/// Raw comment text: tokens joined by spaces with noise marks inserted.
pub fn render(g: &mut Generator, tokens: &[String]) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(tokens.len() * 2);
    for t in tokens {
        parts.push(t);
        if g.next_f64() < 0.08 {
            parts.push(pick(g, NOISE));
        }
    }
    parts.join(" ")
}

/// `n` labelled raw comments from `seed`.
pub fn generate(seed: u64, n: usize) -> Vec<(Label, String)> {
    let mut g = Generator::seeded(seed);
    (0..n)
        .map(|_| {
            let (label, toks) = sample_tokens(&mut g);
            (label, render(&mut g, &toks))
        })
        .collect()
}

/// `label<TAB>text` lines.
pub fn to_tsv(samples: &[(Label, String)]) -> String {
    samples.iter().map(|(l, t)| format!("{l}\t{t}\n")).collect()
}

/// Train, validation and test files of the shipped corpus.
pub fn shipped_splits() -> [String; 3] {
    let all = generate(SHIPPED_SEED, SHIPPED_SPLITS.iter().sum());
    let (train, rest) = all.split_at(SHIPPED_SPLITS[0]);
    let (valid, test) = rest.split_at(SHIPPED_SPLITS[1]);
    [to_tsv(train), to_tsv(valid), to_tsv(test)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{parse_corpus, Pipeline};

    /// Independent labeller: the clause after the last contrast word decides;
    /// within it, a sentiment word counts against its class when the token
    /// right before it is a negator.
    fn oracle(tokens: &[String]) -> Label {
        let start = tokens.iter().rposition(|t| t == "但是").map_or(0, |p| p + 1);
        let clause = &tokens[start..];
        for (i, t) in clause.iter().enumerate() {
            let pos = POSITIVE.contains(&t.as_str());
            let neg = NEGATIVE.contains(&t.as_str());
            if pos || neg {
                let negated = i > 0 && NEGATORS.contains(&clause[i - 1].as_str());
                return (pos != negated) as Label;
            }
        }
        panic!("clause without sentiment word: {tokens:?}");
    }

    #[test]
    fn labels_follow_order_rules() {
        let data = generate(5, 2000);
        let c = parse_corpus(&to_tsv(&data));
        assert!(c.malformed.is_empty());
        let p = Pipeline::default().prepare(&c).unwrap();
        assert_eq!(p.dropped_empty, 0);
        let mut positives = 0;
        for s in &p.samples {
            assert_eq!(oracle(&s.tokens), s.label, "{:?}", s.tokens);
            positives += s.label;
        }
        assert!((800..1200).contains(&positives));
        assert!(p.samples.iter().all(|s| s.tokens.len() <= 30));
    }

    #[test]
    fn noise_is_stripped_by_default_filter() {
        let p = Pipeline::default();
        for (_, text) in generate(6, 300) {
            for tok in p.tokens(&text).unwrap() {
                assert!(!NOISE.contains(&tok.as_str()) && !tok.contains('~') && !tok.contains('@'), "{tok}");
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate(9, 50), generate(9, 50));
        assert_ne!(generate(9, 50), generate(10, 50));
        let [a, b, c] = shipped_splits();
        assert_eq!(a.lines().count(), 3500);
        assert_eq!(b.lines().count(), 500);
        assert_eq!(c.lines().count(), 1000);
    }
}
