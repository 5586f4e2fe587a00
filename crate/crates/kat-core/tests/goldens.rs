mod common;

use kat_core::fusion::{format_pair_explicit, format_pair_implicit};
use kat_core::implicit::ImplicitItem;
use kat_core::kb::{KnowledgeEntry, Subclass};

fn golden(name: &str) -> String {
    std::fs::read_to_string(common::golden_dir().join(name)).unwrap()
}

#[test]
fn prompts_match_goldens() {
    common::check_prompt_goldens().unwrap();
}

#[test]
fn explicit_pairs_match_goldens() {
    let cases = [
        ("what drink is this?", KnowledgeEntry::new("Q2813", "Coca-Cola", "carbonated brown colored soft drink", Subclass::Company), "pair_explicit_coke.txt"),
        ("what animal is this?", KnowledgeEntry::new("Q15083", "Giraffe", "tall African mammal with a very long neck", Subclass::Animal), "pair_explicit_giraffe.txt"),
        ("who makes this phone?", KnowledgeEntry::new("Q312", "Apple Inc.", "American technology company", Subclass::Company), "pair_explicit_apple.txt"),
    ];
    for (q, e, file) in cases {
        assert_eq!(format_pair_explicit(q, &e), golden(file), "{file}");
    }
}

#[test]
fn implicit_pair_matches_golden() {
    let item = ImplicitItem::new("skiing", "snow and slopes are required");
    assert_eq!(format_pair_implicit("what sport?", &item), golden("pair_implicit_skiing.txt"));
}
