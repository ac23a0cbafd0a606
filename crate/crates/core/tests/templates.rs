use kga2c::templates::{canonicalize, parse_template, space_size, FrequencyTable, Vocabulary};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,6}".prop_filter("reserved", |w| w != "obj")
}

fn template_text() -> impl Strategy<Value = (String, usize)> {
    (
        prop::collection::vec(word(), 1..4),
        prop::collection::vec(word(), 1..4),
        0usize..3,
    )
        .prop_map(|(verbs, preps, blanks)| {
            let v = format!("[{}]", verbs.join("/"));
            let text = match blanks {
                0 => v,
                1 => format!("{v} OBJ"),
                _ => format!("{v} OBJ [{}] OBJ", preps.join("/")),
            };
            (text, blanks)
        })
}

#[test]
fn paper_alias_examples() {
    let t = parse_template("[carry/hold/take] OBJ").unwrap();
    assert_eq!(t.verbs(), ["carry", "hold", "take"]);
    assert_eq!(t.blanks(), 1);
    let t = parse_template("[drop/throw/discard/put] OBJ [at/against/on/onto] OBJ").unwrap();
    assert_eq!(t.blanks(), 2);
    assert_eq!(t.prepositions().unwrap().len(), 4);
    let mut f = FrequencyTable::default();
    f.set("put", 9);
    f.set("on", 5);
    f.set("drop", 2);
    assert_eq!(canonicalize(&t, &f).pattern(), "put OBJ on OBJ");
}

proptest! {
    #[test]
    fn canonicalize_idempotent((text, blanks) in template_text(), counts in prop::collection::vec(0u64..5, 8)) {
        let t = parse_template(&text).unwrap();
        prop_assert_eq!(t.blanks(), blanks);
        let mut f = FrequencyTable::default();
        for (w, c) in t.words().map(str::to_string).collect::<Vec<_>>().iter().zip(counts) {
            f.set(w, c);
        }
        let once = canonicalize(&t, &f);
        prop_assert_eq!(once.blanks(), t.blanks());
        prop_assert!(t.verbs().iter().any(|v| v == once.canonical_verb()));
        prop_assert_eq!(&canonicalize(&once, &f), &once);
    }

    #[test]
    fn instantiate_places_objects_in_order((text, blanks) in template_text(), objs in prop::collection::vec("[A-Z]{3}", 2)) {
        let t = parse_template(&text).unwrap();
        let objs: Vec<String> = objs.into_iter().take(blanks).map(|o| o.to_lowercase() + "9").collect();
        let vocab = Vocabulary::new(objs.iter().map(String::as_str));
        let out = t.instantiate(&objs, &vocab).unwrap();
        let tokens: Vec<&str> = out.split(' ').collect();
        let found: Vec<&str> = tokens.iter().copied().filter(|w| objs.iter().any(|o| o == w)).collect();
        prop_assert_eq!(found, objs.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn space_size_monotone(blanks in prop::collection::vec(0usize..3, 0..20), v in 1usize..500, extra in 0usize..3) {
        let base = space_size(blanks.iter().copied(), v);
        prop_assert!(space_size(blanks.iter().copied(), v + 1) >= base);
        prop_assert!(space_size(blanks.iter().copied().chain([extra]), v) > base);
    }
}
