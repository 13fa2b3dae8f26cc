mod support;

use std::time::Instant;

use pageguide_core::find::{format_citation, ground, parse_citations};
use proptest::prelude::*;
use support::*;

#[test]
fn grammar_corpus_parses_as_expected_and_fast() {
    let t = Instant::now();
    assert_eq!(check_citation_corpus().unwrap(), 40);
    for (raw, _) in citation_corpus() {
        check_token_offsets(raw).unwrap();
    }
    assert!(t.elapsed().as_secs_f64() < 1.0, "corpus took {:?}", t.elapsed());
}

#[test]
fn corpus_round_trips_through_display_text() {
    let index = movie_index();
    for (raw, _) in citation_corpus() {
        check_conservation(raw, &index).unwrap();
    }
}

#[test]
fn movie_answer_renders_three_anchors() {
    let raw = citation_corpus()[0].0;
    let r = ground(raw, &movie_index(), 0.8);
    assert_eq!(r.answer.anchors.iter().map(|a| a.number).collect::<Vec<_>>(), [Some(1), Some(2), Some(3)]);
    assert_eq!(r.plan.entries.iter().map(|e| e.element_id).collect::<Vec<_>>(), [23, 27, 31]);
    assert_eq!(r.plan.scroll_target, Some(23));
    assert!(r.answer.unresolved.is_empty());
}

#[test]
fn unknown_ids_stay_unresolved() {
    let r = ground(r#"See [9999:"nowhere"]."#, &movie_index(), 0.8);
    assert_eq!(r.answer.unresolved.len(), 1);
    assert!(r.plan.entries.is_empty());
    assert_eq!(r.answer.anchors[0].number, None);
}

fn phrase() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('"'), Just('\\'), Just(']'), Just('['), Just(' '), Just('é'), Just(':'), proptest::char::range('a', 'z')], 1..20)
        .prop_map(|cs| cs.into_iter().collect())
}

proptest! {
    #[test]
    fn format_then_parse_round_trips(id in 1u32..1_000_000_000, p in phrase(), pre in "[a-z .,]{0,12}", post in "[a-z .,]{0,12}") {
        let raw = format!("{pre}{}{post}", format_citation(id, &p));
        let cs = parse_citations(&raw);
        prop_assert_eq!(cs.len(), 1);
        prop_assert_eq!(cs[0].element_id, id);
        prop_assert_eq!(&cs[0].phrase, &p);
        prop_assert_eq!(cs[0].answer_offset, pre.chars().count());
        prop_assert_eq!(cs[0].token_end(), raw.chars().count() - post.chars().count());
    }

    #[test]
    fn many_citations_round_trip(items in proptest::collection::vec((1u32..80, phrase()), 0..6), sep in "[a-z ]{0,5}") {
        let raw: String = items.iter().map(|(i, p)| format!("{}{sep}", format_citation(*i, p))).collect();
        let got: Vec<(u32, String)> = parse_citations(&raw).into_iter().map(|c| (c.element_id, c.phrase)).collect();
        prop_assert_eq!(got, items.clone());
        check_conservation(&raw, &movie_index()).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn arbitrary_text_is_conserved(raw in "[a-zA-Z \\[\\]:\"0-9\\\\]{0,60}") {
        check_token_offsets(&raw).map_err(TestCaseError::fail)?;
        check_conservation(&raw, &movie_index()).map_err(TestCaseError::fail)?;
    }
}
