use proptest::prelude::*;
use segpref_core::longcot::{extract_conclusion_values, parse_longcot, parse_with, render_longcot, ParseOptions};
use segpref_core::LongCoTResponse;

fn line() -> impl Strategy<Value = String> {
    proptest::collection::vec("[A-Za-z0-9,.=+#%-]{1,8}", 1..6).prop_map(|w| w.join(" "))
}

/// One to three lines, no blank line at either end, no heading lines.
fn body() -> impl Strategy<Value = String> {
    proptest::collection::vec(line(), 1..4)
        .prop_map(|lines| lines.join("\n"))
        .prop_filter("no heading lines", |b| b.lines().all(|l| !l.starts_with("###")))
}

fn document() -> impl Strategy<Value = LongCoTResponse> {
    (
        body(),
        prop_oneof![Just(String::new()), body()],
        proptest::collection::vec(body(), 0..5),
        body(),
        any::<bool>(),
    )
        .prop_map(|(desc, rationale, steps, conclusion, marker)| {
            let resp = LongCoTResponse::new(desc, rationale, steps, conclusion);
            if marker {
                resp.with_step_marker()
            } else {
                resp
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn canonical_documents_round_trip(resp in document()) {
        let text = render_longcot(&resp).unwrap();
        prop_assert_eq!(&text, &resp.raw_text);
        let parsed = parse_longcot(&text).unwrap();
        prop_assert_eq!(&parsed, &resp);
        prop_assert_eq!(render_longcot(&parsed).unwrap(), text.clone());
        let (lenient, warnings) = parse_with(&text, ParseOptions::LENIENT).unwrap();
        prop_assert_eq!(lenient, parsed);
        prop_assert!(warnings.is_empty());
    }

    #[test]
    fn segments_cover_the_sections(resp in document()) {
        prop_assert_eq!(&resp.desc_segment, &resp.description);
        let mut at = 0;
        for part in resp.steps.iter().map(|s| s.text.as_str()).chain([resp.conclusion.as_str()]) {
            let found = resp.reason_segment[at..].find(part);
            prop_assert!(found.is_some());
            at += found.unwrap() + part.len();
        }
    }
}

#[test]
fn single_conclusion_length() {
    let resp = LongCoTResponse::new(
        "d",
        "",
        vec![],
        "The distance between region1 and region2 is 11 meters.",
    );
    let values: Vec<f64> = extract_conclusion_values(&resp)
        .iter()
        .map(|v| v.numeric_value)
        .collect();
    assert_eq!(values, [11.0]);
}
